//! SDE models `dx = f(x) dt + g(x) dB` with a scalar driving Brownian motion,
//! the built-in model registry, and the stability functional
//!
//! ```text
//! Φ_p(x) = (⟨x, f(x)⟩ + ½|g(x)|²) / |x|²  +  ((p − 2)/2) · ⟨x, g(x)⟩² / |x|⁴
//! ```
//!
//! whose supremum over `x ≠ 0` is `−λ`.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{MtemError, Result};
use crate::numeric::{dot, norm};

/// Coefficient evaluator writing `f(x)` (or `g(x)`) into the output slice.
pub type CoefficientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Local Lipschitz bound `R ↦ L_R`, nondecreasing in `R`.
pub type LipschitzFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// An autonomous SDE with drift `f`, diffusion `g` (both `R^d → R^d`) and a
/// local Lipschitz bound valid on every ball of radius `R`.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    dimension: usize,
    drift: CoefficientFn,
    diffusion: CoefficientFn,
    lipschitz: LipschitzFn,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dimension", &self.dimension)
            .finish_non_exhaustive()
    }
}

impl SdeModel {
    pub fn new(
        name: impl Into<String>,
        dimension: usize,
        drift: CoefficientFn,
        diffusion: CoefficientFn,
        lipschitz: LipschitzFn,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(MtemError::input("model dimension must be positive"));
        }
        Ok(Self {
            name: name.into(),
            dimension,
            drift,
            diffusion,
            lipschitz,
        })
    }

    /// The scalar model `dx = (x + x³) dt + 2√(x⁴ + 2x²) dB`.
    pub fn example41() -> Self {
        Self {
            name: "example41".into(),
            dimension: 1,
            drift: Arc::new(|x, out| {
                let v = x[0];
                out[0] = v + v * v * v;
            }),
            // 2√(x⁴ + 2x²) written as 2|x|√(x² + 2) so large states do not overflow.
            diffusion: Arc::new(|x, out| {
                let v = x[0];
                out[0] = 2.0 * v.abs() * (v * v + 2.0).sqrt();
            }),
            lipschitz: Arc::new(example41_lipschitz),
        }
    }

    /// Scalar geometric Brownian motion `dx = μx dt + σx dB`.
    pub fn linear(mu: f64, sigma: f64) -> Self {
        Self::linear_in(1, mu, sigma).expect("dimension 1 is valid")
    }

    /// `dx = μx dt + σx dB` in `R^d` with the scalar Brownian motion acting on every coordinate.
    pub fn linear_in(dimension: usize, mu: f64, sigma: f64) -> Result<Self> {
        let bound = mu.abs().max(sigma.abs());
        Self::new(
            "linear",
            dimension,
            Arc::new(move |x, out| {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = mu * v;
                }
            }),
            Arc::new(move |x, out| {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = sigma * v;
                }
            }),
            Arc::new(move |_| bound),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn lipschitz_bound(&self, radius: f64) -> f64 {
        (self.lipschitz)(radius)
    }

    pub fn lipschitz_fn(&self) -> LipschitzFn {
        Arc::clone(&self.lipschitz)
    }

    pub(crate) fn drift_fn(&self) -> &CoefficientFn {
        &self.drift
    }

    pub(crate) fn diffusion_fn(&self) -> &CoefficientFn {
        &self.diffusion
    }

    /// Unchecked drift evaluation for hot loops.
    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }

    #[inline]
    pub fn diffusion_into(&self, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, out)
    }

    pub(crate) fn check_dimension(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension {
            return Err(MtemError::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn evaluate_drift(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dimension(x)?;
        let mut out = vec![0.0; self.dimension];
        self.drift_into(x, &mut out);
        Ok(out)
    }

    pub fn evaluate_diffusion(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dimension(x)?;
        let mut out = vec![0.0; self.dimension];
        self.diffusion_into(x, &mut out);
        Ok(out)
    }

    /// True iff `f(0)` and `g(0)` are exactly zero, i.e. `X ≡ 0` solves the SDE.
    pub fn check_trivial_solution(&self) -> bool {
        let zero = vec![0.0; self.dimension];
        let mut out = vec![0.0; self.dimension];
        self.drift_into(&zero, &mut out);
        if out.iter().any(|v| *v != 0.0) {
            return false;
        }
        self.diffusion_into(&zero, &mut out);
        out.iter().all(|v| *v == 0.0)
    }

    /// `Φ_p(x)` for `x ≠ 0`.
    pub fn stability_functional(&self, p: f64, x: &[f64]) -> Result<f64> {
        self.check_dimension(x)?;
        check_moment_order(p)?;
        let r = norm(x);
        if r == 0.0 {
            return Err(MtemError::Domain(
                "stability functional is undefined at the origin".into(),
            ));
        }
        let mut fx = vec![0.0; self.dimension];
        let mut gx = vec![0.0; self.dimension];
        self.drift_into(x, &mut fx);
        self.diffusion_into(x, &mut gx);
        Ok(functional_value(x, r, &fx, &gx, p))
    }

    /// `λ̂ = −max Φ_p` over the points of `plan`.
    pub fn estimate_lambda(&self, p: f64, plan: &SamplingPlan) -> Result<f64> {
        check_moment_order(p)?;
        let sample = sample_functional(self.dimension, p, plan, |x, fx, gx| {
            self.drift_into(x, fx);
            self.diffusion_into(x, gx);
        })?;
        // `0.0 - max` keeps the zero model at +0.0 rather than −0.0.
        Ok(0.0 - sample.max)
    }
}

/// `L_R` for `example41`, valid on the whole ball `|x| ≤ R`.
///
/// `(1 + 3R²) ∨ (2 + 2R)` bounds `f` but not `g` near the origin: `g'(R) =
/// 4(1 + R²)/√(2 + R²)` exceeds it for `R` below about 1.2, so that term is
/// included in the maximum.
pub fn example41_lipschitz(radius: f64) -> f64 {
    let r2 = radius * radius;
    let diffusion_slope = 4.0 * (1.0 + r2) / (2.0 + r2).sqrt();
    nominal_example41_lipschitz(radius).max(diffusion_slope)
}

/// The nominal bound `(1 + 3R²) ∨ (2 + 2R)` for `example41`, which the
/// analytic truncation radius is built on.
pub fn nominal_example41_lipschitz(radius: f64) -> f64 {
    (1.0 + 3.0 * radius * radius).max(2.0 + 2.0 * radius)
}

/// Registry of models reachable by key from the command line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinModel {
    Example41,
    Linear { mu: f64, sigma: f64 },
}

impl BuiltinModel {
    pub const KEYS: [&'static str; 2] = ["example41", "linear"];

    pub fn from_key(key: &str, mu: f64, sigma: f64) -> Option<Self> {
        match key {
            "example41" => Some(BuiltinModel::Example41),
            "linear" => Some(BuiltinModel::Linear { mu, sigma }),
            _ => None,
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            BuiltinModel::Example41 => "example41",
            BuiltinModel::Linear { .. } => "linear",
        }
    }

    pub fn model(&self) -> SdeModel {
        match *self {
            BuiltinModel::Example41 => SdeModel::example41(),
            BuiltinModel::Linear { mu, sigma } => SdeModel::linear(mu, sigma),
        }
    }

    /// Closed-form `λ` at moment order `p`, when the functional is constant.
    pub fn analytic_lambda(&self, p: f64) -> Option<f64> {
        match *self {
            BuiltinModel::Example41 if p == 0.5 => Some(1.0),
            BuiltinModel::Example41 => None,
            BuiltinModel::Linear { mu, sigma } => Some(-(mu + (p - 1.0) * sigma * sigma / 2.0)),
        }
    }
}

pub(crate) fn check_moment_order(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MtemError::input(format!(
            "moment order p must lie in (0, 1), got {p}"
        )));
    }
    Ok(())
}

/// `Φ_p` from precomputed coefficient values, evaluated through the unit
/// direction `u = x/|x|` to keep the quotients well scaled.
pub(crate) fn functional_value(x: &[f64], r: f64, fx: &[f64], gx: &[f64], p: f64) -> f64 {
    let drift_term = dot(x, fx) / r / r;
    let g_scaled = norm(gx) / r;
    let radial_g = dot(x, gx) / r / r;
    drift_term + 0.5 * g_scaled * g_scaled + 0.5 * (p - 2.0) * radial_g * radial_g
}

/// Moment order, decay rate and slack used when checking exponent claims.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityParams {
    p: f64,
    lambda: f64,
    epsilon: f64,
}

impl StabilityParams {
    pub fn new(p: f64, lambda: f64, epsilon: f64) -> Result<Self> {
        check_moment_order(p)?;
        if !(lambda > 0.0) {
            return Err(MtemError::input(format!("lambda must be positive, got {lambda}")));
        }
        if !(epsilon > 0.0 && epsilon < lambda) {
            return Err(MtemError::input(format!(
                "epsilon must lie in (0, lambda = {lambda}), got {epsilon}"
            )));
        }
        Ok(Self { p, lambda, epsilon })
    }

    /// `ε = λ/2`.
    pub fn with_default_epsilon(p: f64, lambda: f64) -> Result<Self> {
        Self::new(p, lambda, lambda / 2.0)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Claimed upper bound `−p(λ − ε)` on the p-th moment exponent.
    pub fn moment_exponent_bound(&self) -> f64 {
        -self.p * (self.lambda - self.epsilon)
    }

    /// Claimed upper bound `−(λ − ε)` on the almost-sure exponent.
    pub fn almost_sure_exponent_bound(&self) -> f64 {
        -(self.lambda - self.epsilon)
    }

    /// Compares the asserted `λ` with a sampled estimate.
    pub fn cross_check(&self, model: &SdeModel, plan: &SamplingPlan) -> Result<LambdaCrossCheck> {
        let estimated = model.estimate_lambda(self.p, plan)?;
        // sampled sup Φ = −estimated; excess over the asserted −λ
        let excess = self.lambda - estimated;
        Ok(LambdaCrossCheck {
            asserted: self.lambda,
            estimated,
            excess,
            warn: excess > LAMBDA_CROSS_CHECK_TOLERANCE,
        })
    }
}

pub const LAMBDA_CROSS_CHECK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaCrossCheck {
    pub asserted: f64,
    pub estimated: f64,
    /// `sup Φ − (−λ)`; positive when the asserted λ is too optimistic.
    pub excess: f64,
    pub warn: bool,
}

/// Log-spaced radii times a fixed direction set.
///
/// The radius grid has `radii_per_decade · ⌈log10(r_max/r_min)⌉` intervals and
/// the direction set is a prefix of one seeded stream, so multiplying
/// `radii_per_decade` or growing `directions_per_radius` only adds points.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub r_min: f64,
    pub r_max: f64,
    pub radii_per_decade: usize,
    pub directions_per_radius: usize,
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            r_min: 1e-3,
            r_max: 1e3,
            radii_per_decade: 20,
            directions_per_radius: 16,
            seed: 0,
        }
    }
}

impl SamplingPlan {
    pub fn with_range(mut self, r_min: f64, r_max: f64) -> Self {
        self.r_min = r_min;
        self.r_max = r_max;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(MtemError::input(format!(
                "sampling radii must satisfy 0 < r_min < r_max, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if self.radii_per_decade == 0 || self.directions_per_radius == 0 {
            return Err(MtemError::input(
                "sampling plan needs at least one radius per decade and one direction",
            ));
        }
        Ok(())
    }

    pub fn radii(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let (ln_lo, ln_hi) = (self.r_min.ln(), self.r_max.ln());
        let decades = (self.r_max / self.r_min).log10().ceil().max(1.0) as usize;
        let intervals = decades * self.radii_per_decade;
        Ok((0..=intervals)
            .map(|i| {
                let frac = i as f64 / intervals as f64;
                (ln_lo + frac * (ln_hi - ln_lo)).exp()
            })
            .collect())
    }

    /// Unit directions. In one dimension these are exactly `±1`.
    pub fn directions(&self, dimension: usize) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        if dimension == 1 {
            return Ok(vec![vec![1.0], vec![-1.0]]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.directions_per_radius);
        while out.len() < self.directions_per_radius {
            let v: Vec<f64> = (0..dimension).map(|_| StandardNormal.sample(&mut rng)).collect();
            let r = norm(&v);
            if r > 1e-12 {
                out.push(v.into_iter().map(|c| c / r).collect());
            }
        }
        Ok(out)
    }
}

/// Extremes of a sampled stability functional.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalSample {
    pub max: f64,
    pub min: f64,
    pub argmax: Vec<f64>,
    pub points: usize,
}

/// Evaluates `Φ_p` over every point of `plan` using `coefficients(x, f, g)`.
pub(crate) fn sample_functional<C>(
    dimension: usize,
    p: f64,
    plan: &SamplingPlan,
    mut coefficients: C,
) -> Result<FunctionalSample>
where
    C: FnMut(&[f64], &mut [f64], &mut [f64]),
{
    let radii = plan.radii()?;
    let directions = plan.directions(dimension)?;
    let mut x = vec![0.0; dimension];
    let mut fx = vec![0.0; dimension];
    let mut gx = vec![0.0; dimension];
    let mut best = FunctionalSample {
        max: f64::NEG_INFINITY,
        min: f64::INFINITY,
        argmax: Vec::new(),
        points: 0,
    };
    for &r in &radii {
        for u in &directions {
            for (xi, ui) in x.iter_mut().zip(u) {
                *xi = r * ui;
            }
            coefficients(&x, &mut fx, &mut gx);
            let value = functional_value(&x, norm(&x), &fx, &gx, p);
            if !value.is_finite() {
                return Err(MtemError::Evaluation { point: x.clone() });
            }
            if value > best.max {
                best.max = value;
                best.argmax.clone_from(&x);
            }
            best.min = best.min.min(value);
            best.points += 1;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn example41_drift_values() {
        let m = SdeModel::example41();
        assert_eq!(m.evaluate_drift(&[1.0]).unwrap(), vec![2.0]);
        assert_eq!(m.evaluate_drift(&[2.0]).unwrap(), vec![10.0]);
        assert_eq!(m.evaluate_drift(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(SdeModel::linear(-0.3, 0.7).evaluate_drift(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn drift_rejects_wrong_dimension() {
        let err = SdeModel::example41().evaluate_drift(&[1.0, 2.0]).unwrap_err();
        assert_eq!(err, MtemError::DimensionMismatch { expected: 1, got: 2 });
    }

    #[test]
    fn example41_functional_is_minus_one() {
        let m = SdeModel::example41();
        assert!((m.stability_functional(0.5, &[1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((m.stability_functional(0.5, &[3.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn example41_functional_constant_over_random_points() {
        let m = SdeModel::example41();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let mag = 10f64.powf(rng.gen_range(-3.0..3.0));
            let x = if rng.gen_bool(0.5) { mag } else { -mag };
            let phi = m.stability_functional(0.5, &[x]).unwrap();
            assert!((phi + 1.0).abs() < 1e-9, "x = {x}, phi = {phi}");
        }
    }

    #[test]
    fn linear_functional_closed_form() {
        let (mu, sigma, p) = (0.4, 1.3, 0.3);
        let m = SdeModel::linear_in(3, mu, sigma).unwrap();
        let expected = mu + (p - 1.0) * sigma * sigma / 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let phi = m.stability_functional(p, &x).unwrap();
            assert!((phi - expected).abs() < 1e-12, "{phi} vs {expected}");
        }
    }

    #[test]
    fn functional_undefined_at_origin() {
        let err = SdeModel::example41().stability_functional(0.5, &[0.0]).unwrap_err();
        assert!(matches!(err, MtemError::Domain(_)));
    }

    #[test]
    fn functional_rejects_bad_moment_order() {
        assert!(SdeModel::example41().stability_functional(1.0, &[1.0]).is_err());
        assert!(SdeModel::example41().stability_functional(0.0, &[1.0]).is_err());
    }

    #[test]
    fn estimate_lambda_examples() {
        let plan = SamplingPlan::default();
        let lam = SdeModel::example41().estimate_lambda(0.5, &plan).unwrap();
        assert!((lam - 1.0).abs() < 1e-9);
        let lam = SdeModel::linear(-1.25, 1.0).estimate_lambda(0.5, &plan).unwrap();
        assert!((lam - 1.5).abs() < 1e-12);
        let lam = SdeModel::linear(0.0, 0.0).estimate_lambda(0.3, &plan).unwrap();
        assert_eq!(lam, 0.0);
    }

    #[test]
    fn estimate_lambda_reports_non_finite_point() {
        let model = SdeModel::new(
            "blowup",
            1,
            Arc::new(|x, out| out[0] = if x[0] > 10.0 { f64::INFINITY } else { -x[0] }),
            Arc::new(|_, out| out[0] = 0.0),
            Arc::new(|_| 1.0),
        )
        .unwrap();
        let err = model.estimate_lambda(0.5, &SamplingPlan::default()).unwrap_err();
        match err {
            MtemError::Evaluation { point } => assert!(point[0] > 10.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn estimate_lambda_monotone_under_refinement() {
        // a model whose functional varies with both radius and direction
        let model = SdeModel::new(
            "wobbly",
            2,
            Arc::new(|x, out| {
                out[0] = -x[0] + 0.3 * x[1] * x[0].sin();
                out[1] = -2.0 * x[1] + 0.1 * x[0] * x[0].cos();
            }),
            Arc::new(|x, out| {
                out[0] = 0.5 * x[1];
                out[1] = 0.2 * x[0];
            }),
            Arc::new(|r| 3.0 + r),
        )
        .unwrap();
        let coarse = SamplingPlan {
            radii_per_decade: 3,
            directions_per_radius: 4,
            ..SamplingPlan::default()
        };
        let fine = SamplingPlan {
            radii_per_decade: 6,
            directions_per_radius: 9,
            ..coarse.clone()
        };
        let a = model.estimate_lambda(0.5, &coarse).unwrap();
        let b = model.estimate_lambda(0.5, &fine).unwrap();
        assert!(b <= a, "{b} > {a}");
    }

    #[test]
    fn refined_grid_contains_coarse_grid() {
        let coarse = SamplingPlan { radii_per_decade: 5, ..SamplingPlan::default() };
        let fine = SamplingPlan { radii_per_decade: 10, ..SamplingPlan::default() };
        let (c, f) = (coarse.radii().unwrap(), fine.radii().unwrap());
        for (i, r) in c.iter().enumerate() {
            assert_eq!(*r, f[2 * i]);
        }
    }

    #[test]
    fn trivial_solution_checks() {
        assert!(SdeModel::example41().check_trivial_solution());
        assert!(SdeModel::linear(1.0, 2.0).check_trivial_solution());
        let shifted = SdeModel::new(
            "shifted",
            1,
            Arc::new(|x, out| out[0] = x[0] + 1.0),
            Arc::new(|x, out| out[0] = x[0]),
            Arc::new(|_| 1.0),
        )
        .unwrap();
        assert!(!shifted.check_trivial_solution());
    }

    #[test]
    fn nominal_bound_misses_diffusion_slope_near_origin() {
        // g'(1) = 8/√3 exceeds (1 + 3) ∨ (2 + 2)
        assert!(8.0 / 3f64.sqrt() > nominal_example41_lipschitz(1.0));
        assert!(example41_lipschitz(1.0) >= 8.0 / 3f64.sqrt());
        assert_eq!(example41_lipschitz(2.0), 13.0);
    }

    #[test]
    fn stability_params_validation() {
        assert!(StabilityParams::new(0.5, 1.0, 0.5).is_ok());
        assert!(StabilityParams::new(0.5, 1.0, 1.0).is_err());
        assert!(StabilityParams::new(1.5, 1.0, 0.5).is_err());
        let sp = StabilityParams::with_default_epsilon(0.5, 1.0).unwrap();
        assert_eq!(sp.moment_exponent_bound(), -0.25);
        assert_eq!(sp.almost_sure_exponent_bound(), -0.5);
    }

    #[test]
    fn cross_check_flags_overstated_lambda() {
        let model = SdeModel::linear(-1.25, 1.0);
        let plan = SamplingPlan::default();
        let ok = StabilityParams::new(0.5, 1.5, 0.1).unwrap().cross_check(&model, &plan).unwrap();
        assert!(!ok.warn);
        let bad = StabilityParams::new(0.5, 2.0, 0.1).unwrap().cross_check(&model, &plan).unwrap();
        assert!(bad.warn);
        assert!((bad.excess - 0.5).abs() < 1e-12);
    }
}
