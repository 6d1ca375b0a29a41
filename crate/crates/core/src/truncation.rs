//! Truncation radius `h(Δ)` and the modified truncated coefficients
//!
//! ```text
//! f_Δ(x) = f(x)                         if |x| ≤ h(Δ)
//!        = (|x|/h(Δ)) · f(h(Δ) x/|x|)    otherwise
//! ```
//!
//! Unlike a clamp, `f_Δ` is unbounded: outside the ball it grows linearly
//! along every ray.

use std::fmt;
use std::sync::Arc;

use crate::error::{MtemError, Result};
use crate::model::{BuiltinModel, CoefficientFn, LipschitzFn, SdeModel};
use crate::numeric::norm;

/// `Δ* = 4⁻⁵` for the analytic `example41` radius.
pub const EXAMPLE41_DELTA_STAR: f64 = 1.0 / 1024.0;

pub const DEFAULT_BRACKET: (f64, f64) = (1e-6, 1e9);
pub const DEFAULT_TOLERANCE: f64 = 1e-12;
const BRACKET_EXPANSIONS: usize = 4;
const BRACKET_GROWTH: f64 = 1e3;

/// `h(Δ) = √((Δ^{−1/5} − 1)/3)`, for which `(1 + 3h²)⁴ Δ = Δ^{1/5}`.
pub fn example41_radius(delta: f64) -> f64 {
    ((delta.powf(-0.2) - 1.0) / 3.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    DerivedFromLipschitz,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Analytic => "analytic",
            Provenance::DerivedFromLipschitz => "derived",
        })
    }
}

#[derive(Clone)]
enum RadiusRule {
    Analytic(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    Derived {
        lipschitz: LipschitzFn,
        bracket: (f64, f64),
        tolerance: f64,
    },
}

/// A rule `Δ ↦ h(Δ)` with an optional upper validity bound `Δ*`.
#[derive(Clone)]
pub struct TruncationPolicy {
    rule: RadiusRule,
    delta_star: Option<f64>,
}

impl fmt::Debug for TruncationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TruncationPolicy")
            .field("provenance", &self.provenance())
            .field("delta_star", &self.delta_star)
            .finish_non_exhaustive()
    }
}

impl TruncationPolicy {
    pub fn analytic(h: impl Fn(f64) -> f64 + Send + Sync + 'static, delta_star: f64) -> Self {
        Self {
            rule: RadiusRule::Analytic(Arc::new(h)),
            delta_star: Some(delta_star),
        }
    }

    pub fn example41() -> Self {
        Self::analytic(example41_radius, EXAMPLE41_DELTA_STAR)
    }

    /// `h = l⁻¹` with `l(R) = 1/(R·L_R⁴)`, solved per step size by bisection.
    pub fn derived(lipschitz: LipschitzFn) -> Self {
        Self {
            rule: RadiusRule::Derived {
                lipschitz,
                bracket: DEFAULT_BRACKET,
                tolerance: DEFAULT_TOLERANCE,
            },
            delta_star: None,
        }
    }

    pub fn for_model(model: &SdeModel) -> Self {
        Self::derived(model.lipschitz_fn())
    }

    /// The analytic radius for `example41`; derivation from `L_R` otherwise.
    pub fn for_builtin(builtin: &BuiltinModel) -> Self {
        match builtin {
            BuiltinModel::Example41 => Self::example41(),
            BuiltinModel::Linear { .. } => Self::for_model(&builtin.model()),
        }
    }

    pub fn with_delta_star(mut self, delta_star: f64) -> Self {
        self.delta_star = Some(delta_star);
        self
    }

    pub fn provenance(&self) -> Provenance {
        match self.rule {
            RadiusRule::Analytic(_) => Provenance::Analytic,
            RadiusRule::Derived { .. } => Provenance::DerivedFromLipschitz,
        }
    }

    pub fn delta_star(&self) -> Option<f64> {
        self.delta_star
    }

    pub fn check_delta(&self, delta: f64) -> Result<()> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(MtemError::input(format!("step size must be positive, got {delta}")));
        }
        if let Some(star) = self.delta_star {
            if delta > star {
                return Err(MtemError::input(format!(
                    "step size {delta} exceeds the policy bound Δ* = {star}"
                )));
            }
        }
        Ok(())
    }

    pub fn radius(&self, delta: f64) -> Result<f64> {
        self.check_delta(delta)?;
        let h = match &self.rule {
            RadiusRule::Analytic(h) => h(delta),
            RadiusRule::Derived {
                lipschitz,
                bracket,
                tolerance,
            } => derive_with_expansion(lipschitz.as_ref(), delta, *bracket, *tolerance)?,
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(MtemError::Domain(format!("radius h({delta}) = {h} is not positive")));
        }
        Ok(h)
    }
}

fn inverse_target(lipschitz: &dyn Fn(f64) -> f64, r: f64) -> f64 {
    1.0 / (r * lipschitz(r).powi(4))
}

/// Solves `1/(R·L_R⁴) = delta` for `R` by bisection inside `bracket`.
///
/// Bisection stops once the bracket is narrower than `tol` or can no longer
/// be split in floating point.
pub fn derive_h_from_lipschitz(
    lipschitz: &dyn Fn(f64) -> f64,
    delta: f64,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(MtemError::input(format!("tolerance must be positive, got {tol}")));
    }
    if !(delta > 0.0) {
        return Err(MtemError::input(format!("step size must be positive, got {delta}")));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && lo < hi) {
        return Err(MtemError::input(format!("invalid bracket [{lo}, {hi}]")));
    }
    let (l_lo, l_hi) = (inverse_target(lipschitz, lo), inverse_target(lipschitz, hi));
    if !(l_lo > delta && delta > l_hi) {
        return Err(MtemError::Bracket { lo, hi, target: delta });
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inverse_target(lipschitz, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn derive_with_expansion(
    lipschitz: &dyn Fn(f64) -> f64,
    delta: f64,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64> {
    let (mut lo, mut hi) = bracket;
    for attempt in 0..=BRACKET_EXPANSIONS {
        match derive_h_from_lipschitz(lipschitz, delta, (lo, hi), tol) {
            Err(MtemError::Bracket { .. }) if attempt < BRACKET_EXPANSIONS => {
                lo /= BRACKET_GROWTH;
                hi *= BRACKET_GROWTH;
            }
            other => return other,
        }
    }
    unreachable!("loop returns on the final attempt")
}

/// `c_Δ(x)` for a coefficient `c` and radius `h`, using `scratch` for the
/// projected point.
#[inline]
pub(crate) fn truncate_into(
    coefficient: &CoefficientFn,
    radius: f64,
    x: &[f64],
    scratch: &mut [f64],
    out: &mut [f64],
) {
    let r = norm(x);
    if r <= radius {
        coefficient(x, out);
        return;
    }
    for (s, v) in scratch.iter_mut().zip(x) {
        *s = radius * (v / r);
    }
    coefficient(scratch, out);
    let scale = r / radius;
    for o in out.iter_mut() {
        *o *= scale;
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius > 0.0) {
        return Err(MtemError::input(format!("truncation radius must be positive, got {radius}")));
    }
    Ok(())
}

/// Truncated drift `f_Δ(x)` at radius `h`.
pub fn eval_f_delta(model: &SdeModel, radius: f64, x: &[f64]) -> Result<Vec<f64>> {
    model.check_dimension(x)?;
    check_radius(radius)?;
    let mut scratch = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    truncate_into(model.drift_fn(), radius, x, &mut scratch, &mut out);
    Ok(out)
}

/// Truncated diffusion `g_Δ(x)` at radius `h`.
pub fn eval_g_delta(model: &SdeModel, radius: f64, x: &[f64]) -> Result<Vec<f64>> {
    model.check_dimension(x)?;
    check_radius(radius)?;
    let mut scratch = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    truncate_into(model.diffusion_fn(), radius, x, &mut scratch, &mut out);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepConditionRow {
    pub delta: f64,
    pub h: f64,
    pub lipschitz_at_h: f64,
    /// `L_{h(Δ)}⁴ · Δ`
    pub product: f64,
    /// Product does not exceed the one at the next larger step size.
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepConditionReport {
    /// Sorted by decreasing step size.
    pub rows: Vec<StepConditionRow>,
    pub monotone: bool,
}

/// Tabulates `h(Δ)`, `L_{h(Δ)}` and `L_{h(Δ)}⁴Δ`, checking that `h` grows
/// and the product shrinks as `Δ` decreases.
pub fn verify_step_condition(
    policy: &TruncationPolicy,
    lipschitz: &dyn Fn(f64) -> f64,
    deltas: &[f64],
) -> Result<StepConditionReport> {
    if deltas.is_empty() {
        return Err(MtemError::input("no step sizes given"));
    }
    let mut sorted = deltas.to_vec();
    for &d in &sorted {
        policy.check_delta(d)?;
    }
    sorted.sort_by(|a, b| b.total_cmp(a));

    let mut rows: Vec<StepConditionRow> = Vec::with_capacity(sorted.len());
    for delta in sorted {
        let h = policy.radius(delta)?;
        let lipschitz_at_h = lipschitz(h);
        let product = lipschitz_at_h.powi(4) * delta;
        let ok = match rows.last() {
            Some(prev) => product <= prev.product && h >= prev.h,
            None => true,
        };
        rows.push(StepConditionRow {
            delta,
            h,
            lipschitz_at_h,
            product,
            ok,
        });
    }
    let monotone = rows.iter().all(|r| r.ok);
    Ok(StepConditionReport { rows, monotone })
}
