use crate::error::{MtemError, Result};
use crate::model::{SdeModel, StabilityParams};
use crate::numeric::{dot, norm};
use crate::schemes::Stepper;

/// Standard normal tails beyond this are dropped.
const Z_LIMIT: f64 = 40.0;
const PANELS_PER_PIECE: usize = 200_000;

/// Conditional one-step moment ratio `E(|X_1|^p | X_0 = x) / |x|^p` of the
/// MTEM update, integrating over the scalar increment `ΔB = √Δ·Z`.
///
/// The integrand `φ(z)·|x + f_Δ(x)Δ + g_Δ(x)√Δ z|^p` is integrated by
/// composite Simpson on `[−40, 40]`, split where the norm is smallest so the
/// kink of `|·|^p` falls on a panel edge.
pub fn one_step_moment_ratio(model: &SdeModel, radius: f64, x: &[f64], delta: f64, p: f64) -> Result<f64> {
    model.check_dimension(x)?;
    if !(p > 0.0) {
        return Err(MtemError::input(format!("moment order must be positive, got {p}")));
    }
    if !(delta > 0.0) {
        return Err(MtemError::input(format!("step size must be positive, got {delta}")));
    }
    let rx = norm(x);
    if rx == 0.0 {
        return Err(MtemError::Domain("moment ratio is undefined at the origin".into()));
    }
    let d = x.len();
    let mut stepper = Stepper::new(model, radius);
    // X_1 = a + b·z is affine in z
    let mut a = vec![0.0; d];
    let mut a_plus_b = vec![0.0; d];
    stepper.advance_from(x, delta, 0.0, &mut a);
    stepper.advance_from(x, delta, delta.sqrt(), &mut a_plus_b);
    let b: Vec<f64> = a_plus_b.iter().zip(&a).map(|(s, t)| s - t).collect();

    let mut point = vec![0.0; d];
    let mut integrand = |z: f64| {
        for i in 0..d {
            point[i] = a[i] + b[i] * z;
        }
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        phi * norm(&point).powf(p)
    };

    let bb = dot(&b, &b);
    let mut edges = vec![-Z_LIMIT];
    if bb > 0.0 {
        let kink = -dot(&a, &b) / bb;
        if kink > -Z_LIMIT && kink < Z_LIMIT {
            edges.push(kink);
        }
    }
    edges.push(Z_LIMIT);

    let total: f64 = edges
        .windows(2)
        .map(|w| simpson(&mut integrand, w[0], w[1], PANELS_PER_PIECE))
        .sum();
    Ok(total / rx.powf(p))
}

fn simpson(f: &mut impl FnMut(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionCheck {
    pub ratio: f64,
    /// `1 − p(λ − ε)Δ`
    pub bound: f64,
    pub pass: bool,
}

/// Checks `E(|X_1|^p | X_0 = x)/|x|^p ≤ 1 − p(λ − ε)Δ`.
pub fn one_step_contraction(
    model: &SdeModel,
    radius: f64,
    x: &[f64],
    delta: f64,
    params: &StabilityParams,
) -> Result<ContractionCheck> {
    let ratio = one_step_moment_ratio(model, radius, x, delta, params.p())?;
    let bound = 1.0 - params.p() * (params.lambda() - params.epsilon()) * delta;
    Ok(ContractionCheck {
        ratio,
        bound,
        pass: ratio <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_moment_matches_closed_form() {
        // E|a + bZ|² = a² + b² for the scalar update
        let model = SdeModel::example41();
        let (h, x, delta) = (1.5, 0.8, 0.01);
        let f = 0.8 + 0.8f64.powi(3);
        let g = 2.0 * 0.8 * (0.64f64 + 2.0).sqrt();
        let a = x + f * delta;
        let b = g * delta.sqrt();
        let expected = (a * a + b * b) / (x * x);
        let got = one_step_moment_ratio(&model, h, &[x], delta, 2.0).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn first_absolute_moment_of_pure_noise() {
        // zero drift: E|x + σ√Δ Z| with the kink at the centre
        let model = SdeModel::linear(0.0, 1.0);
        let delta: f64 = 1.0;
        let got = one_step_moment_ratio(&model, 1e9, &[1.0], delta, 1.0).unwrap();
        // E|1 + Z| = 2φ(1) + (2Φ(1) − 1)
        let phi1 = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf_centre = 0.682_689_492_137_085_9;
        assert!((got - (2.0 * phi1 + cdf_centre)).abs() < 1e-9);
    }

    #[test]
    fn origin_is_rejected() {
        assert!(one_step_moment_ratio(&SdeModel::example41(), 1.0, &[0.0], 1e-3, 0.5).is_err());
    }
}
