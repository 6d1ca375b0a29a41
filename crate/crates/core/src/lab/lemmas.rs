use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{MtemError, Result};
use crate::model::{check_moment_order, sample_functional, SamplingPlan, SdeModel};
use crate::numeric::norm;
use crate::truncation::truncate_into;

/// Relative slack on the `3·L_h` bound for floating-point noise.
pub const LIPSCHITZ_SLACK: f64 = 1e-9;
/// Absolute slack on `sup Φ ≤ −λ` for the truncated coefficients.
pub const LAMBDA_SLACK: f64 = 1e-6;

/// Position of a sampled pair relative to the ball of radius `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairCase {
    BothInside,
    BothOutside,
    Straddling,
}

impl PairCase {
    fn classify(rx: f64, ry: f64, h: f64) -> Self {
        match (rx <= h, ry <= h) {
            (true, true) => PairCase::BothInside,
            (false, false) => PairCase::BothOutside,
            _ => PairCase::Straddling,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzLemmaReport {
    pub radius: f64,
    pub trials: usize,
    pub max_ratio_f: f64,
    pub max_ratio_g: f64,
    pub lipschitz_at_h: f64,
    /// `3·L_h`
    pub bound: f64,
    /// Pairs per [`PairCase`], indexed inside / outside / straddling.
    pub case_counts: [usize; 3],
    pub pass: bool,
}

impl LipschitzLemmaReport {
    pub fn max_ratio(&self) -> f64 {
        self.max_ratio_f.max(self.max_ratio_g)
    }

    pub fn covers_all_cases(&self) -> bool {
        self.case_counts.iter().all(|c| *c > 0)
    }
}

fn random_direction(rng: &mut ChaCha8Rng, dimension: usize, out: &mut [f64]) {
    loop {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let r = norm(out);
        if r > 1e-12 {
            out.iter_mut().for_each(|v| *v /= r);
            return;
        }
        debug_assert!(dimension > 0);
    }
}

/// Radius for one end of a pair: inside `[0, h]` or outside `(h, multiple·h]`.
fn draw_radius(rng: &mut ChaCha8Rng, h: f64, multiple: f64, inside: bool) -> f64 {
    if inside {
        h * rng.gen::<f64>()
    } else {
        h * (1.0 + (multiple - 1.0) * (1.0 - rng.gen::<f64>()))
    }
}

/// Samples pairs `x ≠ x̄` and records the largest difference quotients of
/// the truncated coefficients, to be compared against `3·L_h`.
///
/// Trials cycle through the three pair cases. Half of them draw `x̄` near
/// `x` (same case, nearby radius and direction) so local slopes are probed,
/// the other half draw both ends independently.
pub fn verify_lemma_global_lipschitz(
    model: &SdeModel,
    radius: f64,
    trials: usize,
    radius_multiple: f64,
    seed: u64,
) -> Result<LipschitzLemmaReport> {
    if trials == 0 {
        return Err(MtemError::input("at least one trial is required"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(MtemError::input(format!("truncation radius must be positive, got {radius}")));
    }
    if !(radius_multiple > 1.0) {
        return Err(MtemError::input(format!(
            "sampling radius multiple must exceed 1, got {radius_multiple}"
        )));
    }
    let d = model.dimension();
    let h = radius;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y, mut u, mut v) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut scratch = vec![0.0; d];
    let (mut fx, mut fy, mut gx, mut gy) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut max_f: f64 = 0.0;
    let mut max_g: f64 = 0.0;
    let mut case_counts = [0usize; 3];

    let mut done = 0;
    while done < trials {
        let target = done % 3;
        let (x_inside, y_inside) = match target {
            0 => (true, true),
            1 => (false, false),
            _ => (true, false),
        };
        let rx = draw_radius(&mut rng, h, radius_multiple, x_inside);
        random_direction(&mut rng, d, &mut u);
        let local = rng.gen_bool(0.5);
        let ry = if local && target != 2 {
            let jitter = 10f64.powf(-rng.gen_range(1.0..8.0)) * h;
            let candidate = rx + if rng.gen_bool(0.5) { jitter } else { -jitter };
            if x_inside {
                candidate.clamp(0.0, h)
            } else {
                candidate.clamp(h * (1.0 + f64::EPSILON), radius_multiple * h)
            }
        } else if local {
            // straddling pair hugging the sphere
            let gap = 10f64.powf(-rng.gen_range(1.0..8.0)) * h;
            h + gap
        } else {
            draw_radius(&mut rng, h, radius_multiple, y_inside)
        };
        if local {
            random_direction(&mut rng, d, &mut v);
            let tilt = 10f64.powf(-rng.gen_range(1.0..8.0));
            for (vi, ui) in v.iter_mut().zip(&u) {
                *vi = ui + tilt * *vi;
            }
            let r = norm(&v);
            v.iter_mut().for_each(|c| *c /= r);
        } else {
            random_direction(&mut rng, d, &mut v);
        }
        let rx = if local && target == 2 { h * (1.0 - (ry - h) / h) } else { rx };
        for i in 0..d {
            x[i] = rx * u[i];
            y[i] = ry * v[i];
        }
        let dist = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if dist == 0.0 {
            continue;
        }
        truncate_into(model.drift_fn(), h, &x, &mut scratch, &mut fx);
        truncate_into(model.drift_fn(), h, &y, &mut scratch, &mut fy);
        truncate_into(model.diffusion_fn(), h, &x, &mut scratch, &mut gx);
        truncate_into(model.diffusion_fn(), h, &y, &mut scratch, &mut gy);
        let df = fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let dg = gx.iter().zip(&gy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        max_f = max_f.max(df / dist);
        max_g = max_g.max(dg / dist);
        case_counts[PairCase::classify(norm(&x), norm(&y), h).index()] += 1;
        done += 1;
    }

    let lipschitz_at_h = model.lipschitz_bound(h);
    let bound = 3.0 * lipschitz_at_h;
    let limit = bound * (1.0 + LIPSCHITZ_SLACK);
    Ok(LipschitzLemmaReport {
        radius: h,
        trials,
        max_ratio_f: max_f,
        max_ratio_g: max_g,
        lipschitz_at_h,
        bound,
        case_counts,
        pass: max_f <= limit && max_g <= limit,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaLemmaReport {
    pub radius: f64,
    pub p: f64,
    pub lambda: f64,
    /// Sampled `sup Φ_p` of the truncated coefficients.
    pub sup: f64,
    pub min: f64,
    pub points: usize,
    /// `−λ + LAMBDA_SLACK`
    pub bound: f64,
    pub pass: bool,
}

/// Samples the stability functional of `(f_Δ, g_Δ)` over radii in
/// `[h/100, 100h]` (density and seed taken from `plan`) and checks
/// `sup ≤ −λ`.
pub fn verify_lemma_lambda_preserved(
    model: &SdeModel,
    radius: f64,
    p: f64,
    lambda: f64,
    plan: &SamplingPlan,
) -> Result<LambdaLemmaReport> {
    check_moment_order(p)?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(MtemError::input(format!("truncation radius must be positive, got {radius}")));
    }
    let plan = plan.clone().with_range(radius / 100.0, radius * 100.0);
    let mut scratch = vec![0.0; model.dimension()];
    let sample = sample_functional(model.dimension(), p, &plan, |x, fx, gx| {
        truncate_into(model.drift_fn(), radius, x, &mut scratch, fx);
        truncate_into(model.diffusion_fn(), radius, x, &mut scratch, gx);
    })?;
    let bound = -lambda + LAMBDA_SLACK;
    Ok(LambdaLemmaReport {
        radius,
        p,
        lambda,
        sup: sample.max,
        min: sample.min,
        points: sample.points,
        bound,
        pass: sample.max <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn example41_lipschitz_lemma() {
        let report = verify_lemma_global_lipschitz(&SdeModel::example41(), 2.0, 30_000, 10.0, 1).unwrap();
        assert!(report.pass);
        assert!(report.covers_all_cases());
        assert_eq!(report.bound, 39.0);
        assert!(report.max_ratio() <= 39.0);
        // the steepest slope of f on the ball is f'(2) = 13
        assert!(report.max_ratio_f > 12.9 && report.max_ratio_f <= 13.0 + 1e-6);
    }

    #[test]
    fn linear_ratio_is_its_own_constant() {
        let model = SdeModel::linear_in(3, -0.7, 1.4).unwrap();
        let report = verify_lemma_global_lipschitz(&model, 0.5, 3_000, 10.0, 2).unwrap();
        assert!(report.pass);
        // near pairs amplify rounding in the projection
        assert!((report.max_ratio_f - 0.7).abs() < 1e-6);
        assert!((report.max_ratio_g - 1.4).abs() < 1e-6);
    }

    #[test]
    fn violation_is_detected() {
        // declares a Lipschitz bound far below the true slope
        let model = SdeModel::new(
            "liar",
            1,
            Arc::new(|x, out| out[0] = 100.0 * x[0]),
            Arc::new(|x, out| out[0] = x[0]),
            Arc::new(|_| 1.0),
        )
        .unwrap();
        let report = verify_lemma_global_lipschitz(&model, 1.0, 300, 10.0, 0).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn rejects_zero_trials() {
        assert!(verify_lemma_global_lipschitz(&SdeModel::example41(), 2.0, 0, 10.0, 0).is_err());
    }

    #[test]
    fn lambda_lemma_examples() {
        let plan = SamplingPlan::default();
        let r = verify_lemma_lambda_preserved(&SdeModel::example41(), 2.0, 0.5, 1.0, &plan).unwrap();
        assert!(r.pass);
        assert!((r.sup + 1.0).abs() < 1e-9 && (r.min + 1.0).abs() < 1e-9);

        let linear = SdeModel::linear(-1.25, 1.0);
        let r = verify_lemma_lambda_preserved(&linear, 3.0, 0.5, 1.5, &plan).unwrap();
        assert!(r.pass);
        assert!((r.sup + 1.5).abs() < 1e-12);
        let r = verify_lemma_lambda_preserved(&linear, 3.0, 0.5, 2.0, &plan).unwrap();
        assert!(!r.pass);
    }
}
