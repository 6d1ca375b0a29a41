use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtem::brownian::BrownianPath;
use mtem::lab::{
    one_step_contraction, run_ensemble, verify_lemma_global_lipschitz, verify_lemma_lambda_preserved,
    EnsembleSpec,
};
use mtem::model::{SamplingPlan, SdeModel, StabilityParams};
use mtem::schemes::{interpolate_continuous_mtem, simulate_path, step_mtem, SchemeKind};
use mtem::truncation::{eval_f_delta, eval_g_delta, example41_radius, TruncationPolicy};

fn builtins() -> Vec<SdeModel> {
    vec![
        SdeModel::example41(),
        SdeModel::linear(-1.0, 0.5),
        SdeModel::linear_in(3, -0.7, 1.4).unwrap(),
    ]
}

fn point_in_ball(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-radius..=radius)).collect();
        if v.iter().map(|c| c * c).sum::<f64>().sqrt() <= radius {
            return v;
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Two-dimensional model whose functional genuinely varies with `x`.
fn anisotropic() -> SdeModel {
    SdeModel::new(
        "anisotropic",
        2,
        Arc::new(|x, out| {
            out[0] = -x[0] + 0.3 * x[1];
            out[1] = -2.0 * x[1] - x[1].powi(3);
        }),
        Arc::new(|x, out| {
            out[0] = 0.4 * x[0];
            out[1] = 0.8 * x[1] + 0.2 * x[0];
        }),
        Arc::new(|r| 2.5 + 3.0 * r * r),
    )
    .unwrap()
}

#[test]
fn linear_functional_is_constant() {
    let model = SdeModel::linear_in(3, -1.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let reference = model.stability_functional(0.5, &[1.0, 0.0, 0.0]).unwrap();
    for _ in 0..1000 {
        let scale = 10f64.powf(rng.gen_range(-3.0..3.0));
        let x: Vec<f64> = (0..3).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
        let v = model.stability_functional(0.5, &x).unwrap();
        assert!((v - reference).abs() <= 1e-12, "{v} vs {reference}");
    }
}

#[test]
fn example41_functional_is_minus_one_on_default_plan() {
    let lambda = SdeModel::example41().estimate_lambda(0.5, &SamplingPlan::default()).unwrap();
    assert!((lambda - 1.0).abs() <= 1e-9);
}

#[test]
fn lambda_estimate_never_grows_under_refinement() {
    let model = anisotropic();
    let coarse = SamplingPlan {
        radii_per_decade: 5,
        directions_per_radius: 4,
        ..SamplingPlan::default()
    };
    let mut previous = model.estimate_lambda(0.5, &coarse).unwrap();
    for (radii, dirs) in [(10, 4), (10, 16), (20, 16), (40, 64)] {
        let plan = SamplingPlan {
            radii_per_decade: radii,
            directions_per_radius: dirs,
            ..coarse.clone()
        };
        let next = model.estimate_lambda(0.5, &plan).unwrap();
        assert!(next <= previous, "{next} > {previous} at ({radii}, {dirs})");
        previous = next;
    }
}

#[test]
fn local_lipschitz_audit() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for model in builtins() {
        let d = model.dimension();
        for r in [1.0, 5.0, 10.0] {
            let bound = model.lipschitz_bound(r);
            for _ in 0..10_000 {
                let x = point_in_ball(&mut rng, d, r);
                let y = point_in_ball(&mut rng, d, r);
                let gap = dist(&x, &y);
                if gap == 0.0 {
                    continue;
                }
                let df = dist(&model.evaluate_drift(&x).unwrap(), &model.evaluate_drift(&y).unwrap());
                let dg = dist(&model.evaluate_diffusion(&x).unwrap(), &model.evaluate_diffusion(&y).unwrap());
                assert!(df.max(dg) <= bound * gap * (1.0 + 1e-9), "{} at R = {r}", model.name());
            }
        }
    }
}

#[test]
fn truncated_coefficients_are_globally_lipschitz() {
    for model in builtins() {
        let policy = TruncationPolicy::for_model(&model);
        for delta in [5e-4, 1e-5] {
            let h = policy.radius(delta).unwrap();
            let r = verify_lemma_global_lipschitz(&model, h, 100_000, 10.0, 5).unwrap();
            assert!(r.pass && r.covers_all_cases(), "{} at h = {h}: {r:?}", model.name());
        }
    }
}

#[test]
fn truncation_keeps_functional_below_ball_supremum() {
    let model = anisotropic();
    let plan = SamplingPlan::default();
    for h in [0.5, 2.0] {
        let inside = model.estimate_lambda(0.5, &plan.clone().with_range(h / 100.0, h)).unwrap();
        let r = verify_lemma_lambda_preserved(&model, h, 0.5, inside, &plan).unwrap();
        assert!(r.sup <= -inside + 1e-9, "{} > {}", r.sup, -inside);
    }
}

#[test]
fn branches_agree_on_the_sphere() {
    for model in builtins() {
        let d = model.dimension();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for h in [0.3, 1.0, 7.0] {
            let u = point_in_ball(&mut rng, d, 1.0);
            let n = u.iter().map(|c| c * c).sum::<f64>().sqrt();
            let x: Vec<f64> = u.iter().map(|c| h * c / n).collect();
            let h = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert_eq!(eval_f_delta(&model, h, &x).unwrap(), model.evaluate_drift(&x).unwrap());
            // just past the sphere the projected branch must match to rounding
            let outside = eval_f_delta(&model, h * (1.0 - 1e-15), &x).unwrap();
            assert!(dist(&outside, &model.evaluate_drift(&x).unwrap()) <= 1e-12 * (1.0 + h.powi(3)));
        }
    }
}

#[test]
fn zero_is_a_fixed_point_for_both_schemes() {
    let model = SdeModel::example41();
    let policy = TruncationPolicy::example41();
    let path = BrownianPath::generate(1, 0, 5e-4, 4, 500).unwrap();
    for scheme in [SchemeKind::Mtem, SchemeKind::Em] {
        let record = simulate_path(&model, &policy, scheme, &[0.0], 5e-4, 500, &path).unwrap();
        assert!(record.states().all(|s| s[0] == 0.0));
    }
}

#[test]
fn one_step_contraction_holds() {
    let model = SdeModel::example41();
    let params = StabilityParams::new(0.5, 1.0, 0.5).unwrap();
    for delta in [5e-4, 1e-5] {
        let h = example41_radius(delta);
        for x in [0.5, 1.0, 2.0] {
            let c = one_step_contraction(&model, h, &[x], delta, &params).unwrap();
            assert!(c.pass, "x = {x}, Δ = {delta}: {c:?}");
        }
    }
}

#[test]
fn aggregation_ignores_path_order() {
    let model = SdeModel::example41();
    let policy = TruncationPolicy::example41();
    let (delta, steps, paths, seed) = (5e-4, 400, 200, 23);
    let spec = EnsembleSpec::new(SchemeKind::Mtem, vec![2.0], delta, steps, paths, seed).with_refinement(2);
    let ensemble = run_ensemble(&model, &policy, &spec).unwrap();
    let mut terminal: Vec<f64> = (0..paths)
        .map(|i| {
            let path = BrownianPath::generate(seed, i as u64, delta, 2, steps).unwrap();
            let record = simulate_path(&model, &policy, SchemeKind::Mtem, &[2.0], delta, steps, &path).unwrap();
            record.last()[0].abs().sqrt()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        for i in (1..terminal.len()).rev() {
            terminal.swap(i, rng.gen_range(0..=i));
        }
        let mean = terminal.iter().sum::<f64>() / paths as f64;
        let got = *ensemble.moment.means.last().unwrap();
        assert!(((got - mean) / mean).abs() <= 1e-12, "{got} vs {mean}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn example41_functional_is_minus_one(r in -3.0f64..2.0, sign in prop::bool::ANY) {
        let x = if sign { 10f64.powf(r) } else { -(10f64.powf(r)) };
        let v = SdeModel::example41().stability_functional(0.5, &[x]).unwrap();
        prop_assert!((v + 1.0).abs() <= 1e-9);
    }

    #[test]
    fn projection_is_radially_equivariant(
        u in prop::collection::vec(-1.0f64..1.0, 3),
        h in 0.1f64..5.0,
        stretch in 1.001f64..50.0,
    ) {
        let n = u.iter().map(|c| c * c).sum::<f64>().sqrt();
        prop_assume!(n > 1e-3);
        let model = SdeModel::linear_in(3, -0.7, 1.4).unwrap();
        let x: Vec<f64> = u.iter().map(|c| c / n * h * stretch).collect();
        let on_sphere: Vec<f64> = u.iter().map(|c| c / n * h).collect();
        for (got, base) in [
            (eval_f_delta(&model, h, &x).unwrap(), model.evaluate_drift(&on_sphere).unwrap()),
            (eval_g_delta(&model, h, &x).unwrap(), model.evaluate_diffusion(&on_sphere).unwrap()),
        ] {
            for (a, b) in got.iter().zip(&base) {
                prop_assert!((a - stretch * b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn schemes_agree_inside_the_ball(seed in 0u64..1000, x0 in -0.3f64..0.3) {
        let model = SdeModel::example41();
        let policy = TruncationPolicy::example41();
        let (delta, steps) = (1e-4, 200);
        let path = BrownianPath::generate(seed, 0, delta, 2, steps).unwrap();
        let h = policy.radius(delta).unwrap();
        let mtem = simulate_path(&model, &policy, SchemeKind::Mtem, &[x0], delta, steps, &path).unwrap();
        let em = simulate_path(&model, &policy, SchemeKind::Em, &[x0], delta, steps, &path).unwrap();
        // bitwise agreement holds up to the first step that leaves the ball
        for k in 0..=steps {
            prop_assert_eq!(mtem.state(k), em.state(k));
            if mtem.state(k)[0].abs() > h {
                break;
            }
        }
    }

    #[test]
    fn interpolant_lands_on_the_next_step(seed in 0u64..1000, k in 0usize..50, x0 in -3.0f64..3.0) {
        let model = SdeModel::example41();
        let policy = TruncationPolicy::example41();
        let (delta, steps, m) = (5e-4, 50, 8);
        let h = policy.radius(delta).unwrap();
        let path = BrownianPath::generate(seed, 3, delta, m, steps).unwrap();
        let record = simulate_path(&model, &policy, SchemeKind::Mtem, &[x0], delta, steps, &path).unwrap();
        prop_assume!(!record.diverged);
        let at_grid = interpolate_continuous_mtem(&model, h, &record, &path, (k + 1) as f64 * delta).unwrap();
        let stepped = step_mtem(&model, h, record.state(k), delta, path.coarse_increment(k)).unwrap();
        prop_assert_eq!(&at_grid, &stepped);
        prop_assert_eq!(at_grid.as_slice(), record.state(k + 1));
    }
}
