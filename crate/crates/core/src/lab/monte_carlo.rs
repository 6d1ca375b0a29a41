use crate::brownian::IncrementStream;
use crate::error::{MtemError, Result};
use crate::model::SdeModel;
use crate::numeric::{norm, quantile_sorted, CompensatedSum};
use crate::parallel::for_each_block;
use crate::schemes::{SchemeKind, Simulator};
use crate::truncation::TruncationPolicy;

/// Underflow floor applied inside logarithms.
pub const DEFAULT_FLOOR: f64 = 1e-300;

/// Inputs of a Monte Carlo ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub scheme: SchemeKind,
    pub x0: Vec<f64>,
    pub delta: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    pub refinement: usize,
    pub p: f64,
    pub floor: f64,
    pub workers: usize,
}

impl EnsembleSpec {
    pub fn new(scheme: SchemeKind, x0: Vec<f64>, delta: f64, steps: usize, paths: usize, seed: u64) -> Self {
        Self {
            scheme,
            x0,
            delta,
            steps,
            paths,
            seed,
            refinement: 16,
            p: 0.5,
            floor: DEFAULT_FLOOR,
            workers: 1,
        }
    }

    pub fn with_refinement(mut self, refinement: usize) -> Self {
        self.refinement = refinement;
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.delta
    }

    fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(MtemError::input("number of paths must be at least 1"));
        }
        if !(self.p > 0.0) {
            return Err(MtemError::input(format!("moment order must be positive, got {}", self.p)));
        }
        if !(self.floor > 0.0) {
            return Err(MtemError::input(format!("floor must be positive, got {}", self.floor)));
        }
        Ok(())
    }
}

/// Sample means of `|X_k|^p` across paths.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub p: f64,
    pub paths: usize,
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Paths contributing at each step; diverged paths drop out after divergence.
    pub counts: Vec<usize>,
    /// Paths whose `|X_k|^p` fell below the floor.
    pub censored: Vec<usize>,
    pub diverged_paths: usize,
}

impl MomentEstimate {
    /// Wraps an externally computed curve (unit counts, zero standard errors).
    pub fn from_curve(p: f64, times: Vec<f64>, means: Vec<f64>) -> Result<Self> {
        if times.len() != means.len() || times.is_empty() {
            return Err(MtemError::input("times and means must be non-empty and of equal length"));
        }
        if means.iter().any(|m| *m < 0.0) {
            return Err(MtemError::input("moment estimates must be nonnegative"));
        }
        let n = times.len();
        Ok(Self {
            p,
            paths: 1,
            times,
            means,
            std_errors: vec![0.0; n],
            counts: vec![1; n],
            censored: vec![0; n],
            diverged_paths: 0,
        })
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty curve")
    }
}

/// Per-path terminal information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    /// `|X_K|`, absent for diverged paths.
    pub terminal_norm: Option<f64>,
    pub diverged_at: Option<usize>,
}

/// Moment curve plus per-path terminal states from one set of paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub moment: MomentEstimate,
    pub paths: Vec<PathSummary>,
    pub delta: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsExponentSummary {
    /// `log|X_K| / (KΔ)` per surviving path, in path order.
    pub rates: Vec<f64>,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    pub max: f64,
    pub censored: usize,
    pub diverged: usize,
    pub horizon: f64,
}

impl AsExponentSummary {
    pub fn fully_censored(&self) -> bool {
        self.censored == self.rates.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub paths: usize,
    pub mtem_diverged: usize,
    pub em_diverged: usize,
    pub mtem_first_divergence: Vec<Option<usize>>,
    pub em_first_divergence: Vec<Option<usize>>,
}

struct Accumulator {
    sum: Vec<CompensatedSum>,
    sum_sq: Vec<CompensatedSum>,
    count: Vec<usize>,
    censored: Vec<usize>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![CompensatedSum::default(); len],
            sum_sq: vec![CompensatedSum::default(); len],
            count: vec![0; len],
            censored: vec![0; len],
        }
    }

    fn merge(&mut self, other: &Accumulator) {
        for k in 0..self.sum.len() {
            self.sum[k].merge(&other.sum[k]);
            self.sum_sq[k].merge(&other.sum_sq[k]);
            self.count[k] += other.count[k];
            self.censored[k] += other.censored[k];
        }
    }
}

struct BlockResult {
    acc: Accumulator,
    paths: Vec<PathSummary>,
}

/// Simulates `spec.paths` independent paths and aggregates `|X_k|^p`.
pub fn run_ensemble(model: &SdeModel, policy: &TruncationPolicy, spec: &EnsembleSpec) -> Result<Ensemble> {
    spec.validate()?;
    model.check_dimension(&spec.x0)?;
    let sim = Simulator::new(model, policy, spec.scheme, spec.delta, spec.steps)?;
    // validates the Brownian grid once up front
    IncrementStream::new(spec.seed, 0, spec.delta, spec.refinement)?;
    let len = spec.steps + 1;

    let work = |range: std::ops::Range<usize>| {
        let mut acc = Accumulator::new(len);
        let mut summaries = Vec::with_capacity(range.len());
        let mut norms = Vec::with_capacity(len);
        for index in range {
            let mut stream = IncrementStream::new(spec.seed, index as u64, spec.delta, spec.refinement)
                .expect("grid validated");
            norms.clear();
            let outcome = sim.run_streamed(&spec.x0, &mut stream, |_, x| norms.push(norm(x)));
            let kept = outcome.diverged_at.unwrap_or(len);
            for (k, r) in norms[..kept].iter().enumerate() {
                let v = r.powf(spec.p);
                acc.sum[k].add(v);
                acc.sum_sq[k].add(v * v);
                acc.count[k] += 1;
                if v < spec.floor {
                    acc.censored[k] += 1;
                }
            }
            summaries.push(PathSummary {
                terminal_norm: outcome.diverged_at.is_none().then(|| norms[len - 1]),
                diverged_at: outcome.diverged_at,
            });
        }
        BlockResult { acc, paths: summaries }
    };

    let mut total = Accumulator::new(len);
    let mut paths = Vec::with_capacity(spec.paths);
    for_each_block(spec.paths, spec.workers, work, |block: BlockResult| {
        total.merge(&block.acc);
        paths.extend(block.paths);
        Ok::<(), MtemError>(())
    })?;

    let mut means = Vec::with_capacity(len);
    let mut std_errors = Vec::with_capacity(len);
    for k in 0..len {
        let n = total.count[k];
        if n == 0 {
            means.push(f64::NAN);
            std_errors.push(f64::NAN);
            continue;
        }
        let nf = n as f64;
        let s = total.sum[k].value();
        let mean = s / nf;
        let se = if n > 1 {
            let var = ((total.sum_sq[k].value() - s * mean) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        } else {
            0.0
        };
        means.push(mean);
        std_errors.push(se);
    }

    let diverged_paths = paths.iter().filter(|p| p.diverged_at.is_some()).count();
    Ok(Ensemble {
        moment: MomentEstimate {
            p: spec.p,
            paths: spec.paths,
            times: (0..len).map(|k| k as f64 * spec.delta).collect(),
            means,
            std_errors,
            counts: total.count,
            censored: total.censored,
            diverged_paths,
        },
        paths,
        delta: spec.delta,
        steps: spec.steps,
    })
}

/// `E|X_k|^p` across `spec.paths` paths, `k = 0..K`.
pub fn estimate_moment_curve(
    model: &SdeModel,
    policy: &TruncationPolicy,
    spec: &EnsembleSpec,
) -> Result<MomentEstimate> {
    if spec.paths < 2 {
        return Err(MtemError::input("moment estimation needs at least 2 paths"));
    }
    let ensemble = run_ensemble(model, policy, spec)?;
    if ensemble.moment.diverged_paths == spec.paths {
        return Err(MtemError::Estimation(format!(
            "all {} paths diverged before the horizon",
            spec.paths
        )));
    }
    Ok(ensemble.moment)
}

impl Ensemble {
    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.delta
    }

    /// Quantiles of `log max(|X_K|, floor) / (KΔ)` over surviving paths.
    pub fn as_exponent_summary(&self, floor: f64) -> Result<AsExponentSummary> {
        let horizon = self.horizon();
        if horizon < 1.0 {
            return Err(MtemError::input(format!(
                "terminal time KΔ = {horizon} must be at least 1"
            )));
        }
        if !(floor > 0.0) {
            return Err(MtemError::input(format!("floor must be positive, got {floor}")));
        }
        let mut censored = 0;
        let rates: Vec<f64> = self
            .paths
            .iter()
            .filter_map(|p| p.terminal_norm)
            .map(|r| {
                if r < floor {
                    censored += 1;
                }
                r.max(floor).ln() / horizon
            })
            .collect();
        let diverged = self.paths.len() - rates.len();
        if rates.is_empty() {
            return Err(MtemError::Estimation(format!("all {diverged} paths diverged")));
        }
        let mut sorted = rates.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(AsExponentSummary {
            q05: quantile_sorted(&sorted, 0.05),
            q50: quantile_sorted(&sorted, 0.5),
            q95: quantile_sorted(&sorted, 0.95),
            max: *sorted.last().expect("non-empty"),
            rates,
            censored,
            diverged,
            horizon,
        })
    }
}

/// Per-path almost-sure exponent estimates `log|X_K|/(KΔ)`.
pub fn estimate_as_exponent(
    model: &SdeModel,
    policy: &TruncationPolicy,
    spec: &EnsembleSpec,
) -> Result<AsExponentSummary> {
    if spec.horizon() < 1.0 {
        return Err(MtemError::input(format!(
            "terminal time KΔ = {} must be at least 1",
            spec.horizon()
        )));
    }
    run_ensemble(model, policy, spec)?.as_exponent_summary(spec.floor)
}

/// Runs MTEM and EM on identical Brownian paths and tallies divergences.
/// `spec.scheme` is ignored.
pub fn compare_schemes(
    model: &SdeModel,
    policy: &TruncationPolicy,
    spec: &EnsembleSpec,
) -> Result<CompareSummary> {
    spec.validate()?;
    model.check_dimension(&spec.x0)?;
    let mtem = Simulator::new(model, policy, SchemeKind::Mtem, spec.delta, spec.steps)?;
    let em = Simulator::new(model, policy, SchemeKind::Em, spec.delta, spec.steps)?;
    IncrementStream::new(spec.seed, 0, spec.delta, spec.refinement)?;

    let work = |range: std::ops::Range<usize>| {
        range
            .map(|index| {
                let run = |sim: &Simulator| {
                    let mut stream =
                        IncrementStream::new(spec.seed, index as u64, spec.delta, spec.refinement)
                            .expect("grid validated");
                    sim.run_streamed(&spec.x0, &mut stream, |_, _| {}).diverged_at
                };
                (run(&mtem), run(&em))
            })
            .collect::<Vec<_>>()
    };
    let mut mtem_first = Vec::with_capacity(spec.paths);
    let mut em_first = Vec::with_capacity(spec.paths);
    for_each_block(spec.paths, spec.workers, work, |block| {
        for (a, b) in block {
            mtem_first.push(a);
            em_first.push(b);
        }
        Ok::<(), MtemError>(())
    })?;
    Ok(CompareSummary {
        paths: spec.paths,
        mtem_diverged: mtem_first.iter().filter(|d| d.is_some()).count(),
        em_diverged: em_first.iter().filter(|d| d.is_some()).count(),
        mtem_first_divergence: mtem_first,
        em_first_divergence: em_first,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_start_gives_zero_curve() {
        let model = SdeModel::example41();
        let policy = TruncationPolicy::example41();
        let spec = EnsembleSpec::new(SchemeKind::Mtem, vec![0.0], 5e-4, 2000, 8, 1).with_refinement(1);
        let ensemble = run_ensemble(&model, &policy, &spec).unwrap();
        assert!(ensemble.moment.means.iter().all(|m| *m == 0.0));
        let summary = ensemble.as_exponent_summary(DEFAULT_FLOOR).unwrap();
        assert!(summary.fully_censored());
        assert!((summary.max - DEFAULT_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn zero_noise_linear_moment_curve() {
        let model = SdeModel::linear(-1.0, 0.0);
        let policy = TruncationPolicy::for_model(&model);
        let spec = EnsembleSpec::new(SchemeKind::Mtem, vec![1.0], 0.1, 30, 4, 3).with_refinement(2);
        let est = estimate_moment_curve(&model, &policy, &spec).unwrap();
        for (k, m) in est.means.iter().enumerate() {
            assert!((m - 0.9f64.powf(k as f64 / 2.0)).abs() < 1e-14);
            assert_eq!(est.std_errors[k], 0.0);
        }
        let summary = estimate_as_exponent(&model, &policy, &spec).unwrap();
        for r in summary.rates {
            assert!((r - 0.9f64.ln() / 0.1).abs() < 1e-12);
        }
        assert!((0.9f64.ln() / 0.1 + 1.0536052).abs() < 1e-7);
    }

    #[test]
    fn result_independent_of_worker_count() {
        let model = SdeModel::example41();
        let policy = TruncationPolicy::example41();
        let base = EnsembleSpec::new(SchemeKind::Mtem, vec![2.0], 5e-4, 400, 150, 9).with_refinement(2);
        let one = run_ensemble(&model, &policy, &base).unwrap();
        let four = run_ensemble(&model, &policy, &base.clone().with_workers(4)).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn doubling_paths_keeps_per_path_values() {
        let model = SdeModel::example41();
        let policy = TruncationPolicy::example41();
        let small = EnsembleSpec::new(SchemeKind::Mtem, vec![2.0], 5e-4, 200, 70, 4).with_refinement(1);
        let large = EnsembleSpec { paths: 140, ..small.clone() };
        let a = run_ensemble(&model, &policy, &small).unwrap();
        let b = run_ensemble(&model, &policy, &large).unwrap();
        assert_eq!(a.paths[..], b.paths[..70]);
    }

    #[test]
    fn all_diverged_is_an_estimation_error() {
        let model = SdeModel::example41();
        let policy = TruncationPolicy::example41();
        let spec = EnsembleSpec::new(SchemeKind::Em, vec![1e6], 1e-3, 50, 4, 0).with_refinement(1);
        let err = estimate_moment_curve(&model, &policy, &spec).unwrap_err();
        assert!(matches!(err, MtemError::Estimation(_)));
        let err = run_ensemble(&model, &policy, &EnsembleSpec { steps: 1000, ..spec })
            .unwrap()
            .as_exponent_summary(DEFAULT_FLOOR)
            .unwrap_err();
        assert!(matches!(err, MtemError::Estimation(_)));
    }

    #[test]
    fn short_horizon_rejected_for_as_exponent() {
        let model = SdeModel::example41();
        let policy = TruncationPolicy::example41();
        let spec = EnsembleSpec::new(SchemeKind::Mtem, vec![1.0], 5e-4, 100, 2, 0);
        assert!(matches!(
            estimate_as_exponent(&model, &policy, &spec),
            Err(MtemError::Input(_))
        ));
    }

    #[test]
    fn moment_needs_two_paths() {
        let model = SdeModel::example41();
        let policy = TruncationPolicy::example41();
        let spec = EnsembleSpec::new(SchemeKind::Mtem, vec![1.0], 5e-4, 10, 1, 0);
        assert!(estimate_moment_curve(&model, &policy, &spec).is_err());
    }
}
