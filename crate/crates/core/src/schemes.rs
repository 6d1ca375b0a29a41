//! Explicit schemes driven by a scalar Brownian motion.
//!
//! MTEM advances `X_{k+1} = X_k + f_Δ(X_k) Δ + g_Δ(X_k) ΔB_k`; classical EM
//! is the same update with the untruncated coefficients (an infinite radius).
//! Two continuous-time extensions of an MTEM trajectory are provided: the
//! piecewise-constant step process and the frozen-coefficient interpolant.

use std::fmt;
use std::str::FromStr;

use crate::brownian::{BrownianPath, IncrementStream};
use crate::error::{MtemError, Result};
use crate::model::SdeModel;
use crate::numeric::norm;
use crate::truncation::{truncate_into, TruncationPolicy};

pub const DEFAULT_OVERFLOW_GUARD: f64 = 1e10;

/// Relative distance within which a time snaps onto a grid point.
const GRID_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Mtem,
    Em,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Mtem => "mtem",
            SchemeKind::Em => "em",
        })
    }
}

impl FromStr for SchemeKind {
    type Err = MtemError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtem" => Ok(SchemeKind::Mtem),
            "em" => Ok(SchemeKind::Em),
            other => Err(MtemError::input(format!("unknown scheme '{other}' (mtem|em)"))),
        }
    }
}

/// Reusable buffers for evaluating truncated coefficients.
pub(crate) struct Stepper<'a> {
    model: &'a SdeModel,
    radius: f64,
    scratch: Vec<f64>,
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(model: &'a SdeModel, radius: f64) -> Self {
        let d = model.dimension();
        Self {
            model,
            radius,
            scratch: vec![0.0; d],
            drift: vec![0.0; d],
            diffusion: vec![0.0; d],
        }
    }

    #[inline]
    fn coefficients(&mut self, x: &[f64]) {
        truncate_into(self.model.drift_fn(), self.radius, x, &mut self.scratch, &mut self.drift);
        truncate_into(
            self.model.diffusion_fn(),
            self.radius,
            x,
            &mut self.scratch,
            &mut self.diffusion,
        );
    }

    /// `x ← x + f_Δ(x)·dt + g_Δ(x)·dB`
    #[inline]
    pub(crate) fn advance(&mut self, x: &mut [f64], dt: f64, db: f64) {
        self.coefficients(x);
        for ((xi, fi), gi) in x.iter_mut().zip(&self.drift).zip(&self.diffusion) {
            *xi = *xi + fi * dt + gi * db;
        }
    }

    /// `x + f_Δ(x)·dt + g_Δ(x)·dB` written to `out`, leaving `x` untouched.
    pub(crate) fn advance_from(&mut self, x: &[f64], dt: f64, db: f64, out: &mut [f64]) {
        out.copy_from_slice(x);
        self.advance(out, dt, db);
    }
}

#[inline]
fn is_diverged(x: &[f64], guard: f64) -> bool {
    x.iter().any(|v| !v.is_finite()) || norm(x) > guard
}

/// One MTEM step at truncation radius `radius`.
pub fn step_mtem(model: &SdeModel, radius: f64, x: &[f64], delta: f64, db: f64) -> Result<Vec<f64>> {
    model.check_dimension(x)?;
    if !(delta > 0.0) {
        return Err(MtemError::input(format!("step size must be positive, got {delta}")));
    }
    if !(radius > 0.0) {
        return Err(MtemError::input(format!("truncation radius must be positive, got {radius}")));
    }
    let mut out = x.to_vec();
    Stepper::new(model, radius).advance(&mut out, delta, db);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(MtemError::NonFinite);
    }
    Ok(out)
}

/// States `X_0 … X_K` of one path under one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub scheme: SchemeKind,
    pub x0: Vec<f64>,
    pub delta: f64,
    /// Requested horizon `K`.
    pub steps: usize,
    dimension: usize,
    states: Vec<f64>,
    pub diverged: bool,
    pub first_divergence: Option<usize>,
}

impl TrajectoryRecord {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Number of recorded states (`K + 1` unless the path diverged).
    pub fn len(&self) -> usize {
        self.states.len() / self.dimension
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dimension..(k + 1) * self.dimension]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dimension)
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    fn checked_state(&self, k: usize) -> Result<&[f64]> {
        if k >= self.len() {
            return Err(MtemError::input(format!(
                "step {k} was not recorded (path diverged at step {:?})",
                self.first_divergence
            )));
        }
        Ok(self.state(k))
    }
}

/// Outcome of a streamed path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathOutcome {
    pub diverged_at: Option<usize>,
}

/// A scheme bound to a model, step size, horizon and resolved radius.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    model: &'a SdeModel,
    scheme: SchemeKind,
    delta: f64,
    radius: f64,
    steps: usize,
    guard: f64,
}

impl<'a> Simulator<'a> {
    /// For MTEM the radius is `policy.radius(delta)`, which enforces `Δ ≤ Δ*`.
    pub fn new(
        model: &'a SdeModel,
        policy: &TruncationPolicy,
        scheme: SchemeKind,
        delta: f64,
        steps: usize,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(MtemError::input("number of steps must be at least 1"));
        }
        let radius = match scheme {
            SchemeKind::Mtem => policy.radius(delta)?,
            SchemeKind::Em => {
                if !(delta > 0.0 && delta.is_finite()) {
                    return Err(MtemError::input(format!(
                        "step size must be positive, got {delta}"
                    )));
                }
                f64::INFINITY
            }
        };
        Ok(Self {
            model,
            scheme,
            delta,
            radius,
            steps,
            guard: DEFAULT_OVERFLOW_GUARD,
        })
    }

    pub fn with_guard(mut self, guard: f64) -> Self {
        self.guard = guard;
        self
    }

    pub fn scheme(&self) -> SchemeKind {
        self.scheme
    }

    /// Truncation radius in use (`∞` for EM).
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn run(&self, x0: &[f64], path: &BrownianPath) -> Result<TrajectoryRecord> {
        self.model.check_dimension(x0)?;
        if path.delta() != self.delta {
            return Err(MtemError::input(format!(
                "path step {} does not match scheme step {}",
                path.delta(),
                self.delta
            )));
        }
        if path.steps() < self.steps {
            return Err(MtemError::input(format!(
                "path covers {} steps, {} requested",
                path.steps(),
                self.steps
            )));
        }
        let d = self.model.dimension();
        let mut stepper = Stepper::new(self.model, self.radius);
        let mut states = Vec::with_capacity((self.steps + 1) * d);
        states.extend_from_slice(x0);
        let mut x = x0.to_vec();
        let mut first_divergence = is_diverged(&x, self.guard).then_some(0);
        if first_divergence.is_none() {
            for k in 0..self.steps {
                stepper.advance(&mut x, self.delta, path.coarse_increment(k));
                states.extend_from_slice(&x);
                if is_diverged(&x, self.guard) {
                    first_divergence = Some(k + 1);
                    break;
                }
            }
        }
        Ok(TrajectoryRecord {
            scheme: self.scheme,
            x0: x0.to_vec(),
            delta: self.delta,
            steps: self.steps,
            dimension: d,
            states,
            diverged: first_divergence.is_some(),
            first_divergence,
        })
    }

    /// Runs a path straight off an increment stream, calling `visit(k, X_k)`
    /// for every state up to and including a divergent one.
    pub fn run_streamed<V>(&self, x0: &[f64], stream: &mut IncrementStream, mut visit: V) -> PathOutcome
    where
        V: FnMut(usize, &[f64]),
    {
        let mut stepper = Stepper::new(self.model, self.radius);
        let mut fine = vec![0.0; stream.refinement()];
        let mut x = x0.to_vec();
        visit(0, &x);
        if is_diverged(&x, self.guard) {
            return PathOutcome { diverged_at: Some(0) };
        }
        for k in 0..self.steps {
            let db = stream.next_step(&mut fine);
            stepper.advance(&mut x, self.delta, db);
            visit(k + 1, &x);
            if is_diverged(&x, self.guard) {
                return PathOutcome {
                    diverged_at: Some(k + 1),
                };
            }
        }
        PathOutcome { diverged_at: None }
    }
}

/// Simulates `steps` steps of `scheme` along `path`.
pub fn simulate_path(
    model: &SdeModel,
    policy: &TruncationPolicy,
    scheme: SchemeKind,
    x0: &[f64],
    delta: f64,
    steps: usize,
    path: &BrownianPath,
) -> Result<TrajectoryRecord> {
    Simulator::new(model, policy, scheme, delta, steps)?.run(x0, path)
}

fn snap(value: f64) -> Option<usize> {
    let nearest = value.round();
    ((value - nearest).abs() <= GRID_SNAP * nearest.max(1.0)).then_some(nearest as usize)
}

fn check_time(record: &TrajectoryRecord, t: f64) -> Result<()> {
    let horizon = record.steps as f64 * record.delta;
    if !(t >= 0.0 && t <= horizon * (1.0 + GRID_SNAP)) {
        return Err(MtemError::input(format!("time {t} lies outside [0, {horizon}]")));
    }
    Ok(())
}

/// Step process `x̄_Δ(t) = X_k` for `t ∈ [kΔ, (k+1)Δ)`, closed at `t = KΔ`.
pub fn interpolate_step_process(record: &TrajectoryRecord, t: f64) -> Result<Vec<f64>> {
    check_time(record, t)?;
    let s = t / record.delta;
    let k = snap(s).unwrap_or(s.floor() as usize).min(record.steps);
    Ok(record.checked_state(k)?.to_vec())
}

/// Frozen-coefficient interpolant at fine-grid time `kΔ + jΔ/m`:
/// `X_k + f_Δ(X_k)(t − kΔ) + g_Δ(X_k)(B(t) − B(kΔ))`.
pub fn continuous_mtem_at(
    model: &SdeModel,
    radius: f64,
    record: &TrajectoryRecord,
    path: &BrownianPath,
    k: usize,
    j: usize,
) -> Result<Vec<f64>> {
    let m = path.refinement();
    if j > m {
        return Err(MtemError::input(format!("fine index {j} exceeds refinement {m}")));
    }
    if k == record.steps && j == 0 {
        return Ok(record.checked_state(k)?.to_vec());
    }
    if k >= record.steps || k >= path.steps() {
        return Err(MtemError::input(format!("step {k} lies beyond the recorded horizon")));
    }
    if path.delta() != record.delta {
        return Err(MtemError::input("path and record use different step sizes"));
    }
    let xk = record.checked_state(k)?;
    if j == 0 {
        return Ok(xk.to_vec());
    }
    let elapsed = record.delta * (j as f64 / m as f64);
    let mut out = vec![0.0; xk.len()];
    Stepper::new(model, radius).advance_from(xk, elapsed, path.partial_increment(k, j), &mut out);
    Ok(out)
}

/// Frozen-coefficient interpolant at time `t`, which must lie on the fine grid.
pub fn interpolate_continuous_mtem(
    model: &SdeModel,
    radius: f64,
    record: &TrajectoryRecord,
    path: &BrownianPath,
    t: f64,
) -> Result<Vec<f64>> {
    check_time(record, t)?;
    let m = path.refinement();
    let n = snap(t * m as f64 / record.delta).ok_or_else(|| {
        MtemError::input(format!("time {t} is not on the fine grid of spacing Δ/{m}"))
    })?;
    continuous_mtem_at(model, radius, record, path, n / m, n % m)
}
