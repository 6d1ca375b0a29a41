use super::monte_carlo::MomentEstimate;
use crate::error::{MtemError, Result};

pub const MIN_FIT_POINTS: usize = 10;

/// Least-squares line through `(t, log moment)` over a time window.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentFit {
    /// Decay rate per unit time.
    pub slope: f64,
    pub intercept: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub r_squared: f64,
    pub points: usize,
    /// Points whose moment sat at or below the floor.
    pub censored_points: usize,
}

/// The last 60% of the horizon.
pub fn default_window(horizon: f64) -> (f64, f64) {
    (0.4 * horizon, horizon)
}

pub fn fit_exponent(estimate: &MomentEstimate, window: (f64, f64), floor: f64) -> Result<ExponentFit> {
    let (t_lo, t_hi) = window;
    if !(floor > 0.0) {
        return Err(MtemError::input(format!("floor must be positive, got {floor}")));
    }
    let horizon = estimate.horizon();
    let slack = 1e-9 * horizon.max(1.0);
    if !(t_lo < t_hi && t_lo >= -slack && t_hi <= horizon + slack) {
        return Err(MtemError::input(format!(
            "fit window [{t_lo}, {t_hi}] must be increasing and inside [0, {horizon}]"
        )));
    }

    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut censored_points = 0;
    for ((&t, &m), &n) in estimate.times.iter().zip(&estimate.means).zip(&estimate.counts) {
        if t < t_lo - slack || t > t_hi + slack || n == 0 || !m.is_finite() {
            continue;
        }
        if m <= floor {
            censored_points += 1;
        }
        ts.push(t);
        ys.push(m.max(floor).ln());
    }
    if ts.len() < MIN_FIT_POINTS {
        return Err(MtemError::input(format!(
            "fit window holds {} usable points, at least {MIN_FIT_POINTS} needed",
            ts.len()
        )));
    }

    let n = ts.len() as f64;
    let t_mean = ts.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let (mut stt, mut sty) = (0.0, 0.0);
    for (t, y) in ts.iter().zip(&ys) {
        stt += (t - t_mean) * (t - t_mean);
        sty += (t - t_mean) * (y - y_mean);
    }
    let slope = sty / stt;
    let intercept = y_mean - slope * t_mean;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (t, y) in ts.iter().zip(&ys) {
        let r = y - (intercept + slope * t);
        ss_res += r * r;
        ss_tot += (y - y_mean) * (y - y_mean);
    }
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    Ok(ExponentFit {
        slope,
        intercept,
        t_lo,
        t_hi,
        r_squared,
        points: ts.len(),
        censored_points,
    })
}
