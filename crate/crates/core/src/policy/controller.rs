//! Prediction of how many extra iterations the fastest worker should run
//! before waiting.
//!
//! Using the last two push timestamps of the pusher and of the slowest
//! worker, both are extrapolated at constant interval:
//!
//! ```text
//! pusher  : P(r) = latest_p + r * I_p                r in [0, r_max]
//! slowest : S(k) = latest_s + I_s + k * I_s          k in [0, r_max]
//! ```
//!
//! `S(0)` is the slowest worker's *next* push, which is why it carries one
//! interval more than `P(0)`. The answer is the `r` whose predicted push
//! lands closest to any predicted push of the slowest worker; the smallest
//! `r` wins ties.

use crate::config::{Timestamp, WorkerId};

use super::{IterationClockTable, PushHistoryTable};

/// Floor applied to measured intervals (seconds).
pub const MIN_INTERVAL: f64 = 1e-9;

/// Records `push_time` for `p`, picks the slowest worker from `clocks` and
/// returns the number of extra iterations `p` should run, in `[0, r_max]`.
///
/// Returns 0 when either worker has fewer than two recorded pushes.
pub fn synchronization_controller(
    history: &mut PushHistoryTable,
    p: WorkerId,
    push_time: Timestamp,
    clocks: &IterationClockTable,
    r_max: u64,
) -> u64 {
    history.record(p, push_time);
    match clocks.slowest() {
        Some((slowest, _)) if slowest != p => predict_extra_iterations(history, p, slowest, r_max),
        _ => 0,
    }
}

/// The argmin search alone, without touching the history.
pub fn predict_extra_iterations(history: &PushHistoryTable, p: WorkerId, slowest: WorkerId, r_max: u64) -> u64 {
    if r_max == 0 {
        return 0;
    }
    let (Some(ip), Some(is)) = (history.interval(p), history.interval(slowest)) else {
        return 0;
    };
    let ip = ip.max(MIN_INTERVAL);
    let is = is.max(MIN_INTERVAL);
    let p0 = history.latest(p).unwrap_or(0.0);
    let s0 = history.latest(slowest).unwrap_or(0.0) + is;

    let mut best_r = 0;
    let mut best_gap = f64::INFINITY;
    for r in 0..=r_max {
        let t = p0 + r as f64 * ip;
        let gap = nearest_gap(t, s0, is, r_max);
        if gap < best_gap {
            best_gap = gap;
            best_r = r;
        }
    }
    best_r
}

/// `min_k |s0 + k * step - t|` over `k in [0, k_max]`.
///
/// The minimizer is next to `(t - s0) / step`; its neighbours are checked
/// too so rounding in that quotient cannot pick the wrong one.
fn nearest_gap(t: f64, s0: f64, step: f64, k_max: u64) -> f64 {
    let guess = ((t - s0) / step).round();
    let centre = if guess.is_nan() { 0 } else { guess.clamp(0.0, k_max as f64) as u64 };
    let lo = centre.saturating_sub(1);
    let hi = (centre + 1).min(k_max);
    (lo..=hi)
        .map(|k| (s0 + k as f64 * step - t).abs())
        .fold(f64::INFINITY, f64::min)
}
