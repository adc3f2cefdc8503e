//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls into the code under test for the quantity it checks;
//! the library is only used to build inputs.

#![allow(dead_code)]

use paramsync::config::{DurationDist, ExperimentConfig, ModelKind, Paradigm, StalenessRange, TimingPreset};
use paramsync::engine::{Example, Model};
use rand::Rng;

/// Exhaustive `argmin_r min_k |S(k) - P(r)|` over `r, k in [0, r_max]`,
/// smallest `r` on ties. Inputs are the raw last-two push times.
pub fn brute_force_controller(
    p_prev: f64,
    p_latest: f64,
    s_prev: f64,
    s_latest: f64,
    r_max: u64,
) -> u64 {
    const FLOOR: f64 = 1e-9;
    let ip = (p_latest - p_prev).max(FLOOR);
    let is = (s_latest - s_prev).max(FLOOR);
    let next_s = s_latest + is;
    let mut best = (f64::INFINITY, 0u64);
    for r in 0..=r_max {
        let pr = p_latest + r as f64 * ip;
        for k in 0..=r_max {
            let gap = (next_s + k as f64 * is - pr).abs();
            if gap < best.0 {
                best = (gap, r);
            }
        }
    }
    best.1
}

/// Slowest active worker by iteration count, smallest id on ties.
pub fn slowest_of(counts: &[u64], retired: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &c) in counts.iter().enumerate() {
        if retired[i] {
            continue;
        }
        if best.is_none_or(|b| c < counts[b]) {
            best = Some(i);
        }
    }
    best
}

/// Central finite-difference gradient of the mean loss.
pub fn fd_gradient(model: &Model, w: &[f64], batch: &[Example], h: f64) -> Vec<f64> {
    let mut w = w.to_vec();
    (0..w.len())
        .map(|i| {
            let orig = w[i];
            w[i] = orig + h;
            let up = model.loss(&w, batch);
            w[i] = orig - h;
            let down = model.loss(&w, batch);
            w[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, or the absolute norm when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Box-Muller, so this file does not share the data generator's sampler.
fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A random model with a random batch, kept away from the logit clamp.
pub fn random_instance(kind: ModelKind, rng: &mut impl Rng) -> (Model, Vec<f64>, Vec<Example>) {
    let d = rng.random_range(1..=6);
    let hidden = rng.random_range(1..=5);
    let n = rng.random_range(1..=8);
    let model = match kind {
        ModelKind::QuadraticBowl => Model::quadratic_bowl((0..d).map(|_| gauss(rng)).collect()),
        ModelKind::LinearRegression => Model::linear_regression(d),
        ModelKind::LogisticRegression => Model::logistic_regression(d),
        ModelKind::TinyMlp => Model::tiny_mlp(d, hidden),
    };
    let w: Vec<f64> = (0..model.dimension()).map(|_| gauss(rng)).collect();
    let batch = (0..n)
        .map(|_| {
            if kind == ModelKind::QuadraticBowl {
                return Example { x: Vec::new(), y: 0.0 };
            }
            let x: Vec<f64> = (0..d).map(|_| gauss(rng)).collect();
            let y = match kind {
                ModelKind::LogisticRegression => f64::from(rng.random_bool(0.5)),
                _ => gauss(rng),
            };
            Example { x, y }
        })
        .collect();
    (model, w, batch)
}

fn random_dist(rng: &mut impl Rng, scale: f64) -> DurationDist {
    match rng.random_range(0..3) {
        0 => DurationDist::Constant(scale * rng.random_range(0.2..2.0)),
        1 => {
            let lo = scale * rng.random_range(0.1..1.0);
            DurationDist::Uniform { lo, hi: lo + scale * rng.random_range(0.0..2.0) }
        }
        _ => DurationDist::LogNormal { mu: scale.ln() + rng.random_range(-1.0..0.5), sigma: rng.random_range(0.0..1.0) },
    }
}

/// A cheap random scenario over every timing preset and distribution.
pub fn random_config(paradigm: Paradigm, workers: usize, rng: &mut impl Rng) -> ExperimentConfig {
    let preset = match rng.random_range(0..4) {
        0 => TimingPreset::Homogeneous,
        1 => TimingPreset::GtxMix,
        2 => TimingPreset::TwoSpeed,
        _ => TimingPreset::Custom,
    };
    let compute_per_worker = if preset == TimingPreset::Custom {
        (0..workers).map(|_| random_dist(rng, 1.0)).collect()
    } else {
        Vec::new()
    };
    let comm_delay = if rng.random_bool(0.3) { DurationDist::Constant(0.0) } else { random_dist(rng, 0.2) };
    let batch_size = rng.random_range(1..=4);
    let model_kind = if rng.random_bool(0.5) { ModelKind::QuadraticBowl } else { ModelKind::LinearRegression };
    let mut config = ExperimentConfig {
        paradigm,
        staleness: StalenessRange { s_lower: rng.random_range(0..=5), r_max: rng.random_range(0..=8) },
        worker_count: workers,
        model_kind,
        dimension: rng.random_range(1..=4),
        dataset_size: workers * batch_size * rng.random_range(2..=8),
        batch_size,
        learning_rate: 0.01,
        epochs: rng.random_range(1..=4),
        seed: rng.random(),
        loss_every: 1_000_000,
        ..Default::default()
    };
    let t = &mut config.timing;
    t.preset = preset;
    t.compute = random_dist(rng, 1.0);
    t.speed_ratio = rng.random_range(1.0..5.0);
    t.slow_workers = rng.random_bool(0.5).then(|| rng.random_range(0..=workers));
    t.compute_per_worker = compute_per_worker;
    t.comm_delay = comm_delay;
    t.start_skew = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..3.0) };
    config
}

/// One row of a trace file, parsed without the library's reader.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub time: f64,
    pub worker: usize,
    pub kind: String,
    pub t_p: u64,
    pub decision: String,
}

pub fn parse_rows(tsv: &str) -> Vec<Row> {
    tsv.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            assert_eq!(f.len(), 5, "bad row {line:?}");
            Row {
                time: f[0].parse().unwrap(),
                worker: f[1].parse().unwrap(),
                kind: f[2].to_string(),
                t_p: f[3].parse().unwrap(),
                decision: f[4].to_string(),
            }
        })
        .collect()
}

/// Largest gap between the most advanced worker and the slowest still
/// running one, checked at every grant. A worker stops counting once its
/// last push has arrived.
pub fn grant_spread_oracle(rows: &[Row]) -> u64 {
    let workers = rows.iter().map(|r| r.worker + 1).max().unwrap_or(0);
    let mut last_push = vec![usize::MAX; workers];
    for (i, r) in rows.iter().enumerate() {
        if r.kind == "push_arrive" {
            last_push[r.worker] = i;
        }
    }
    let mut counts = vec![0u64; workers];
    let mut done = vec![false; workers];
    let mut worst = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.kind == "push_arrive" {
            counts[r.worker] = r.t_p;
        }
        let granted = r.decision == "grant" || r.decision == "credit" || r.decision.starts_with("mint:");
        if r.kind == "push_arrive" && granted {
            let max = counts.iter().copied().max().unwrap_or(0);
            let min = (0..workers).filter(|&w| !done[w]).map(|w| counts[w]).min().unwrap_or(max);
            worst = worst.max(max.saturating_sub(min));
        }
        if r.kind == "push_arrive" && last_push[r.worker] == i {
            done[r.worker] = true;
        }
    }
    worst
}

/// Per-worker `(wait, compute, comm, elapsed)` recomputed from phase
/// boundaries in the trace.
pub fn accounting_oracle(rows: &[Row], workers: usize) -> Vec<(f64, f64, f64, f64)> {
    let mut out = vec![(0.0, 0.0, 0.0, 0.0); workers];
    for (w, acc) in out.iter_mut().enumerate() {
        let mine: Vec<&Row> = rows.iter().filter(|r| r.worker == w).collect();
        let Some(first) = mine.iter().find(|r| r.kind == "pull_return") else { continue };
        let start = first.time;
        let mut mark = start;
        let mut last = start;
        for r in &mine {
            match r.kind.as_str() {
                "compute_done" => {
                    acc.1 += r.time - mark;
                    mark = r.time;
                }
                "push_arrive" => {
                    acc.2 += r.time - mark;
                    mark = r.time;
                }
                "grant_deliver" => {
                    acc.0 += r.time - mark;
                    mark = r.time;
                }
                "pull_return" => {
                    acc.2 += r.time - mark;
                    mark = r.time;
                }
                _ => {}
            }
            last = mark;
        }
        acc.3 = last - start;
    }
    out
}
