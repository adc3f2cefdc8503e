//! Domain vocabulary and experiment configuration.
//!
//! The config file is a flat list of `key = value` lines. `#` starts a
//! comment. Every key maps to exactly one [`ExperimentConfig`] field; unknown
//! keys are rejected so that typos never silently fall back to defaults.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Seconds, either simulated or monotonic wall time since the run started.
pub type Timestamp = f64;

/// Number of pushes the server has received from one worker.
pub type IterationCount = u64;

/// Dense worker index in `[0, P)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WorkerId(pub usize);

impl WorkerId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Model parameters held by the server (or a worker's local copy).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub values: Vec<f64>,
    /// Number of updates applied to produce these values.
    pub version: u64,
}

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, version: 0 }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// A mini-batch gradient pushed by a worker.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub source: WorkerId,
    /// Iteration of the source worker that produced this gradient (0-based).
    pub source_iter: IterationCount,
}

impl GradientVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Lower staleness threshold plus the width of the dynamic range above it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StalenessRange {
    pub s_lower: u64,
    pub r_max: u64,
}

impl StalenessRange {
    pub fn upper(&self) -> u64 {
        self.s_lower + self.r_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Paradigm {
    Bsp,
    Asp,
    Ssp,
    Dssp,
}

impl Paradigm {
    pub const ALL: [Paradigm; 4] = [Paradigm::Bsp, Paradigm::Asp, Paradigm::Ssp, Paradigm::Dssp];

    pub fn name(self) -> &'static str {
        match self {
            Paradigm::Bsp => "bsp",
            Paradigm::Asp => "asp",
            Paradigm::Ssp => "ssp",
            Paradigm::Dssp => "dssp",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Paradigm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bsp" => Ok(Paradigm::Bsp),
            "asp" => Ok(Paradigm::Asp),
            "ssp" => Ok(Paradigm::Ssp),
            "dssp" => Ok(Paradigm::Dssp),
            other => Err(format!("unknown paradigm '{other}' (expected bsp, asp, ssp or dssp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    QuadraticBowl,
    LinearRegression,
    LogisticRegression,
    TinyMlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::QuadraticBowl,
        ModelKind::LinearRegression,
        ModelKind::LogisticRegression,
        ModelKind::TinyMlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::QuadraticBowl => "quadratic_bowl",
            ModelKind::LinearRegression => "linear_regression",
            ModelKind::LogisticRegression => "logistic_regression",
            ModelKind::TinyMlp => "tiny_mlp",
        }
    }

    pub fn is_convex(self) -> bool {
        !matches!(self, ModelKind::TinyMlp)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "quadratic_bowl" | "quadraticbowl" => Ok(ModelKind::QuadraticBowl),
            "linear_regression" | "linearregression" => Ok(ModelKind::LinearRegression),
            "logistic_regression" | "logisticregression" => Ok(ModelKind::LogisticRegression),
            "tiny_mlp" | "tinymlp" => Ok(ModelKind::TinyMlp),
            other => Err(format!("unknown model kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simulated,
    Threaded,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulated => "simulated",
            Mode::Threaded => "threaded",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simulated" => Ok(Mode::Simulated),
            "threaded" => Ok(Mode::Threaded),
            other => Err(format!("unknown mode '{other}' (expected simulated or threaded)")),
        }
    }
}

/// A distribution of durations in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DurationDist {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    /// Parameters of the underlying normal: `exp(N(mu, sigma))`.
    LogNormal { mu: f64, sigma: f64 },
}

impl DurationDist {
    /// The same distribution stretched by `factor` (> 0).
    pub fn scaled(self, factor: f64) -> Self {
        match self {
            DurationDist::Constant(c) => DurationDist::Constant(c * factor),
            DurationDist::Uniform { lo, hi } => DurationDist::Uniform { lo: lo * factor, hi: hi * factor },
            DurationDist::LogNormal { mu, sigma } => DurationDist::LogNormal { mu: mu + factor.ln(), sigma },
        }
    }

    pub fn mean(self) -> f64 {
        match self {
            DurationDist::Constant(c) => c,
            DurationDist::Uniform { lo, hi } => 0.5 * (lo + hi),
            DurationDist::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    fn check(self, allow_zero: bool) -> Result<(), String> {
        let ok_min = |v: f64| if allow_zero { v >= 0.0 } else { v > 0.0 };
        match self {
            DurationDist::Constant(c) if c.is_finite() && ok_min(c) => Ok(()),
            DurationDist::Uniform { lo, hi } if lo.is_finite() && hi.is_finite() && ok_min(lo) && lo <= hi => Ok(()),
            DurationDist::LogNormal { mu, sigma } if mu.is_finite() && sigma.is_finite() && sigma >= 0.0 => Ok(()),
            other => Err(format!(
                "{other} must draw {} durations",
                if allow_zero { "non-negative" } else { "strictly positive" }
            )),
        }
    }
}

impl fmt::Display for DurationDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DurationDist::Constant(c) => write!(f, "const({c})"),
            DurationDist::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
            DurationDist::LogNormal { mu, sigma } => write!(f, "lognormal({mu},{sigma})"),
        }
    }
}

impl FromStr for DurationDist {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Ok(c) = s.parse::<f64>() {
            return Ok(DurationDist::Constant(c));
        }
        let open = s.find('(').ok_or_else(|| format!("bad distribution '{s}'"))?;
        if !s.ends_with(')') {
            return Err(format!("bad distribution '{s}'"));
        }
        let name = s[..open].trim().to_ascii_lowercase();
        let args: Vec<f64> = s[open + 1..s.len() - 1]
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| format!("bad number '{}' in '{s}'", a.trim())))
            .collect::<Result<_, _>>()?;
        match (name.as_str(), args.as_slice()) {
            ("const" | "constant", [c]) => Ok(DurationDist::Constant(*c)),
            ("uniform", [lo, hi]) => Ok(DurationDist::Uniform { lo: *lo, hi: *hi }),
            ("lognormal", [mu, sigma]) => Ok(DurationDist::LogNormal { mu: *mu, sigma: *sigma }),
            _ => Err(format!("bad distribution '{s}' (expected const(c), uniform(a,b) or lognormal(mu,sigma))")),
        }
    }
}

/// How per-worker compute times are assigned.
#[derive(Debug, Clone, PartialEq)]
pub enum TimingPreset {
    /// Every worker draws from `compute`.
    Homogeneous,
    /// Two speed classes at 2.2:1; the last `slow_workers` ids are slow.
    GtxMix,
    /// Two speed classes at `speed_ratio`:1; the last `slow_workers` ids are slow.
    TwoSpeed,
    /// One distribution per worker from `compute_per_worker`.
    Custom,
}

impl TimingPreset {
    pub fn name(&self) -> &'static str {
        match self {
            TimingPreset::Homogeneous => "homogeneous",
            TimingPreset::GtxMix => "gtx-mix",
            TimingPreset::TwoSpeed => "two-speed",
            TimingPreset::Custom => "custom",
        }
    }
}

impl FromStr for TimingPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "homogeneous" => Ok(TimingPreset::Homogeneous),
            "gtx-mix" => Ok(TimingPreset::GtxMix),
            "two-speed" => Ok(TimingPreset::TwoSpeed),
            "custom" => Ok(TimingPreset::Custom),
            other => Err(format!("unknown timing preset '{other}'")),
        }
    }
}

pub const GTX_MIX_RATIO: f64 = 2.2;

/// Compute-time and communication-delay specification for the cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingModel {
    pub preset: TimingPreset,
    /// Base (fast-class) compute time per mini-batch.
    pub compute: DurationDist,
    pub speed_ratio: f64,
    /// `None` means half the workers (rounded down).
    pub slow_workers: Option<usize>,
    pub compute_per_worker: Vec<DurationDist>,
    /// One-way message delay.
    pub comm_delay: DurationDist,
    /// Each worker starts at an offset drawn uniformly from `[0, start_skew)`.
    pub start_skew: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        Self {
            preset: TimingPreset::Homogeneous,
            compute: DurationDist::Constant(1.0),
            speed_ratio: GTX_MIX_RATIO,
            slow_workers: None,
            compute_per_worker: Vec::new(),
            comm_delay: DurationDist::Constant(0.0),
            start_skew: 0.0,
        }
    }
}

impl TimingModel {
    pub fn slow_count(&self, workers: usize) -> usize {
        match self.preset {
            TimingPreset::GtxMix | TimingPreset::TwoSpeed => {
                self.slow_workers.unwrap_or(workers / 2).min(workers)
            }
            _ => 0,
        }
    }

    /// Resolved compute-time distribution of every worker.
    pub fn compute_dists(&self, workers: usize) -> Vec<DurationDist> {
        match self.preset {
            TimingPreset::Homogeneous => vec![self.compute; workers],
            TimingPreset::GtxMix | TimingPreset::TwoSpeed => {
                let ratio = if self.preset == TimingPreset::GtxMix { GTX_MIX_RATIO } else { self.speed_ratio };
                let fast = workers - self.slow_count(workers);
                (0..workers)
                    .map(|i| if i < fast { self.compute } else { self.compute.scaled(ratio) })
                    .collect()
            }
            TimingPreset::Custom => self.compute_per_worker.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub paradigm: Paradigm,
    pub staleness: StalenessRange,
    pub worker_count: usize,
    pub timing: TimingModel,
    pub model_kind: ModelKind,
    /// Feature dimension (or bowl dimension).
    pub dimension: usize,
    pub hidden_units: usize,
    pub dataset_size: usize,
    /// Standard deviation of label noise for synthetic regressions.
    pub noise: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: u64,
    pub seed: u64,
    pub mode: Mode,
    /// Full-dataset loss threshold for time-to-target.
    pub loss_target: Option<f64>,
    /// Sample the full-dataset loss every this many updates.
    pub loss_every: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paradigm: Paradigm::Dssp,
            staleness: StalenessRange { s_lower: 3, r_max: 12 },
            worker_count: 4,
            timing: TimingModel::default(),
            model_kind: ModelKind::LogisticRegression,
            dimension: 8,
            hidden_units: 8,
            dataset_size: 2048,
            noise: 0.0,
            batch_size: 16,
            learning_rate: 0.1,
            epochs: 5,
            seed: 42,
            mode: Mode::Simulated,
            loss_target: None,
            loss_every: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key '{key}'")]
    DuplicateKey { line: usize, key: String },
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

pub const MAX_HIDDEN_UNITS: usize = 32;

pub const CONFIG_KEYS: &[&str] = &[
    "paradigm",
    "s_lower",
    "r_max",
    "worker_count",
    "timing",
    "compute",
    "speed_ratio",
    "slow_workers",
    "compute_per_worker",
    "comm_delay",
    "start_skew",
    "model_kind",
    "dimension",
    "hidden_units",
    "dataset_size",
    "noise",
    "batch_size",
    "learning_rate",
    "epochs",
    "seed",
    "mode",
    "loss_target",
    "loss_every",
];

impl ExperimentConfig {
    /// Parses the flat `key = value` format. Missing keys keep their defaults;
    /// the result is not yet validated.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax { line: line_no })?;
            let key = key.trim();
            let value = value.trim();
            let Some(&known) = CONFIG_KEYS.iter().find(|k| **k == key) else {
                return Err(ConfigError::UnknownKey { line: line_no, key: key.to_string() });
            };
            if seen.contains(&known) {
                return Err(ConfigError::DuplicateKey { line: line_no, key: key.to_string() });
            }
            seen.push(known);
            cfg.set(known, value)?;
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &'static str, value: &str) -> Result<(), ConfigError> {
        fn num<T: FromStr>(field: &'static str, v: &str) -> Result<T, ConfigError> {
            v.parse::<T>().map_err(|_| invalid(field, format!("cannot parse '{v}'")))
        }
        fn staleness(field: &'static str, v: &str) -> Result<u64, ConfigError> {
            v.parse::<u64>().map_err(|_| {
                invalid(field, format!("invalid staleness value '{v}': must be a non-negative integer"))
            })
        }
        match key {
            "paradigm" => self.paradigm = value.parse().map_err(|e| invalid(key, e))?,
            "s_lower" => self.staleness.s_lower = staleness(key, value)?,
            "r_max" => self.staleness.r_max = staleness(key, value)?,
            "worker_count" => self.worker_count = num(key, value)?,
            "timing" => self.timing.preset = value.parse().map_err(|e| invalid(key, e))?,
            "compute" => self.timing.compute = value.parse().map_err(|e| invalid(key, e))?,
            "speed_ratio" => self.timing.speed_ratio = num(key, value)?,
            "slow_workers" => self.timing.slow_workers = Some(num(key, value)?),
            "compute_per_worker" => {
                self.timing.compute_per_worker = value
                    .split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| s.parse::<DurationDist>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| invalid(key, e))?
            }
            "comm_delay" => self.timing.comm_delay = value.parse().map_err(|e| invalid(key, e))?,
            "start_skew" => self.timing.start_skew = num(key, value)?,
            "model_kind" => self.model_kind = value.parse().map_err(|e| invalid(key, e))?,
            "dimension" => self.dimension = num(key, value)?,
            "hidden_units" => self.hidden_units = num(key, value)?,
            "dataset_size" => self.dataset_size = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "mode" => self.mode = value.parse().map_err(|e| invalid(key, e))?,
            "loss_target" => {
                self.loss_target = match value {
                    "" | "none" => None,
                    v => Some(num(key, v)?),
                }
            }
            "loss_every" => self.loss_every = num(key, value)?,
            _ => unreachable!("key list and setter out of sync: {key}"),
        }
        Ok(())
    }

    /// Renders every field in the config file format.
    pub fn to_config_string(&self) -> String {
        let t = &self.timing;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("paradigm", self.paradigm.to_string());
        kv("s_lower", self.staleness.s_lower.to_string());
        kv("r_max", self.staleness.r_max.to_string());
        kv("worker_count", self.worker_count.to_string());
        kv("timing", t.preset.name().to_string());
        kv("compute", t.compute.to_string());
        kv("speed_ratio", t.speed_ratio.to_string());
        if let Some(n) = t.slow_workers {
            kv("slow_workers", n.to_string());
        }
        if !t.compute_per_worker.is_empty() {
            let list: Vec<String> = t.compute_per_worker.iter().map(|d| d.to_string()).collect();
            kv("compute_per_worker", list.join("; "));
        }
        kv("comm_delay", t.comm_delay.to_string());
        kv("start_skew", t.start_skew.to_string());
        kv("model_kind", self.model_kind.to_string());
        kv("dimension", self.dimension.to_string());
        kv("hidden_units", self.hidden_units.to_string());
        kv("dataset_size", self.dataset_size.to_string());
        kv("noise", self.noise.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("mode", self.mode.name().to_string());
        kv("loss_target", self.loss_target.map_or("none".to_string(), |v| v.to_string()));
        kv("loss_every", self.loss_every.to_string());
        out
    }
}

/// Checks every invariant and returns the normalized config.
///
/// SSP has no dynamic range, so its `r_max` is normalized to 0.
pub fn validate_config(mut config: ExperimentConfig) -> Result<ExperimentConfig, ConfigError> {
    if config.worker_count < 1 {
        return Err(invalid("worker_count", "must be >= 1"));
    }
    if config.paradigm == Paradigm::Ssp {
        config.staleness.r_max = 0;
    }
    if config.batch_size < 1 {
        return Err(invalid("batch_size", "must be >= 1"));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
        return Err(invalid("learning_rate", "must be a positive finite number"));
    }
    if config.epochs < 1 {
        return Err(invalid("epochs", "must be >= 1"));
    }
    if config.dimension < 1 {
        return Err(invalid("dimension", "must be >= 1"));
    }
    if config.model_kind == ModelKind::TinyMlp && !(1..=MAX_HIDDEN_UNITS).contains(&config.hidden_units) {
        return Err(invalid("hidden_units", format!("must be in [1, {MAX_HIDDEN_UNITS}]")));
    }
    if config.dataset_size < config.worker_count * config.batch_size {
        return Err(invalid(
            "dataset_size",
            format!(
                "must be >= worker_count * batch_size = {}",
                config.worker_count * config.batch_size
            ),
        ));
    }
    if !(config.noise >= 0.0 && config.noise.is_finite()) {
        return Err(invalid("noise", "must be a non-negative finite number"));
    }
    if config.loss_every < 1 {
        return Err(invalid("loss_every", "must be >= 1"));
    }
    if let Some(target) = config.loss_target {
        if !target.is_finite() {
            return Err(invalid("loss_target", "must be finite"));
        }
    }
    let t = &config.timing;
    t.compute.check(false).map_err(|e| invalid("compute", e))?;
    t.comm_delay.check(true).map_err(|e| invalid("comm_delay", e))?;
    if !(t.speed_ratio > 0.0 && t.speed_ratio.is_finite()) {
        return Err(invalid("speed_ratio", "must be a positive finite number"));
    }
    if !(t.start_skew >= 0.0 && t.start_skew.is_finite()) {
        return Err(invalid("start_skew", "must be a non-negative finite number"));
    }
    if let Some(n) = t.slow_workers {
        if n > config.worker_count {
            return Err(invalid("slow_workers", "must not exceed worker_count"));
        }
    }
    if t.preset == TimingPreset::Custom {
        if t.compute_per_worker.len() != config.worker_count {
            return Err(invalid(
                "compute_per_worker",
                format!("needs exactly worker_count = {} entries", config.worker_count),
            ));
        }
        for d in &t.compute_per_worker {
            d.check(false).map_err(|e| invalid("compute_per_worker", e))?;
        }
    }
    Ok(config)
}

/// Derives an independent RNG seed for one stream of one worker.
///
/// SplitMix64 finalizer over the run seed, the stream tag and the worker
/// index, so streams do not depend on scheduling order.
pub fn split_seed(seed: u64, stream: u64, worker: usize) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (worker as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
