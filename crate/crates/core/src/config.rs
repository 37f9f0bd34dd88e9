//! Experiment configuration: JSON in, every default resolved, validated
//! before any computation. Errors name the JSON pointer of the offending field.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{make_quadratic, make_robust_regression_with, NoiseKind, NoiseModel, Problem, RegressionOptions};
use crate::schedules::{Algorithm, Constants};

/// JSON schema of the configuration file, published alongside the crate.
pub const SCHEMA: &str = include_str!("../schema/run_config.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Run,
    Sweep,
    Conclab,
    Gengap,
    Contrast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    RobustRegression,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Defaults to `sampling` for gengap, `gaussian-additive` at α = 2 and `pareto-additive` otherwise.
    #[serde(default)]
    pub kind: Option<NoiseKind>,
    /// Defaults to `min(α + 0.3, 2.5)` for Pareto noise and 3 otherwise.
    #[serde(default)]
    pub tail_shape: Option<f64>,
    #[serde(default = "default_noise_scale")]
    pub scale: f64,
    /// Declared moment constant `G`; derived from the problem when null.
    #[serde(default)]
    pub g: Option<f64>,
}

fn default_noise_scale() -> f64 {
    0.25
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            kind: None,
            tail_shape: None,
            scale: default_noise_scale(),
            g: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub family: FamilyKind,
    pub d: usize,
    pub n: usize,
    /// Quadratic only.
    pub condition: f64,
    /// Robust regression only.
    pub label_scale: f64,
    /// Robust regression only.
    pub w_star_norm: f64,
    pub noise: NoiseConfig,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            family: FamilyKind::RobustRegression,
            d: 8,
            n: 256,
            condition: 10.0,
            label_scale: 0.1,
            w_star_norm: 0.5,
            noise: NoiseConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Null selects the family default.
    pub p: Option<f64>,
    pub q: f64,
    pub s: f64,
    pub r: f64,
    pub g0: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let c = Constants::default();
        ScheduleConfig {
            p: None,
            q: c.q,
            s: c.s,
            r: c.r,
            g0: c.g0,
        }
    }
}

impl ScheduleConfig {
    pub fn constants(&self) -> Constants {
        Constants {
            p: self.p.unwrap_or(1.0),
            q: self.q,
            s: self.s,
            r: self.r,
            g0: self.g0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenGapConfig {
    pub n_grid: Vec<usize>,
    pub n_fresh: usize,
    pub records_per_trial: usize,
}

impl Default for GenGapConfig {
    fn default() -> Self {
        GenGapConfig {
            n_grid: (6..=12).map(|k| 1usize << k).collect(),
            n_fresh: 1 << 17,
            records_per_trial: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConclabConfig {
    /// Draws per clipping check.
    pub n_mc: usize,
    pub tau_grid: Vec<f64>,
    /// Dimension of the clipping-check noise.
    pub dim: usize,
    /// Paths per coverage check.
    pub n_trials: usize,
    pub martingale_len: usize,
    pub deltas: Vec<f64>,
    /// Probe points for the sampled uniform-convergence check.
    pub n_probe: usize,
    pub n_fresh: usize,
    pub n_sequences: usize,
}

impl Default for ConclabConfig {
    fn default() -> Self {
        ConclabConfig {
            n_mc: 1_000_000,
            tau_grid: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            dim: 2,
            n_trials: 10_000,
            martingale_len: 1000,
            deltas: vec![0.1, 0.05, 0.01],
            n_probe: 100,
            n_fresh: 1 << 17,
            n_sequences: 1000,
        }
    }
}

/// Fully resolved experiment configuration. Every output file embeds one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    pub alpha: f64,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    /// Horizon for `run` and `contrast`; defaults to 1024, or 4096 for `contrast`.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<usize>,
    /// Defaults to 32, or 64 for `contrast`.
    #[serde(default)]
    pub n_seeds: Option<usize>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Defaults to 1 for `run` and 64 otherwise.
    #[serde(default)]
    pub record_every: Option<usize>,
    /// Allowed distance between the fitted and the target slope.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub gengap: GenGapConfig,
    #[serde(default)]
    pub conclab: ConclabConfig,
}

fn default_algorithm() -> Algorithm {
    Algorithm::SgdClipped
}

fn default_t_grid() -> Vec<usize> {
    (8..=13).map(|k| 1usize << k).collect()
}

fn default_delta() -> f64 {
    0.1
}

fn default_output_dir() -> String {
    "out".into()
}

fn default_tolerance() -> f64 {
    0.15
}

fn config_error(pointer: &str, message: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

impl RunConfig {
    /// Parses JSON text, fills defaults and validates.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer_of(e.path());
            config_error(&pointer, e.into_inner().to_string())
        })?;
        cfg.resolve_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_defaults(&mut self) {
        let kind = self.kind;
        let noise = &mut self.problem.noise;
        let noise_kind = *noise.kind.get_or_insert(match kind {
            ExperimentKind::Gengap => NoiseKind::Sampling,
            _ if self.alpha == 2.0 => NoiseKind::GaussianAdditive,
            _ => NoiseKind::ParetoAdditive,
        });
        if noise.tail_shape.is_none() {
            noise.tail_shape = Some(if noise_kind == NoiseKind::ParetoAdditive {
                (self.alpha + 0.3).min(2.5)
            } else {
                3.0
            });
        }
        self.horizon.get_or_insert(if kind == ExperimentKind::Contrast { 4096 } else { 1024 });
        self.n_seeds.get_or_insert(if kind == ExperimentKind::Contrast { 64 } else { 32 });
        self.record_every.get_or_insert(if kind == ExperimentKind::Run { 1 } else { 64 });
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(config_error("/alpha", format!("alpha must lie in (1,2], got {}", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(config_error("/delta", "delta must lie in (0,1)"));
        }
        let p = &self.problem;
        if p.d == 0 {
            return Err(config_error("/problem/d", "d must be >= 1"));
        }
        if p.n == 0 {
            return Err(config_error("/problem/n", "n must be >= 1"));
        }
        if !(p.condition >= 1.0 && p.condition.is_finite()) {
            return Err(config_error("/problem/condition", "condition must be >= 1"));
        }
        if !(p.label_scale >= 0.0 && p.label_scale.is_finite()) {
            return Err(config_error("/problem/label_scale", "label_scale must be >= 0"));
        }
        if !(p.w_star_norm >= 0.0 && p.w_star_norm.is_finite()) {
            return Err(config_error("/problem/w_star_norm", "w_star_norm must be >= 0"));
        }
        if !(p.noise.scale > 0.0 && p.noise.scale.is_finite()) {
            return Err(config_error("/problem/noise/scale", "noise scale must be positive"));
        }
        let tail = self.tail_shape();
        if !(tail > 0.0 && tail.is_finite()) {
            return Err(config_error("/problem/noise/tail_shape", "tail_shape must be positive"));
        }
        if self.noise_kind() == NoiseKind::ParetoAdditive && tail <= self.alpha {
            return Err(config_error(
                "/problem/noise/tail_shape",
                format!("tail_shape {tail} must exceed alpha {} for a finite alpha-th moment", self.alpha),
            ));
        }
        if let Some(g) = p.noise.g {
            if !(g > 0.0 && g.is_finite()) {
                return Err(config_error("/problem/noise/g", "G must be positive"));
            }
        }
        let s = &self.schedule;
        for (name, v) in [("q", s.q), ("s", s.s), ("r", s.r), ("g0", s.g0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(&format!("/schedule/{name}"), format!("{name} must be positive")));
            }
        }
        if let Some(pv) = s.p {
            if !(pv > 0.0 && pv.is_finite()) {
                return Err(config_error("/schedule/p", "p must be positive"));
            }
        }
        if self.horizon() == 0 {
            return Err(config_error("/horizon", "horizon must be >= 1"));
        }
        if self.n_seeds() == 0 {
            return Err(config_error("/n_seeds", "n_seeds must be >= 1"));
        }
        if self.record_every() == 0 {
            return Err(config_error("/record_every", "record_every must be >= 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(config_error("/tolerance", "tolerance must be >= 0"));
        }
        if let Some(i) = self.t_grid.iter().position(|&t| t == 0) {
            return Err(config_error(&format!("/t_grid/{i}"), "horizons must be >= 1"));
        }
        if self.kind == ExperimentKind::Sweep {
            if self.t_grid.len() < 4 {
                return Err(config_error("/t_grid", "a sweep needs at least 4 horizons"));
            }
            if self.n_seeds() < 16 {
                return Err(config_error("/n_seeds", "a sweep needs at least 16 seeds"));
            }
        }
        if self.kind == ExperimentKind::Gengap {
            if let Some(i) = self.gengap.n_grid.iter().position(|&n| n <= p.d) {
                return Err(config_error(&format!("/gengap/n_grid/{i}"), "sample sizes must exceed d"));
            }
            if self.problem.family != FamilyKind::RobustRegression {
                return Err(config_error("/problem/family", "gengap needs the robust-regression family"));
            }
        }
        let c = &self.conclab;
        if c.n_mc < 2 {
            return Err(config_error("/conclab/n_mc", "n_mc must be >= 2"));
        }
        if let Some(i) = c.tau_grid.iter().position(|t| !(*t > 0.0)) {
            return Err(config_error(&format!("/conclab/tau_grid/{i}"), "tau must be positive"));
        }
        if let Some(i) = c.deltas.iter().position(|d| !(*d > 0.0 && *d < 1.0)) {
            return Err(config_error(&format!("/conclab/deltas/{i}"), "delta must lie in (0,1)"));
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Reads the whole of `reader` (e.g. stdin) as configuration JSON.
    pub fn from_reader(mut reader: impl Read) -> Result<RunConfig> {
        let mut text = String::new();
        reader.read_to_string(&mut text).map_err(|e| Error::io("<stdin>", e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(1024)
    }

    pub fn n_seeds(&self) -> usize {
        self.n_seeds.unwrap_or(32)
    }

    pub fn record_every(&self) -> usize {
        self.record_every.unwrap_or(1)
    }

    pub fn noise_kind(&self) -> NoiseKind {
        self.problem.noise.kind.unwrap_or(NoiseKind::None)
    }

    pub fn tail_shape(&self) -> f64 {
        self.problem.noise.tail_shape.unwrap_or(3.0)
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let mut m = NoiseModel::new(self.noise_kind(), self.tail_shape(), self.problem.noise.scale, self.alpha)?;
        m.g = self.problem.noise.g;
        Ok(m)
    }

    pub fn regression_options(&self) -> Result<RegressionOptions> {
        let mut o = RegressionOptions::new(self.problem.d, self.problem.n, self.seed, self.noise_model()?);
        o.label_scale = self.problem.label_scale;
        o.w_star_norm = self.problem.w_star_norm;
        Ok(o)
    }

    pub fn build_problem(&self) -> Result<Problem> {
        match self.problem.family {
            FamilyKind::RobustRegression => make_robust_regression_with(&self.regression_options()?),
            FamilyKind::Quadratic => make_quadratic(self.problem.d, self.problem.condition, self.noise_model()?),
        }
    }
}
