use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transport::ExactOptions;

pub const SCHEMA_VERSION: u32 = 1;

/// `C_data` giving `r_* <= 8` on at least 95% of (seed, center) draws at `L = 64`.
pub const DEFAULT_C_DATA: f64 = 1.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    MatchingScaling,
    HarmonicApprox,
    EpsregDecay,
    Cascade,
    RstarTail,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::MatchingScaling => "matching-scaling",
            ExperimentKind::HarmonicApprox => "harmonic-approx",
            ExperimentKind::EpsregDecay => "epsreg-decay",
            ExperimentKind::Cascade => "cascade",
            ExperimentKind::RstarTail => "rstar-tail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub count: u64,
    pub base: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { count: 64, base: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolutionConfig {
    /// Target grid cells per unit length: `m = m_factor * L`.
    pub m_factor: usize,
    /// Field grid cells per side; `max(4L, 64)` rounded up to a power of two when absent.
    pub field_m: Option<usize>,
    /// Reference cells per unit length for local Wasserstein distances.
    pub m_local: usize,
    pub angular_bins: usize,
    pub k_max: usize,
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        ResolutionConfig { m_factor: 2, field_m: None, m_local: 2, angular_bins: 256, k_max: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub dense_limit: usize,
    pub arcs_per_row: usize,
    pub max_rounds: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = ExactOptions::default();
        SolverConfig { dense_limit: d.dense_limit, arcs_per_row: d.arcs_per_row, max_rounds: d.max_rounds }
    }
}

impl SolverConfig {
    pub fn options(&self) -> ExactOptions {
        ExactOptions { dense_limit: self.dense_limit, arcs_per_row: self.arcs_per_row, max_rounds: self.max_rounds }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingConfig {
    /// Heat smoothing time `t = log(L)^smoothing_power`.
    pub smoothing_power: f64,
    /// Mollifier radii for the averaged displacement.
    pub radii: Vec<f64>,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig { smoothing_power: 4.0, radii: vec![4.0, 8.0, 16.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadeConfig {
    pub r_target: f64,
    pub c_data: f64,
    /// Radius of the local `L^infinity` check.
    pub linf_radius: f64,
    pub candidates: usize,
    pub e_cap: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig { r_target: 4.0, c_data: DEFAULT_C_DATA, linf_radius: 2.0, candidates: 8, e_cap: 1e6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RstarConfig {
    pub c_data: f64,
    /// Radius used when calibrating `C_data`.
    pub calibration_radius: f64,
}

impl Default for RstarConfig {
    fn default() -> Self {
        RstarConfig { c_data: DEFAULT_C_DATA, calibration_radius: 8.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarmonicConfig {
    pub deltas: Vec<f64>,
    /// Grid cells per side of both measures.
    pub m: usize,
    /// First coordinates of the centers, all on `x2 = 0`.
    pub centers: Vec<f64>,
    pub candidates: usize,
}

impl Default for HarmonicConfig {
    fn default() -> Self {
        HarmonicConfig { deltas: vec![0.1, 0.05, 0.025, 0.0125], m: 64, centers: vec![-6.0, -2.0, 2.0, 6.0], candidates: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsregConfig {
    pub theta: f64,
    pub alpha: f64,
    pub samples: usize,
    pub steps: usize,
    pub epsilon: f64,
    /// Amplitudes of the smooth exponential family.
    pub deltas: Vec<f64>,
    pub length: f64,
    /// `(p, q)` of the linear maps `exp([[p, q], [q, -p]])`.
    pub affine: Vec<[f64; 2]>,
}

impl Default for EpsregConfig {
    fn default() -> Self {
        EpsregConfig {
            theta: 1.0 / 7.0,
            alpha: 0.5,
            samples: 10_000,
            steps: 2,
            epsilon: 1.0,
            deltas: vec![1e-3],
            length: 4.0,
            affine: vec![[0.1, 0.05]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Shared store of solved matchings; `<dir>/cache` when absent.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub kind: ExperimentKind,
    #[serde(default = "default_sides")]
    pub sides: Vec<f64>,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub resolution: ResolutionConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub matching: MatchingConfig,
    #[serde(default)]
    pub cascade: CascadeConfig,
    #[serde(default)]
    pub rstar: RstarConfig,
    #[serde(default)]
    pub harmonic: HarmonicConfig,
    #[serde(default)]
    pub epsreg: EpsregConfig,
    pub output: OutputConfig,
}

fn default_sides() -> Vec<f64> {
    vec![8.0, 16.0, 32.0, 64.0]
}

fn default_dim() -> usize {
    2
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::InvalidInput(format!("config: {}", msg.into()))
}

impl ExperimentConfig {
    /// A config of the given kind with every section at its default.
    pub fn new(kind: ExperimentKind, dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            kind,
            sides: default_sides(),
            dim: 2,
            seeds: SeedConfig::default(),
            resolution: ResolutionConfig::default(),
            solver: SolverConfig::default(),
            matching: MatchingConfig::default(),
            cascade: CascadeConfig::default(),
            rstar: RstarConfig::default(),
            harmonic: HarmonicConfig::default(),
            epsreg: EpsregConfig::default(),
            output: OutputConfig { dir: dir.into(), cache_dir: None },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.output.dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.output.dir = parent.join(&cfg.output.dir);
            }
        }
        if let Some(c) = cfg.output.cache_dir.as_mut() {
            if c.is_relative() {
                if let Some(parent) = path.parent() {
                    *c = parent.join(&*c);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_error(e.to_string()))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.output.cache_dir.clone().unwrap_or_else(|| self.output.dir.join("cache"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(config_error(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        if self.dim != 2 {
            return Err(config_error("experiments run in d = 2"));
        }
        if self.sides.is_empty() {
            return Err(config_error("at least one side length is required"));
        }
        for &l in &self.sides {
            if !(l.is_finite() && l >= 4.0 && l <= 256.0 && l.fract() == 0.0) {
                return Err(config_error(format!("side {l} must be an integer in [4, 256]")));
            }
        }
        let r = &self.resolution;
        if r.m_factor == 0 || r.m_factor > 8 {
            return Err(config_error("m_factor must lie in [1, 8]"));
        }
        if let Some(m) = r.field_m {
            if !m.is_power_of_two() || m < 8 {
                return Err(config_error("field_m must be a power of two, at least 8"));
            }
        }
        if r.m_local == 0 || r.m_local > 16 {
            return Err(config_error("m_local must lie in [1, 16]"));
        }
        if r.k_max < 2 || 2 * r.k_max > r.angular_bins {
            return Err(config_error("need 2 <= k_max <= angular_bins / 2"));
        }
        if self.seeds.count == 0 || self.seeds.count > 100_000 {
            return Err(config_error("seed count must lie in [1, 100000]"));
        }
        if self.solver.arcs_per_row == 0 || self.solver.max_rounds == 0 {
            return Err(config_error("solver arcs_per_row and max_rounds must be positive"));
        }
        if !(self.matching.smoothing_power >= 0.0) || self.matching.radii.iter().any(|&r| !(r > 1.0)) {
            return Err(config_error("matching radii must exceed 1 and smoothing_power be nonnegative"));
        }
        let c = &self.cascade;
        if !(c.r_target > 1.0 && c.c_data > 0.0 && c.linf_radius > 0.0 && c.candidates >= 1 && c.e_cap > 0.0) {
            return Err(config_error("cascade parameters out of range"));
        }
        if !(self.rstar.c_data > 0.0 && self.rstar.calibration_radius >= 2.0) {
            return Err(config_error("rstar parameters out of range"));
        }
        let h = &self.harmonic;
        if h.deltas.iter().any(|&d| !(d > 0.0 && d < 1.0)) || h.m == 0 || h.centers.is_empty() || h.candidates < 8 {
            return Err(config_error("harmonic parameters out of range"));
        }
        let e = &self.epsreg;
        if !(e.theta > 0.0 && e.theta <= 1.0 / 7.0 + 1e-12) || e.samples < 100 || !(e.length > 0.0 && e.epsilon > 0.0) {
            return Err(config_error("epsreg parameters out of range"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_unknown_keys() {
        let cfg = ExperimentConfig::new(ExperimentKind::Cascade, "out");
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let bad = text.replace("[seeds]", "[seeds]\ncuont = 3");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
        let minimal = "schema = 1\nkind = \"matching-scaling\"\nsides = [8]\n[output]\ndir = \"x\"\n";
        let m = ExperimentConfig::from_toml(minimal).unwrap();
        assert_eq!(m.seeds.count, 64);
    }
}
