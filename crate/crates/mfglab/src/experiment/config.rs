//! Experiment configuration: one human-editable TOML file per run.
//! Physical quantities carry their unit in the field name (`_t` for times,
//! `_per_t` for rates, `_x` for lengths).

use crate::error::{Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::models::BuiltinModelSpec;
use crate::solve::SolverConfig;
use crate::turnpike::DecayShape;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Verify,
    Solve,
    TurnpikePair,
    ErgodicStudy,
    Uniqueness,
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Verify => "verify",
            Self::Solve => "solve",
            Self::TurnpikePair => "turnpike_pair",
            Self::ErgodicStudy => "ergodic_study",
            Self::Uniqueness => "uniqueness",
        };
        write!(f, "{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rho0Source {
    /// Seeded random Gaussian sample.
    Gaussian,
    /// Deterministic Gaussian laid down on exact quantiles (d = 1); the
    /// empirical mean matches the requested mean exactly, which matters
    /// for families with translation-neutral directions.
    GaussianQuantile,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rho0Config {
    pub source: Rho0Source,
    #[serde(default)]
    pub mean: Vec<f64>,
    #[serde(default = "default_std")]
    pub std: f64,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default)]
    pub path: Option<String>,
}

fn default_std() -> f64 {
    0.5
}
fn default_particles() -> usize {
    128
}

impl Rho0Config {
    /// Deterministic sample of the initial measure.
    pub fn build(&self, dim: usize, seed: u64, base_dir: &Path) -> Result<EmpiricalMeasure> {
        match self.source {
            Rho0Source::Gaussian => {
                let mean = if self.mean.is_empty() {
                    vec![0.0; dim]
                } else {
                    self.mean.clone()
                };
                if mean.len() != dim {
                    return Err(Error::ConfigInvalid(format!(
                        "rho0 mean has dim {}, model dim {dim}",
                        mean.len()
                    )));
                }
                if self.particles == 0 {
                    return Err(Error::ConfigInvalid("rho0 needs particles >= 1".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                let pts: Vec<Vec<f64>> = (0..self.particles)
                    .map(|_| {
                        mean.iter()
                            .map(|m| {
                                let u1: f64 = rng.gen_range(1e-12..1.0);
                                let u2: f64 = rng.gen_range(0.0..1.0);
                                m + self.std
                                    * (-2.0 * u1.ln()).sqrt()
                                    * (2.0 * std::f64::consts::PI * u2).cos()
                            })
                            .collect()
                    })
                    .collect();
                EmpiricalMeasure::uniform(dim, pts)
            }
            Rho0Source::GaussianQuantile => {
                if dim != 1 {
                    return Err(Error::ConfigInvalid(
                        "gaussian_quantile rho0 is one-dimensional".into(),
                    ));
                }
                let mean = self.mean.first().copied().unwrap_or(0.0);
                if self.particles == 0 {
                    return Err(Error::ConfigInvalid("rho0 needs particles >= 1".into()));
                }
                let n = self.particles;
                let pts: Vec<Vec<f64>> = (0..n)
                    .map(|i| {
                        vec![mean + self.std * normal_quantile((i as f64 + 0.5) / n as f64)]
                    })
                    .collect();
                EmpiricalMeasure::uniform(1, pts)
            }
            Rho0Source::File => {
                let rel = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::ConfigInvalid("rho0 file source needs a path".into()))?;
                let path = base_dir.join(rel);
                let file = std::fs::File::open(&path).map_err(|e| {
                    Error::ConfigInvalid(format!("cannot open rho0 file {path:?}: {e}"))
                })?;
                EmpiricalMeasure::read_columnar(std::io::BufReader::new(file))
            }
        }
    }
}

/// Acklam's rational approximation of the standard normal quantile.
fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -39.696_830_286_653_76,
        220.946_098_424_520_5,
        -275.928_510_446_968_7,
        138.357_751_867_269,
        -30.664_798_066_147_16,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -54.476_098_798_224_06,
        161.585_836_858_040_9,
        -155.698_979_859_886_6,
        66.801_311_887_719_72,
        -13.280_681_552_885_72,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -0.322_396_458_041_136_5,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        0.322_467_129_070_039_8,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let plow = 0.02425;
    if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        return (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0);
    }
    if p > 1.0 - plow {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        return -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0);
    }
    let q = p - 0.5;
    let r = q * q;
    (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
        / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
}

/// Solver knobs as they appear in the config file; unit suffixes are part
/// of the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSection {
    #[serde(default = "default_dt")]
    pub dt_t: f64,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_fp_tol")]
    pub fp_tol_w2: f64,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "default_half_width")]
    pub grid_half_width_x: f64,
    #[serde(default = "default_grid_h")]
    pub grid_h_x: f64,
    #[serde(default)]
    pub store_z: bool,
    #[serde(default = "default_realizations")]
    pub noise_realizations: usize,
}

fn default_dt() -> f64 {
    0.02
}
fn default_theta() -> f64 {
    1.0
}
fn default_max_outer() -> usize {
    200
}
fn default_fp_tol() -> f64 {
    1e-9
}
fn default_inner_tol() -> f64 {
    1e-11
}
fn default_half_width() -> f64 {
    8.0
}
fn default_grid_h() -> f64 {
    0.025
}
fn default_realizations() -> usize {
    64
}

impl Default for SolverSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl SolverSection {
    pub fn to_solver_config(&self, particles: usize, seed: u64) -> SolverConfig {
        SolverConfig {
            dt: self.dt_t,
            n_particles: particles,
            theta: self.theta,
            max_outer: self.max_outer,
            fp_tol: self.fp_tol_w2,
            inner_tol: self.inner_tol,
            max_newton: 60,
            grid_half_width: self.grid_half_width_x,
            grid_h: self.grid_h_x,
            seed,
            store_z: self.store_z,
            noise_realizations: self.noise_realizations,
        }
    }
}

/// Overrides defining the second equilibrium of a pair (different final
/// cost or different initial measure).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SecondLeg {
    #[serde(default)]
    pub params: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default)]
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    #[serde(default = "default_route")]
    pub route: String,
    #[serde(default = "default_horizon")]
    pub horizon_t: f64,
    #[serde(default)]
    pub horizons_t: Vec<f64>,
    #[serde(default)]
    pub fit_window_t: Option<(f64, f64)>,
    #[serde(default = "default_shape")]
    pub decay_shape: DecayShape,
    #[serde(default = "default_slack")]
    pub rate_slack_frac: f64,
    #[serde(default)]
    pub rate_bound_per_t: Option<f64>,
    #[serde(default = "default_trials")]
    pub estimate_c0_trials: usize,
    #[serde(default = "default_cloud")]
    pub estimate_c0_cloud: usize,
    #[serde(default)]
    pub probe_ts: Vec<f64>,
    #[serde(default)]
    pub probe_xs: Vec<Vec<f64>>,
    #[serde(default)]
    pub hypotheses: Vec<String>,
    #[serde(default)]
    pub second: Option<SecondLeg>,
}

fn default_route() -> String {
    "particle".into()
}
fn default_horizon() -> f64 {
    8.0
}
fn default_shape() -> DecayShape {
    DecayShape::Backward
}
fn default_slack() -> f64 {
    0.15
}
fn default_trials() -> usize {
    96
}
fn default_cloud() -> usize {
    16
}

impl Default for ExperimentSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub model: BuiltinModelSpec,
    #[serde(default = "default_rho0")]
    pub rho0: Rho0Config,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

fn default_schema() -> u32 {
    super::REPORT_SCHEMA_VERSION
}

fn default_rho0() -> Rho0Config {
    Rho0Config {
        source: Rho0Source::Gaussian,
        mean: vec![],
        std: default_std(),
        particles: default_particles(),
        path: None,
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {path:?}: {e}")))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != super::REPORT_SCHEMA_VERSION {
            return Err(Error::ConfigInvalid(format!(
                "schema_version {} unsupported",
                self.schema_version
            )));
        }
        if self.rho0.particles == 0 && matches!(self.rho0.source, Rho0Source::Gaussian) {
            return Err(Error::ConfigInvalid("particles must be >= 1".into()));
        }
        if !(self.experiment.route == "particle" || self.experiment.route == "grid") {
            return Err(Error::ConfigInvalid(format!(
                "route must be `particle` or `grid`, got `{}`",
                self.experiment.route
            )));
        }
        match self.kind {
            ExperimentKind::ErgodicStudy | ExperimentKind::Uniqueness => {
                if self.experiment.horizons_t.len() < 2 {
                    return Err(Error::ConfigInvalid(
                        "ergodic studies need horizons_t with at least two entries".into(),
                    ));
                }
            }
            ExperimentKind::TurnpikePair => {
                if self.experiment.second.is_none() {
                    return Err(Error::ConfigInvalid(
                        "turnpike_pair needs an [experiment.second] override".into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// The model spec of the second leg of a pair, when configured.
    pub fn second_model(&self) -> Option<BuiltinModelSpec> {
        let second = self.experiment.second.as_ref()?;
        if second.params.is_empty() {
            return None;
        }
        let mut spec = self.model.clone();
        for (k, v) in &second.params {
            spec.params.insert(k.clone(), *v);
        }
        Some(spec)
    }

    /// The initial measure of the second leg (falls back to the first).
    pub fn second_rho0(&self, dim: usize, base_dir: &Path) -> Result<EmpiricalMeasure> {
        let mut rc = self.rho0.clone();
        if let Some(second) = &self.experiment.second {
            if let Some(mean) = &second.mean {
                rc.mean = mean.clone();
            }
            if let Some(std) = second.std {
                rc.std = std;
            }
        }
        rc.build(dim, self.seed, base_dir)
    }
}
