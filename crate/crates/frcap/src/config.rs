//! The JSON configuration document (schema v1) and its resolution rules.
//!
//! One config file drives every subcommand; each command reads the
//! sections it needs and rejects a missing one with a validation error.
//! Three layers of overrides apply before anything runs, in order:
//!
//! 1. `--set key=value` flags patch leaf fields by dotted path,
//! 2. the `FRCAP_SEED` environment variable replaces the root seed,
//! 3. a root `seed`, when present, is pushed down into every section's
//!    seed so one number reproduces a whole run.
//!
//! Unknown fields anywhere in the document are errors: the accepted shape
//! is documented in `schema/config.v1.schema.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use frcap_core::optimize::TrainConfig;
use frcap_core::ActivationKind;

use crate::{CliError, Result};

/// Environment variable that overrides the root seed.
pub const SEED_ENV_VAR: &str = "FRCAP_SEED";

/// Schema version this build reads.
pub const CONFIG_SCHEMA: u32 = 1;

fn default_output_dir() -> PathBuf {
    PathBuf::from("frcap-out")
}

/// Top-level configuration document.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Must equal 1.
    pub schema: u32,
    /// Root seed pushed into every section (see module docs).
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: Option<DatasetSpec>,
    #[serde(default)]
    pub network: Option<NetworkSpec>,
    /// When set, commands that need a network load this JSON file instead
    /// of initializing a fresh one.
    #[serde(default)]
    pub network_file: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub rademacher: Option<RademacherSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub verify: Option<VerifySpec>,
    #[serde(default)]
    pub conditioning: Option<ConditioningSpec>,
}

/// Where a dataset comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Rectangular numeric CSV with a header row.
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default)]
        label_noise: f64,
    },
    /// IDX image/label file pair (big-endian, magics 0x803 / 0x801).
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
        #[serde(default)]
        label_noise: f64,
    },
    /// Seeded synthetic generator.
    Synthetic {
        generator: SyntheticSpec,
        #[serde(default)]
        label_noise: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl DatasetSpec {
    pub fn label_noise(&self) -> f64 {
        match self {
            DatasetSpec::Csv { label_noise, .. }
            | DatasetSpec::Idx { label_noise, .. }
            | DatasetSpec::Synthetic { label_noise, .. } => *label_noise,
        }
    }
}

fn default_dim2() -> usize {
    2
}
fn default_separation() -> f64 {
    4.0
}
fn default_unit() -> f64 {
    1.0
}
fn default_segments() -> usize {
    5
}
fn default_gaussian_noise() -> f64 {
    0.1
}

/// Synthetic dataset families.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SyntheticSpec {
    /// `y = ⟨x, β⟩ + noise` with `x ∼ N(0, covariance)`. The covariance
    /// is remembered verbatim for Rademacher runs.
    GaussianLinear {
        n: usize,
        dim: usize,
        #[serde(default)]
        covariance: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        beta: Option<Vec<f64>>,
        #[serde(default = "default_gaussian_noise")]
        noise_std: f64,
    },
    /// Two Gaussian blobs at ±(separation·std/2) along the diagonal,
    /// labeled ±1.
    TwoBlobs {
        n: usize,
        #[serde(default = "default_dim2")]
        dim: usize,
        /// Distance between the blob centers, in units of `std`.
        #[serde(default = "default_separation")]
        separation: f64,
        #[serde(default = "default_unit")]
        std: f64,
    },
    /// A random piecewise-linear target on a 1-D grid over [0, 1].
    PiecewiseLinearCurve {
        n: usize,
        #[serde(default = "default_segments")]
        segments: usize,
        #[serde(default)]
        noise_std: f64,
    },
}

fn default_hidden() -> ActivationKind {
    ActivationKind::Relu
}
fn default_output() -> ActivationKind {
    ActivationKind::Linear
}

/// A freshly initialized network: entries uniform in ±scale/√fan_in.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub dims: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden: ActivationKind,
    #[serde(default = "default_output")]
    pub output: ActivationKind,
    #[serde(default = "default_unit")]
    pub init_scale: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Covariance selection for Rademacher estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceSpec {
    /// Identity in the configured dimension.
    Identity,
    /// The covariance stored by the dataset generator (gaussian_linear).
    Dataset,
    /// An explicit SPD matrix.
    Matrix(Vec<Vec<f64>>),
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        CovarianceSpec::Identity
    }
}

fn default_trials() -> usize {
    10_000
}

/// Parameters for the `rademacher` subcommand.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RademacherSpec {
    pub p: usize,
    pub n: usize,
    pub gamma: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub covariance: CovarianceSpec,
    #[serde(default)]
    pub seed: Option<u64>,
    /// When present, a grid run over the cartesian product replaces the
    /// single estimate and emits CSV.
    #[serde(default)]
    pub sweep: Option<RademacherSweep>,
}

/// Grid axes for a Rademacher sweep; empty axes fall back to the scalar
/// field above.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RademacherSweep {
    #[serde(default)]
    pub p: Vec<usize>,
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub gamma: Vec<f64>,
}

fn default_holdout() -> f64 {
    0.25
}
fn default_alphas() -> Vec<f64> {
    vec![0.0]
}

/// Width-sweep experiment over a fixed-depth architecture.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub widths: Vec<usize>,
    /// Number of hidden layers.
    #[serde(default = "default_dim2")]
    pub depth: usize,
    /// Label-corruption levels; each gets its own grid pass.
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Fraction of examples held out for the generalization gap.
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    /// Labels drawn from the model per input when reporting model-FR.
    #[serde(default)]
    pub model_fr_samples: Option<usize>,
}

fn default_verify_nets() -> usize {
    200
}

/// Sample counts for the `verify` property suites.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "default_verify_nets")]
    pub nets: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            nets: default_verify_nets(),
            seed: None,
        }
    }
}

fn default_conditioning_epochs() -> usize {
    2_000
}
fn default_conditioning_lr() -> f64 {
    0.05
}

/// Head-to-head plain-gradient vs natural-gradient comparison on one
/// (typically poorly conditioned) regression task.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningSpec {
    #[serde(default = "default_conditioning_epochs")]
    pub epochs: usize,
    #[serde(default = "default_conditioning_lr")]
    pub lr: f64,
    #[serde(default)]
    pub record_every: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for ConditioningSpec {
    fn default() -> Self {
        ConditioningSpec {
            epochs: default_conditioning_epochs(),
            lr: default_conditioning_lr(),
            record_every: None,
            seed: None,
        }
    }
}

impl Config {
    /// Load a config file, apply `--set` overrides and the seed rules,
    /// and validate.
    pub fn load(path: &Path, sets: &[String]) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json_str(&text, sets, std::env::var(SEED_ENV_VAR).ok().as_deref())
    }

    /// The same pipeline starting from an in-memory document (separated
    /// out for tests).
    pub fn from_json_str(
        text: &str,
        sets: &[String],
        seed_env: Option<&str>,
    ) -> Result<Config> {
        let mut value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("config is not valid JSON: {e}")))?;
        for set in sets {
            apply_set(&mut value, set)?;
        }
        let schema = value.get("schema").and_then(|v| v.as_u64());
        if schema != Some(CONFIG_SCHEMA as u64) {
            return Err(CliError::Validation(format!(
                "config schema must be {CONFIG_SCHEMA}, got {}",
                value.get("schema").cloned().unwrap_or_default()
            )));
        }
        let mut config: Config = serde_json::from_value(value)
            .map_err(|e| CliError::Validation(format!("invalid config: {e}")))?;
        if let Some(env) = seed_env {
            let seed: u64 = env.parse().map_err(|_| {
                CliError::Validation(format!(
                    "{SEED_ENV_VAR} must be an unsigned integer, got {env:?}"
                ))
            })?;
            config.seed = Some(seed);
        }
        config.push_down_seed();
        config.validate()?;
        Ok(config)
    }

    /// Copy a root seed into every section that takes one.
    fn push_down_seed(&mut self) {
        let Some(seed) = self.seed else { return };
        if let Some(t) = &mut self.train {
            t.seed = seed;
        }
        if let Some(DatasetSpec::Synthetic { seed: s, .. }) = &mut self.dataset {
            *s = Some(seed);
        }
        if let Some(n) = &mut self.network {
            n.seed = Some(seed);
        }
        if let Some(r) = &mut self.rademacher {
            r.seed = Some(seed);
        }
        if let Some(v) = &mut self.verify {
            v.seed = Some(seed);
        }
        if let Some(c) = &mut self.conditioning {
            c.seed = Some(seed);
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(train) = &self.train {
            train
                .validate()
                .map_err(|e| CliError::Validation(format!("train section: {e}")))?;
        }
        if let Some(net) = &self.network {
            if net.dims.len() < 2 {
                return Err(CliError::Validation(
                    "network.dims must list at least input and output sizes".into(),
                ));
            }
            if net.dims.iter().any(|&d| d == 0) {
                return Err(CliError::Validation("network.dims entries must be ≥ 1".into()));
            }
            if !(net.init_scale > 0.0) {
                return Err(CliError::Validation("network.init_scale must be positive".into()));
            }
        }
        if let Some(ds) = &self.dataset {
            let alpha = ds.label_noise();
            if !(0.0..=1.0).contains(&alpha) {
                return Err(CliError::Validation(format!(
                    "dataset.label_noise must lie in [0, 1], got {alpha}"
                )));
            }
            if let DatasetSpec::Synthetic { generator, .. } = ds {
                validate_generator(generator)?;
            }
        }
        if let Some(r) = &self.rademacher {
            if r.p == 0 || r.n == 0 {
                return Err(CliError::Validation(
                    "rademacher.p and rademacher.n must be ≥ 1".into(),
                ));
            }
            if !(r.gamma >= 0.0) {
                return Err(CliError::Validation("rademacher.gamma must be ≥ 0".into()));
            }
        }
        if let Some(s) = &self.sweep {
            if s.widths.is_empty() {
                return Err(CliError::Validation("sweep.widths must be nonempty".into()));
            }
            if s.widths.iter().any(|&k| k == 0) {
                return Err(CliError::Validation("sweep.widths entries must be ≥ 1".into()));
            }
            if s.depth == 0 {
                return Err(CliError::Validation("sweep.depth must be ≥ 1".into()));
            }
            if !(0.0..1.0).contains(&s.holdout_fraction) || s.holdout_fraction <= 0.0 {
                return Err(CliError::Validation(
                    "sweep.holdout_fraction must lie in (0, 1)".into(),
                ));
            }
            for &a in &s.alphas {
                if !(0.0..=1.0).contains(&a) {
                    return Err(CliError::Validation(format!(
                        "sweep.alphas entries must lie in [0, 1], got {a}"
                    )));
                }
            }
        }
        if let Some(c) = &self.conditioning {
            if c.epochs == 0 {
                return Err(CliError::Validation("conditioning.epochs must be ≥ 1".into()));
            }
            if !(c.lr > 0.0) {
                return Err(CliError::Validation("conditioning.lr must be positive".into()));
            }
        }
        Ok(())
    }

    /// The section, or a validation error naming it.
    pub fn require_dataset(&self) -> Result<&DatasetSpec> {
        self.dataset
            .as_ref()
            .ok_or_else(|| CliError::Validation("this command needs a `dataset` section".into()))
    }

    pub fn require_train(&self) -> Result<&TrainConfig> {
        self.train
            .as_ref()
            .ok_or_else(|| CliError::Validation("this command needs a `train` section".into()))
    }

    pub fn require_rademacher(&self) -> Result<&RademacherSpec> {
        self.rademacher
            .as_ref()
            .ok_or_else(|| CliError::Validation("this command needs a `rademacher` section".into()))
    }

    pub fn require_sweep(&self) -> Result<&SweepSpec> {
        self.sweep
            .as_ref()
            .ok_or_else(|| CliError::Validation("this command needs a `sweep` section".into()))
    }
}

fn validate_generator(g: &SyntheticSpec) -> Result<()> {
    let ok = |cond: bool, msg: &str| {
        if cond {
            Ok(())
        } else {
            Err(CliError::Validation(msg.into()))
        }
    };
    match g {
        SyntheticSpec::GaussianLinear {
            n,
            dim,
            covariance,
            beta,
            noise_std,
        } => {
            ok(*n > 0, "gaussian_linear.n must be ≥ 1")?;
            ok(*dim > 0, "gaussian_linear.dim must be ≥ 1")?;
            ok(*noise_std >= 0.0, "gaussian_linear.noise_std must be ≥ 0")?;
            if let Some(cov) = covariance {
                ok(
                    cov.len() == *dim && cov.iter().all(|row| row.len() == *dim),
                    "gaussian_linear.covariance must be dim×dim",
                )?;
            }
            if let Some(b) = beta {
                ok(b.len() == *dim, "gaussian_linear.beta must have length dim")?;
            }
            Ok(())
        }
        SyntheticSpec::TwoBlobs {
            n,
            dim,
            separation,
            std,
        } => {
            ok(*n > 0, "two_blobs.n must be ≥ 1")?;
            ok(*dim > 0, "two_blobs.dim must be ≥ 1")?;
            ok(*separation > 0.0, "two_blobs.separation must be positive")?;
            ok(*std > 0.0, "two_blobs.std must be positive")
        }
        SyntheticSpec::PiecewiseLinearCurve {
            n,
            segments,
            noise_std,
        } => {
            ok(*n >= 2, "piecewise_linear_curve.n must be ≥ 2")?;
            ok(*segments > 0, "piecewise_linear_curve.segments must be ≥ 1")?;
            ok(*noise_std >= 0.0, "piecewise_linear_curve.noise_std must be ≥ 0")
        }
    }
}

/// Apply one `key=value` override to the JSON document. The key is a
/// dotted path; the value is parsed as JSON when possible and used as a
/// string otherwise.
fn apply_set(doc: &mut serde_json::Value, set: &str) -> Result<()> {
    let Some((path, raw)) = set.split_once('=') else {
        return Err(CliError::Validation(format!(
            "--set expects key=value, got {set:?}"
        )));
    };
    if path.is_empty() {
        return Err(CliError::Validation("--set key must be nonempty".into()));
    }
    let value: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if !cursor.is_object() {
            return Err(CliError::Validation(format!(
                "--set path {path:?} descends into a non-object at {segment:?}"
            )));
        }
        let map = cursor.as_object_mut().unwrap();
        if i + 1 == segments.len() {
            map.insert(segment.to_string(), value);
            return Ok(());
        }
        cursor = map
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last segment");
}
