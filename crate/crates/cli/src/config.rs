//! JSON documents accepted by each subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use lmc_core::data::{load_mnist_idx, synthetic_mnist};
use lmc_core::experiments::{DataSource, LowDimProfile, MeanFieldConfig, ReproConfig, RowLaw};
use lmc_core::matching::MatchKind;
use lmc_core::network::{load_checkpoint, Activation, Architecture, Dataset, InitScheme, LossKind, Mlp, Targets};
use lmc_core::numerics::{Matrix, RngState};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Every command config carries a seed that `--seed` overrides.
pub trait Seeded {
    fn seed_mut(&mut self) -> &mut u64;

    /// Input paths that must exist.
    fn inputs(&self) -> Vec<&Path> {
        Vec::new()
    }

    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

pub fn parse<C: DeserializeOwned + Seeded>(text: &str, seed: Option<u64>) -> Result<C> {
    let mut cfg: C = serde_json::from_str(text).context("invalid config")?;
    if let Some(s) = seed {
        *cfg.seed_mut() = s;
    }
    for p in cfg.inputs() {
        ensure!(p.exists(), "input file {} does not exist", p.display());
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Where a command's inputs (and targets) come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DataSpec {
    /// IDX image and label files, optionally truncated to the first `limit`.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    /// Synthetic digit-like images with labels.
    Synthetic {
        count: usize,
        #[serde(default)]
        proto_seed: u64,
    },
    /// `x ~ N(0, I)`; targets are `teacher(x)` or zeros.
    Gaussian {
        count: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        teacher: Option<PathBuf>,
    },
}

impl DataSpec {
    fn paths(&self) -> Vec<&Path> {
        match self {
            DataSpec::Mnist { images, labels, .. } => vec![images, labels],
            DataSpec::Gaussian { teacher: Some(t), .. } => vec![t],
            _ => Vec::new(),
        }
    }

    pub fn load(&self, input_dim: usize, output_dim: usize, rng: &RngState) -> Result<Dataset> {
        let data = match self {
            DataSpec::Mnist { images, labels, limit } => {
                let split = load_mnist_idx(images, labels)?;
                let n = limit.unwrap_or(split.len()).min(split.len());
                split.into_dataset().head(n)
            }
            DataSpec::Synthetic { count, proto_seed } => {
                synthetic_mnist(*count, *proto_seed, rng.child(0).next_u64()).into_dataset()
            }
            DataSpec::Gaussian { count, teacher } => {
                let mut r = rng.child(1);
                let x = Matrix::from_fn(input_dim, *count, |_, _| r.normal());
                let y = match teacher {
                    Some(path) => {
                        let t = load_checkpoint(path)?.weights;
                        ensure!(
                            t.arch().input_dim() == input_dim && t.arch().output_dim() == output_dim,
                            "teacher shape does not match the model"
                        );
                        t.predict(&x)?
                    }
                    None => Matrix::zeros(output_dim, *count),
                };
                Dataset::new(x, Targets::Values(y))?
            }
        };
        ensure!(!data.is_empty(), "data set is empty");
        ensure!(
            data.inputs.rows() == input_dim,
            "data has {} input features, the model expects {input_dim}",
            data.inputs.rows()
        );
        Ok(data)
    }
}

/// MSE for value targets, cross-entropy for class labels.
pub fn loss_for(explicit: Option<LossKind>, targets: &Targets) -> LossKind {
    explicit.unwrap_or(match targets {
        Targets::Values(_) => LossKind::Mse,
        Targets::Classes(_) => LossKind::CrossEntropy,
    })
}

pub fn load_model(path: &Path) -> Result<Mlp> {
    Ok(load_checkpoint(path).with_context(|| format!("reading {}", path.display()))?.weights)
}

fn default_init() -> InitScheme {
    InitScheme::GaussianIid
}
fn default_grid() -> usize {
    lmc_core::interpolation::DEFAULT_GRID
}
fn default_probe() -> DataSpec {
    DataSpec::Gaussian { count: 256, teacher: None }
}
fn default_variance() -> f64 {
    1.0
}
fn default_one() -> usize {
    1
}
fn default_dropout_inputs() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmd {
    pub arch: Architecture,
    #[serde(default = "default_init")]
    pub init: InitScheme,
    pub data: DataSpec,
    pub steps: usize,
    pub batch_size: usize,
    pub step_size: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub noise_temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub seed: u64,
}

impl Seeded for TrainCmd {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn inputs(&self) -> Vec<&Path> {
        self.data.paths()
    }
    fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignCmd {
    pub a: PathBuf,
    pub b: PathBuf,
    pub method: MatchKind,
    /// Probe batch for the Σ and activation costs and for the report.
    #[serde(default = "default_probe")]
    pub probe: DataSpec,
    #[serde(default)]
    pub seed: u64,
}

impl Seeded for AlignCmd {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn inputs(&self) -> Vec<&Path> {
        let mut p = vec![self.a.as_path(), self.b.as_path()];
        p.extend(self.probe.paths());
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathCmd {
    pub a: PathBuf,
    pub b: PathBuf,
    pub data: DataSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossKind>,
    #[serde(default = "default_grid")]
    pub grid: usize,
    /// Align B to A first with this method; by default B is used as is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub align: Option<MatchKind>,
    #[serde(default = "default_probe")]
    pub probe: DataSpec,
    #[serde(default)]
    pub seed: u64,
}

impl Seeded for PathCmd {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn inputs(&self) -> Vec<&Path> {
        let mut p = vec![self.a.as_path(), self.b.as_path()];
        p.extend(self.data.paths());
        p.extend(self.probe.paths());
        p
    }
    fn validate(&self) -> Result<()> {
        ensure!(self.grid >= 3, "grid needs at least 3 points");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimCmd {
    pub model: PathBuf,
    #[serde(default = "default_probe")]
    pub probe: DataSpec,
    #[serde(default)]
    pub seed: u64,
}

impl Seeded for DimCmd {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn inputs(&self) -> Vec<&Path> {
        let mut p = vec![self.model.as_path()];
        p.extend(self.probe.paths());
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesCmd {
    pub law: RowLaw,
    pub sizes: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Seeded for RatesCmd {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowDimCmd {
    pub profile: LowDimProfile,
    pub sizes: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Seeded for LowDimCmd {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundCmd {
    pub n: usize,
    #[serde(default = "default_variance")]
    pub variance: f64,
    pub sizes: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Seeded for LowerBoundCmd {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainCmd {
    pub n: usize,
    pub rank: usize,
    pub sizes: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Seeded for GainCmd {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutCmd {
    pub nets: usize,
    pub input_dim: usize,
    pub width: usize,
    pub activation: Activation,
    /// Inputs drawn uniformly from the unit ball.
    #[serde(default = "default_dropout_inputs")]
    pub inputs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Seeded for DropoutCmd {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn validate(&self) -> Result<()> {
        ensure!(self.nets > 0 && self.inputs > 0 && self.input_dim > 0, "nets, inputs and input_dim must be positive");
        ensure!(self.width > 0 && self.width % 2 == 0, "width must be positive and even");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanFieldCmd {
    pub run: MeanFieldConfig,
    /// Independent pairs, seeded `seed, seed + 1, …`.
    #[serde(default = "default_one")]
    pub pairs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Seeded for MeanFieldCmd {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn validate(&self) -> Result<()> {
        ensure!(self.pairs > 0, "pairs must be positive");
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproCmd {
    pub data: DataSource,
    pub width: usize,
    pub hidden_layers: usize,
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub probe_size: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ReproCmd {
    pub fn run_config(&self, learning_rate: f64) -> ReproConfig {
        ReproConfig {
            data: self.data.clone(),
            width: self.width,
            hidden_layers: self.hidden_layers,
            learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            probe_size: self.probe_size,
            grid: self.grid,
            seed: self.seed,
        }
    }
}

impl Seeded for ReproCmd {
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn inputs(&self) -> Vec<&Path> {
        match &self.data {
            DataSource::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => vec![train_images, train_labels, test_images, test_labels],
            DataSource::Synthetic { .. } => Vec::new(),
        }
    }
    fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() {
            bail!("learning_rates is empty");
        }
        ensure!(self.learning_rates.iter().all(|&lr| lr > 0.0 && lr.is_finite()), "learning rates must be positive");
        Ok(())
    }
}
