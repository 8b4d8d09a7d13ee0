//! End-to-end MNIST pipeline: train two MLPs independently, align them with
//! each matching method, and tabulate per-layer costs, approximate
//! dimensions and loss barriers.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{load_mnist_idx, synthetic_mnist, MnistSplit, CLASSES, PIXELS};
use crate::error::{Error, Result};
use crate::interpolation::{barrier_curve, BarrierCurve};
use crate::matching::{
    apply_stack, match_layers, matching_report, LayerReport, MatchKind, MatchMethod, PermutationStack,
};
use crate::network::{
    init_weights, train, Activation, Architecture, Dataset, InitScheme, LossKind, Mlp, Schedule, TrainConfig,
};
use crate::numerics::{Matrix, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DataSource {
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Synthetic {
        train_size: usize,
        test_size: usize,
        #[serde(default)]
        proto_seed: u64,
    },
}

impl DataSource {
    /// `(train, test)` splits.
    pub fn load(&self, seed: u64) -> Result<(MnistSplit, MnistSplit)> {
        match self {
            DataSource::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok((
                load_mnist_idx(train_images, train_labels)?,
                load_mnist_idx(test_images, test_labels)?,
            )),
            DataSource::Synthetic {
                train_size,
                test_size,
                proto_seed,
            } => {
                let root = RngState::new(seed);
                Ok((
                    synthetic_mnist(*train_size, *proto_seed, root.child(0).next_u64()),
                    synthetic_mnist(*test_size, *proto_seed, root.child(1).next_u64()),
                ))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReproConfig {
    pub data: DataSource,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_depth")]
    pub hidden_layers: usize,
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_probe")]
    pub probe_size: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_width() -> usize {
    512
}
fn default_depth() -> usize {
    3
}
fn default_epochs() -> usize {
    10
}
fn default_batch() -> usize {
    128
}
fn default_probe() -> usize {
    1024
}
fn default_grid() -> usize {
    25
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproRow {
    pub method: MatchKind,
    pub layer: usize,
    /// The method's own layer cost under its stack.
    pub cost: f64,
    /// Approximate dimension of the matrix the method's cost sees.
    pub dim: f64,
    pub barrier_raw: f64,
    pub barrier_clamped: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: MatchKind,
    pub stack: PermutationStack,
    pub curve: BarrierCurve,
    pub report: Vec<LayerReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReproOutcome {
    pub rows: Vec<ReproRow>,
    pub methods: Vec<MethodOutcome>,
    pub unmatched: BarrierCurve,
    pub test_accuracy_a: f64,
    pub test_accuracy_b: f64,
    #[serde(skip)]
    pub networks: Option<(Mlp, Mlp)>,
}

impl ReproOutcome {
    pub fn barrier(&self, kind: MatchKind) -> Option<f64> {
        self.methods.iter().find(|m| m.method == kind).map(|m| m.curve.barrier)
    }
}

fn accuracy(net: &Mlp, data: &Dataset) -> Result<f64> {
    let out = net.predict(&data.inputs)?;
    let crate::network::Targets::Classes(labels) = &data.targets else {
        return Err(Error::Argument("accuracy needs class labels".into()));
    };
    let hits = (0..out.cols())
        .filter(|&c| {
            let col = out.column(c);
            let best = (0..col.len()).max_by(|&i, &j| col[i].total_cmp(&col[j])).unwrap();
            best == labels[c]
        })
        .count();
    Ok(hits as f64 / out.cols() as f64)
}

fn train_one(arch: &Architecture, data: &Dataset, cfg: &ReproConfig, rng: RngState) -> Result<Mlp> {
    let init = init_weights(arch, &InitScheme::GaussianIid, &mut rng.child(0))?;
    let steps = cfg.epochs * data.len().div_ceil(cfg.batch_size);
    let tc = TrainConfig {
        steps,
        batch_size: cfg.batch_size,
        step_size: cfg.learning_rate,
        schedule: Schedule::Constant,
        weight_decay: 0.0,
        noise_temperature: 0.0,
        loss: LossKind::CrossEntropy,
        seed: rng.child(1).next_u64(),
    };
    Ok(train(&init, data, &tc)?.weights)
}

/// Trains networks A and B from independent seeds, aligns B to A with each
/// method and reports per-layer costs, dimensions and test-set barriers.
pub fn repro_mnist(cfg: &ReproConfig) -> Result<ReproOutcome> {
    if cfg.width == 0 || cfg.hidden_layers == 0 || cfg.probe_size == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("width, depth, probe size and batch size must be positive".into()));
    }
    let root = RngState::new(cfg.seed);
    let (train_split, test_split) = cfg.data.load(root.child(0).next_u64())?;
    if train_split.is_empty() || test_split.is_empty() {
        return Err(Error::Config("train and test splits must be nonempty".into()));
    }
    let train_set = train_split.into_dataset();
    let test_set = test_split.into_dataset();

    let mut dims = vec![PIXELS];
    dims.extend(std::iter::repeat_n(cfg.width, cfg.hidden_layers));
    dims.push(CLASSES);
    let arch = Architecture::new(dims, Activation::Relu, false)?;
    let a = train_one(&arch, &train_set, cfg, root.child(1))?;
    let b = train_one(&arch, &train_set, cfg, root.child(2))?;

    let probe: Matrix = test_set.head(cfg.probe_size).inputs;
    let (x, y) = (&test_set.inputs, &test_set.targets);
    let unmatched = barrier_curve(&a, &b, x, y, LossKind::CrossEntropy, cfg.grid)?;

    let mut rows = Vec::new();
    let mut methods = Vec::new();
    for kind in MatchKind::ALL {
        let method = MatchMethod::new(kind, kind.needs_probe().then_some(&probe))?;
        let stack = match_layers(&a, &b, method)?;
        let b_perm = apply_stack(&b, &stack)?;
        let curve = barrier_curve(&a, &b_perm, x, y, LossKind::CrossEntropy, cfg.grid)?;
        let report = matching_report(&a, &b, &stack, &probe)?;
        for r in &report {
            let (cost, dim) = match kind {
                MatchKind::NaiveWm => (r.naive_cost, r.dim_weights),
                MatchKind::CovWm => (r.sigma_cost, r.dim_weighted),
                MatchKind::ActivationM => (r.activation_cost, r.dim_activations),
            };
            rows.push(ReproRow {
                method: kind,
                layer: r.layer,
                cost,
                dim,
                barrier_raw: curve.barrier,
                barrier_clamped: curve.barrier_clamped(),
            });
        }
        methods.push(MethodOutcome {
            method: kind,
            stack,
            curve,
            report,
        });
    }
    Ok(ReproOutcome {
        rows,
        methods,
        unmatched,
        test_accuracy_a: accuracy(&a, &test_set)?,
        test_accuracy_b: accuracy(&b, &test_set)?,
        networks: Some((a, b)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_pipeline_runs() {
        let cfg: ReproConfig = serde_json::from_value(serde_json::json!({
            "data": {"kind": "synthetic", "train_size": 300, "test_size": 100},
            "width": 16, "hidden_layers": 2, "learning_rate": 0.05,
            "epochs": 1, "batch_size": 32, "probe_size": 64, "grid": 5, "seed": 1
        }))
        .unwrap();
        let out = repro_mnist(&cfg).unwrap();
        assert_eq!(out.rows.len(), 6);
        for r in &out.rows {
            assert!(r.barrier_raw >= 0.0 && r.barrier_clamped == r.barrier_raw);
            assert!(r.dim.is_nan() || (1.0 - 1e-9..=16.0 + 1e-9).contains(&r.dim));
        }
        let again = repro_mnist(&cfg).unwrap();
        assert_eq!(out.rows, again.rows);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = serde_json::json!({
            "data": {"kind": "synthetic", "train_size": 3, "test_size": 1},
            "learning_rate": 0.1, "lr": 0.1
        });
        assert!(serde_json::from_value::<ReproConfig>(bad).is_err());
    }
}
