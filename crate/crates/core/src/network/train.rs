use serde::{Deserialize, Serialize};

use super::{LossKind, Mlp, Targets};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

/// Step-size scaling `ξ` in `s_k = ε · ξ(kε)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
}

impl Schedule {
    pub fn step_size(self, base: f64, _k: usize) -> f64 {
        match self {
            Schedule::Constant => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub step_size: f64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub noise_temperature: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {}", self.step_size)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.noise_temperature >= 0.0) {
            return Err(Error::Config("weight decay and temperature must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Inputs stored column-wise (`m₀ × count`) with matching targets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Targets) -> Result<Self> {
        if inputs.cols() != targets.len() {
            return Err(Error::Consistency(format!(
                "{} inputs but {} targets",
                inputs.cols(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_cols(idx),
            targets: self.targets.select(idx),
        }
    }

    /// The first `n` examples.
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: Mlp,
    /// Minibatch loss before each update.
    pub losses: Vec<f64>,
}

/// Minibatch noisy regularized SGD:
///
/// `θ ← (1 − 2λs)θ − s·∇loss + √(2sτ/d)·g`, `g ~ N(0, I_d)`, with `d` the
/// total parameter count. Minibatches are drawn with replacement. For
/// networks with more than one hidden layer the noise term is an
/// experimental extension of the two-layer dynamics.
pub fn train(initial: &Mlp, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut rng = RngState::new(cfg.seed);
    let mut weights = initial.clone();
    let mut losses = Vec::with_capacity(cfg.steps);
    let d = weights.param_count() as f64;
    let mut noise = vec![0.0; weights.param_count()];
    let n = data.len() as u64;

    for k in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(n) as usize).collect();
        let batch = data.select(&idx);
        let (loss, grads) = weights.loss_and_grad(&batch.inputs, &batch.targets, cfg.loss)?;
        losses.push(loss);

        let s = cfg.schedule.step_size(cfg.step_size, k);
        let shrink = 1.0 - 2.0 * cfg.weight_decay * s;
        let noise_scale = (2.0 * s * cfg.noise_temperature / d).sqrt();
        if noise_scale > 0.0 {
            rng.fill_normal(&mut noise);
        }
        for ((p, g), xi) in weights.params_mut().zip(grads.params()).zip(&noise) {
            *p = shrink * *p - s * g + noise_scale * xi;
        }
        if !loss.is_finite() || !weights.all_finite() {
            return Err(Error::Divergence {
                step: k,
                detail: format!("loss {loss}, non-finite parameters after update"),
            });
        }
    }
    Ok(TrainOutcome { weights, losses })
}
