//! Fully connected networks `x ↦ W^{L+1} σ(W^L ⋯ σ(W¹x))` with manual
//! backpropagation.
//!
//! Batches are stored column-wise: an input batch is an `m₀ × batch` matrix
//! and every hidden activation is `m_ℓ × batch`.

mod checkpoint;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use train::{train, Dataset, Schedule, TrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_rows, uniform_rows, CovarianceSpec, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// σ'(pre), given both the pre-activation and σ(pre).
    #[inline]
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Tanh => 1.0 - post * post,
        }
    }
}

/// Layer widths `m₀, m₁, …, m_{L+1}` plus nonlinearity and bias flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub dims: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub use_bias: bool,
}

impl Architecture {
    pub fn new(dims: Vec<usize>, activation: Activation, use_bias: bool) -> Result<Self> {
        let arch = Self {
            dims,
            activation,
            use_bias,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::Config(format!(
                "architecture needs at least input and output widths, got {:?}",
                self.dims
            )));
        }
        if self.dims.contains(&0) {
            return Err(Error::Config(format!("zero width in {:?}", self.dims)));
        }
        Ok(())
    }

    /// Number of hidden layers `L`.
    pub fn hidden_layers(&self) -> usize {
        self.dims.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }
}

/// One affine map `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Option<Vec<f64>>,
}

impl Layer {
    fn param_count(&self) -> usize {
        self.weight.data().len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// Weight rows with the bias appended as a trailing column.
    pub fn augmented(&self) -> Matrix {
        match &self.bias {
            Some(b) => self.weight.with_column(b).expect("bias length matches rows"),
            None => self.weight.clone(),
        }
    }
}

/// Network weights together with the architecture they realize.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    layers: Vec<Layer>,
}

/// Scheme for drawing the rows of each weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum InitScheme {
    /// Rows i.i.d. `N(0, I / fan_in)`.
    GaussianIid,
    /// Rows of layer ℓ i.i.d. `N(0, Σ^{ℓ−1})`, one spec per layer.
    BlockCov { specs: Vec<CovarianceSpec> },
    /// Entries i.i.d. uniform on `[−h, h]`.
    Uniform { half_width: f64 },
}

pub fn init_weights(arch: &Architecture, scheme: &InitScheme, rng: &mut RngState) -> Result<Mlp> {
    arch.validate()?;
    let n_layers = arch.dims.len() - 1;
    if let InitScheme::BlockCov { specs } = scheme {
        if specs.len() != n_layers {
            return Err(Error::Config(format!(
                "{} covariance specs for {} layers",
                specs.len(),
                n_layers
            )));
        }
    }
    let mut layers = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fan_in, fan_out) = (arch.dims[l], arch.dims[l + 1]);
        let weight = match scheme {
            InitScheme::GaussianIid => {
                gaussian_rows(fan_out, &CovarianceSpec::fan_in(fan_in)?, rng)?
            }
            InitScheme::BlockCov { specs } => {
                if specs[l].dim() != fan_in {
                    return Err(Error::Config(format!(
                        "layer {} covariance has dimension {}, fan-in is {}",
                        l + 1,
                        specs[l].dim(),
                        fan_in
                    )));
                }
                gaussian_rows(fan_out, &specs[l], rng)?
            }
            InitScheme::Uniform { half_width } => uniform_rows(fan_out, fan_in, *half_width, rng)?,
        };
        let bias = arch.use_bias.then(|| vec![0.0; fan_out]);
        layers.push(Layer { weight, bias });
    }
    Mlp::new(arch.clone(), layers)
}

/// Per-layer activations of a batch.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    /// `φ^ℓ` for ℓ = 1..=L, each `m_ℓ × batch`.
    pub hidden: Vec<Matrix>,
    /// Network outputs, `m_{L+1} × batch`.
    pub output: Matrix,
}

/// Regression targets or class labels, one per batch column.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values(Matrix),
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(m) => m.cols(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Values(m) => Targets::Values(m.select_cols(idx)),
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Batch mean of `‖f(x) − y‖²`.
    Mse,
    /// Batch mean of `−log softmax(f(x))_y`.
    CrossEntropy,
}

impl Mlp {
    pub fn new(arch: Architecture, layers: Vec<Layer>) -> Result<Self> {
        arch.validate()?;
        if layers.len() != arch.dims.len() - 1 {
            return Err(Error::Argument(format!(
                "{} layers for architecture {:?}",
                layers.len(),
                arch.dims
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            let want = (arch.dims[l + 1], arch.dims[l]);
            if layer.weight.shape() != want {
                return Err(Error::Argument(format!(
                    "layer {} has shape {:?}, expected {:?}",
                    l + 1,
                    layer.weight.shape(),
                    want
                )));
            }
            match (&layer.bias, arch.use_bias) {
                (Some(b), true) if b.len() == want.0 => {}
                (None, false) => {}
                _ => {
                    return Err(Error::Argument(format!(
                        "layer {} bias does not match the architecture",
                        l + 1
                    )))
                }
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Layer ℓ in 1-based numbering (`W^ℓ`).
    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l - 1]
    }

    pub fn hidden_layers(&self) -> usize {
        self.arch.hidden_layers()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(f64::is_finite)
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| {
            l.weight
                .data()
                .iter()
                .chain(l.bias.iter().flatten())
                .copied()
        })
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers.iter_mut().flat_map(|l| {
            l.weight
                .data_mut()
                .iter_mut()
                .chain(l.bias.iter_mut().flatten())
        })
    }

    /// Sum of squared parameters.
    pub fn sq_norm(&self) -> f64 {
        self.params().map(|p| p * p).sum()
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.arch.dims == other.arch.dims && self.arch.use_bias == other.arch.use_bias
    }

    /// Parameter-wise combination with a network of the same architecture.
    pub fn zip_with(&self, other: &Mlp, f: impl Fn(f64, f64) -> f64) -> Result<Mlp> {
        if !self.same_shape(other) {
            return Err(Error::Argument(format!(
                "architectures differ: {:?} vs {:?}",
                self.arch.dims, other.arch.dims
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| Layer {
                weight: a.weight.zip_with(&b.weight, "zip", &f).expect("same shape"),
                bias: a
                    .bias
                    .as_ref()
                    .zip(b.bias.as_ref())
                    .map(|(x, y)| x.iter().zip(y).map(|(&u, &v)| f(u, v)).collect()),
            })
            .collect();
        Ok(Mlp {
            arch: self.arch.clone(),
            layers,
        })
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() != self.arch.input_dim() {
            return Err(Error::Argument(format!(
                "input has {} rows, network expects {}",
                x.rows(),
                self.arch.input_dim()
            )));
        }
        Ok(())
    }

    /// Pre-activations and activations of every layer.
    fn forward_full(&self, x: &Matrix) -> Result<(Vec<Matrix>, Vec<Matrix>)> {
        self.check_input(x)?;
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post: Vec<Matrix> = Vec::with_capacity(n_layers);
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { x } else { &post[l - 1] };
            let mut z = layer.weight.matmul(input)?;
            if let Some(b) = &layer.bias {
                let cols = z.cols();
                for (i, &bi) in b.iter().enumerate() {
                    z.row_mut(i).iter_mut().for_each(|v| *v += bi);
                }
                debug_assert_eq!(cols, input.cols());
            }
            let a = if l + 1 == n_layers {
                z.clone()
            } else {
                z.map(|v| self.arch.activation.apply(v))
            };
            pre.push(z);
            post.push(a);
        }
        Ok((pre, post))
    }

    pub fn forward(&self, x: &Matrix) -> Result<ActivationTrace> {
        let (_, mut post) = self.forward_full(x)?;
        let output = post.pop().expect("at least one layer");
        Ok(ActivationTrace {
            hidden: post,
            output,
        })
    }

    /// Network outputs only.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.output)
    }

    pub fn loss(&self, x: &Matrix, targets: &Targets, kind: LossKind) -> Result<f64> {
        loss_value(&self.predict(x)?, targets, kind)
    }

    /// Batch loss and its gradient with respect to every parameter, returned
    /// as a network of the same shape.
    pub fn loss_and_grad(&self, x: &Matrix, targets: &Targets, kind: LossKind) -> Result<(f64, Mlp)> {
        let (pre, post) = self.forward_full(x)?;
        let output = post.last().unwrap();
        let (loss, mut delta) = loss_with_output_grad(output, targets, kind)?;

        let n_layers = self.layers.len();
        let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            let input = if l == 0 { x } else { &post[l - 1] };
            let weight = delta.matmul_t(input)?;
            let bias = self.layers[l]
                .bias
                .as_ref()
                .map(|_| (0..delta.rows()).map(|i| delta.row(i).iter().sum()).collect());
            if l > 0 {
                let mut back = self.layers[l].weight.transpose().matmul(&delta)?;
                let act = self.arch.activation;
                for ((d, &z), &a) in back
                    .data_mut()
                    .iter_mut()
                    .zip(pre[l - 1].data())
                    .zip(post[l - 1].data())
                {
                    *d *= act.derivative(z, a);
                }
                delta = back;
            }
            grads.push(Layer { weight, bias });
        }
        grads.reverse();
        Ok((
            loss,
            Mlp {
                arch: self.arch.clone(),
                layers: grads,
            },
        ))
    }
}

fn check_targets(outputs: &Matrix, targets: &Targets) -> Result<()> {
    match targets {
        Targets::Values(y) if y.shape() != outputs.shape() => Err(Error::Argument(format!(
            "targets {:?} do not match outputs {:?}",
            y.shape(),
            outputs.shape()
        ))),
        Targets::Classes(c) if c.len() != outputs.cols() => Err(Error::Argument(format!(
            "{} labels for a batch of {}",
            c.len(),
            outputs.cols()
        ))),
        Targets::Classes(c) => match c.iter().find(|&&k| k >= outputs.rows()) {
            Some(k) => Err(Error::Argument(format!(
                "class index {k} out of range for {} outputs",
                outputs.rows()
            ))),
            None => Ok(()),
        },
        _ => Ok(()),
    }
}

/// Mean loss over the batch (columns of `outputs`).
pub fn loss_value(outputs: &Matrix, targets: &Targets, kind: LossKind) -> Result<f64> {
    Ok(loss_with_output_grad(outputs, targets, kind)?.0)
}

fn loss_with_output_grad(outputs: &Matrix, targets: &Targets, kind: LossKind) -> Result<(f64, Matrix)> {
    check_targets(outputs, targets)?;
    let batch = outputs.cols();
    if batch == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let inv = 1.0 / batch as f64;
    let (k, _) = outputs.shape();
    let mut grad = Matrix::zeros(k, batch);
    let mut total = 0.0;
    match (kind, targets) {
        (LossKind::Mse, Targets::Values(y)) => {
            for ((g, &o), &t) in grad.data_mut().iter_mut().zip(outputs.data()).zip(y.data()) {
                let r = o - t;
                total += r * r;
                *g = 2.0 * r * inv;
            }
        }
        (LossKind::Mse, Targets::Classes(c)) => {
            // One-hot regression targets.
            for i in 0..k {
                for b in 0..batch {
                    let t = if c[b] == i { 1.0 } else { 0.0 };
                    let r = outputs.get(i, b) - t;
                    total += r * r;
                    grad.set(i, b, 2.0 * r * inv);
                }
            }
        }
        (LossKind::CrossEntropy, Targets::Classes(c)) => {
            for (b, &label) in c.iter().enumerate() {
                let max = (0..k).map(|i| outputs.get(i, b)).fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = (0..k).map(|i| (outputs.get(i, b) - max).exp()).sum();
                let lse = max + sum.ln();
                total += lse - outputs.get(label, b);
                for i in 0..k {
                    let p = (outputs.get(i, b) - lse).exp();
                    let onehot = if i == label { 1.0 } else { 0.0 };
                    grad.set(i, b, (p - onehot) * inv);
                }
            }
        }
        (LossKind::CrossEntropy, Targets::Values(_)) => {
            return Err(Error::Argument(
                "cross-entropy needs class-index targets".into(),
            ))
        }
    }
    Ok((total * inv, grad))
}
