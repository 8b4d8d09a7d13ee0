//! Two-layer networks `f(x) = (1/N) Σ aᵢ σ(⟨wᵢ, x⟩)` trained by one-sample
//! SGD on a bounded synthetic task, then aligned by matching the particles
//! `θᵢ = (wᵢ, aᵢ)`.

use serde::{Deserialize, Serialize};

use crate::assignment::{pairwise_sq_dist, solve_lap, Permutation};
use crate::error::{Error, Result};
use crate::interpolation::{barrier_curve, interpolate, uniform_grid, DEFAULT_GRID};
use crate::matching::{apply_stack, PermutationStack};
use crate::network::{Activation, Architecture, Layer, LossKind, Mlp, Targets};
use crate::numerics::{dot, Matrix, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanFieldConfig {
    pub d: usize,
    pub width: usize,
    /// Training time `T`; the run takes `round(T / ε)` steps.
    pub time: f64,
    /// Step size `ε` (constant schedule).
    pub step_size: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub noise_temperature: f64,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Initial particles are uniform on `[−h, h]^{d+1}`.
    #[serde(default = "default_half_width")]
    pub init_half_width: f64,
    /// Norm of the teacher direction in `y = tanh(⟨w*, x⟩)`.
    #[serde(default = "default_teacher_norm")]
    pub teacher_norm: f64,
    #[serde(default)]
    pub teacher_seed: u64,
    #[serde(default = "default_eval_size")]
    pub eval_size: usize,
    /// Start both networks from the same initial draw instead of two
    /// independent draws from the same law.
    #[serde(default)]
    pub shared_init: bool,
}

fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_half_width() -> f64 {
    1.0
}
fn default_teacher_norm() -> f64 {
    2.0
}
fn default_eval_size() -> usize {
    1000
}

impl MeanFieldConfig {
    pub fn steps(&self) -> usize {
        (self.time / self.step_size).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.width == 0 || self.eval_size == 0 {
            return Err(Error::Config("d, width and eval size must be positive".into()));
        }
        if !(self.step_size > 0.0) || !(self.time >= 0.0) {
            return Err(Error::Config("step size must be positive and time nonnegative".into()));
        }
        if !(self.weight_decay >= 0.0) || !(self.noise_temperature >= 0.0) {
            return Err(Error::Config("weight decay and temperature must be nonnegative".into()));
        }
        if self.activation == Activation::Relu {
            return Err(Error::Config("mean-field runs need a bounded activation (tanh or sigmoid)".into()));
        }
        if !(self.init_half_width > 0.0) {
            return Err(Error::Config("init half width must be positive".into()));
        }
        Ok(())
    }

    fn teacher(&self) -> Vec<f64> {
        let mut rng = RngState::new(self.teacher_seed);
        let mut w: Vec<f64> = (0..self.d).map(|_| rng.normal()).collect();
        let norm = dot(&w, &w).sqrt();
        w.iter_mut().for_each(|v| *v *= self.teacher_norm / norm);
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldReport {
    pub width: usize,
    pub d: usize,
    pub time: f64,
    pub step_size: f64,
    pub weight_decay: f64,
    pub noise_temperature: f64,
    pub steps: usize,
    /// `sup_t max_x |t f_A + (1−t) f_B − f_{M_t}|` with B aligned.
    pub deviation_matched: f64,
    /// The same with the identity pairing.
    pub deviation_unmatched: f64,
    pub barrier_matched: f64,
    pub barrier_unmatched: f64,
    /// `(1/N) Σ ‖θ_{A,i} − θ_{B,π(i)}‖²` under the matching.
    pub w2_matched: f64,
    /// The same under the identity pairing.
    pub w2_unmatched: f64,
    pub loss_a: f64,
    pub loss_b: f64,
}

/// Particles as rows `(wᵢ, aᵢ)` of an `N × (d+1)` matrix.
fn init_particles(cfg: &MeanFieldConfig, rng: &mut RngState) -> Matrix {
    let h = cfg.init_half_width;
    Matrix::from_fn(cfg.width, cfg.d + 1, |_, _| (2.0 * rng.next_f64() - 1.0) * h)
}

fn sample_x(d: usize, rng: &mut RngState) -> Vec<f64> {
    (0..d).map(|_| 2.0 * rng.next_f64() - 1.0).collect()
}

/// One-sample noisy regularized SGD on the particles.
fn train_particles(
    cfg: &MeanFieldConfig,
    mut theta: Matrix,
    teacher: &[f64],
    rng: &mut RngState,
) -> Result<Matrix> {
    let (n, d) = (cfg.width, cfg.d);
    let act = cfg.activation;
    let s = cfg.step_size;
    let shrink = 1.0 - 2.0 * cfg.weight_decay * s;
    let noise = (2.0 * s * cfg.noise_temperature / (d + 1) as f64).sqrt();
    let mut pre = vec![0.0; n];
    let mut g = vec![0.0; d + 1];
    for k in 0..cfg.steps() {
        let x = sample_x(d, rng);
        let y = dot(teacher, &x).tanh();
        let mut f = 0.0;
        for (i, z) in pre.iter_mut().enumerate() {
            let row = theta.row(i);
            *z = dot(&row[..d], &x);
            f += row[d] * act.apply(*z);
        }
        f /= n as f64;
        let r = 2.0 * s * (y - f);
        for (i, &z) in pre.iter().enumerate() {
            let post = act.apply(z);
            let row = theta.row_mut(i);
            let a = row[d];
            let da = act.derivative(z, post);
            for (wj, &xj) in row[..d].iter_mut().zip(&x) {
                *wj = shrink * *wj + r * a * da * xj;
            }
            row[d] = shrink * a + r * post;
            if noise > 0.0 {
                rng.fill_normal(&mut g);
                row.iter_mut().zip(&g).for_each(|(v, e)| *v += noise * e);
            }
        }
        if !theta.all_finite() {
            return Err(Error::Divergence {
                step: k,
                detail: "non-finite particle after update".into(),
            });
        }
    }
    Ok(theta)
}

/// The particle system as a `d → N → 1` network with readout `a/N`.
fn to_mlp(cfg: &MeanFieldConfig, theta: &Matrix) -> Result<Mlp> {
    let (n, d) = (cfg.width, cfg.d);
    let arch = Architecture::new(vec![d, n, 1], cfg.activation, false)?;
    let w: Vec<usize> = (0..d).collect();
    let readout = Matrix::from_fn(1, n, |_, i| theta.get(i, d) / n as f64);
    Mlp::new(
        arch,
        vec![
            Layer { weight: theta.select_cols(&w), bias: None },
            Layer { weight: readout, bias: None },
        ],
    )
}

fn max_deviation(a: &Mlp, b: &Mlp, x: &Matrix) -> Result<f64> {
    let fa = a.predict(x)?;
    let fb = b.predict(x)?;
    let mut worst: f64 = 0.0;
    for t in uniform_grid(DEFAULT_GRID)? {
        let fm = interpolate(a, b, t)?.predict(x)?;
        for c in 0..x.cols() {
            let (u, v) = (fa.get(0, c), fb.get(0, c));
            let lin = if u == v { u } else { t * u + (1.0 - t) * v };
            worst = worst.max((lin - fm.get(0, c)).abs());
        }
    }
    Ok(worst)
}

/// Trains network A from `rng_a` and network B from `rng_b` and compares
/// them. Equal generators give identical networks.
pub fn meanfield_pair(cfg: &MeanFieldConfig, rng_a: RngState, rng_b: RngState, rng_eval: RngState) -> Result<MeanFieldReport> {
    cfg.validate()?;
    let teacher = cfg.teacher();
    let (mut ra, mut rb) = (rng_a, rng_b);
    let init_a = init_particles(cfg, &mut ra.child(0));
    let init_b = if cfg.shared_init {
        init_a.clone()
    } else {
        init_particles(cfg, &mut rb.child(0))
    };
    let theta_a = train_particles(cfg, init_a, &teacher, &mut ra)?;
    let theta_b = train_particles(cfg, init_b, &teacher, &mut rb)?;

    let cost = pairwise_sq_dist(&theta_a, &theta_b)?;
    let perm = solve_lap(&cost).permutation;
    let n = cfg.width as f64;

    let a = to_mlp(cfg, &theta_a)?;
    let b = to_mlp(cfg, &theta_b)?;
    let b_perm = apply_stack(&b, &PermutationStack::new(vec![perm.clone()]))?;

    let mut re = rng_eval;
    let x = Matrix::from_fn(cfg.d, cfg.eval_size, |_, _| 2.0 * re.next_f64() - 1.0);
    let y = Matrix::from_fn(1, cfg.eval_size, |_, c| {
        let col = x.column(c);
        dot(&teacher, &col).tanh()
    });
    let targets = Targets::Values(y);
    let matched = barrier_curve(&a, &b_perm, &x, &targets, LossKind::Mse, DEFAULT_GRID)?;
    let unmatched = barrier_curve(&a, &b, &x, &targets, LossKind::Mse, DEFAULT_GRID)?;

    Ok(MeanFieldReport {
        width: cfg.width,
        d: cfg.d,
        time: cfg.time,
        step_size: cfg.step_size,
        weight_decay: cfg.weight_decay,
        noise_temperature: cfg.noise_temperature,
        steps: cfg.steps(),
        deviation_matched: max_deviation(&a, &b_perm, &x)?,
        deviation_unmatched: max_deviation(&a, &b, &x)?,
        barrier_matched: matched.barrier,
        barrier_unmatched: unmatched.barrier,
        w2_matched: cost.cost_of(&perm) / n,
        w2_unmatched: cost.cost_of(&Permutation::identity(cfg.width)) / n,
        loss_a: matched.loss_a,
        loss_b: matched.loss_b,
    })
}

/// Independent runs A and B derived from `seed`, evaluated on a shared set.
pub fn meanfield_lmc(cfg: &MeanFieldConfig, seed: u64) -> Result<MeanFieldReport> {
    let root = RngState::new(seed);
    meanfield_pair(cfg, root.child(0), root.child(1), root.child(2))
}
