//! Linear paths between two networks and the loss barrier along them.
//!
//! `M_t = t·A + (1 − t)·B̃`, so `t = 1` is network A and `t = 0` is the
//! permuted network B̃. The barrier baseline is `t·loss_A + (1 − t)·loss_B`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LossKind, Mlp, Targets};
use crate::numerics::Matrix;
use crate::par;

pub const DEFAULT_GRID: usize = 25;

/// Every weight and bias of `t·A + (1 − t)·B`. Coordinates where A and B
/// agree are copied exactly.
pub fn interpolate(a: &Mlp, b: &Mlp, t: f64) -> Result<Mlp> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Argument(format!("t = {t} is outside [0, 1]")));
    }
    a.zip_with(b, |x, y| if x == y { x } else { t * x + (1.0 - t) * y })
}

/// `size` evenly spaced points from 0 to 1 inclusive.
pub fn uniform_grid(size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(Error::Argument(format!("grid needs at least 2 points, got {size}")));
    }
    let last = (size - 1) as f64;
    Ok((0..size).map(|i| i as f64 / last).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierCurve {
    pub t_grid: Vec<f64>,
    pub losses: Vec<f64>,
    pub loss_a: f64,
    pub loss_b: f64,
    /// `max_t loss(t) − (t·loss_A + (1 − t)·loss_B)`; never below 0 because
    /// the grid contains both endpoints.
    pub barrier: f64,
    /// Largest gap over interior grid points only; may be negative.
    pub barrier_interior: f64,
    /// `max_t loss(t) − max(loss_A, loss_B)`, the convention of some
    /// follow-up work.
    pub barrier_max_baseline: f64,
}

impl BarrierCurve {
    pub fn barrier_clamped(&self) -> f64 {
        self.barrier.max(0.0)
    }

    /// Gap to the interpolated baseline at each grid point.
    pub fn gaps(&self) -> Vec<f64> {
        self.t_grid
            .iter()
            .zip(&self.losses)
            .map(|(&t, &l)| l - (t * self.loss_a + (1.0 - t) * self.loss_b))
            .collect()
    }
}

/// Loss of `M_t` on the whole evaluation set at each of `grid_size` evenly
/// spaced `t`.
pub fn barrier_curve(
    a: &Mlp,
    b_perm: &Mlp,
    inputs: &Matrix,
    targets: &Targets,
    loss: LossKind,
    grid_size: usize,
) -> Result<BarrierCurve> {
    if grid_size < 3 {
        return Err(Error::Argument(format!("grid needs at least 3 points, got {grid_size}")));
    }
    if inputs.cols() == 0 {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let t_grid = uniform_grid(grid_size)?;
    let losses: Vec<f64> = par::map_range(grid_size, |i| {
        interpolate(a, b_perm, t_grid[i])?.loss(inputs, targets, loss)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    if let Some(bad) = losses.iter().position(|l| !l.is_finite()) {
        return Err(Error::Divergence {
            step: bad,
            detail: format!("non-finite loss at t = {}", t_grid[bad]),
        });
    }
    let loss_b = losses[0];
    let loss_a = losses[grid_size - 1];
    let mut curve = BarrierCurve {
        t_grid,
        losses,
        loss_a,
        loss_b,
        barrier: 0.0,
        barrier_interior: 0.0,
        barrier_max_baseline: 0.0,
    };
    let gaps = curve.gaps();
    curve.barrier = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    curve.barrier_interior = gaps[1..grid_size - 1]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    curve.barrier_max_baseline =
        curve.losses.iter().copied().fold(f64::NEG_INFINITY, f64::max) - loss_a.max(loss_b);
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDeviation {
    pub layer: usize,
    pub width: usize,
    /// `(1/m)·E‖φ_A‖²`.
    pub energy_a: f64,
    /// `(1/m)·E‖φ_B̃‖²`.
    pub energy_b: f64,
    /// `(1/m)·E‖φ_A − φ_{M_t}‖²`, one entry per grid point.
    pub deviation_a: Vec<f64>,
    /// `(1/m)·E‖φ_B̃ − φ_{M_t}‖²`, one entry per grid point.
    pub deviation_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDeviationReport {
    pub t_grid: Vec<f64>,
    pub layers: Vec<LayerDeviation>,
}

fn mean_sq(z: &Matrix) -> f64 {
    z.frobenius_sq() / (z.rows() * z.cols()) as f64
}

fn mean_sq_diff(x: &Matrix, y: &Matrix) -> f64 {
    mean_sq(&x.sub(y).expect("same shape"))
}

/// Per-neuron mean-square gap between the hidden activations of `M_t` and
/// of each endpoint, averaged over the evaluation inputs.
pub fn layer_deviations(
    a: &Mlp,
    b_perm: &Mlp,
    inputs: &Matrix,
    t_grid: &[f64],
) -> Result<LayerDeviationReport> {
    if inputs.cols() == 0 {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    if let Some(t) = t_grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Argument(format!("t = {t} is outside [0, 1]")));
    }
    let ha = a.forward(inputs)?.hidden;
    let hb = b_perm.forward(inputs)?.hidden;
    let hm: Vec<Vec<Matrix>> = par::map_range(t_grid.len(), |i| {
        Ok(interpolate(a, b_perm, t_grid[i])?.forward(inputs)?.hidden)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let layers = (0..ha.len())
        .map(|l| LayerDeviation {
            layer: l + 1,
            width: ha[l].rows(),
            energy_a: mean_sq(&ha[l]),
            energy_b: mean_sq(&hb[l]),
            deviation_a: hm.iter().map(|h| mean_sq_diff(&ha[l], &h[l])).collect(),
            deviation_b: hm.iter().map(|h| mean_sq_diff(&hb[l], &h[l])).collect(),
        })
        .collect();
    Ok(LayerDeviationReport {
        t_grid: t_grid.to_vec(),
        layers,
    })
}
