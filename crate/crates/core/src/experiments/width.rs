//! Barrier and activation deviation between pairs of random networks as the
//! hidden width grows.

use serde::{Deserialize, Serialize};

use super::median;
use crate::error::{Error, Result};
use crate::interpolation::{barrier_curve, layer_deviations, DEFAULT_GRID};
use crate::matching::{apply_stack, match_layers, MatchMethod};
use crate::network::{init_weights, Activation, Architecture, InitScheme, LossKind, Targets};
use crate::numerics::{Matrix, RngState};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidthTrendConfig {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub seeds: usize,
    #[serde(default = "default_eval")]
    pub eval_size: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_eval() -> usize {
    2000
}
fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthPoint {
    pub width: usize,
    /// Per-seed barrier after naive weight matching.
    pub barriers: Vec<f64>,
    /// Per-seed barrier under the identity pairing.
    pub barriers_unmatched: Vec<f64>,
    /// Per-seed largest interior gap to the baseline after matching.
    pub interior_gaps: Vec<f64>,
    /// Per-seed `(1/m)·E‖φ_A − φ_{M_{1/2}}‖²` after matching.
    pub deviations: Vec<f64>,
    pub median_barrier: f64,
    pub median_barrier_unmatched: f64,
    pub median_interior_gap: f64,
    pub median_deviation: f64,
}

/// For each width and seed: draws networks A, B and a teacher C of shape
/// `m₀ → width → 1` with i.i.d. Gaussian rows, inputs `x ~ N(0, I)` and
/// targets `C(x)`, aligns B to A by naive weight matching and measures the
/// squared-loss barrier and the hidden-layer deviation at `t = 1/2`.
pub fn width_trend(cfg: &WidthTrendConfig, seed: u64) -> Result<Vec<WidthPoint>> {
    if cfg.seeds == 0 || cfg.widths.is_empty() || cfg.input_dim == 0 || cfg.eval_size == 0 {
        return Err(Error::Config("width trend needs seeds, widths and inputs".into()));
    }
    let root = RngState::new(seed);
    cfg.widths
        .iter()
        .enumerate()
        .map(|(wi, &width)| {
            let arch = Architecture::new(vec![cfg.input_dim, width, 1], cfg.activation, false)?;
            let runs: Vec<[f64; 4]> = par::map_range(cfg.seeds, |s| {
                let base = root.child(wi as u64).child(s as u64);
                let a = init_weights(&arch, &InitScheme::GaussianIid, &mut base.child(0))?;
                let b = init_weights(&arch, &InitScheme::GaussianIid, &mut base.child(1))?;
                let teacher = init_weights(&arch, &InitScheme::GaussianIid, &mut base.child(2))?;
                let mut rx = base.child(3);
                let x = Matrix::from_fn(cfg.input_dim, cfg.eval_size, |_, _| rx.normal());
                let y = Targets::Values(teacher.predict(&x)?);
                let stack = match_layers(&a, &b, MatchMethod::naive())?;
                let b_perm = apply_stack(&b, &stack)?;
                let matched = barrier_curve(&a, &b_perm, &x, &y, LossKind::Mse, DEFAULT_GRID)?;
                let unmatched = barrier_curve(&a, &b, &x, &y, LossKind::Mse, DEFAULT_GRID)?;
                let dev = layer_deviations(&a, &b_perm, &x, &[0.5])?;
                Ok([
                    matched.barrier,
                    unmatched.barrier,
                    matched.barrier_interior,
                    dev.layers[0].deviation_a[0],
                ])
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let col = |k: usize| runs.iter().map(|r| r[k]).collect::<Vec<f64>>();
            let (barriers, barriers_unmatched, interior_gaps, deviations) =
                (col(0), col(1), col(2), col(3));
            Ok(WidthPoint {
                width,
                median_barrier: median(&barriers),
                median_barrier_unmatched: median(&barriers_unmatched),
                median_interior_gap: median(&interior_gaps),
                median_deviation: median(&deviations),
                barriers,
                barriers_unmatched,
                interior_gaps,
                deviations,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deviation_shrinks_with_width() {
        let cfg = WidthTrendConfig {
            input_dim: 5,
            widths: vec![64, 1024],
            seeds: 10,
            eval_size: 200,
            activation: Activation::Relu,
        };
        let pts = width_trend(&cfg, 3).unwrap();
        let dev = |p: &WidthPoint| p.deviations.iter().sum::<f64>() / p.deviations.len() as f64;
        assert!(dev(&pts[1]) < dev(&pts[0]), "{} !< {}", dev(&pts[1]), dev(&pts[0]));
        for p in &pts {
            assert!(p.barriers.iter().all(|&b| b >= 0.0));
        }
    }
}
