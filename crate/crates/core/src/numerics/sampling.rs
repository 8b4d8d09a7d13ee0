//! Weight-distribution samplers.

use serde::{Deserialize, Serialize};

use super::{Matrix, RngState};
use crate::error::{Error, Result};

/// Block-diagonal covariance `Diag(λ₁ I_{p₁}, λ₂ I_{p₂}, …)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct CovarianceSpec {
    group_sizes: Vec<usize>,
    eigenvalues: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    group_sizes: Vec<usize>,
    eigenvalues: Vec<f64>,
}

impl TryFrom<RawSpec> for CovarianceSpec {
    type Error = Error;

    fn try_from(raw: RawSpec) -> Result<Self> {
        Self::new(raw.group_sizes, raw.eigenvalues)
    }
}

impl CovarianceSpec {
    pub fn new(group_sizes: Vec<usize>, eigenvalues: Vec<f64>) -> Result<Self> {
        if group_sizes.len() != eigenvalues.len() {
            return Err(Error::Config(format!(
                "{} group sizes but {} eigenvalues",
                group_sizes.len(),
                eigenvalues.len()
            )));
        }
        if group_sizes.iter().sum::<usize>() == 0 {
            return Err(Error::Config("covariance has zero dimension".into()));
        }
        if let Some(bad) = eigenvalues.iter().find(|l| !l.is_finite() || **l < 0.0) {
            return Err(Error::Config(format!("invalid eigenvalue {bad}")));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config(
                "eigenvalues must be sorted non-increasing".into(),
            ));
        }
        Ok(Self {
            group_sizes,
            eigenvalues,
        })
    }

    /// `variance · I_n`.
    pub fn isotropic(n: usize, variance: f64) -> Result<Self> {
        Self::new(vec![n], vec![variance])
    }

    /// The `N(0, I_n / n)` law of the standard initialization.
    pub fn fan_in(n: usize) -> Result<Self> {
        Self::isotropic(n, 1.0 / n.max(1) as f64)
    }

    pub fn dim(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Per-coordinate variances, expanded from the groups.
    pub fn diagonal(&self) -> Vec<f64> {
        self.group_sizes
            .iter()
            .zip(&self.eigenvalues)
            .flat_map(|(&p, &l)| std::iter::repeat_n(l, p))
            .collect()
    }
}

/// `m` i.i.d. rows from `N(0, Diag(λ₁ I_{p₁}, …))`.
pub fn gaussian_rows(m: usize, spec: &CovarianceSpec, rng: &mut RngState) -> Result<Matrix> {
    if m == 0 {
        return Err(Error::Config("gaussian_rows needs m ≥ 1".into()));
    }
    let scales: Vec<f64> = spec.diagonal().iter().map(|v| v.sqrt()).collect();
    let n = scales.len();
    let mut data = vec![0.0; m * n];
    rng.fill_normal(&mut data);
    for row in data.chunks_exact_mut(n) {
        for (x, s) in row.iter_mut().zip(&scales) {
            *x *= s;
        }
    }
    Matrix::new(m, n, data)
}

/// `m × n` entries i.i.d. uniform on `[−half_width, half_width]`.
pub fn uniform_rows(m: usize, n: usize, half_width: f64, rng: &mut RngState) -> Result<Matrix> {
    if !(half_width > 0.0) || !half_width.is_finite() {
        return Err(Error::Config(format!(
            "uniform half width must be positive, got {half_width}"
        )));
    }
    let data = (0..m * n)
        .map(|_| (2.0 * rng.next_f64() - 1.0) * half_width)
        .collect();
    Matrix::new(m, n, data)
}
