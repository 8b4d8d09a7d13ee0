//! Dense kernels, seeded samplers and spectral helpers.

mod eigen;
mod matrix;
mod rng;
mod sampling;

pub use eigen::{psd_sqrt, sym_eig, SymEig};
pub use matrix::{dot, sq_dist, Matrix};
pub use rng::{mix64, RngState};
pub use sampling::{gaussian_rows, uniform_rows, CovarianceSpec};

use crate::error::{Error, Result};

/// Uncentered second moment `(1/s) · Z · Zᵀ` of the `s` columns of `Z`.
pub fn second_moment(z: &Matrix) -> Result<Matrix> {
    if z.cols() == 0 {
        return Err(Error::Argument("second moment of zero samples".into()));
    }
    Ok(z.matmul_t(z)?.scale(1.0 / z.cols() as f64))
}

/// Participation ratio `tr(S)² / tr(S²)` of a symmetric PSD matrix.
pub fn approx_dim(s: &Matrix) -> Result<f64> {
    if !s.is_square() {
        return Err(Error::Argument("approx_dim needs a square matrix".into()));
    }
    if s.asymmetry() > 1e-8 * (1.0 + s.max_abs()) {
        return Err(Error::Argument("approx_dim needs a symmetric matrix".into()));
    }
    // tr(S²) = ‖S‖_F² for symmetric S.
    let tr2 = s.frobenius_sq();
    if !(tr2 > 0.0) {
        return Err(Error::Degenerate("tr(S²) = 0".into()));
    }
    let tr = s.trace();
    Ok(tr * tr / tr2)
}
