//! Symmetric eigendecomposition.

use super::Matrix;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-8;
const MAX_QL_ITERATIONS: usize = 60;

/// `S = O · Diag(values) · Oᵀ` with eigenvectors in the columns of `vectors`
/// and `values` sorted non-increasing.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub vectors: Matrix,
    pub values: Vec<f64>,
}

impl SymEig {
    /// `O · Diag(f(λ)) · Oᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let fl: Vec<f64> = self.values.iter().map(|&l| f(l)).collect();
        let mut left = self.vectors.clone();
        for i in 0..n {
            for (x, &s) in left.row_mut(i).iter_mut().zip(&fl) {
                *x *= s;
            }
        }
        left.matmul_t(&self.vectors)
            .expect("square factors always conform")
    }
}

fn check_symmetric(s: &Matrix) -> Result<()> {
    if !s.is_square() {
        return Err(Error::Argument(format!(
            "expected a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !s.all_finite() {
        return Err(Error::Argument("matrix has non-finite entries".into()));
    }
    let asym = s.asymmetry();
    if asym > SYMMETRY_TOL * (1.0 + s.max_abs()) {
        return Err(Error::Argument(format!(
            "matrix is not symmetric (max |S-Sᵀ| = {asym:e})"
        )));
    }
    Ok(())
}

/// Eigendecomposition of a symmetric matrix by Householder reduction to
/// tridiagonal form followed by implicit QL iterations.
pub fn sym_eig(s: &Matrix) -> Result<SymEig> {
    check_symmetric(s)?;
    let n = s.rows();
    if n == 0 {
        return Ok(SymEig { vectors: Matrix::zeros(0, 0), values: Vec::new() });
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] = 0.5 * (s.get(i, j) + s.get(j, i));
        }
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(n, &mut v, &mut d, &mut e);
    // Row k of `vt` is eigenvector k.
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vt[j * n + i] = v[i * n + j];
        }
    }
    ql_implicit(n, &mut vt, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
    let values = order.iter().map(|&k| d[k]).collect();
    let vectors = Matrix::from_fn(n, n, |i, col| vt[order[col] * n + i]);
    Ok(SymEig { vectors, values })
}

/// Householder reduction of the row-major symmetric `v` in place. On return
/// `v` holds the orthogonal transform, `d` the diagonal and `e[1..]` the
/// subdiagonal.
fn tridiagonalize(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let at = |i: usize, j: usize| i * n + j;
    d.copy_from_slice(&v[at(n - 1, 0)..at(n - 1, 0) + n]);
    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for x in &mut d[..i] {
                *x /= scale;
                h += *x * *x;
            }
            let mut f = d[i - 1];
            let mut g = if f > 0.0 { -h.sqrt() } else { h.sqrt() };
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].fill(0.0);
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let (f, g) = (d[j], e[j]);
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let g: f64 = (0..=i).map(|k| v[at(k, i + 1)] * v[at(k, j)]).sum();
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

/// Diagonalizes the tridiagonal `(d, e)`, rotating the rows of `vt`.
fn ql_implicit(n: usize, vt: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let (mut f, mut tst1) = (0.0f64, 0.0f64);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > f64::EPSILON * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return Err(Error::Degenerate(format!(
                        "eigenvalue {l} did not converge in {MAX_QL_ITERATIONS} iterations"
                    )));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for x in &mut d[l + 2..] {
                    *x -= h;
                }
                f += h;
                p = d[m];
                let (mut c, mut c2, mut c3) = (1.0, 1.0, 1.0);
                let el1 = e[l + 1];
                let (mut s, mut s2) = (0.0, 0.0);
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (head, tail) = vt.split_at_mut((i + 1) * n);
                    let vi = &mut head[i * n..];
                    for (x, y) in vi.iter_mut().zip(&mut tail[..n]) {
                        let (xi, yi) = (*x, *y);
                        *y = s * xi + c * yi;
                        *x = c * xi - s * yi;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= f64::EPSILON * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

/// Principal square root of a symmetric PSD matrix.
///
/// Eigenvalues down to `-1e-6 · max(1, |λ_max|)` are treated as rounding
/// noise and clamped to zero; anything more negative is rejected.
pub fn psd_sqrt(s: &Matrix) -> Result<Matrix> {
    let eig = sym_eig(s)?;
    let top = eig.values.first().map_or(0.0, |v| v.abs());
    if let Some(&min) = eig.values.last() {
        if min < -1e-6 * top.max(1.0) {
            return Err(Error::NotPsd(min));
        }
    }
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    fn random_symmetric(n: usize, rng: &mut RngState) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.normal();
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        m
    }

    #[test]
    fn identity_spectrum() {
        let e = sym_eig(&Matrix::identity(4)).unwrap();
        assert_eq!(e.values, vec![1.0; 4]);
    }

    #[test]
    fn diagonal_is_signed_permutation() {
        let e = sym_eig(&Matrix::diag(&[-1.0, 3.0])).unwrap();
        assert_eq!(e.values, vec![3.0, -1.0]);
        assert_eq!(e.vectors.get(1, 0).abs(), 1.0);
        assert_eq!(e.vectors.get(0, 1).abs(), 1.0);
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = RngState::new(17);
        for n in [1, 2, 3, 6, 30, 150] {
            let s = random_symmetric(n, &mut rng);
            let e = sym_eig(&s).unwrap();
            let back = e.reconstruct_with(|l| l);
            let res = back.sub(&s).unwrap().max_abs();
            assert!(res <= 1e-8 * (1.0 + s.max_abs()), "n={n} res={res:e}");
            let gram = e.vectors.transpose().matmul(&e.vectors).unwrap();
            let orth = gram.sub(&Matrix::identity(n)).unwrap().max_abs();
            assert!(orth <= 1e-10, "{orth:e}");
            assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn repeated_and_low_rank_spectra() {
        let mut rng = RngState::new(21);
        let a = Matrix::from_fn(40, 3, |_, _| rng.normal());
        let g = a.matmul_t(&a).unwrap();
        let e = sym_eig(&g).unwrap();
        assert!(e.values[3..].iter().all(|l| l.abs() < 1e-10));
        let back = e.reconstruct_with(|l| l);
        assert!(back.sub(&g).unwrap().max_abs() < 1e-10 * (1.0 + g.max_abs()));
        let e = sym_eig(&Matrix::from_fn(5, 5, |_, _| 1.0)).unwrap();
        assert!((e.values[0] - 5.0).abs() < 1e-12);
        assert!(e.values[1..].iter().all(|l| l.abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(sym_eig(&Matrix::zeros(2, 3)).is_err());
        let asym = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(sym_eig(&asym).is_err());
        let neg = Matrix::diag(&[1.0, -0.5]);
        assert!(matches!(psd_sqrt(&neg), Err(Error::NotPsd(_))));
    }

    #[test]
    fn sqrt_examples() {
        let r = psd_sqrt(&Matrix::diag(&[4.0, 9.0])).unwrap();
        assert!(r.sub(&Matrix::diag(&[2.0, 3.0])).unwrap().max_abs() < 1e-12);
        let i = psd_sqrt(&Matrix::identity(3)).unwrap();
        assert_eq!(i, Matrix::identity(3));

        let mut rng = RngState::new(8);
        let a = Matrix::from_fn(7, 5, |_, _| rng.normal());
        let g = a.transpose().matmul(&a).unwrap();
        let r = psd_sqrt(&g).unwrap();
        assert!(r.asymmetry() < 1e-12);
        let res = r.matmul(&r).unwrap().sub(&g).unwrap().max_abs();
        assert!(res <= 1e-7 * (1.0 + g.max_abs()), "{res:e}");
    }
}
