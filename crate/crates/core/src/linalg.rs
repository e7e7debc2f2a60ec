//! Dense kernels for small problems: one-sided Jacobi SVD and everything
//! derived from it (pseudo-inverse, min-norm solutions, kernel projectors).

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative rank cutoff used when the caller does not pick one.
pub fn default_tol(rows: usize, cols: usize) -> f64 {
    1e-12 * rows.max(cols) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    /// Orthogonal, rows x rows.
    pub u: Matrix,
    /// Non-increasing, length min(rows, cols).
    pub singular_values: Vector,
    /// Orthogonal, cols x cols.
    pub v: Matrix,
    pub rank: usize,
    pub tol: f64,
}

impl SpectralDecomposition {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.iter().copied().next().unwrap_or(0.0)
    }

    /// Absolute threshold below which singular values count as zero.
    pub fn cutoff(&self) -> f64 {
        self.tol * self.sigma_max().max(1.0)
    }

    pub fn reconstruct(&self) -> Matrix {
        let (m, n) = (self.u.nrows(), self.v.nrows());
        let mut s = Matrix::zeros(m, n);
        for (i, &sv) in self.singular_values.iter().enumerate() {
            s[(i, i)] = sv;
        }
        &self.u * s * self.v.transpose()
    }

    /// Columns of V spanning ker(A).
    pub fn kernel_basis(&self) -> Matrix {
        let d = self.v.ncols();
        self.v.columns(self.rank, d - self.rank).into_owned()
    }

    /// Columns of V spanning the row space of A.
    pub fn row_space_basis(&self) -> Matrix {
        self.v.columns(0, self.rank).into_owned()
    }

    pub fn pseudo_inverse(&self) -> Matrix {
        let (m, n) = (self.u.nrows(), self.v.nrows());
        let mut out = Matrix::zeros(n, m);
        for k in 0..self.rank {
            let inv = 1.0 / self.singular_values[k];
            let vk = self.v.column(k);
            let uk = self.u.column(k);
            for j in 0..m {
                let c = inv * uk[j];
                if c != 0.0 {
                    for i in 0..n {
                        out[(i, j)] += vk[i] * c;
                    }
                }
            }
        }
        out
    }
}

fn check_finite(a: &Matrix, what: &'static str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn svd(a: &Matrix) -> Result<SpectralDecomposition> {
    svd_with_tol(a, default_tol(a.nrows(), a.ncols()))
}

pub fn svd_with_tol(a: &Matrix, tol: f64) -> Result<SpectralDecomposition> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::InvalidInput("svd of an empty matrix".into()));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidInput(format!("rank tolerance {tol} must be >= 0")));
    }
    check_finite(a, "svd input")?;
    let (m, n) = a.shape();
    if m < n {
        let t = jacobi(&a.transpose(), tol, (m, n))?;
        return Ok(SpectralDecomposition {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
            rank: t.rank,
            tol,
        });
    }
    jacobi(a, tol, (m, n))
}

// One-sided Jacobi on a tall (m >= n) matrix.
fn jacobi(a: &Matrix, tol: f64, orig: (usize, usize)) -> Result<SpectralDecomposition> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = Matrix::identity(n, n);
    let cap = 100 * m.max(n);
    let eps = f64::EPSILON * m as f64;
    let mut converged = n < 2;
    for _ in 0..cap {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + zeta.hypot(1.0));
                let c = 1.0 / t.hypot(1.0);
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * x - s * y;
                    w[(i, q)] = s * x + c * y;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * x - s * y;
                    v[(i, q)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            rows: orig.0,
            cols: orig.1,
            sweeps: cap,
        });
    }

    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma = Vector::from_iterator(n, order.iter().map(|&j| norms[j]));
    let smax = sigma[0];
    let mut v_sorted = Matrix::zeros(n, n);
    for (k, &j) in order.iter().enumerate() {
        v_sorted.set_column(k, &v.column(j));
    }

    let mut u = Matrix::zeros(m, m);
    let mut filled = 0;
    for (k, &j) in order.iter().enumerate() {
        if sigma[k] > 0.0 && sigma[k] > smax * f64::EPSILON {
            u.set_column(k, &(w.column(j) / sigma[k]));
            filled = k + 1;
        } else {
            break;
        }
    }
    complete_orthonormal(&mut u, filled);

    let cutoff = tol * smax.max(1.0);
    let rank = sigma.iter().filter(|&&s| s > cutoff).count();
    Ok(SpectralDecomposition {
        u,
        singular_values: sigma,
        v: v_sorted,
        rank,
        tol,
    })
}

// Fill columns `filled..m` of `u` with an orthonormal completion, picking at each
// step the coordinate axis with the largest residual (two Gram-Schmidt passes).
fn complete_orthonormal(u: &mut Matrix, filled: usize) {
    let m = u.nrows();
    for k in filled..m {
        let mut best: Option<(f64, Vector)> = None;
        for e in 0..m {
            let mut r = Vector::zeros(m);
            r[e] = 1.0;
            for _ in 0..2 {
                for j in 0..k {
                    let c = u.column(j).dot(&r);
                    r.axpy(-c, &u.column(j), 1.0);
                }
            }
            let nr = r.norm();
            if best.as_ref().is_none_or(|(b, _)| nr > *b) {
                best = Some((nr, r));
            }
        }
        let (nr, r) = best.expect("m > 0");
        u.set_column(k, &(r / nr));
    }
}

pub fn pseudo_inverse(a: &Matrix, tol: f64) -> Result<Matrix> {
    Ok(svd_with_tol(a, tol)?.pseudo_inverse())
}

/// Pseudo-inverse with the default rank cutoff.
pub fn pinv(a: &Matrix) -> Result<Matrix> {
    Ok(svd(a)?.pseudo_inverse())
}

pub fn min_norm_least_squares(x: &Matrix, y: &Vector) -> Result<Vector> {
    if x.nrows() != y.len() {
        return Err(Error::dims("min_norm_least_squares", x.nrows(), y.len()));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("least squares labels"));
    }
    Ok(pinv(x)? * y)
}

/// Smallest singular value above the rank cutoff.
pub fn sigma_min_plus(a: &Matrix) -> Result<f64> {
    let s = svd(a)?;
    if s.rank == 0 {
        return Err(Error::NoNonzeroSingularValue);
    }
    Ok(s.singular_values[s.rank - 1])
}

pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(0.0);
    }
    Ok(svd(a)?.sigma_max())
}

/// Orthogonal projector I - X⁺X onto ker(X).
pub fn kernel_projector(x: &Matrix) -> Result<Matrix> {
    let s = svd(x)?;
    Ok(projector_from(&s))
}

pub(crate) fn projector_from(s: &SpectralDecomposition) -> Matrix {
    let d = s.v.nrows();
    let vr = s.row_space_basis();
    Matrix::identity(d, d) - &vr * vr.transpose()
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue_sym(a: &Matrix) -> f64 {
    let sym = (a + a.transpose()) * 0.5;
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_symmetric(a: &Matrix, tol: f64) -> bool {
    a.is_square() && (a - a.transpose()).amax() <= tol * a.amax().max(1.0)
}

/// Symmetric square root of a PSD matrix; negative eigenvalues are clipped to zero.
pub fn psd_sqrt(a: &Matrix) -> Matrix {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}
