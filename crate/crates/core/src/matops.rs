//! Small dense linear-algebra kernels used by the backward pass.
//!
//! Everything here operates on matrices of at most a few dozen rows, so the
//! eigensolver is a plain cyclic Jacobi iteration rather than a tuned QR code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 50;
const JACOBI_REL_TOL: f64 = 1e-14;
const PIVOT_REL_TOL: f64 = 1e-14;

/// Symmetric eigendecomposition `A = V diag(λ) Vᵀ`.
///
/// Eigenvalues are sorted in descending order and column `i` of
/// `eigenvectors` pairs with `eigenvalues[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEig {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl SymEig {
    /// Recomposes `V diag(values) Vᵀ` with a replacement spectrum.
    pub fn recompose_with(&self, values: &DVector<f64>) -> DMatrix<f64> {
        let v = &self.eigenvectors;
        let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * values[j]);
        symmetrize(&(scaled * v.transpose()))
    }

    pub fn recompose(&self) -> DMatrix<f64> {
        self.recompose_with(&self.eigenvalues)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Returns `(A + Aᵀ) / 2`, which is bitwise symmetric.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            out[(i, j)] = m;
            out[(j, i)] = m;
        }
    }
    out
}

fn ensure_square(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized first. Iteration stops once the off-diagonal
/// Frobenius norm drops below `1e-14 ‖A‖_F`.
pub fn sym_eig(a: &DMatrix<f64>) -> Result<SymEig> {
    ensure_square(a, "eigendecomposition input")?;
    let n = a.nrows();
    let mut m = symmetrize(a);
    let mut v = DMatrix::<f64>::identity(n, n);
    let threshold = JACOBI_REL_TOL * m.norm();

    let mut converged = off_diagonal_norm(&m) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // A <- Jᵀ A J on rows/columns p and q.
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&m) <= threshold;
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps });
    }

    // Stable sort keeps the Jacobi order for ties.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| m[(i, i)]));
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Raises every eigenvalue of `a` below `floor` to `floor`.
///
/// Inputs whose spectrum already clears the floor are returned unchanged
/// (after symmetrization).
pub fn regularize_floor(a: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eig(a)?;
    if eig.min_eigenvalue() >= floor {
        return Ok(symmetrize(a));
    }
    let floored = eig.eigenvalues.map(|l| l.max(floor));
    Ok(eig.recompose_with(&floored))
}

/// Square-root factor `P = V diag(max(√max(λ, 0), sqrt_floor))`, so that
/// `P Pᵀ` is positive definite with smallest eigenvalue at least `sqrt_floor²`.
pub fn sqrt_factor_floor(a: &DMatrix<f64>, sqrt_floor: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eig(a)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt().max(sqrt_floor));
    let v = &eig.eigenvectors;
    Ok(DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| {
        v[(i, j)] * roots[j]
    }))
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve_linear(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_square(a, "coefficient matrix")?;
    if b.nrows() != a.nrows() {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, expected {}",
            b.nrows(),
            a.nrows()
        )));
    }
    let scale = a.amax();
    let threshold = PIVOT_REL_TOL * scale;
    let lu = a.clone().lu();
    let u = lu.u();
    let pivot = u.diagonal().amin();
    if scale == 0.0 || pivot <= threshold {
        return Err(Error::Singular { pivot, threshold });
    }
    lu.solve(b).ok_or(Error::Singular { pivot, threshold })
}

/// Vector right-hand-side convenience for [`solve_linear`].
pub fn solve_linear_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let x = solve_linear(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok(x.column(0).into_owned())
}
