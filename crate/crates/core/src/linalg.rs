//! Small dense/sparse helpers shared by the filters and the analysis code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Result, SutseError};

/// Relative asymmetry tolerated on covariance inputs.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Most negative eigenvalue tolerated on PSD inputs (scaled by max(1, ‖A‖)).
pub const PSD_TOL: f64 = 1e-10;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    let a = m.as_mut_slice();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (a[i + j * n] + a[j + i * n]);
            a[i + j * n] = avg;
            a[j + i * n] = avg;
        }
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Validate a covariance-like input: square, finite, symmetric, PSD.
pub fn check_covariance(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(SutseError::input(format!(
            "{name} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(SutseError::input(format!("{name} has non-finite entries")));
    }
    let scale = max_abs(m).max(1.0);
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(SutseError::input(format!(
                    "{name} is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    if n > 0 {
        let mut s = m.clone();
        symmetrize(&mut s);
        let min_eig = SymmetricEigen::new(s).eigenvalues.min();
        if min_eig < -PSD_TOL * scale {
            return Err(SutseError::input(format!(
                "{name} is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
    }
    Ok(())
}

/// A factor `B` with `B Bᵀ = m` for symmetric PSD `m` (eigenvalues clamped at 0).
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let mut b = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let root = lambda.max(0.0).sqrt();
        b.column_mut(j).scale_mut(root);
    }
    b
}

pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.iter()
        .enumerate()
        .all(|(k, x)| k % m.nrows() == k / m.nrows() || *x == 0.0)
}

/// Row-compressed copy of a (typically block-diagonal) matrix.
#[derive(Debug, Clone)]
pub struct SparseRows {
    rows: Vec<Vec<(usize, f64)>>,
    ncols: usize,
}

impl SparseRows {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter_map(|j| {
                        let x = m[(i, j)];
                        (x != 0.0).then_some((j, x))
                    })
                    .collect()
            })
            .collect();
        Self {
            rows,
            ncols: m.ncols(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// `self · m`
    pub fn mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(m.nrows(), self.ncols);
        let (r, nc) = (m.nrows(), m.ncols());
        let src = m.as_slice();
        let mut out = Vec::with_capacity(self.rows.len() * nc);
        for c in 0..nc {
            let col = &src[c * r..(c + 1) * r];
            out.extend(self.rows.iter().map(|row| row.iter().map(|&(j, v)| v * col[j]).sum::<f64>()));
        }
        DMatrix::from_vec(self.rows.len(), nc, out)
    }

    /// `m · selfᵀ`.
    pub fn mul_transpose_right(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(m.ncols(), self.ncols);
        let r = m.nrows();
        let src = m.as_slice();
        let mut out = Vec::with_capacity(r * self.rows.len());
        for row in &self.rows {
            match row.as_slice() {
                [] => out.extend(std::iter::repeat_n(0.0, r)),
                [(j, v)] => out.extend(src[j * r..(j + 1) * r].iter().map(|x| v * x)),
                _ => out.extend((0..r).map(|k| row.iter().map(|&(j, v)| v * src[j * r + k]).sum::<f64>())),
            }
        }
        DMatrix::from_vec(r, self.rows.len(), out)
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows
                .iter()
                .map(|row| row.iter().map(|&(j, v)| v * x[j]).sum()),
        )
    }

    /// Keep only the listed rows.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            ncols: self.ncols,
        }
    }
}
