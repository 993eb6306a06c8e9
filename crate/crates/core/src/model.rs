//! Linear-Gaussian state-space model and observation containers.
//!
//! ```text
//! y_t     = Z α_t + ε_t,   ε_t ~ N(0, Σε)
//! α_{t+1} = T α_t + η_t,   η_t ~ N(0, Ση)
//! α_1 ~ N(a₁, P₁)
//! ```

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SutseError};
use crate::linalg::check_covariance;

/// Variance used for the approximate diffuse prior `P₁ = κ I`.
pub const DIFFUSE_KAPPA: f64 = 1e7;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    /// Design matrix, d×p.
    pub z: DMatrix<f64>,
    /// Transition matrix, p×p.
    pub t: DMatrix<f64>,
    /// Observation-noise covariance Σε, d×d.
    pub sigma_eps: DMatrix<f64>,
    /// State-noise covariance Ση, p×p.
    pub sigma_eta: DMatrix<f64>,
    pub a1: DVector<f64>,
    pub p1: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn new(
        z: DMatrix<f64>,
        t: DMatrix<f64>,
        sigma_eps: DMatrix<f64>,
        sigma_eta: DMatrix<f64>,
        a1: DVector<f64>,
        p1: DMatrix<f64>,
    ) -> Result<Self> {
        let m = Self {
            z,
            t,
            sigma_eps,
            sigma_eta,
            a1,
            p1,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, p) = self.z.shape();
        if d == 0 || p == 0 {
            return Err(SutseError::input("Z must be non-empty"));
        }
        if self.t.shape() != (p, p) {
            return Err(SutseError::input(format!(
                "T must be {p}x{p}, got {:?}",
                self.t.shape()
            )));
        }
        if self.sigma_eps.shape() != (d, d) {
            return Err(SutseError::input(format!(
                "sigma_eps must be {d}x{d}, got {:?}",
                self.sigma_eps.shape()
            )));
        }
        if self.sigma_eta.shape() != (p, p) {
            return Err(SutseError::input(format!(
                "sigma_eta must be {p}x{p}, got {:?}",
                self.sigma_eta.shape()
            )));
        }
        if self.a1.len() != p {
            return Err(SutseError::input(format!("a1 must have length {p}")));
        }
        if self.p1.shape() != (p, p) {
            return Err(SutseError::input(format!("P1 must be {p}x{p}")));
        }
        if self.z.iter().chain(self.t.iter()).chain(self.a1.iter()).any(|x| !x.is_finite()) {
            return Err(SutseError::input("Z, T and a1 must be finite"));
        }
        check_covariance("sigma_eps", &self.sigma_eps)?;
        check_covariance("sigma_eta", &self.sigma_eta)?;
        check_covariance("P1", &self.p1)?;
        Ok(())
    }

    /// Observation dimension d.
    pub fn obs_dim(&self) -> usize {
        self.z.nrows()
    }

    /// State dimension p.
    pub fn state_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn initial_state(&self) -> KalmanState {
        KalmanState {
            a: self.a1.clone(),
            p: self.p1.clone(),
            t: 0,
        }
    }
}

/// Filter state `(a_t, P_t)` = mean and covariance of α_t given y_1..y_{t-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub a: DVector<f64>,
    pub p: DMatrix<f64>,
    /// Number of observations already absorbed (0-based index of the next row).
    pub t: usize,
}

/// n×d observations with a per-cell missing mask. Missing cells hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    values: DMatrix<f64>,
    missing: Vec<bool>,
}

impl ObservationSeries {
    /// `missing` is row-major with length n·d.
    pub fn new(mut values: DMatrix<f64>, missing: Vec<bool>) -> Result<Self> {
        let (n, d) = values.shape();
        if missing.len() != n * d {
            return Err(SutseError::input(format!(
                "missing mask has length {}, expected {}",
                missing.len(),
                n * d
            )));
        }
        for t in 0..n {
            for j in 0..d {
                if missing[t * d + j] {
                    values[(t, j)] = f64::NAN;
                } else if !values[(t, j)].is_finite() {
                    return Err(SutseError::input(format!(
                        "non-finite observed value at row {t}, column {j}"
                    )));
                }
            }
        }
        Ok(Self { values, missing })
    }

    /// Build from a matrix, treating NaN cells as missing.
    pub fn from_matrix(values: DMatrix<f64>) -> Self {
        let (n, d) = values.shape();
        let mut missing = vec![false; n * d];
        for t in 0..n {
            for j in 0..d {
                missing[t * d + j] = !values[(t, j)].is_finite();
            }
        }
        let mut values = values;
        values.iter_mut().for_each(|x| {
            if !x.is_finite() {
                *x = f64::NAN
            }
        });
        Self { values, missing }
    }

    pub fn empty(d: usize) -> Self {
        Self {
            values: DMatrix::zeros(0, d),
            missing: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn is_missing(&self, t: usize, j: usize) -> bool {
        self.missing[t * self.dim() + j]
    }

    pub fn get(&self, t: usize, j: usize) -> Option<f64> {
        (!self.is_missing(t, j)).then(|| self.values[(t, j)])
    }

    pub fn row_mask(&self, t: usize) -> &[bool] {
        let d = self.dim();
        &self.missing[t * d..(t + 1) * d]
    }

    pub fn row_values(&self, t: usize) -> DVector<f64> {
        self.values.row(t).transpose()
    }

    pub fn row_complete(&self, t: usize) -> bool {
        !self.row_mask(t).iter().any(|&m| m)
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn column(&self, j: usize) -> ObservationSeries {
        let n = self.len();
        Self {
            values: DMatrix::from_fn(n, 1, |t, _| self.values[(t, j)]),
            missing: (0..n).map(|t| self.is_missing(t, j)).collect(),
        }
    }

    pub fn rows(&self, range: Range<usize>) -> ObservationSeries {
        let d = self.dim();
        Self {
            values: self.values.rows(range.start, range.len()).into_owned(),
            missing: self.missing[range.start * d..range.end * d].to_vec(),
        }
    }

    /// Stack two series with the same column count.
    pub fn concat(&self, other: &ObservationSeries) -> Result<ObservationSeries> {
        if self.dim() != other.dim() {
            return Err(SutseError::input("cannot concatenate series of different width"));
        }
        let (n1, n2, d) = (self.len(), other.len(), self.dim());
        let values = DMatrix::from_fn(n1 + n2, d, |t, j| {
            if t < n1 {
                self.values[(t, j)]
            } else {
                other.values[(t - n1, j)]
            }
        });
        let mut missing = self.missing.clone();
        missing.extend_from_slice(&other.missing);
        Ok(Self { values, missing })
    }

    /// Replace every value through `f` (missing cells stay missing).
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> ObservationSeries {
        let mut values = self.values.clone();
        for (k, x) in values.iter_mut().enumerate() {
            // column-major index -> row-major mask
            let (t, j) = (k % self.len().max(1), k / self.len().max(1));
            if !self.missing[t * self.dim() + j] {
                *x = f(*x);
            }
        }
        Self {
            values,
            missing: self.missing.clone(),
        }
    }

    pub fn set_missing(&mut self, t: usize, j: usize) {
        let d = self.dim();
        self.missing[t * d + j] = true;
        self.values[(t, j)] = f64::NAN;
    }
}
