//! The two-stage fast method.
//!
//! Stage one filters every column with its own univariate model, ignoring
//! the cross-correlation of the observation noise. Stage two estimates the
//! covariance of the resulting forecast errors v′ and uses it in place of
//! F_{n+1} for the same-step correction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SutseError};
use crate::filter::{kalman_filter_with, FilterOptions, Storage};
use crate::forecast::exact::{conditional_correction, SameStepRequest};
use crate::model::{KalmanState, ObservationSeries};
use crate::sutse::SutseSpec;

/// Default burn-in index for [`sample_error_cov`].
pub const DEFAULT_N0: usize = 5;

#[derive(Debug, Clone)]
pub struct FastFilterOutput {
    /// v′_t with the observation mask.
    pub v_prime: ObservationSeries,
    /// Per dimension: a′_1 .. a′_{n+1}.
    pub a_prime: Vec<Vec<DVector<f64>>>,
    /// n×d scalar F′_t⁽ʲ⁾ (NaN where y_{j,t} was missing).
    pub f_prime: DMatrix<f64>,
    /// Per-dimension log-likelihoods.
    pub logliks: Vec<f64>,
    /// (n+1)×d one-step forecasts Z⁽ʲ⁾ a′_t⁽ʲ⁾; the last row is ȳ′_{n+1}.
    pub one_step: DMatrix<f64>,
    pub final_states: Vec<KalmanState>,
}

impl FastFilterOutput {
    pub fn len(&self) -> usize {
        self.v_prime.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_prime.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.v_prime.dim()
    }
}

pub fn run_univariate_filters(spec: &SutseSpec, series: &ObservationSeries) -> Result<FastFilterOutput> {
    run_univariate_filters_with(spec, series, &FilterOptions::default())
}

/// Filter each column j with block j and variance Σε(j,j), in parallel.
pub fn run_univariate_filters_with(
    spec: &SutseSpec,
    series: &ObservationSeries,
    options: &FilterOptions,
) -> Result<FastFilterOutput> {
    spec.validate()?;
    let d = spec.dim();
    if series.dim() != d {
        return Err(SutseError::input(format!(
            "series has {} columns, spec has {d} blocks",
            series.dim()
        )));
    }
    for j in 0..d {
        if spec.sigma_eps[(j, j)] <= 0.0 {
            return Err(SutseError::input(format!("sigma_eps({j},{j}) must be positive")));
        }
    }
    let options = FilterOptions {
        storage: Storage::Forecast,
        ..*options
    };
    let outputs = (0..d)
        .into_par_iter()
        .map(|j| {
            let model = spec.dimension_model(j)?;
            kalman_filter_with(&model, &series.column(j), &options).map_err(|e| e.in_dimension(j))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = series.len();
    let mut v = DMatrix::from_element(n, d, f64::NAN);
    let mut f_prime = DMatrix::from_element(n, d, f64::NAN);
    let mut one_step = DMatrix::zeros(n + 1, d);
    for (j, out) in outputs.iter().enumerate() {
        let z = &spec.blocks[j].z;
        for t in 0..n {
            if let Some(x) = out.v.get(t, 0) {
                v[(t, j)] = x;
                f_prime[(t, j)] = out.f[t][(0, 0)];
            }
        }
        for (t, a) in out.a.iter().enumerate() {
            one_step[(t, j)] = z.dot(a);
        }
    }
    let (a_prime, rest): (Vec<_>, Vec<_>) = outputs
        .into_iter()
        .map(|o| (o.a, (o.loglik, o.final_state)))
        .unzip();
    let (logliks, final_states) = rest.into_iter().unzip();
    Ok(FastFilterOutput {
        v_prime: ObservationSeries::new(v, series.missing_mask().to_vec())?,
        a_prime,
        f_prime,
        logliks,
        one_step,
        final_states,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovMethod {
    Sample,
    Glasso { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCovEstimate {
    pub v: DMatrix<f64>,
    /// First (1-based) time index included.
    pub n0: usize,
    /// Number of complete rows averaged.
    pub m: usize,
    pub method: CovMethod,
}

/// Uncentered second moment `(1/m) Σ_{t=n0}^{n} v′_t v′_tᵀ` over complete rows.
pub fn sample_error_cov(fast: &FastFilterOutput, n0: usize) -> Result<ErrorCovEstimate> {
    sample_error_cov_range(&fast.v_prime, n0, fast.len())
}

/// As [`sample_error_cov`], restricted to rows `n0..=n_end` (1-based).
pub fn sample_error_cov_range(
    v_prime: &ObservationSeries,
    n0: usize,
    n_end: usize,
) -> Result<ErrorCovEstimate> {
    if n0 == 0 || n0 > n_end || n_end > v_prime.len() {
        return Err(SutseError::input(format!(
            "burn-in n0={n0} must lie in 1..={n_end} (series length {})",
            v_prime.len()
        )));
    }
    let d = v_prime.dim();
    let mut acc = DMatrix::zeros(d, d);
    let mut m = 0usize;
    for t in (n0 - 1)..n_end {
        if !v_prime.row_complete(t) {
            continue;
        }
        let row = v_prime.row_values(t);
        acc.syger(1.0, &row, &row, 1.0);
        m += 1;
    }
    if m == 0 {
        return Err(SutseError::input("no fully observed forecast-error rows after burn-in"));
    }
    if m <= d {
        log::warn!("error covariance estimated from {m} rows for d={d}; consider glasso");
    }
    acc /= m as f64;
    acc.fill_upper_triangle_with_lower_triangle();
    Ok(ErrorCovEstimate {
        v: acc,
        n0,
        m,
        method: CovMethod::Sample,
    })
}

/// ȳ′_{n+1} assembled from the per-dimension states.
pub fn fast_one_step(fast: &FastFilterOutput, spec: &SutseSpec) -> DVector<f64> {
    DVector::from_iterator(
        spec.dim(),
        spec.blocks
            .iter()
            .zip(&fast.final_states)
            .map(|(b, s)| b.z.dot(&s.a)),
    )
}

/// ỹ_{k,n+1} = ȳ′_{n+1}(k) + V̂(k,A) V̂(A,A)⁻¹ v′_{n+1}(A).
pub fn fast_same_step(
    fast: &FastFilterOutput,
    cov: &ErrorCovEstimate,
    req: &SameStepRequest,
) -> Result<f64> {
    let d = fast.dim();
    req.validate(d)?;
    if cov.v.shape() != (d, d) {
        return Err(SutseError::input("error covariance dimension does not match"));
    }
    let base = fast.one_step.row(fast.len()).transpose();
    let innov = DVector::from_iterator(
        req.observed_idx.len(),
        req.observed_idx
            .iter()
            .zip(&req.observed_vals)
            .map(|(&i, &y)| y - base[i]),
    );
    let correction = conditional_correction(&cov.v, req.target, &req.observed_idx, &innov)
        .map_err(|e| match e {
            SutseError::Singular(msg) => SutseError::Singular(format!(
                "{msg}; the sample estimate may be rank deficient, try --cov glasso"
            )),
            other => other,
        })?;
    Ok(base[req.target] + correction)
}
