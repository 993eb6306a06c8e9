//! One-step-ahead and same-step forecasts from the full multivariate filter.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SutseError};
use crate::filter::FilterOutput;
use crate::linalg::{cholesky, submatrix, subvector};
use crate::model::StateSpaceModel;

/// Components already seen at time n+1 and the component to forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct SameStepRequest {
    pub observed_idx: Vec<usize>,
    pub observed_vals: Vec<f64>,
    pub target: usize,
}

impl SameStepRequest {
    pub fn new(observed: Vec<(usize, f64)>, target: usize) -> Self {
        let (observed_idx, observed_vals) = observed.into_iter().unzip();
        Self {
            observed_idx,
            observed_vals,
            target,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.observed_idx.len() != self.observed_vals.len() {
            return Err(SutseError::input("observed indices and values differ in length"));
        }
        if self.target >= d {
            return Err(SutseError::input(format!("target {} out of range for d={d}", self.target)));
        }
        let mut seen = vec![false; d];
        for &i in &self.observed_idx {
            if i >= d {
                return Err(SutseError::input(format!("observed index {i} out of range for d={d}")));
            }
            if seen[i] {
                return Err(SutseError::input(format!("observed index {i} repeated")));
            }
            if i == self.target {
                return Err(SutseError::input("target is among the observed components"));
            }
            seen[i] = true;
        }
        if self.observed_vals.iter().any(|x| !x.is_finite()) {
            return Err(SutseError::input("observed values must be finite (no missing)"));
        }
        Ok(())
    }
}

/// `Cov(x_k, x_A) V(x_A)⁻¹ e_A` for a zero-mean Gaussian vector with covariance `cov`.
pub fn conditional_correction(
    cov: &DMatrix<f64>,
    target: usize,
    observed: &[usize],
    innovations: &DVector<f64>,
) -> Result<f64> {
    if observed.is_empty() {
        return Ok(0.0);
    }
    let block = submatrix(cov, observed, observed);
    let chol = cholesky(&block).ok_or_else(|| {
        SutseError::Singular(format!(
            "conditioning block over components {observed:?} is not positive definite"
        ))
    })?;
    let x = chol.solve(innovations);
    Ok(observed
        .iter()
        .zip(x.iter())
        .map(|(&i, &xi)| cov[(target, i)] * xi)
        .sum())
}

/// Conditional means of the unobserved coordinates given the observed ones.
///
/// Returns `(unobserved indices, E(x_U | x_A))`.
pub fn conditional_gaussian_mean(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    observed_idx: &[usize],
    observed_vals: &[f64],
) -> Result<(Vec<usize>, DVector<f64>)> {
    let m = mean.len();
    if cov.shape() != (m, m) {
        return Err(SutseError::input("mean and covariance dimensions differ"));
    }
    if observed_idx.len() != observed_vals.len() {
        return Err(SutseError::input("observed indices and values differ in length"));
    }
    if observed_idx.iter().any(|&i| i >= m) {
        return Err(SutseError::input("observed index out of range"));
    }
    let unobserved: Vec<usize> = (0..m).filter(|i| !observed_idx.contains(i)).collect();
    if observed_idx.is_empty() {
        return Ok((unobserved.clone(), subvector(mean, &unobserved)));
    }
    let block = submatrix(cov, observed_idx, observed_idx);
    let chol = cholesky(&block).ok_or_else(|| {
        SutseError::Singular(format!(
            "observed block {observed_idx:?} of the covariance is not positive definite"
        ))
    })?;
    let resid = DVector::from_iterator(
        observed_idx.len(),
        observed_idx.iter().zip(observed_vals).map(|(&i, &x)| x - mean[i]),
    );
    let w = chol.solve(&resid);
    let cross = submatrix(cov, &unobserved, observed_idx);
    let cond = subvector(mean, &unobserved) + cross * w;
    Ok((unobserved, cond))
}

/// ȳ_{n+1} = Z a_{n+1}.
pub fn one_step_forecast(model: &StateSpaceModel, out: &FilterOutput) -> DVector<f64> {
    &model.z * &out.final_state.a
}

/// F_{n+1} = Z P_{n+1} Zᵀ + Σε.
pub fn next_innovation_cov(model: &StateSpaceModel, out: &FilterOutput) -> DMatrix<f64> {
    &model.z * &out.final_state.p * model.z.transpose() + &model.sigma_eps
}

/// ŷ_{k,n+1} = [Z a_{n+1}](k) + F_{n+1}(k,A) F_{n+1}(A,A)⁻¹ v_{n+1}(A).
pub fn same_step_forecast(
    model: &StateSpaceModel,
    out: &FilterOutput,
    req: &SameStepRequest,
) -> Result<f64> {
    req.validate(model.obs_dim())?;
    let base = one_step_forecast(model, out);
    let f = next_innovation_cov(model, out);
    let innov = DVector::from_iterator(
        req.observed_idx.len(),
        req.observed_idx
            .iter()
            .zip(&req.observed_vals)
            .map(|(&i, &y)| y - base[i]),
    );
    Ok(base[req.target] + conditional_correction(&f, req.target, &req.observed_idx, &innov)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::kalman_filter;
    use crate::model::ObservationSeries;

    #[test]
    fn conditional_mean_examples() {
        let mean = DVector::zeros(2);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let (idx, m) = conditional_gaussian_mean(&mean, &cov, &[1], &[2.0]).unwrap();
        assert_eq!(idx, vec![0]);
        assert!((m[0] - 1.0).abs() < 1e-15);

        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let mean3 = DVector::from_vec(vec![0.5, -1.0, 2.0]);
        let (_, m) = conditional_gaussian_mean(&mean3, &diag, &[1], &[7.0]).unwrap();
        assert_eq!(m.as_slice(), &[0.5, 2.0]);

        let (idx, m) = conditional_gaussian_mean(&mean3, &diag, &[], &[]).unwrap();
        assert_eq!(idx, vec![0, 1, 2]);
        assert_eq!(m, mean3);
    }

    #[test]
    fn singular_block_is_reported() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let err = conditional_gaussian_mean(&DVector::zeros(3), &cov, &[0, 1], &[1.0, 1.0]);
        assert!(matches!(err, Err(SutseError::Singular(_))));
    }

    fn two_dim_model(f_off: f64) -> StateSpaceModel {
        // P1 = I, Z = I, Σε = [[1,f],[f,1]] so F_1 = [[2,f],[f,2]] at n = 0.
        StateSpaceModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, f_off, f_off, 1.0]),
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn hand_same_step() {
        let m = two_dim_model(1.0);
        let out = kalman_filter(&m, &ObservationSeries::empty(2)).unwrap();
        assert_eq!(one_step_forecast(&m, &out).as_slice(), &[0.0, 0.0]);
        let req = SameStepRequest::new(vec![(0, 2.0)], 1);
        assert!((same_step_forecast(&m, &out, &req).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uncorrelated_same_step_is_one_step() {
        let m = two_dim_model(0.0);
        let series = ObservationSeries::from_matrix(DMatrix::from_row_slice(
            3,
            2,
            &[1.0, 2.0, 0.5, -1.0, 2.0, 0.0],
        ));
        let out = kalman_filter(&m, &series).unwrap();
        let base = one_step_forecast(&m, &out);
        let req = SameStepRequest::new(vec![(0, 10.0)], 1);
        assert_eq!(same_step_forecast(&m, &out, &req).unwrap(), base[1]);
    }

    #[test]
    fn request_validation() {
        assert!(SameStepRequest::new(vec![(0, 1.0)], 0).validate(3).is_err());
        assert!(SameStepRequest::new(vec![(0, 1.0), (0, 2.0)], 1).validate(3).is_err());
        assert!(SameStepRequest::new(vec![(5, 1.0)], 1).validate(3).is_err());
        assert!(SameStepRequest::new(vec![(0, f64::NAN)], 1).validate(3).is_err());
        assert!(SameStepRequest::new(vec![(2, 1.0), (0, 2.0)], 1).validate(3).is_ok());
    }
}
