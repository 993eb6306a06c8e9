//! Maximum-likelihood estimation of SUTSE parameters.
//!
//! A [`ParameterMap`] binds an ordered parameter vector into a [`SutseSpec`]
//! template. The optimizer works on the transformed scale (log for
//! variances) and the negative log-likelihood is minimized with a projected
//! L-BFGS using central-difference gradients.

pub mod lbfgs;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SutseError};
use crate::filter::{kalman_filter_with, FilterOptions, Storage};
use crate::model::ObservationSeries;
use crate::sutse::{compose, SutseSpec};

pub use crate::sutse::equicorrelation_sigma_eps;
pub use lbfgs::{minimize, LbfgsOptions, OptimResult};

/// Where a parameter lands in the template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamTarget {
    /// Σε(j, j).
    SigmaEpsDiag { dim: usize },
    /// Every off-diagonal entry of Σε.
    SigmaEpsOffdiagCommon,
    /// Σε(row, col) and its mirror.
    SigmaEpsEntry { row: usize, col: usize },
    /// AR coefficient φ_lag (1-based) of an AR + local level block: T(1, lag).
    ArCoef { block: usize, lag: usize },
    /// Diagonal entry `index` of the block state-noise covariance.
    StateNoise { block: usize, index: usize },
    /// Any entry of a block transition matrix.
    TransitionEntry { block: usize, row: usize, col: usize },
}

impl ParamTarget {
    /// The single dimension this target belongs to; `None` for cross terms.
    pub fn dimension(&self) -> Option<usize> {
        match *self {
            Self::SigmaEpsDiag { dim } => Some(dim),
            Self::ArCoef { block, .. } | Self::StateNoise { block, .. } | Self::TransitionEntry { block, .. } => {
                Some(block)
            }
            Self::SigmaEpsOffdiagCommon | Self::SigmaEpsEntry { .. } => None,
        }
    }

    fn relocated(self, j: usize) -> Self {
        match self {
            Self::SigmaEpsDiag { .. } => Self::SigmaEpsDiag { dim: j },
            Self::ArCoef { lag, .. } => Self::ArCoef { block: j, lag },
            Self::StateNoise { index, .. } => Self::StateNoise { block: j, index },
            Self::TransitionEntry { row, col, .. } => Self::TransitionEntry { block: j, row, col },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log,
}

/// Default model-space box for log-mapped parameters.
pub const LOG_PARAM_MIN: f64 = 1e-10;
pub const LOG_PARAM_MAX: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub target: ParamTarget,
    pub transform: Transform,
    /// Model-space bounds; `None` means the transform's default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, target: ParamTarget, transform: Transform) -> Self {
        Self {
            name: name.into(),
            target,
            transform,
            lower: None,
            upper: None,
        }
    }

    pub fn bounded(mut self, lower: f64, upper: f64) -> Self {
        self.lower = Some(lower);
        self.upper = Some(upper);
        self
    }

    fn to_model(&self, x: f64) -> f64 {
        match self.transform {
            Transform::Identity => x,
            Transform::Log => x.exp(),
        }
    }

    fn to_optimizer(&self, v: f64) -> f64 {
        match self.transform {
            Transform::Identity => v,
            Transform::Log => v.ln(),
        }
    }

    /// Bounds on the optimizer scale.
    fn optimizer_bounds(&self) -> (f64, f64) {
        match self.transform {
            Transform::Identity => (
                self.lower.unwrap_or(f64::NEG_INFINITY),
                self.upper.unwrap_or(f64::INFINITY),
            ),
            Transform::Log => (
                self.lower.unwrap_or(LOG_PARAM_MIN).max(f64::MIN_POSITIVE).ln(),
                self.upper.unwrap_or(LOG_PARAM_MAX).ln(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterMap {
    pub params: Vec<ParamSpec>,
}

impl ParameterMap {
    pub fn new(params: Vec<ParamSpec>) -> Self {
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    /// θ₁..θ_d on the diagonal of Σε (log) and θ_{d+1} shared off-diagonal.
    pub fn equicorrelation(d: usize) -> Self {
        let mut params: Vec<ParamSpec> = (0..d)
            .map(|j| ParamSpec::new(format!("theta{}", j + 1), ParamTarget::SigmaEpsDiag { dim: j }, Transform::Log))
            .collect();
        if d > 1 {
            params.push(ParamSpec::new(
                format!("theta{}", d + 1),
                ParamTarget::SigmaEpsOffdiagCommon,
                Transform::Identity,
            ));
        }
        Self { params }
    }

    /// φ₁..φ_q, q₁, q₂ and σε of one AR + local level block.
    pub fn ar_local_level_block(block: usize, order: usize) -> Vec<ParamSpec> {
        let mut out: Vec<ParamSpec> = (1..=order)
            .map(|lag| {
                ParamSpec::new(
                    format!("phi{lag}_{block}"),
                    ParamTarget::ArCoef { block, lag },
                    Transform::Identity,
                )
            })
            .collect();
        out.push(ParamSpec::new(
            format!("q1_{block}"),
            ParamTarget::StateNoise { block, index: 0 },
            Transform::Log,
        ));
        out.push(ParamSpec::new(
            format!("q2_{block}"),
            ParamTarget::StateNoise { block, index: 1 },
            Transform::Log,
        ));
        out
    }

    /// Per-dimension map for block 0 of a one-block spec.
    pub fn ar_local_level_single(order: usize) -> Self {
        let mut params = Self::ar_local_level_block(0, order);
        params.push(ParamSpec::new("sigma_eps_0", ParamTarget::SigmaEpsDiag { dim: 0 }, Transform::Log));
        Self { params }
    }

    /// All block parameters plus every entry of the upper triangle of Σε.
    pub fn ar_local_level_full(d: usize, order: usize) -> Self {
        Self::ar_local_level_orders(&vec![order; d])
    }

    /// As [`ParameterMap::ar_local_level_full`] with a separate AR order per block.
    pub fn ar_local_level_orders(orders: &[usize]) -> Self {
        let d = orders.len();
        let mut params: Vec<ParamSpec> = orders
            .iter()
            .enumerate()
            .flat_map(|(j, &q)| Self::ar_local_level_block(j, q))
            .collect();
        for row in 0..d {
            for col in row..d {
                params.push(if row == col {
                    ParamSpec::new(format!("sigma_eps_{row}"), ParamTarget::SigmaEpsDiag { dim: row }, Transform::Log)
                } else {
                    ParamSpec::new(
                        format!("sigma_eps_{row}_{col}"),
                        ParamTarget::SigmaEpsEntry { row, col },
                        Transform::Identity,
                    )
                });
            }
        }
        Self { params }
    }

    /// The same map pointed at block/dimension `j` of a larger spec.
    pub fn relocated(&self, j: usize) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| ParamSpec {
                    target: p.target.relocated(j),
                    ..p.clone()
                })
                .collect(),
        }
    }

    /// Parameters that belong to dimension j alone, rebased onto the
    /// one-block spec of [`dimension_spec`]. Cross terms are dropped.
    pub fn for_dimension(&self, j: usize) -> Self {
        Self {
            params: self
                .params
                .iter()
                .filter(|p| p.target.dimension() == Some(j))
                .map(|p| ParamSpec {
                    target: p.target.relocated(0),
                    ..p.clone()
                })
                .collect(),
        }
    }

    pub fn validate(&self, template: &SutseSpec) -> Result<()> {
        let d = template.dim();
        let bad = |name: &str, what: String| Err(SutseError::input(format!("parameter {name}: {what}")));
        for p in &self.params {
            let block_ok = |b: usize| b < d;
            match p.target {
                ParamTarget::SigmaEpsDiag { dim } if dim >= d => {
                    return bad(&p.name, format!("dimension {dim} out of range for d={d}"))
                }
                ParamTarget::SigmaEpsOffdiagCommon if d < 2 => {
                    return bad(&p.name, "no off-diagonal for d=1".into())
                }
                ParamTarget::SigmaEpsEntry { row, col } if row >= d || col >= d || row == col => {
                    return bad(&p.name, format!("invalid off-diagonal entry ({row},{col})"))
                }
                ParamTarget::ArCoef { block, lag } => {
                    if !block_ok(block) {
                        return bad(&p.name, format!("block {block} out of range"));
                    }
                    if lag == 0 || lag >= template.blocks[block].state_dim() {
                        return bad(&p.name, format!("lag {lag} out of range"));
                    }
                }
                ParamTarget::StateNoise { block, index } => {
                    if !block_ok(block) || index >= template.blocks[block].state_dim() {
                        return bad(&p.name, format!("state noise ({block},{index}) out of range"));
                    }
                }
                ParamTarget::TransitionEntry { block, row, col } => {
                    if !block_ok(block) {
                        return bad(&p.name, format!("block {block} out of range"));
                    }
                    let k = template.blocks[block].state_dim();
                    if row >= k || col >= k {
                        return bad(&p.name, format!("transition entry ({row},{col}) out of range"));
                    }
                }
                _ => {}
            }
            if let (Some(lo), Some(hi)) = (p.lower, p.upper) {
                if !(lo < hi) {
                    return bad(&p.name, format!("empty bounds [{lo}, {hi}]"));
                }
            }
            if p.transform == Transform::Log && p.lower.is_some_and(|lo| lo < 0.0) {
                return bad(&p.name, "log-mapped parameter with negative lower bound".into());
            }
        }
        for (i, a) in self.params.iter().enumerate() {
            if self.params[..i].iter().any(|b| b.target == a.target) {
                return bad(&a.name, "target bound twice".into());
            }
        }
        Ok(())
    }

    /// Current template values of every parameter (model space).
    pub fn read(&self, template: &SutseSpec) -> Vec<f64> {
        self.params
            .iter()
            .map(|p| match p.target {
                ParamTarget::SigmaEpsDiag { dim } => template.sigma_eps[(dim, dim)],
                ParamTarget::SigmaEpsOffdiagCommon => template.sigma_eps[(0, 1)],
                ParamTarget::SigmaEpsEntry { row, col } => template.sigma_eps[(row, col)],
                ParamTarget::ArCoef { block, lag } => template.blocks[block].t[(1, lag)],
                ParamTarget::StateNoise { block, index } => template.blocks[block].q[(index, index)],
                ParamTarget::TransitionEntry { block, row, col } => template.blocks[block].t[(row, col)],
            })
            .collect()
    }

    /// Write model-space values into a copy of the template.
    pub fn apply(&self, template: &SutseSpec, theta: &[f64]) -> Result<SutseSpec> {
        if theta.len() != self.len() {
            return Err(SutseError::input(format!(
                "parameter vector has length {}, map has {}",
                theta.len(),
                self.len()
            )));
        }
        let mut spec = template.clone();
        let d = spec.dim();
        for (p, &v) in self.params.iter().zip(theta) {
            match p.target {
                ParamTarget::SigmaEpsDiag { dim } => spec.sigma_eps[(dim, dim)] = v,
                ParamTarget::SigmaEpsOffdiagCommon => {
                    for i in 0..d {
                        for j in 0..d {
                            if i != j {
                                spec.sigma_eps[(i, j)] = v;
                            }
                        }
                    }
                }
                ParamTarget::SigmaEpsEntry { row, col } => {
                    spec.sigma_eps[(row, col)] = v;
                    spec.sigma_eps[(col, row)] = v;
                }
                ParamTarget::ArCoef { block, lag } => spec.blocks[block].t[(1, lag)] = v,
                ParamTarget::StateNoise { block, index } => spec.blocks[block].q[(index, index)] = v,
                ParamTarget::TransitionEntry { block, row, col } => spec.blocks[block].t[(row, col)] = v,
            }
        }
        Ok(spec)
    }

    pub fn to_model(&self, x: &[f64]) -> Vec<f64> {
        self.params.iter().zip(x).map(|(p, &v)| p.to_model(v)).collect()
    }

    pub fn to_optimizer(&self, theta: &[f64]) -> Vec<f64> {
        self.params.iter().zip(theta).map(|(p, &v)| p.to_optimizer(v)).collect()
    }

    fn optimizer_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        self.params.iter().map(ParamSpec::optimizer_bounds).unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub optimizer: LbfgsOptions,
    /// Passed to every likelihood evaluation.
    pub steady_state_tol: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optimizer: LbfgsOptions::default(),
            steady_state_tol: None,
        }
    }
}

impl FitOptions {
    fn filter_options(&self) -> FilterOptions {
        FilterOptions {
            storage: Storage::LoglikOnly,
            steady_state_tol: self.steady_state_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Model-space estimate.
    pub theta_hat: Vec<f64>,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Projected gradient norm on the optimizer scale.
    pub gradient_norm: f64,
    /// Some parameter ended on its box bound.
    pub at_bound: bool,
    pub evaluations: usize,
}

/// Log-likelihood of `series` at model-space `theta`.
pub fn evaluate_loglik(
    template: &SutseSpec,
    pmap: &ParameterMap,
    series: &ObservationSeries,
    theta: &[f64],
    options: &FitOptions,
) -> Result<f64> {
    let spec = pmap.apply(template, theta)?;
    let model = compose(&spec)?;
    let ll = kalman_filter_with(&model, series, &options.filter_options())?.loglik;
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(SutseError::Numerical("non-finite log-likelihood".into()))
    }
}

/// Maximize the Gaussian log-likelihood over the parameters in `pmap`.
///
/// `init` is in model space. Trial points where the model is invalid or the
/// filter breaks down count as −∞; non-convergence is reported in the result.
pub fn fit_full(
    template: &SutseSpec,
    pmap: &ParameterMap,
    series: &ObservationSeries,
    init: &[f64],
    options: &FitOptions,
) -> Result<FitResult> {
    pmap.validate(template)?;
    if init.len() != pmap.len() {
        return Err(SutseError::input(format!(
            "init has length {}, parameter map has {}",
            init.len(),
            pmap.len()
        )));
    }
    for (p, &v) in pmap.params.iter().zip(init) {
        if !v.is_finite() || (p.transform == Transform::Log && v <= 0.0) {
            return Err(SutseError::input(format!("invalid initial value {v} for {}", p.name)));
        }
    }
    if series.dim() != template.dim() {
        return Err(SutseError::input(format!(
            "series has {} columns, spec has {} blocks",
            series.dim(),
            template.dim()
        )));
    }
    let objective = |x: &[f64]| -> f64 {
        let theta = pmap.to_model(x);
        match evaluate_loglik(template, pmap, series, &theta, options) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        }
    };
    let (lower, upper) = pmap.optimizer_bounds();
    let x0 = pmap.to_optimizer(init);
    let r = minimize(&objective, &x0, &lower, &upper, &options.optimizer);
    log::debug!(
        "fit: {} iterations, {} evaluations, converged {}, |g| {:.3e}",
        r.iterations,
        r.evaluations,
        r.converged,
        r.grad_norm
    );
    if !r.f.is_finite() {
        return Err(SutseError::Numerical(
            "log-likelihood is not finite at the initial parameters".into(),
        ));
    }
    Ok(FitResult {
        theta_hat: pmap.to_model(&r.x),
        loglik: -r.f,
        converged: r.converged,
        iterations: r.iterations,
        gradient_norm: r.grad_norm,
        at_bound: r.at_bound,
        evaluations: r.evaluations,
    })
}

/// One-block spec for dimension j: block j and Σε(j, j).
pub fn dimension_spec(template: &SutseSpec, j: usize) -> SutseSpec {
    SutseSpec {
        blocks: vec![template.blocks[j].clone()],
        sigma_eps: DMatrix::from_element(1, 1, template.sigma_eps[(j, j)]),
    }
}

/// Fit each dimension on its own column. `pmaps[j]` refers to block 0 of
/// [`dimension_spec`]`(template, j)`. Failures are per dimension.
pub fn fit_per_dimension(
    template: &SutseSpec,
    pmaps: &[ParameterMap],
    series: &ObservationSeries,
    inits: &[Vec<f64>],
    options: &FitOptions,
) -> Result<Vec<Result<FitResult>>> {
    let d = template.dim();
    if pmaps.len() != d || inits.len() != d {
        return Err(SutseError::input(format!(
            "need {d} parameter maps and initial vectors, got {} and {}",
            pmaps.len(),
            inits.len()
        )));
    }
    if series.dim() != d {
        return Err(SutseError::input(format!("series has {} columns, spec has {d} blocks", series.dim())));
    }
    Ok((0..d)
        .into_par_iter()
        .map(|j| {
            let sub = dimension_spec(template, j);
            fit_full(&sub, &pmaps[j], &series.column(j), &inits[j], options).map_err(|e| e.in_dimension(j))
        })
        .collect())
}

/// Write per-dimension estimates back into the full template.
pub fn merge_per_dimension(
    template: &SutseSpec,
    pmaps: &[ParameterMap],
    fits: &[FitResult],
) -> Result<SutseSpec> {
    let mut spec = template.clone();
    for (j, (pmap, fit)) in pmaps.iter().zip(fits).enumerate() {
        spec = pmap.relocated(j).apply(&spec, &fit.theta_hat)?;
    }
    Ok(spec)
}

/// Sample variance of the observed entries of column j (1.0 if fewer than two).
pub fn column_variance(series: &ObservationSeries, j: usize) -> f64 {
    let xs: Vec<f64> = (0..series.len()).filter_map(|t| series.get(t, j)).collect();
    if xs.len() < 2 {
        return 1.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    if var > 0.0 {
        var
    } else {
        LOG_PARAM_MIN.sqrt()
    }
}

/// Variances at the column sample variance, AR coefficients and
/// covariances at 0, transition entries at the template value.
pub fn default_init(template: &SutseSpec, pmap: &ParameterMap, series: &ObservationSeries) -> Vec<f64> {
    let current = pmap.read(template);
    pmap.params
        .iter()
        .zip(current)
        .map(|(p, cur)| match p.target {
            ParamTarget::SigmaEpsDiag { dim } => column_variance(series, dim),
            ParamTarget::StateNoise { block, .. } => column_variance(series, block),
            ParamTarget::ArCoef { .. } | ParamTarget::SigmaEpsOffdiagCommon | ParamTarget::SigmaEpsEntry { .. } => 0.0,
            ParamTarget::TransitionEntry { .. } => cur,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::simulate;
    use crate::sutse::{ar_local_level_block, SeriesBlock};
    use nalgebra::DVector;

    fn local_level(sigma: f64, q: f64) -> SutseSpec {
        SutseSpec {
            blocks: vec![SeriesBlock {
                z: DVector::from_element(1, 1.0),
                t: DMatrix::identity(1, 1),
                q: DMatrix::from_element(1, 1, q),
                a1: DVector::zeros(1),
                p1: DMatrix::from_element(1, 1, 1e7),
            }],
            sigma_eps: DMatrix::from_element(1, 1, sigma),
        }
    }

    fn ll_map() -> ParameterMap {
        ParameterMap::new(vec![
            ParamSpec::new("sigma", ParamTarget::SigmaEpsDiag { dim: 0 }, Transform::Log),
            ParamSpec::new("q", ParamTarget::StateNoise { block: 0, index: 0 }, Transform::Log),
        ])
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(ParameterMap::ar_local_level_single(5).len(), 8);
        assert_eq!(ParameterMap::ar_local_level_full(32, 5).len(), 752);
        assert_eq!(ParameterMap::equicorrelation(4).len(), 5);
    }

    #[test]
    fn per_dimension_extraction() {
        let full = ParameterMap::ar_local_level_full(3, 5);
        let third = full.for_dimension(2);
        assert_eq!(third.len(), 8);
        assert!(third.params.iter().all(|p| p.target.dimension() == Some(0)));
        assert_eq!(third.relocated(2).params, full.for_dimension(2).relocated(2).params);
        let eq = ParameterMap::equicorrelation(4);
        assert_eq!(eq.for_dimension(1).names(), vec!["theta2"]);
    }

    #[test]
    fn apply_and_read_round_trip() {
        let blk = ar_local_level_block(&[0.0; 3], 1.0, 1.0).unwrap();
        let template = SutseSpec {
            blocks: vec![blk; 3],
            sigma_eps: DMatrix::identity(3, 3),
        };
        let pmap = ParameterMap::ar_local_level_full(3, 3);
        pmap.validate(&template).unwrap();
        let theta: Vec<f64> = (0..pmap.len())
            .map(|i| match pmap.params[i].target {
                ParamTarget::SigmaEpsEntry { .. } => 0.01 * i as f64,
                _ => 0.5 + i as f64,
            })
            .collect();
        let spec = pmap.apply(&template, &theta).unwrap();
        assert_eq!(pmap.read(&spec), theta);
        assert_eq!(spec.sigma_eps, spec.sigma_eps.transpose());
        let x = pmap.to_optimizer(&theta);
        let back = pmap.to_model(&x);
        for (a, b) in back.iter().zip(&theta) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn validation_catches_bad_targets() {
        let template = local_level(1.0, 1.0);
        let bad = ParameterMap::new(vec![ParamSpec::new(
            "x",
            ParamTarget::SigmaEpsDiag { dim: 3 },
            Transform::Log,
        )]);
        assert!(bad.validate(&template).is_err());
        assert!(ParameterMap::equicorrelation(2).validate(&template).is_err());
        let twice = ParameterMap::new(vec![ll_map().params[0].clone(), ll_map().params[0].clone()]);
        assert!(twice.validate(&template).is_err());
    }

    #[test]
    fn local_level_recovery() {
        let truth = local_level(1.0, 1.0);
        let y = simulate(&compose(&truth).unwrap(), 1000, 7).unwrap();
        let pmap = ll_map();
        let fit = fit_full(&truth, &pmap, &y, &[2.0, 0.5], &FitOptions::default()).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!((fit.theta_hat[0] - 1.0).abs() < 0.3, "{fit:?}");
        assert!((fit.theta_hat[1] - 1.0).abs() < 0.3, "{fit:?}");
        let again = evaluate_loglik(&truth, &pmap, &y, &fit.theta_hat, &FitOptions::default()).unwrap();
        assert_eq!(again, fit.loglik);
    }

    #[test]
    fn constant_data_hits_bound_without_nan() {
        let template = local_level(1.0, 1.0);
        let y = ObservationSeries::from_matrix(DMatrix::from_element(200, 1, 3.0));
        let pmap = ll_map();
        let fit = fit_full(&template, &pmap, &y, &[1.0, 1.0], &FitOptions::default()).unwrap();
        assert!(fit.theta_hat.iter().all(|x| x.is_finite()));
        assert!(fit.loglik.is_finite());
        assert!(fit.at_bound || !fit.converged, "{fit:?}");
    }

    #[test]
    fn single_dimension_matches_full() {
        let truth = local_level(0.5, 2.0);
        let y = simulate(&compose(&truth).unwrap(), 300, 3).unwrap();
        let pmap = ll_map();
        let opts = FitOptions::default();
        let full = fit_full(&truth, &pmap, &y, &[1.0, 1.0], &opts).unwrap();
        let per = fit_per_dimension(&truth, &[pmap.clone()], &y, &[vec![1.0, 1.0]], &opts).unwrap();
        assert_eq!(per[0].as_ref().unwrap(), &full);
        let merged = merge_per_dimension(&truth, &[pmap], &[full.clone()]).unwrap();
        assert_eq!(merged.sigma_eps[(0, 0)], full.theta_hat[0]);
    }

    #[test]
    fn per_dimension_failure_is_isolated() {
        let blk = ar_local_level_block(&[0.2], 0.1, 1.0).unwrap();
        let template = SutseSpec {
            blocks: vec![blk; 2],
            sigma_eps: DMatrix::identity(2, 2),
        };
        let y = simulate(&compose(&template).unwrap(), 200, 1).unwrap();
        let good = ParameterMap::ar_local_level_single(1);
        let inits = vec![default_init(&dimension_spec(&template, 0), &good, &y.column(0)), vec![0.0, 1.0, 1.0, -1.0]];
        let out = fit_per_dimension(&template, &[good.clone(), good], &y, &inits, &FitOptions::default()).unwrap();
        assert!(out[0].is_ok());
        let err = out[1].as_ref().unwrap_err();
        assert!(matches!(err, SutseError::Input(_)), "{err}");
    }

    #[test]
    fn default_init_uses_sample_variance() {
        let template = local_level(1.0, 1.0);
        let y = ObservationSeries::from_matrix(DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]));
        let init = default_init(&template, &ll_map(), &y);
        assert!((init[0] - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(init[0], init[1]);
    }
}
