//! End-to-end fast-method pipeline on a multi-series CSV.
//!
//! Per-dimension fits on the training window, V̂ from the training
//! forecast errors, then rolling same-step forecasts over the test window
//! where series k conditions on the series before it in column order.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Result, SutseError};
use crate::estimation::{
    default_init, dimension_spec, fit_per_dimension, merge_per_dimension, FitOptions, ParameterMap,
};
use crate::filter::{FilterOptions, Storage};
use crate::forecast::fast::{run_univariate_filters_with, sample_error_cov_range, DEFAULT_N0};
use crate::glasso::{default_lambda_grid, graphical_lasso, select_lambda_bic};
use crate::io::{default_names, NamedSeries};
use crate::linalg::{cholesky, submatrix};
use crate::model::{ObservationSeries, DIFFUSE_KAPPA};
use crate::simulate::{rng_for, Simulator};
use crate::sutse::{ar_local_level_block, compose, diffuse_ar_spec, SutseSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovChoice {
    Sample,
    /// Graphical lasso with λ chosen by BIC on the default grid.
    GlassoBic,
    Glasso(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    /// Training rows; `None` uses the first half.
    pub n_train: Option<usize>,
    pub log_transform: bool,
    pub cov: CovChoice,
    /// Series k conditions on series 0..=k−cond_lag.
    pub cond_lag: usize,
    pub n0: usize,
    pub fit: FitOptions,
    pub glasso_grid: usize,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            n_train: None,
            log_transform: false,
            cov: CovChoice::Sample,
            cond_lag: 1,
            n0: DEFAULT_N0,
            fit: FitOptions {
                steady_state_tol: Some(1e-13),
                ..FitOptions::default()
            },
            glasso_grid: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionRow {
    pub index: usize,
    pub name: String,
    /// Test rows where the target was observed.
    pub n_scored: usize,
    pub same_step_mse: f64,
    pub one_step_mse: f64,
    /// Largest conditioning set used.
    pub max_conditioning: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub positions: Vec<PositionRow>,
    pub n_train: usize,
    pub n_test: usize,
    pub missing_cells: usize,
    pub train_missing_cells: usize,
    /// Complete training rows averaged into V̂.
    pub vhat_rows: usize,
    pub n0: usize,
    pub lambda: Option<f64>,
    pub converged_dims: usize,
    pub parameters: usize,
    pub fit_secs: f64,
    pub forecast_secs: f64,
    pub total_secs: f64,
    pub fitted: SutseSpec,
}

impl PipelineReport {
    pub fn mean_same_step_mse(&self) -> f64 {
        mean_finite(self.positions.iter().map(|p| p.same_step_mse))
    }

    pub fn mean_one_step_mse(&self) -> f64 {
        mean_finite(self.positions.iter().map(|p| p.one_step_mse))
    }
}

fn mean_finite(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.filter(|x| x.is_finite()).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Template with diffuse AR(order) + local level blocks, φ = 0 and unit variances.
pub fn pipeline_template(d: usize, order: usize) -> Result<SutseSpec> {
    diffuse_ar_spec(
        &vec![vec![0.0; order]; d],
        &vec![1.0; d],
        &vec![1.0; d],
        DMatrix::identity(d, d),
    )
}

pub fn run_pipeline(
    data: &NamedSeries,
    template: &SutseSpec,
    pmap: &ParameterMap,
    opts: &PipelineOptions,
) -> Result<PipelineReport> {
    let total = Instant::now();
    let original = &data.series;
    let d = original.dim();
    let n = original.len();
    if template.dim() != d {
        return Err(SutseError::input(format!("spec has {} blocks, data has {d} columns", template.dim())));
    }
    let n_train = opts.n_train.unwrap_or(n / 2);
    if n_train == 0 || n_train >= n {
        return Err(SutseError::input(format!("training window {n_train} must lie in 1..{n}")));
    }
    if opts.cond_lag == 0 {
        return Err(SutseError::input("cond-lag must be at least 1"));
    }
    let series = if opts.log_transform {
        for t in 0..n {
            for j in 0..d {
                if original.get(t, j).is_some_and(|x| x <= 0.0) {
                    return Err(SutseError::input(format!(
                        "log transform needs positive data; row {} column {} is not",
                        t + 1,
                        data.names[j]
                    )));
                }
            }
        }
        original.map_values(f64::ln)
    } else {
        original.clone()
    };
    let train = series.rows(0..n_train);
    for j in 0..d {
        if (0..n_train).all(|t| train.is_missing(t, j)) {
            return Err(SutseError::input(format!(
                "column {} has no observations in the training window",
                data.names[j]
            )));
        }
    }

    let pmaps: Vec<ParameterMap> = (0..d).map(|j| pmap.for_dimension(j)).collect();
    let inits: Vec<Vec<f64>> = (0..d)
        .map(|j| default_init(&dimension_spec(template, j), &pmaps[j], &train.column(j)))
        .collect();
    let fopts = FilterOptions {
        storage: Storage::Forecast,
        steady_state_tol: opts.fit.steady_state_tol,
    };

    let fit_start = Instant::now();
    let fits = fit_per_dimension(template, &pmaps, &train, &inits, &opts.fit)?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let fitted = merge_per_dimension(template, &pmaps, &fits)?;
    let fit_secs = fit_start.elapsed().as_secs_f64();

    let fc_start = Instant::now();
    let fast = run_univariate_filters_with(&fitted, &series, &fopts)?;
    let est = sample_error_cov_range(&fast.v_prime, opts.n0, n_train)?;
    let (cov, lambda) = match opts.cov {
        CovChoice::Sample => (est.v.clone(), None),
        CovChoice::Glasso(lambda) => (graphical_lasso(&est.v, lambda)?.v_glasso, Some(lambda)),
        CovChoice::GlassoBic => {
            let sel = select_lambda_bic(&est.v, est.m, &default_lambda_grid(&est.v, opts.glasso_grid))?;
            (sel.best.v_glasso, Some(sel.lambda_star))
        }
    };

    let back = |x: f64| if opts.log_transform { x.exp() } else { x };
    let mut coef_cache: HashMap<(usize, Vec<usize>), DVector<f64>> = HashMap::new();
    let mut positions = Vec::with_capacity(d);
    for k in 0..d {
        let mut same = 0.0;
        let mut one = 0.0;
        let mut scored = 0usize;
        let mut max_cond = 0usize;
        for t in n_train..n {
            let Some(y) = original.get(t, k) else { continue };
            let cond: Vec<usize> = if k + 1 > opts.cond_lag {
                (0..=k - opts.cond_lag).filter(|&i| !series.is_missing(t, i)).collect()
            } else {
                Vec::new()
            };
            let base = fast.one_step[(t, k)];
            let corr = if cond.is_empty() {
                0.0
            } else {
                let key = (k, cond.clone());
                let beta = match coef_cache.get(&key) {
                    Some(b) => b.clone(),
                    None => {
                        let block = submatrix(&cov, &cond, &cond);
                        let chol = cholesky(&block).ok_or_else(|| {
                            SutseError::Singular(format!(
                                "covariance block for {cond:?} is not positive definite; try glasso"
                            ))
                        })?;
                        let rhs = DVector::from_iterator(cond.len(), cond.iter().map(|&i| cov[(i, k)]));
                        let b = chol.solve(&rhs);
                        coef_cache.insert(key, b.clone());
                        b
                    }
                };
                cond.iter()
                    .zip(beta.iter())
                    .map(|(&i, b)| b * fast.v_prime.values()[(t, i)])
                    .sum()
            };
            same += (y - back(base + corr)).powi(2);
            one += (y - back(base)).powi(2);
            scored += 1;
            max_cond = max_cond.max(cond.len());
        }
        let denom = scored as f64;
        positions.push(PositionRow {
            index: k,
            name: data.names[k].clone(),
            n_scored: scored,
            same_step_mse: same / denom,
            one_step_mse: one / denom,
            max_conditioning: max_cond,
        });
    }
    let forecast_secs = fc_start.elapsed().as_secs_f64();

    Ok(PipelineReport {
        positions,
        n_train,
        n_test: n - n_train,
        missing_cells: original.missing_count(),
        train_missing_cells: train.missing_count(),
        vhat_rows: est.m,
        n0: opts.n0,
        lambda,
        converged_dims: fits.iter().filter(|f| f.converged).count(),
        parameters: pmaps.iter().map(ParameterMap::len).sum(),
        fit_secs,
        forecast_secs,
        total_secs: total.elapsed().as_secs_f64(),
        fitted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub d: usize,
    pub n: usize,
    pub order: usize,
    pub missing_frac: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            d: 32,
            n: 2000,
            order: 5,
            missing_frac: 0.05,
            seed: 1,
        }
    }
}

/// Positive series exp(x) where x follows a SUTSE AR(order) + local level
/// model with neighbour-correlated observation noise and cells missing at random.
pub fn synthetic_data(cfg: &SyntheticConfig) -> Result<(NamedSeries, SutseSpec)> {
    if cfg.d == 0 || cfg.n == 0 || cfg.order == 0 {
        return Err(SutseError::input("synthetic data needs d, n and order positive"));
    }
    if !(0.0..1.0).contains(&cfg.missing_frac) {
        return Err(SutseError::input("missing fraction must lie in [0, 1)"));
    }
    let mut rng = rng_for(cfg.seed, 0);
    let jitter = Uniform::new(-0.05, 0.05).map_err(|e| SutseError::input(e.to_string()))?;
    let base_phi = [0.5, -0.2, 0.1, 0.05, -0.05];
    let blocks = (0..cfg.d)
        .map(|_| {
            let phi: Vec<f64> = (0..cfg.order)
                .map(|i| base_phi.get(i).copied().unwrap_or(0.0) + jitter.sample(&mut rng))
                .collect();
            let mut b = ar_local_level_block(&phi, 1e-4, 0.01)?;
            b.a1[0] = 3.0 + 10.0 * jitter.sample(&mut rng);
            Ok(b)
        })
        .collect::<Result<Vec<_>>>()?;
    let sigma_eps = DMatrix::from_fn(cfg.d, cfg.d, |i, j| 0.01 * 0.6_f64.powi((i as i32 - j as i32).abs()));
    let truth = SutseSpec { blocks, sigma_eps };
    let model = compose(&truth)?;
    let mut y = Simulator::new(&model)?.draw(cfg.n, &mut rng);
    if cfg.missing_frac > 0.0 {
        for t in 0..cfg.n {
            for j in 0..cfg.d {
                if rng.random::<f64>() < cfg.missing_frac {
                    y.set_missing(t, j);
                }
            }
        }
    }
    let series = y.map_values(f64::exp);
    Ok((
        NamedSeries {
            names: default_names(cfg.d),
            series,
        },
        truth,
    ))
}

/// Everything needed to run the pipeline on [`synthetic_data`].
pub fn synthetic_setup(cfg: &SyntheticConfig) -> Result<(NamedSeries, SutseSpec, ParameterMap)> {
    let (data, _) = synthetic_data(cfg)?;
    let template = pipeline_template(cfg.d, cfg.order)?;
    debug_assert!(template.blocks.iter().all(|b| b.p1[(0, 0)] == DIFFUSE_KAPPA));
    Ok((data, template, ParameterMap::ar_local_level_full(cfg.d, cfg.order)))
}

/// Number of fully observed rows in `series` between 1-based n0 and n_end.
pub fn complete_rows(series: &ObservationSeries, n0: usize, n_end: usize) -> usize {
    ((n0 - 1)..n_end).filter(|&t| series.row_complete(t)).count()
}
