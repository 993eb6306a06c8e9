//! Monte Carlo comparison of the exact and fast same-step forecasts.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SutseError};
use crate::estimation::{default_init, fit_full, fit_per_dimension, merge_per_dimension, FitOptions, ParameterMap};
use crate::filter::{kalman_filter_with, FilterOptions, Storage};
use crate::forecast::fast::{run_univariate_filters_with, sample_error_cov, DEFAULT_N0};
use crate::glasso::{default_lambda_grid, select_lambda_bic};
use crate::linalg::{cholesky, submatrix};
use crate::model::ObservationSeries;
use crate::simulate::{rng_for, Simulator};
use crate::sutse::{compose, simulation_model_with_rho, SutseSpec, SIM_RHO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Exact,
    FastSample,
    FastGlasso,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Exact, Method::FastSample, Method::FastGlasso];

    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::FastSample => "fast-sample",
            Method::FastGlasso => "fast-glasso",
        }
    }

    fn is_fast(self) -> bool {
        self != Method::Exact
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SutseError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SutseError::input(format!("unknown method {s:?} (exact, fast-sample, fast-glasso)")))
    }
}

/// Steady-state tolerance used for every likelihood evaluation in the benchmark.
pub const BENCH_STEADY_STATE_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub d_list: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub replications: usize,
    pub n0: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Common off-diagonal of Σε.
    pub rho: f64,
    pub steady_state_tol: Option<f64>,
    pub glasso_grid: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d_list: vec![4, 8, 12],
            n_train: 1000,
            n_test: 1000,
            replications: 20,
            n0: DEFAULT_N0,
            seed: 1,
            methods: vec![Method::Exact, Method::FastSample],
            rho: SIM_RHO,
            steady_state_tol: Some(BENCH_STEADY_STATE_TOL),
            glasso_grid: 20,
        }
    }
}

impl BenchConfig {
    /// d = 4, 6, …, 16 with 100 replications.
    pub fn full_scale() -> Self {
        Self {
            d_list: (4..=16).step_by(2).collect(),
            replications: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(SutseError::input("replications must be at least 1"));
        }
        if self.methods.is_empty() || self.d_list.is_empty() {
            return Err(SutseError::input("need at least one method and one dimension"));
        }
        if self.d_list.iter().any(|&d| d < 2) {
            return Err(SutseError::input("benchmark dimensions must be at least 2"));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(SutseError::input("train and test windows must be non-empty"));
        }
        if self.n0 == 0 || self.n0 > self.n_train {
            return Err(SutseError::input(format!("burn-in {} outside 1..={}", self.n0, self.n_train)));
        }
        Ok(())
    }
}

/// One (method, d, replication) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub d: usize,
    pub rep: usize,
    pub same_step_mse: f64,
    pub one_step_mse: f64,
    pub fit_secs: f64,
    pub forecast_secs: f64,
    pub converged: bool,
    /// Full log-likelihood (exact) or the sum of per-dimension ones (fast).
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchAggregate {
    pub method: Method,
    pub d: usize,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub same_step_mse: f64,
    pub one_step_mse: f64,
    pub fit_secs: f64,
    pub forecast_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchFailure {
    pub method: Method,
    pub d: usize,
    pub rep: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<BenchAggregate>,
    pub failures: Vec<BenchFailure>,
    pub threads: usize,
    /// Seconds since the Unix epoch when the run finished.
    pub timestamp: u64,
}

impl BenchReport {
    pub fn aggregate(&self, method: Method, d: usize) -> Option<&BenchAggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.d == d)
    }
}

/// Stream id for the data of replication `rep` at dimension `d`.
pub fn replication_stream(d: usize, rep: usize) -> u64 {
    ((d as u64) << 32) | rep as u64
}

/// Squared same-step and one-step errors of component `target` given the
/// components in `cond`, with one covariance per time step.
struct ErrorAccumulator {
    target: usize,
    cond: Vec<usize>,
    same: f64,
    one: f64,
    count: usize,
    cached: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl ErrorAccumulator {
    fn new(d: usize) -> Self {
        Self {
            target: d - 1,
            cond: (0..d - 1).collect(),
            same: 0.0,
            one: 0.0,
            count: 0,
            cached: None,
        }
    }

    /// β = C(A,A)⁻¹ C(A,k), reused while C is unchanged.
    fn coefficients(&mut self, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
        if let Some((c, beta)) = &self.cached {
            if c == cov {
                return Ok(beta.clone());
            }
        }
        let block = submatrix(cov, &self.cond, &self.cond);
        let chol = cholesky(&block).ok_or_else(|| SutseError::Singular("conditioning block not PD".into()))?;
        let rhs = DVector::from_iterator(self.cond.len(), self.cond.iter().map(|&i| cov[(i, self.target)]));
        let beta = chol.solve(&rhs);
        self.cached = Some((cov.clone(), beta.clone()));
        Ok(beta)
    }

    fn push(&mut self, y: f64, base: f64, innov: &DVector<f64>, cov: &DMatrix<f64>) -> Result<()> {
        let beta = self.coefficients(cov)?;
        let corr: f64 = self.cond.iter().zip(beta.iter()).map(|(&i, b)| b * innov[i]).sum();
        self.same += (y - base - corr).powi(2);
        self.one += (y - base).powi(2);
        self.count += 1;
        Ok(())
    }

    fn mse(&self) -> (f64, f64) {
        let n = self.count as f64;
        (self.same / n, self.one / n)
    }
}

struct MethodOutcome {
    same: f64,
    one: f64,
    fit_secs: f64,
    forecast_secs: f64,
    converged: bool,
    loglik: f64,
}

fn exact_outcome(
    truth: &SutseSpec,
    y: &ObservationSeries,
    n_train: usize,
    opts: &FitOptions,
) -> Result<MethodOutcome> {
    let d = truth.dim();
    let train = y.rows(0..n_train);
    let pmap = ParameterMap::equicorrelation(d);
    let init = default_init(truth, &pmap, &train);
    let start = Instant::now();
    let fit = fit_full(truth, &pmap, &train, &init, opts)?;
    let fit_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let model = compose(&pmap.apply(truth, &fit.theta_hat)?)?;
    let fopts = FilterOptions {
        storage: Storage::Forecast,
        steady_state_tol: opts.steady_state_tol,
    };
    let out = kalman_filter_with(&model, y, &fopts)?;
    let mut acc = ErrorAccumulator::new(d);
    for t in n_train..y.len() {
        let base = &model.z * &out.a[t];
        let innov = y.row_values(t) - &base;
        acc.push(y.values()[(t, d - 1)], base[d - 1], &innov, &out.f[t])?;
    }
    let (same, one) = acc.mse();
    Ok(MethodOutcome {
        same,
        one,
        fit_secs,
        forecast_secs: start.elapsed().as_secs_f64(),
        converged: fit.converged,
        loglik: fit.loglik,
    })
}

/// Per-dimension fits shared by both fast variants, then one outcome per variant.
fn fast_outcomes(
    truth: &SutseSpec,
    y: &ObservationSeries,
    cfg: &BenchConfig,
    opts: &FitOptions,
    want: &[Method],
) -> Result<Vec<(Method, MethodOutcome)>> {
    let d = truth.dim();
    let n_train = cfg.n_train;
    let train = y.rows(0..n_train);
    let full_map = ParameterMap::equicorrelation(d);
    let pmaps: Vec<ParameterMap> = (0..d).map(|j| full_map.for_dimension(j)).collect();
    let inits: Vec<Vec<f64>> = (0..d)
        .map(|j| default_init(&crate::estimation::dimension_spec(truth, j), &pmaps[j], &train.column(j)))
        .collect();
    let fopts = FilterOptions {
        storage: Storage::Forecast,
        steady_state_tol: opts.steady_state_tol,
    };

    let start = Instant::now();
    let fits = fit_per_dimension(truth, &pmaps, &train, &inits, opts)?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let spec = merge_per_dimension(truth, &pmaps, &fits)?;
    let fast_train = run_univariate_filters_with(&spec, &train, &fopts)?;
    let vhat = sample_error_cov(&fast_train, cfg.n0)?;
    let base_secs = start.elapsed().as_secs_f64();
    let converged = fits.iter().all(|f| f.converged);
    let loglik: f64 = fits.iter().map(|f| f.loglik).sum();

    let mut out = Vec::new();
    for &method in want {
        let (cov, fit_secs) = match method {
            Method::FastSample => (vhat.v.clone(), base_secs),
            Method::FastGlasso => {
                let start = Instant::now();
                let grid = default_lambda_grid(&vhat.v, cfg.glasso_grid);
                let sel = select_lambda_bic(&vhat.v, vhat.m, &grid)?;
                (sel.best.v_glasso, base_secs + start.elapsed().as_secs_f64())
            }
            Method::Exact => unreachable!("exact handled separately"),
        };
        let start = Instant::now();
        let fast = run_univariate_filters_with(&spec, y, &fopts)?;
        let mut acc = ErrorAccumulator::new(d);
        for t in n_train..y.len() {
            let base = fast.one_step.row(t).transpose();
            let innov = fast.v_prime.row_values(t);
            acc.push(y.values()[(t, d - 1)], base[d - 1], &innov, &cov)?;
        }
        let (same, one) = acc.mse();
        out.push((
            method,
            MethodOutcome {
                same,
                one,
                fit_secs,
                forecast_secs: start.elapsed().as_secs_f64(),
                converged,
                loglik,
            },
        ));
    }
    Ok(out)
}

/// Run every (d, replication) and method in `cfg`.
///
/// Replications run one after another so that fit timings do not compete
/// for cores; each replication draws from its own RNG stream.
pub fn run_simulation_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    run_simulation_benchmark_with(cfg, None)
}

/// As [`run_simulation_benchmark`] with a fixed Σε override (e.g. diagonal).
pub fn run_simulation_benchmark_with(cfg: &BenchConfig, sigma_eps: Option<&DMatrix<f64>>) -> Result<BenchReport> {
    cfg.validate()?;
    let opts = FitOptions {
        steady_state_tol: cfg.steady_state_tol,
        ..FitOptions::default()
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let fast_methods: Vec<Method> = methods.iter().copied().filter(|m| m.is_fast()).collect();

    for &d in &cfg.d_list {
        let (mut truth, _) = simulation_model_with_rho(d, cfg.rho)?;
        if let Some(s) = sigma_eps {
            if s.shape() != (d, d) {
                return Err(SutseError::input("Σε override has the wrong dimension"));
            }
            truth.sigma_eps = s.clone();
        }
        let model = compose(&truth)?;
        let sim = Simulator::new(&model)?;
        for rep in 0..cfg.replications {
            let mut rng = rng_for(cfg.seed, replication_stream(d, rep));
            let y = sim.draw(cfg.n_train + cfg.n_test, &mut rng);
            let mut outcomes: Vec<(Method, Result<MethodOutcome>)> = Vec::new();
            if methods.contains(&Method::Exact) {
                outcomes.push((Method::Exact, exact_outcome(&truth, &y, cfg.n_train, &opts)));
            }
            if !fast_methods.is_empty() {
                match fast_outcomes(&truth, &y, cfg, &opts, &fast_methods) {
                    Ok(list) => outcomes.extend(list.into_iter().map(|(m, o)| (m, Ok(o)))),
                    Err(e) => {
                        for &m in &fast_methods {
                            outcomes.push((m, Err(SutseError::Numerical(e.to_string()))));
                        }
                    }
                }
            }
            for (method, outcome) in outcomes {
                match outcome {
                    Ok(o) => rows.push(BenchRow {
                        method,
                        d,
                        rep,
                        same_step_mse: o.same,
                        one_step_mse: o.one,
                        fit_secs: o.fit_secs,
                        forecast_secs: o.forecast_secs,
                        converged: o.converged,
                        loglik: o.loglik,
                    }),
                    Err(e) => {
                        log::warn!("{method} d={d} rep={rep} failed: {e}");
                        failures.push(BenchFailure {
                            method,
                            d,
                            rep,
                            message: e.to_string(),
                        });
                    }
                }
            }
            log::info!("d={d} replication {}/{} done", rep + 1, cfg.replications);
        }
    }
    rows.sort_by_key(|r| (r.d, r.method, r.rep));
    let aggregates = aggregate(&rows, &failures, &cfg.d_list, &methods);
    Ok(BenchReport {
        config: cfg.clone(),
        rows,
        aggregates,
        failures,
        threads: rayon::current_num_threads(),
        timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |t| t.as_secs()),
    })
}

pub fn aggregate(rows: &[BenchRow], failures: &[BenchFailure], d_list: &[usize], methods: &[Method]) -> Vec<BenchAggregate> {
    let mut out = Vec::new();
    for &d in d_list {
        for &method in methods {
            let sel: Vec<&BenchRow> = rows.iter().filter(|r| r.d == d && r.method == method).collect();
            let failed = failures.iter().filter(|f| f.d == d && f.method == method).count();
            let n = sel.len() as f64;
            let mean = |f: fn(&BenchRow) -> f64| if sel.is_empty() { f64::NAN } else { sel.iter().map(|r| f(r)).sum::<f64>() / n };
            out.push(BenchAggregate {
                method,
                d,
                reps_ok: sel.len(),
                reps_failed: failed,
                same_step_mse: mean(|r| r.same_step_mse),
                one_step_mse: mean(|r| r.one_step_mse),
                fit_secs: mean(|r| r.fit_secs),
                forecast_secs: mean(|r| r.forecast_secs),
            });
        }
    }
    out
}
