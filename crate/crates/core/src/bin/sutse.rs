use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sutse_core::estimation::{
    default_init, dimension_spec, fit_full, fit_per_dimension, merge_per_dimension, FitOptions, FitResult,
    ParameterMap,
};
use sutse_core::filter::{kalman_filter_with, FilterOptions, Storage};
use sutse_core::forecast::exact::{next_innovation_cov, one_step_forecast, same_step_forecast, SameStepRequest};
use sutse_core::forecast::fast::{fast_one_step, fast_same_step, run_univariate_filters_with, sample_error_cov, CovMethod, ErrorCovEstimate};
use sutse_core::glasso::{default_lambda_grid, graphical_lasso, select_lambda_bic};
use sutse_core::harness::pipeline::{synthetic_data, pipeline_template, SyntheticConfig};
use sutse_core::harness::{
    emit_bench_report, emit_pipeline_report, emit_verify_report, run_pipeline, run_simulation_benchmark, run_verify, BenchConfig, CovChoice,
    Method, PipelineOptions, VerifyConfig,
};
use sutse_core::io::{read_series_csv, write_series_csv, BlockConfig, FitSummary, ModelConfig, NamedSeries};
use sutse_core::simulate::simulate;
use sutse_core::sutse::{compose, simulation_model_with_rho, SutseSpec, SIM_RHO};
use sutse_core::{Result, SutseError};

#[derive(Parser)]
#[command(name = "sutse", version, about = "SUTSE state-space forecasting")]
struct Cli {
    /// Root random seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Directory that relative output paths are written under.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a series from a model config or the equicorrelation design.
    Simulate(SimulateArgs),
    /// Maximum-likelihood fit; writes the fitted model config.
    Fit(FitArgs),
    /// One-step and same-step forecasts from the full multivariate filter.
    Forecast(ForecastArgs),
    /// The same forecasts from per-series filters and an estimated error covariance.
    FastForecast(FastForecastArgs),
    /// Monte Carlo comparison of exact and fast same-step forecasts.
    Bench(BenchArgs),
    /// Assumption checks, exact error moments and envelope fits for a model.
    Verify(VerifyArgs),
    /// Per-series fits and rolling same-step forecasts on a CSV.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct DesignArgs {
    /// Model config (TOML).
    #[arg(long, conflicts_with = "dim")]
    spec: Option<PathBuf>,
    /// Use the AR(7) + local level equicorrelation design with this many series.
    #[arg(long)]
    dim: Option<usize>,
    /// Common off-diagonal of Σε for --dim.
    #[arg(long, default_value_t = SIM_RHO)]
    rho: f64,
}

impl DesignArgs {
    fn load(&self) -> Result<(SutseSpec, ModelConfig)> {
        match (&self.spec, self.dim) {
            (Some(path), _) => {
                let cfg = ModelConfig::load(path)?;
                Ok((cfg.to_spec()?, cfg))
            }
            (None, Some(d)) => {
                let (spec, _) = simulation_model_with_rho(d, self.rho)?;
                let mut cfg = ModelConfig::from_spec(&spec);
                cfg.params = ParameterMap::equicorrelation(d).params;
                Ok((spec, cfg))
            }
            (None, None) => Err(SutseError::input("give --spec <config> or --dim <d>")),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value = "simulated.csv")]
    out: PathBuf,
    /// Also write the model config used.
    #[arg(long)]
    spec_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMode {
    Full,
    Perdim,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    mode: FitMode,
    /// Fit log(y) instead of y.
    #[arg(long)]
    log_transform: bool,
    /// Freeze the filter once P changes by less than this (relative).
    #[arg(long)]
    steady_state_tol: Option<f64>,
    #[arg(long, default_value = "fitted.toml")]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastCommon {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Components already seen at n+1, e.g. "0=1.5,2=0.3" (0-based).
    #[arg(long, default_value = "")]
    observed: String,
    /// Forecast log(y) and report exp of the point forecast.
    #[arg(long)]
    log_transform: bool,
    #[arg(long, default_value = "forecast.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    common: ForecastCommon,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Sample,
    Glasso,
}

#[derive(Args)]
struct FastForecastArgs {
    #[command(flatten)]
    common: ForecastCommon,
    #[arg(long, value_enum, default_value = "sample")]
    cov: CovArg,
    /// Fixed glasso penalty; chosen by BIC when absent.
    #[arg(long)]
    lambda: Option<f64>,
    /// First (1-based) time index averaged into V̂.
    #[arg(long, default_value_t = 5)]
    n0: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',', default_values_t = vec![4usize, 8, 12])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec!["exact".to_string(), "fast-sample".to_string()])]
    methods: Vec<String>,
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    #[arg(long, default_value_t = 1000)]
    n_test: usize,
    #[arg(long, default_value_t = 5)]
    n0: usize,
    #[arg(long, default_value_t = SIM_RHO)]
    rho: f64,
    /// Simulate with a diagonal Σε (ρ = 0).
    #[arg(long)]
    diagonal: bool,
    /// d = 4..16 step 2 with 100 replications.
    #[arg(long)]
    full_scale: bool,
    /// Run the filter without steady-state freezing.
    #[arg(long)]
    no_steady_state: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value_t = 500)]
    tmax: usize,
    #[arg(long, default_value_t = 500)]
    envelope_n: usize,
    #[arg(long, default_value = "verify.csv")]
    report: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Input CSV; omitted with --synthetic.
    #[arg(long, required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Model config; defaults to diffuse AR(--order) + local level blocks.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Generate the 32-series synthetic data set instead of reading a CSV.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 32)]
    synthetic_dim: usize,
    #[arg(long, default_value_t = 2000)]
    synthetic_len: usize,
    #[arg(long, default_value_t = 0.05)]
    missing_frac: f64,
    #[arg(long, default_value_t = 5)]
    order: usize,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    log_transform: bool,
    #[arg(long, value_enum, default_value = "sample")]
    cov: CovArg,
    #[arg(long)]
    lambda: Option<f64>,
    /// Series k conditions on series 1..k−lag+1 in column order.
    #[arg(long, default_value_t = 1)]
    cond_lag: usize,
    #[arg(long, default_value_t = 5)]
    n0: usize,
}

struct Ctx {
    seed: u64,
    out_dir: PathBuf,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    fn prepare(&self, p: &Path) -> Result<PathBuf> {
        let path = self.path(p);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(path)
    }
}

fn parse_observed(text: &str) -> Result<Vec<(usize, f64)>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (i, v) = item
                .split_once('=')
                .ok_or_else(|| SutseError::input(format!("expected index=value, got {item:?}")))?;
            let i: usize = i.trim().parse().map_err(|_| SutseError::input(format!("bad index in {item:?}")))?;
            let v: f64 = v.trim().parse().map_err(|_| SutseError::input(format!("bad value in {item:?}")))?;
            Ok((i, v))
        })
        .collect()
}

fn load_data(path: &Path, log_transform: bool) -> Result<NamedSeries> {
    let mut data = read_series_csv(path)?;
    if log_transform {
        let s = &data.series;
        for t in 0..s.len() {
            for j in 0..s.dim() {
                if s.get(t, j).is_some_and(|x| x <= 0.0) {
                    return Err(SutseError::input(format!(
                        "log transform needs positive data (row {}, column {})",
                        t + 1,
                        data.names[j]
                    )));
                }
            }
        }
        data.series = s.map_values(f64::ln);
    }
    Ok(data)
}

/// The config's `[[params]]`, or all AR + local level parameters when every
/// block has that layout.
fn parameter_map_for(cfg: &ModelConfig) -> Result<ParameterMap> {
    if let Some(p) = cfg.parameter_map() {
        return Ok(p);
    }
    let orders = cfg
        .blocks
        .iter()
        .map(|b| match b {
            BlockConfig::ArLocalLevel { phi, .. } => Some(phi.len()),
            BlockConfig::General { .. } => None,
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| SutseError::Config("config has general blocks; add a [[params]] section".into()))?;
    Ok(ParameterMap::ar_local_level_orders(&orders))
}

fn cmd_simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let (spec, cfg) = a.design.load()?;
    let y = simulate(&compose(&spec)?, a.n, ctx.seed)?;
    let names = sutse_core::io::default_names(spec.dim());
    let out = ctx.prepare(&a.out)?;
    write_series_csv(&out, &names, &y)?;
    if let Some(p) = &a.spec_out {
        cfg.save(&ctx.prepare(p)?)?;
    }
    println!("wrote {} rows x {} series to {}", a.n, spec.dim(), out.display());
    Ok(())
}

fn cmd_fit(ctx: &Ctx, a: &FitArgs) -> Result<()> {
    let cfg = ModelConfig::load(&a.spec)?;
    let template = cfg.to_spec()?;
    let pmap = parameter_map_for(&cfg)?;
    let data = load_data(&a.data, a.log_transform)?;
    let opts = FitOptions {
        steady_state_tol: a.steady_state_tol,
        ..FitOptions::default()
    };
    let (fitted, summary): (SutseSpec, FitResult) = match a.mode {
        FitMode::Full => {
            let init = default_init(&template, &pmap, &data.series);
            let fit = fit_full(&template, &pmap, &data.series, &init, &opts)?;
            (pmap.apply(&template, &fit.theta_hat)?, fit)
        }
        FitMode::Perdim => {
            let d = template.dim();
            let pmaps: Vec<ParameterMap> = (0..d).map(|j| pmap.for_dimension(j)).collect();
            let inits: Vec<Vec<f64>> = (0..d)
                .map(|j| default_init(&dimension_spec(&template, j), &pmaps[j], &data.series.column(j)))
                .collect();
            let mut fits = Vec::with_capacity(d);
            for (j, r) in fit_per_dimension(&template, &pmaps, &data.series, &inits, &opts)?
                .into_iter()
                .enumerate()
            {
                match r {
                    Ok(f) => fits.push(f),
                    Err(e) => {
                        eprintln!("dimension {j}: {e}");
                        return Err(e);
                    }
                }
            }
            let spec = merge_per_dimension(&template, &pmaps, &fits)?;
            let combined = FitResult {
                theta_hat: fits.iter().flat_map(|f| f.theta_hat.clone()).collect(),
                loglik: fits.iter().map(|f| f.loglik).sum(),
                converged: fits.iter().all(|f| f.converged),
                iterations: fits.iter().map(|f| f.iterations).max().unwrap_or(0),
                gradient_norm: fits.iter().map(|f| f.gradient_norm).fold(0.0, f64::max),
                at_bound: fits.iter().any(|f| f.at_bound),
                evaluations: fits.iter().map(|f| f.evaluations).sum(),
            };
            (spec, combined)
        }
    };
    let mut out_cfg = ModelConfig::from_spec(&fitted);
    out_cfg.params = cfg.params.clone();
    out_cfg.fit = Some(FitSummary {
        mode: match a.mode {
            FitMode::Full => "full".into(),
            FitMode::Perdim => "perdim".into(),
        },
        loglik: summary.loglik,
        converged: summary.converged,
        iterations: summary.iterations,
        log_transform: a.log_transform,
    });
    let out = ctx.prepare(&a.out)?;
    out_cfg.save(&out)?;
    println!(
        "loglik {} converged {} iterations {} -> {}",
        summary.loglik,
        summary.converged,
        summary.iterations,
        out.display()
    );
    Ok(())
}

struct ForecastRows {
    names: Vec<String>,
    one_step: Vec<f64>,
    same_step: Vec<Option<f64>>,
}

fn write_forecasts(path: &Path, rows: &ForecastRows, log_transform: bool) -> Result<()> {
    let back = |x: f64| if log_transform { x.exp() } else { x };
    let mut text = String::from("component,name,one_step,same_step\n");
    for (j, name) in rows.names.iter().enumerate() {
        let same = rows.same_step[j].map(|x| back(x).to_string()).unwrap_or_default();
        text.push_str(&format!("{j},{name},{},{same}\n", back(rows.one_step[j])));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn observed_request(common: &ForecastCommon, d: usize) -> Result<Vec<(usize, f64)>> {
    let mut obs = parse_observed(&common.observed)?;
    if common.log_transform {
        for (_, v) in obs.iter_mut() {
            if *v <= 0.0 {
                return Err(SutseError::input("log transform needs positive observed values"));
            }
            *v = v.ln();
        }
    }
    if let Some(&(i, _)) = obs.iter().find(|(i, _)| *i >= d) {
        return Err(SutseError::input(format!("observed index {i} out of range for d={d}")));
    }
    Ok(obs)
}

fn cmd_forecast(ctx: &Ctx, a: &ForecastArgs) -> Result<()> {
    let c = &a.common;
    let spec = ModelConfig::load(&c.spec)?.to_spec()?;
    let data = load_data(&c.data, c.log_transform)?;
    let model = compose(&spec)?;
    let out = kalman_filter_with(&model, &data.series, &FilterOptions::default().with_storage(Storage::Forecast))?;
    let d = spec.dim();
    let obs = observed_request(c, d)?;
    let one = one_step_forecast(&model, &out);
    let same = (0..d)
        .map(|k| {
            if obs.iter().any(|(i, _)| *i == k) {
                return Ok(None);
            }
            same_step_forecast(&model, &out, &SameStepRequest::new(obs.clone(), k)).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    log::debug!("F_(n+1) = {}", next_innovation_cov(&model, &out));
    let path = ctx.prepare(&c.out)?;
    write_forecasts(
        &path,
        &ForecastRows {
            names: data.names,
            one_step: one.iter().copied().collect(),
            same_step: same,
        },
        c.log_transform,
    )?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_fast_forecast(ctx: &Ctx, a: &FastForecastArgs) -> Result<()> {
    let c = &a.common;
    let spec = ModelConfig::load(&c.spec)?.to_spec()?;
    let data = load_data(&c.data, c.log_transform)?;
    let fast = run_univariate_filters_with(&spec, &data.series, &FilterOptions::default())?;
    let sample = sample_error_cov(&fast, a.n0)?;
    let cov = match (a.cov, a.lambda) {
        (CovArg::Sample, _) => sample,
        (CovArg::Glasso, Some(lambda)) => ErrorCovEstimate {
            v: graphical_lasso(&sample.v, lambda)?.v_glasso,
            method: CovMethod::Glasso { lambda },
            ..sample
        },
        (CovArg::Glasso, None) => {
            let sel = select_lambda_bic(&sample.v, sample.m, &default_lambda_grid(&sample.v, 20))?;
            log::info!("BIC chose lambda = {}", sel.lambda_star);
            ErrorCovEstimate {
                v: sel.best.v_glasso,
                method: CovMethod::Glasso { lambda: sel.lambda_star },
                ..sample
            }
        }
    };
    let d = spec.dim();
    let obs = observed_request(c, d)?;
    let one = fast_one_step(&fast, &spec);
    let same = (0..d)
        .map(|k| {
            if obs.iter().any(|(i, _)| *i == k) {
                return Ok(None);
            }
            fast_same_step(&fast, &cov, &SameStepRequest::new(obs.clone(), k)).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    let path = ctx.prepare(&c.out)?;
    write_forecasts(
        &path,
        &ForecastRows {
            names: data.names,
            one_step: one.iter().copied().collect(),
            same_step: same,
        },
        c.log_transform,
    )?;
    println!("wrote {} (V̂ from {} rows)", path.display(), cov.m);
    Ok(())
}

fn cmd_bench(ctx: &Ctx, a: &BenchArgs) -> Result<()> {
    let base = if a.full_scale {
        BenchConfig::full_scale()
    } else {
        BenchConfig {
            d_list: a.dims.clone(),
            replications: a.reps,
            ..BenchConfig::default()
        }
    };
    let methods = a.methods.iter().map(|m| m.parse::<Method>()).collect::<Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        n_train: a.n_train,
        n_test: a.n_test,
        n0: a.n0,
        seed: ctx.seed,
        methods,
        rho: if a.diagonal { 0.0 } else { a.rho },
        steady_state_tol: if a.no_steady_state { None } else { base.steady_state_tol },
        ..base
    };
    let report = run_simulation_benchmark(&cfg)?;
    let files = emit_bench_report(&report, &ctx.out_dir)?;
    for agg in &report.aggregates {
        println!(
            "{:<12} d={:<3} same-step MSE {:.6} one-step MSE {:.6} fit {:.4}s ({} ok, {} failed)",
            agg.method.name(),
            agg.d,
            agg.same_step_mse,
            agg.one_step_mse,
            agg.fit_secs,
            agg.reps_ok,
            agg.reps_failed
        );
    }
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn cmd_verify(ctx: &Ctx, a: &VerifyArgs) -> Result<()> {
    let (spec, _) = a.design.load()?;
    let cfg = VerifyConfig {
        t_max: a.tmax,
        envelope_n: a.envelope_n,
        ..VerifyConfig::default()
    };
    let report = run_verify(&spec, &cfg)?;
    let path = ctx.prepare(&a.report)?;
    emit_verify_report(&report, &path)?;
    let r = &report.assumptions;
    println!(
        "observability {}/{} controllability {}/{} (primed {}/{}) rho(TL') {:.6} window bound {:.4}",
        r.observability_rank,
        r.state_dim,
        r.controllability_rank,
        r.state_dim,
        r.controllability_rank_prime,
        r.state_dim,
        r.spectral_radius_tl_prime,
        r.product_norm_bound
    );
    println!(
        "|E v'_T| {:.3e}  |V_T - V_(T-1)|_F {:.3e}",
        report.moments.ev.last().map_or(f64::NAN, |e| e.norm()),
        report.moments.tail_step()
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_pipeline(ctx: &Ctx, a: &PipelineArgs) -> Result<()> {
    let data = if a.synthetic {
        synthetic_data(&SyntheticConfig {
            d: a.synthetic_dim,
            n: a.synthetic_len,
            order: a.order,
            missing_frac: a.missing_frac,
            seed: ctx.seed,
        })?
        .0
    } else {
        read_series_csv(a.data.as_deref().expect("clap enforces --data"))?
    };
    let d = data.series.dim();
    let (template, pmap) = match &a.spec {
        Some(p) => {
            let cfg = ModelConfig::load(p)?;
            (cfg.to_spec()?, parameter_map_for(&cfg)?)
        }
        None => (pipeline_template(d, a.order)?, ParameterMap::ar_local_level_full(d, a.order)),
    };
    let opts = PipelineOptions {
        n_train: a.n_train,
        log_transform: a.log_transform,
        cov: match (a.cov, a.lambda) {
            (CovArg::Sample, _) => CovChoice::Sample,
            (CovArg::Glasso, Some(l)) => CovChoice::Glasso(l),
            (CovArg::Glasso, None) => CovChoice::GlassoBic,
        },
        cond_lag: a.cond_lag,
        n0: a.n0,
        ..PipelineOptions::default()
    };
    let report = run_pipeline(&data, &template, &pmap, &opts)?;
    let files = emit_pipeline_report(&report, &ctx.out_dir)?;
    println!(
        "{} series, {} parameters, fit {:.3}s, forecast {:.3}s, mean same-step MSE {:.6}, mean one-step MSE {:.6}",
        d,
        report.parameters,
        report.fit_secs,
        report.forecast_secs,
        report.mean_same_step_mse(),
        report.mean_one_step_mse()
    );
    for f in files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| SutseError::Config(e.to_string()))?;
    }
    let ctx = Ctx {
        seed: cli.seed,
        out_dir: cli.out_dir,
    };
    std::fs::create_dir_all(&ctx.out_dir)?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::Forecast(a) => cmd_forecast(&ctx, a),
        Command::FastForecast(a) => cmd_fast_forecast(&ctx, a),
        Command::Bench(a) => cmd_bench(&ctx, a),
        Command::Verify(a) => cmd_verify(&ctx, a),
        Command::Pipeline(a) => cmd_pipeline(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
