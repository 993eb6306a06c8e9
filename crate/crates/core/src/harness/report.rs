//! CSV emission. Column order is fixed and floats use the shortest
//! round-trip representation, so equal reports give identical files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::harness::bench::BenchReport;
use crate::harness::pipeline::PipelineReport;
use crate::harness::verify::VerifyReport;
use crate::io::csv_err;

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn s(x: impl ToString) -> String {
    x.to_string()
}

pub const BENCH_ROWS: &str = "bench_rows.csv";
pub const BENCH_AGGREGATES: &str = "bench_aggregates.csv";
pub const BENCH_PLOT: &str = "bench_plot.csv";
pub const BENCH_FAILURES: &str = "bench_failures.csv";
pub const BENCH_META: &str = "bench_meta.csv";

/// Per-replication rows, aggregates, plot data, failures and metadata.
pub fn emit_bench_report(report: &BenchReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                s(r.method),
                s(r.d),
                s(r.rep),
                s(r.same_step_mse),
                s(r.one_step_mse),
                s(r.fit_secs),
                s(r.forecast_secs),
                s(r.converged),
                s(r.loglik),
            ]
        })
        .collect();
    let aggs: Vec<Vec<String>> = report
        .aggregates
        .iter()
        .map(|a| {
            vec![
                s(a.method),
                s(a.d),
                s(a.reps_ok),
                s(a.reps_failed),
                s(a.same_step_mse),
                s(a.one_step_mse),
                s(a.fit_secs),
                s(a.forecast_secs),
            ]
        })
        .collect();
    let plot: Vec<Vec<String>> = report
        .aggregates
        .iter()
        .flat_map(|a| {
            [
                ("same_step_mse", a.same_step_mse),
                ("one_step_mse", a.one_step_mse),
                ("fit_secs", a.fit_secs),
            ]
            .map(|(series, y)| vec![s(a.d), s(a.method), series.to_string(), s(y)])
        })
        .collect();
    let failures: Vec<Vec<String>> = report
        .failures
        .iter()
        .map(|f| vec![s(f.method), s(f.d), s(f.rep), f.message.clone()])
        .collect();
    let cfg = &report.config;
    let join = |xs: Vec<String>| xs.join(" ");
    let meta = vec![
        vec!["threads".into(), s(report.threads)],
        vec!["timestamp".into(), s(report.timestamp)],
        vec!["seed".into(), s(cfg.seed)],
        vec!["d_list".into(), join(cfg.d_list.iter().map(s).collect())],
        vec!["methods".into(), join(cfg.methods.iter().map(s).collect())],
        vec!["n_train".into(), s(cfg.n_train)],
        vec!["n_test".into(), s(cfg.n_test)],
        vec!["replications".into(), s(cfg.replications)],
        vec!["n0".into(), s(cfg.n0)],
        vec!["rho".into(), s(cfg.rho)],
        vec![
            "steady_state_tol".into(),
            cfg.steady_state_tol.map(s).unwrap_or_else(|| "none".into()),
        ],
        vec!["failures".into(), s(report.failures.len())],
    ];

    let out = [BENCH_ROWS, BENCH_AGGREGATES, BENCH_PLOT, BENCH_FAILURES, BENCH_META].map(|f| dir.join(f));
    write_csv(
        &out[0],
        &["method", "d", "rep", "same_step_mse", "one_step_mse", "fit_secs", "forecast_secs", "converged", "loglik"],
        &rows,
    )?;
    write_csv(
        &out[1],
        &["method", "d", "reps_ok", "reps_failed", "same_step_mse", "one_step_mse", "fit_secs", "forecast_secs"],
        &aggs,
    )?;
    write_csv(&out[2], &["x_d", "method", "series", "y"], &plot)?;
    write_csv(&out[3], &["method", "d", "rep", "message"], &failures)?;
    write_csv(&out[4], &["key", "value"], &meta)?;
    Ok(out.to_vec())
}

pub const PIPELINE_POSITIONS: &str = "pipeline_positions.csv";
pub const PIPELINE_PLOT: &str = "pipeline_plot.csv";
pub const PIPELINE_META: &str = "pipeline_meta.csv";

pub fn emit_pipeline_report(report: &PipelineReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let positions: Vec<Vec<String>> = report
        .positions
        .iter()
        .map(|p| {
            vec![
                s(p.index),
                p.name.clone(),
                s(p.n_scored),
                s(p.same_step_mse),
                s(p.one_step_mse),
                s(p.max_conditioning),
            ]
        })
        .collect();
    let plot: Vec<Vec<String>> = report
        .positions
        .iter()
        .flat_map(|p| {
            [("same_step_mse", p.same_step_mse), ("one_step_mse", p.one_step_mse)]
                .map(|(series, y)| vec![s(p.index), series.to_string(), s(y)])
        })
        .collect();
    let meta = vec![
        vec!["n_train".into(), s(report.n_train)],
        vec!["n_test".into(), s(report.n_test)],
        vec!["missing_cells".into(), s(report.missing_cells)],
        vec!["train_missing_cells".into(), s(report.train_missing_cells)],
        vec!["vhat_rows".into(), s(report.vhat_rows)],
        vec!["n0".into(), s(report.n0)],
        vec!["lambda".into(), report.lambda.map(s).unwrap_or_else(|| "none".into())],
        vec!["parameters".into(), s(report.parameters)],
        vec!["converged_dims".into(), s(report.converged_dims)],
        vec!["mean_same_step_mse".into(), s(report.mean_same_step_mse())],
        vec!["mean_one_step_mse".into(), s(report.mean_one_step_mse())],
        vec!["fit_secs".into(), s(report.fit_secs)],
        vec!["forecast_secs".into(), s(report.forecast_secs)],
        vec!["total_secs".into(), s(report.total_secs)],
    ];
    let out = [PIPELINE_POSITIONS, PIPELINE_PLOT, PIPELINE_META].map(|f| dir.join(f));
    write_csv(
        &out[0],
        &["index", "name", "n_scored", "same_step_mse", "one_step_mse", "max_conditioning"],
        &positions,
    )?;
    write_csv(&out[1], &["x_position", "series", "y"], &plot)?;
    write_csv(&out[2], &["key", "value"], &meta)?;
    Ok(out.to_vec())
}

/// Long format: `section,name,index,value`.
pub fn emit_verify_report(report: &VerifyReport, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut push = |section: &str, name: &str, index: usize, value: String| {
        rows.push(vec![section.into(), name.into(), s(index), value]);
    };
    let a = &report.assumptions;
    push("assumption", "state_dim", 0, s(a.state_dim));
    push("assumption", "sigma_eps_pd", 0, s(a.sigma_eps_pd));
    push("assumption", "sigma_eps_prime_pd", 0, s(a.sigma_eps_prime_pd));
    push("assumption", "observability_rank", 0, s(a.observability_rank));
    push("assumption", "controllability_rank", 0, s(a.controllability_rank));
    push("assumption", "controllability_rank_prime", 0, s(a.controllability_rank_prime));
    push("assumption", "spectral_radius_tl_prime", 0, s(a.spectral_radius_tl_prime));
    push("assumption", "product_norm_bound", a.product_norm_horizon, s(a.product_norm_bound));
    push("limit", "iterations", 0, s(report.limiting_iterations));
    push("limit", "residual", 0, s(report.limiting_residual));
    let m = &report.moments;
    for t in 0..m.len() {
        push("moments", "ev_norm", t + 1, s(m.ev[t].norm()));
        push("moments", "vv_frobenius", t + 1, s(m.vv[t].norm()));
        if t > 0 {
            push("moments", "vv_step", t + 1, s((&m.vv[t] - &m.vv[t - 1]).norm()));
        }
    }
    if let Some(tail) = m.tail_cov() {
        for i in 0..tail.nrows() {
            for j in 0..tail.ncols() {
                push("tail_cov", &format!("v{i}_{j}"), m.len(), s(tail[(i, j)]));
            }
        }
    }
    if let Some(env) = &report.envelope {
        push("envelope", "m", 0, s(env.m));
        push("envelope", "r", 0, s(env.r));
        push("envelope", "spectral_radius", 0, s(env.spectral_radius));
        push("envelope", "holds", 0, s(env.holds));
        for (i, x) in env.norms.iter().enumerate() {
            push("envelope", "power_norm", i + 1, s(x));
        }
    }
    write_csv(path, &["section", "name", "index", "value"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::bench::{aggregate, BenchConfig, BenchRow, Method};

    fn synthetic_report(rows: Vec<BenchRow>, cfg: BenchConfig) -> BenchReport {
        let aggregates = aggregate(&rows, &[], &cfg.d_list, &cfg.methods);
        BenchReport {
            config: cfg,
            rows,
            aggregates,
            failures: vec![],
            threads: 1,
            timestamp: 0,
        }
    }

    fn row(method: Method, d: usize, rep: usize) -> BenchRow {
        BenchRow {
            method,
            d,
            rep,
            same_step_mse: 1.0 + rep as f64 / 3.0,
            one_step_mse: 2.0,
            fit_secs: 0.1 * d as f64,
            forecast_secs: 0.01,
            converged: true,
            loglik: -10.0,
        }
    }

    fn lines(path: &Path) -> usize {
        fs::read_to_string(path).unwrap().lines().count()
    }

    #[test]
    fn empty_report_gives_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BenchConfig {
            d_list: vec![],
            methods: vec![],
            ..BenchConfig::default()
        };
        let files = emit_bench_report(&synthetic_report(vec![], cfg), dir.path()).unwrap();
        for f in &files[..4] {
            assert_eq!(lines(f), 1, "{f:?}");
        }
    }

    #[test]
    fn row_counts_and_byte_identical_reemission() {
        let cfg = BenchConfig {
            d_list: vec![4, 8],
            methods: vec![Method::Exact, Method::FastSample],
            replications: 3,
            ..BenchConfig::default()
        };
        let mut rows = Vec::new();
        for d in [4, 8] {
            for m in [Method::Exact, Method::FastSample] {
                for rep in 0..3 {
                    rows.push(row(m, d, rep));
                }
            }
        }
        let report = synthetic_report(rows, cfg);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = emit_bench_report(&report, a.path()).unwrap();
        let fb = emit_bench_report(&report, b.path()).unwrap();
        assert_eq!(lines(&fa[0]), 1 + 12);
        assert_eq!(lines(&fa[1]), 1 + 4);
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
        }
    }
}
