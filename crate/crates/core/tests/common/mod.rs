#![allow(dead_code)]

//! Randomized property checks shared by the `properties` and `acceptance` targets.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use sutse_core::estimation::{fit_full, fit_per_dimension, FitOptions, ParamSpec, ParamTarget, ParameterMap, Transform};
use sutse_core::filter::{filter_from, kalman_filter, kalman_step, FilterOptions, Storage};
use sutse_core::forecast::exact::{same_step_forecast, SameStepRequest};
use sutse_core::forecast::fast::{run_univariate_filters, sample_error_cov};
use sutse_core::simulate::simulate;
use sutse_core::sutse::{ar_local_level_block, SeriesBlock};
use sutse_core::{compose, ObservationSeries, StateSpaceModel, SutseSpec};

pub const CASES: u32 = 128;

/// Small random SUTSE spec: d series, each AR(order)+local level or local level.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: SutseSpec,
    pub series: ObservationSeries,
}

fn block_strategy() -> impl Strategy<Value = SeriesBlock> {
    prop_oneof![
        (0.01f64..1.0).prop_map(|q| SeriesBlock {
            z: DVector::from_element(1, 1.0),
            t: DMatrix::identity(1, 1),
            q: DMatrix::from_element(1, 1, q),
            a1: DVector::zeros(1),
            p1: DMatrix::from_element(1, 1, 10.0),
        }),
        (prop::collection::vec(-0.4f64..0.4, 1..3), 0.001f64..0.5, 0.05f64..1.0)
            .prop_map(|(phi, q1, q2)| ar_local_level_block(&phi, q1, q2).unwrap()),
    ]
}

fn sigma_strategy(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.0f64..1.0, d * d), 0.2f64..1.5).prop_map(move |(raw, ridge)| {
        let b = DMatrix::from_vec(d, d, raw);
        &b * b.transpose() / d as f64 + DMatrix::identity(d, d) * ridge
    })
}

/// Random spec plus a simulated series of length `n` with cells knocked out at `miss_rate`.
pub fn instance_strategy(d_max: usize, n: usize, miss_rate: f64) -> impl Strategy<Value = Instance> {
    (1..=d_max)
        .prop_flat_map(move |d| {
            (
                prop::collection::vec(block_strategy(), d),
                sigma_strategy(d),
                any::<u64>(),
                prop::collection::vec(0.0f64..1.0, n * d),
            )
        })
        .prop_map(move |(blocks, sigma_eps, seed, u)| {
            let spec = SutseSpec { blocks, sigma_eps };
            let model = compose(&spec).unwrap();
            let mut series = simulate(&model, n, seed).unwrap();
            let d = spec.dim();
            for t in 0..n {
                for j in 0..d {
                    if u[t * d + j] < miss_rate {
                        series.set_missing(t, j);
                    }
                }
            }
            Instance { spec, series }
        })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn mat_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| close(*x, *y, tol))
}

fn vec_close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| close(*x, *y, tol))
}

fn run(cases: u32, name: &str, f: impl Fn(&mut TestRunner) -> Result<(), String>) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    f(&mut runner).map_err(|e| format!("{name}: {e}"))
}

fn check<T: std::fmt::Debug>(
    runner: &mut TestRunner,
    strategy: impl Strategy<Value = T>,
    test: impl Fn(T) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

/// Batch filter, step-by-step filter and a split run from a carried state agree.
pub fn stream_batch(cases: u32) -> Result<(), String> {
    run(cases, "stream/batch equivalence", |r| {
        check(r, (instance_strategy(3, 40, 0.15), 1usize..39), |(inst, cut)| {
            let model = compose(&inst.spec).unwrap();
            let batch = kalman_filter(&model, &inst.series).unwrap();
            let mut state = model.initial_state();
            let mut ll = 0.0;
            for t in 0..inst.series.len() {
                let s = kalman_step(&model, &state, &inst.series.row_values(t), inst.series.row_mask(t)).unwrap();
                ll += s.loglik;
                prop_assert!(vec_close(&s.next.a, &batch.a[t + 1], 1e-9));
                prop_assert!(mat_close(&s.next.p, &batch.p[t + 1], 1e-9));
                state = s.next;
            }
            prop_assert!(close(ll, batch.loglik, 1e-9));

            let opts = FilterOptions::default().with_storage(Storage::LoglikOnly);
            let head = filter_from(&model, &model.initial_state(), &inst.series.rows(0..cut), &opts).unwrap();
            let tail = filter_from(&model, &head.final_state, &inst.series.rows(cut..inst.series.len()), &opts).unwrap();
            prop_assert!(close(head.loglik + tail.loglik, batch.loglik, 1e-9));
            prop_assert!(vec_close(&tail.final_state.a, &batch.final_state.a, 1e-9));
            Ok(())
        })
    })
}

fn reduced_model(model: &StateSpaceModel, observed: &[usize]) -> StateSpaceModel {
    let p = model.state_dim();
    let z = DMatrix::from_fn(observed.len(), p, |i, k| model.z[(observed[i], k)]);
    let h = DMatrix::from_fn(observed.len(), observed.len(), |i, k| model.sigma_eps[(observed[i], observed[k])]);
    StateSpaceModel::new(z, model.t.clone(), h, model.sigma_eta.clone(), model.a1.clone(), model.p1.clone()).unwrap()
}

/// A row with missing cells equals the step of the model with those rows of Z
/// and Σε removed; a fully missing row is the pure prediction.
pub fn missing_reductions(cases: u32) -> Result<(), String> {
    run(cases, "missing-data reductions", |r| {
        check(r, (instance_strategy(4, 5, 0.0), prop::collection::vec(any::<bool>(), 4)), |(inst, drop)| {
            let model = compose(&inst.spec).unwrap();
            let d = model.obs_dim();
            let out = kalman_filter(&model, &inst.series.rows(0..4)).unwrap();
            let state = out.final_state;
            let y = inst.series.row_values(4);
            let mask: Vec<bool> = drop[..d].to_vec();
            let step = kalman_step(&model, &state, &y, &mask).unwrap();
            let observed: Vec<usize> = (0..d).filter(|&j| !mask[j]).collect();
            if observed.is_empty() {
                let a = &model.t * &state.a;
                let p = &model.t * &state.p * model.t.transpose() + &model.sigma_eta;
                prop_assert!(vec_close(&step.next.a, &a, 1e-10));
                prop_assert!(mat_close(&step.next.p, &p, 1e-10));
                prop_assert_eq!(step.loglik, 0.0);
                prop_assert!(step.v.iter().all(|x| x.is_nan()));
            } else {
                let red = reduced_model(&model, &observed);
                let y_red = DVector::from_iterator(observed.len(), observed.iter().map(|&j| y[j]));
                let s2 = kalman_step(&red, &state, &y_red, &vec![false; observed.len()]).unwrap();
                prop_assert!(vec_close(&step.next.a, &s2.next.a, 1e-10));
                prop_assert!(mat_close(&step.next.p, &s2.next.p, 1e-10));
                prop_assert!(close(step.loglik, s2.loglik, 1e-10));
                for (i, &j) in observed.iter().enumerate() {
                    prop_assert!(close(step.v[j], s2.v[i], 1e-10));
                }
            }
            Ok(())
        })
    })
}

fn permute_spec(spec: &SutseSpec, perm: &[usize]) -> SutseSpec {
    let d = perm.len();
    SutseSpec {
        blocks: perm.iter().map(|&j| spec.blocks[j].clone()).collect(),
        sigma_eps: DMatrix::from_fn(d, d, |i, k| spec.sigma_eps[(perm[i], perm[k])]),
    }
}

fn permute_series(series: &ObservationSeries, perm: &[usize]) -> ObservationSeries {
    let (n, d) = (series.len(), series.dim());
    let values = DMatrix::from_fn(n, d, |t, j| series.values()[(t, perm[j])]);
    let mask = (0..n).flat_map(|t| perm.iter().map(move |&j| (t, j))).map(|(t, j)| series.is_missing(t, j)).collect();
    ObservationSeries::new(values, mask).unwrap()
}

/// Same-step forecasts ignore the order of the conditioning list and the
/// labelling of series, and are affine in the conditioning values.
pub fn same_step_symmetries(cases: u32) -> Result<(), String> {
    run(cases, "same-step permutation invariance and linearity", |r| {
        let strategy = (instance_strategy(4, 30, 0.1), any::<u64>())
            .prop_filter("need d >= 2", |(i, _)| i.spec.dim() >= 2);
        check(r, strategy, |(inst, salt)| {
            let d = inst.spec.dim();
            let model = compose(&inst.spec).unwrap();
            let out = kalman_filter(&model, &inst.series).unwrap();
            let target = (salt % d as u64) as usize;
            let others: Vec<usize> = (0..d).filter(|&j| j != target).collect();
            let x1: Vec<f64> = others.iter().map(|&j| (j as f64 + 1.0) * 0.37 - (salt % 7) as f64 * 0.1).collect();
            let x2: Vec<f64> = others.iter().map(|&j| -(j as f64) * 0.21 + 0.5).collect();
            let forecast = |xs: &[f64]| {
                let req = SameStepRequest::new(others.iter().copied().zip(xs.iter().copied()).collect(), target);
                same_step_forecast(&model, &out, &req).unwrap()
            };
            let base = forecast(&x1);

            let mut pairs: Vec<(usize, f64)> = others.iter().copied().zip(x1.iter().copied()).collect();
            pairs.reverse();
            let reversed = same_step_forecast(&model, &out, &SameStepRequest::new(pairs, target)).unwrap();
            prop_assert!(close(base, reversed, 1e-10));

            let alpha = 0.3 + (salt % 5) as f64 * 0.4;
            let mix: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
            prop_assert!(close(forecast(&mix), alpha * base + (1.0 - alpha) * forecast(&x2), 1e-9));

            // Relabel: new series i is old perm[i].
            let mut perm: Vec<usize> = (0..d).collect();
            perm.rotate_left(1 + (salt as usize) % d);
            let pspec = permute_spec(&inst.spec, &perm);
            let pmodel = compose(&pspec).unwrap();
            let pout = kalman_filter(&pmodel, &permute_series(&inst.series, &perm)).unwrap();
            let inv = |old: usize| perm.iter().position(|&p| p == old).unwrap();
            let req = SameStepRequest::new(others.iter().map(|&j| inv(j)).zip(x1.iter().copied()).collect(), inv(target));
            let relabelled = same_step_forecast(&pmodel, &pout, &req).unwrap();
            prop_assert!(close(base, relabelled, 1e-8));
            Ok(())
        })
    })
}

/// V̂ is symmetric PSD whatever the missing pattern.
pub fn vhat_psd(cases: u32) -> Result<(), String> {
    run(cases, "error covariance PSD", |r| {
        check(r, instance_strategy(4, 60, 0.05), |inst| {
            let fast = run_univariate_filters(&inst.spec, &inst.series).unwrap();
            let Ok(est) = sample_error_cov(&fast, 5) else {
                // No complete rows after burn-in.
                return Ok(());
            };
            let v = &est.v;
            prop_assert!(mat_close(v, &v.transpose(), 0.0));
            let scale = v.diagonal().amax().max(1e-300);
            let min_eig = v.clone().symmetric_eigen().eigenvalues.min();
            prop_assert!(min_eig >= -1e-12 * scale, "min eigenvalue {}", min_eig);
            Ok(())
        })
    })
}

fn local_level_map(block: usize) -> ParameterMap {
    ParameterMap::new(vec![
        ParamSpec::new("sigma2_eps", ParamTarget::SigmaEpsDiag { dim: block }, Transform::Log),
        ParamSpec::new("sigma2_level", ParamTarget::StateNoise { block, index: 0 }, Transform::Log),
    ])
}

/// Two fits of the same data give bit-identical results, full and per dimension.
pub fn fit_determinism(cases: u32) -> Result<(), String> {
    run(cases, "fit determinism", |r| {
        let strategy = (0.05f64..2.0, 0.01f64..1.0, any::<u64>(), 0.2f64..3.0);
        check(r, strategy, |(eps, q, seed, init_scale)| {
            let block = SeriesBlock {
                z: DVector::from_element(1, 1.0),
                t: DMatrix::identity(1, 1),
                q: DMatrix::from_element(1, 1, q),
                a1: DVector::zeros(1),
                p1: DMatrix::from_element(1, 1, 1e4),
            };
            let spec = SutseSpec {
                blocks: vec![block.clone(), block],
                sigma_eps: DMatrix::from_row_slice(2, 2, &[eps, 0.3 * eps, 0.3 * eps, eps]),
            };
            let series = simulate(&compose(&spec).unwrap(), 60, seed).unwrap();
            let opts = FitOptions::default();
            let init = [eps * init_scale, q * init_scale];
            let pmap = local_level_map(0);
            let sub = sutse_core::estimation::dimension_spec(&spec, 0);
            let a = fit_full(&sub, &pmap, &series.column(0), &init, &opts).unwrap();
            let b = fit_full(&sub, &pmap, &series.column(0), &init, &opts).unwrap();
            prop_assert_eq!(&a, &b);
            let pmaps = vec![pmap.clone(), pmap];
            let inits = vec![init.to_vec(), init.to_vec()];
            let x = fit_per_dimension(&spec, &pmaps, &series, &inits, &opts).unwrap();
            let y = fit_per_dimension(&spec, &pmaps, &series, &inits, &opts).unwrap();
            for (u, v) in x.iter().zip(&y) {
                prop_assert_eq!(u.as_ref().unwrap(), v.as_ref().unwrap());
            }
            prop_assert_eq!(x[0].as_ref().unwrap(), &a);
            Ok(())
        })
    })
}

pub fn all_properties(cases: u32) -> Vec<(&'static str, Result<(), String>)> {
    vec![
        ("stream/batch", stream_batch(cases)),
        ("missing reductions", missing_reductions(cases)),
        ("same-step symmetries", same_step_symmetries(cases)),
        ("V-hat PSD", vhat_psd(cases)),
        ("fit determinism", fit_determinism(cases)),
    ]
}
