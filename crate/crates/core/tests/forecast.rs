use sutse_core::forecast::exact::{one_step_forecast, same_step_forecast, SameStepRequest};
use sutse_core::forecast::fast::{fast_one_step, fast_same_step, run_univariate_filters, sample_error_cov};
use sutse_core::simulate::simulate;
use sutse_core::sutse::simulation_model_with_rho;
use sutse_core::{compose, kalman_filter};

// With a diagonal Σε and the true parameters the exact filter decouples, so
// conditioning on other series changes nothing and both routes agree.
#[test]
fn diagonal_noise_makes_the_methods_coincide() {
    let (spec, _) = simulation_model_with_rho(4, 0.0).unwrap();
    let model = compose(&spec).unwrap();
    for seed in 0..5 {
        let y = simulate(&model, 1200, 900 + seed).unwrap();
        let (train, next) = (y.rows(0..1000), y.rows(1000..1001));
        let exact = kalman_filter(&model, &train).unwrap();
        let fast = run_univariate_filters(&spec, &train).unwrap();
        let one = one_step_forecast(&model, &exact);
        let one_fast = fast_one_step(&fast, &spec);
        for k in 0..4 {
            assert!((one[k] - one_fast[k]).abs() <= 1e-10 * one[k].abs().max(1.0));
            let observed: Vec<(usize, f64)> = (0..4).filter(|&i| i != k).map(|i| (i, next.get(0, i).unwrap())).collect();
            let req = SameStepRequest::new(observed, k);
            let same = same_step_forecast(&model, &exact, &req).unwrap();
            assert!((same - one[k]).abs() <= 1e-10 * one[k].abs().max(1.0), "seed {seed} k {k}");
            // V̂ is only approximately diagonal, so the fast correction is small but not zero.
            let cov = sample_error_cov(&fast, 5).unwrap();
            let fast_same = fast_same_step(&fast, &cov, &req).unwrap();
            assert!((fast_same - one[k]).abs() < 0.5, "seed {seed} k {k}: {fast_same} vs {}", one[k]);
        }
    }
}

#[test]
fn correlated_noise_helps_the_same_step_forecast() {
    let (spec, _) = simulation_model_with_rho(4, 0.6).unwrap();
    let model = compose(&spec).unwrap();
    let (mut same_err, mut one_err) = (0.0, 0.0);
    for seed in 0..40 {
        let y = simulate(&model, 301, 4000 + seed).unwrap();
        let train = y.rows(0..300);
        let out = kalman_filter(&model, &train).unwrap();
        let one = one_step_forecast(&model, &out);
        let observed: Vec<(usize, f64)> = (1..4).map(|i| (i, y.get(300, i).unwrap())).collect();
        let same = same_step_forecast(&model, &out, &SameStepRequest::new(observed, 0)).unwrap();
        let truth = y.get(300, 0).unwrap();
        same_err += (same - truth).powi(2);
        one_err += (one[0] - truth).powi(2);
    }
    assert!(same_err < one_err, "same {same_err} one {one_err}");
}
