use std::ffi::{CStr, CString};
use std::ptr;

use sutse_core::filter::{kalman_filter, log_likelihood};
use sutse_core::forecast::exact::{same_step_forecast, SameStepRequest};
use sutse_core::io::ModelConfig;
use sutse_core::simulate::simulate;
use sutse_core::sutse::simulation_model_with_rho;
use sutse_core::compose;
use sutse_ffi::*;

fn last_error() -> String {
    let p = sutse_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn sim_handles(d: usize, n: usize, seed: u64) -> (*mut SutseSpecHandle, *mut SutseSeriesHandle) {
    let mut spec = ptr::null_mut();
    let mut series = ptr::null_mut();
    unsafe {
        assert_eq!(sutse_spec_simulation(d, 0.5, &mut spec), SutseStatus::Ok);
        assert_eq!(sutse_series_simulate(spec, n, seed, &mut series), SutseStatus::Ok);
    }
    (spec, series)
}

#[test]
fn matches_core_filter_and_forecasts() {
    let (spec, series) = sim_handles(4, 300, 3);
    let (core_spec, _) = simulation_model_with_rho(4, 0.5).unwrap();
    let model = compose(&core_spec).unwrap();
    let core_series = simulate(&model, 300, 3).unwrap();
    unsafe {
        assert_eq!(sutse_spec_dim(spec), 4);
        assert_eq!(sutse_series_len(series), 300);
        assert_eq!(sutse_series_dim(series), 4);

        let mut ll = 0.0;
        assert_eq!(sutse_loglik(spec, series, &mut ll), SutseStatus::Ok);
        assert_eq!(ll, log_likelihood(&model, &core_series).unwrap());

        let mut filter = ptr::null_mut();
        assert_eq!(sutse_filter_run(spec, series, &mut filter), SutseStatus::Ok);
        let mut ll2 = 0.0;
        assert_eq!(sutse_filter_loglik(filter, &mut ll2), SutseStatus::Ok);
        assert!((ll - ll2).abs() < 1e-9 * ll.abs());

        let mut one = [0.0; 4];
        assert_eq!(sutse_filter_one_step(filter, one.as_mut_ptr(), 4), SutseStatus::Ok);
        let out = kalman_filter(&model, &core_series).unwrap();
        let expect = &model.z * &out.final_state.a;
        for j in 0..4 {
            assert!((one[j] - expect[j]).abs() < 1e-10);
        }

        let idx = [0usize, 1, 2];
        let vals = [0.3, -0.2, 1.1];
        let mut y = 0.0;
        assert_eq!(
            sutse_filter_same_step(filter, idx.as_ptr(), vals.as_ptr(), 3, 3, &mut y),
            SutseStatus::Ok
        );
        let req = SameStepRequest::new(vec![(0, 0.3), (1, -0.2), (2, 1.1)], 3);
        assert!((y - same_step_forecast(&model, &out, &req).unwrap()).abs() < 1e-10);
        sutse_filter_free(filter);

        let mut fast = ptr::null_mut();
        assert_eq!(sutse_fast_run(spec, series, 5, &mut fast), SutseStatus::Ok);
        let mut fone = [0.0; 4];
        assert_eq!(sutse_fast_one_step(fast, fone.as_mut_ptr(), 4), SutseStatus::Ok);
        let mut v = [0.0; 16];
        assert_eq!(sutse_fast_error_cov(fast, v.as_mut_ptr(), 16), SutseStatus::Ok);
        for i in 0..4 {
            assert!(v[i * 4 + i] > 0.0);
            for j in 0..4 {
                assert_eq!(v[i * 4 + j], v[j * 4 + i]);
            }
        }
        let mut yf = 0.0;
        assert_eq!(
            sutse_fast_same_step(fast, idx.as_ptr(), vals.as_ptr(), 3, 3, &mut yf),
            SutseStatus::Ok
        );
        assert!(yf.is_finite());
        // No observed components: the correction vanishes.
        assert_eq!(
            sutse_fast_same_step(fast, ptr::null(), ptr::null(), 0, 2, &mut yf),
            SutseStatus::Ok
        );
        assert_eq!(yf, fone[2]);
        sutse_fast_free(fast);

        sutse_series_free(series);
        sutse_spec_free(spec);
    }
}

#[test]
fn series_round_trip_keeps_missing_cells() {
    let data = [1.0, f64::NAN, 3.0, 4.0, 5.0, f64::NAN];
    let mut series = ptr::null_mut();
    unsafe {
        assert_eq!(sutse_series_new(data.as_ptr(), 3, 2, &mut series), SutseStatus::Ok);
        let mut back = [0.0; 6];
        assert_eq!(sutse_series_copy(series, back.as_mut_ptr(), 6), SutseStatus::Ok);
        for (a, b) in data.iter().zip(&back) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
        assert_eq!(sutse_series_copy(series, back.as_mut_ptr(), 5), SutseStatus::InvalidInput);
        sutse_series_free(series);
    }
}

#[test]
fn errors_set_status_and_message() {
    let (spec, series) = sim_handles(3, 50, 1);
    unsafe {
        let mut ll = 0.0;
        assert_eq!(sutse_loglik(ptr::null(), series, &mut ll), SutseStatus::NullPointer);
        assert!(last_error().contains("spec"));

        let mut filter = ptr::null_mut();
        assert_eq!(sutse_filter_run(spec, series, &mut filter), SutseStatus::Ok);
        assert!(sutse_last_error_message().is_null());
        let idx = [1usize];
        let vals = [0.0];
        let mut y = 0.0;
        assert_eq!(
            sutse_filter_same_step(filter, idx.as_ptr(), vals.as_ptr(), 1, 1, &mut y),
            SutseStatus::InvalidInput
        );
        assert!(last_error().contains("target"));
        assert_eq!(
            sutse_filter_same_step(filter, idx.as_ptr(), vals.as_ptr(), 1, 9, &mut y),
            SutseStatus::InvalidInput
        );
        let mut one = [0.0; 2];
        assert_eq!(sutse_filter_one_step(filter, one.as_mut_ptr(), 2), SutseStatus::InvalidInput);

        let mut fast = ptr::null_mut();
        assert_eq!(sutse_fast_run(spec, series, 0, &mut fast), SutseStatus::InvalidInput);
        assert!(fast.is_null());

        let wrong = [0.0; 4];
        let mut s2 = ptr::null_mut();
        assert_eq!(sutse_series_new(wrong.as_ptr(), 2, 2, &mut s2), SutseStatus::Ok);
        assert_eq!(sutse_loglik(spec, s2, &mut ll), SutseStatus::InvalidInput);
        sutse_series_free(s2);

        let inf = [f64::INFINITY];
        assert_eq!(sutse_series_new(inf.as_ptr(), 1, 1, &mut s2), SutseStatus::InvalidInput);

        let mut bad = ptr::null_mut();
        assert_eq!(sutse_spec_simulation(0, 0.5, &mut bad), SutseStatus::InvalidInput);

        sutse_filter_free(filter);
        sutse_series_free(series);
        sutse_spec_free(spec);
        // Null handles are accepted by the free functions.
        sutse_filter_free(ptr::null_mut());
        sutse_fast_free(ptr::null_mut());
        sutse_series_free(ptr::null_mut());
        sutse_spec_free(ptr::null_mut());
        assert_eq!(sutse_spec_dim(ptr::null()), 0);
    }
}

#[test]
fn spec_loads_from_toml() {
    let (spec, _) = simulation_model_with_rho(2, 0.3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.toml");
    ModelConfig::from_spec(&spec).save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(sutse_spec_load(c.as_ptr(), &mut handle), SutseStatus::Ok);
        assert_eq!(sutse_spec_dim(handle), 2);
        sutse_spec_free(handle);

        let missing = CString::new(dir.path().join("nope.toml").to_str().unwrap()).unwrap();
        let mut h2 = ptr::null_mut();
        assert_eq!(sutse_spec_load(missing.as_ptr(), &mut h2), SutseStatus::Io);
        assert!(h2.is_null());
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sutse.h")).unwrap();
    for name in [
        "SUTSE_STATUS_OK",
        "SUTSE_STATUS_DIVERGENCE",
        "typedef struct SutseSpecHandle SutseSpecHandle",
        "sutse_last_error_message",
        "sutse_filter_same_step",
        "sutse_fast_same_step",
        "sutse_fast_free",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
