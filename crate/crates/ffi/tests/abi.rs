use std::ffi::{CStr, CString};
use std::ptr;

use qmc_amis_ffi::*;

fn last_error() -> String {
    let p = qmc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn quantile_and_cdf_round_trip() {
    let mut z = 0.0;
    assert_eq!(unsafe { qmc_inv_norm_cdf(0.975, &mut z) }, QmcStatus::Ok);
    assert!((z - 1.959963984540054).abs() < 1e-12);
    assert!((qmc_norm_cdf(z) - 0.975).abs() < 1e-14);
    assert!(qmc_last_error().is_null());

    assert_eq!(unsafe { qmc_inv_norm_cdf(1.5, &mut z) }, QmcStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { qmc_inv_norm_cdf(0.5, ptr::null_mut()) }, QmcStatus::NullPointer);
    assert!(last_error().contains("out"));
}

#[test]
fn projection_checks_radius() {
    let mut y = 0.0;
    assert_eq!(unsafe { qmc_smoothed_projection(10.0, 3.0, &mut y) }, QmcStatus::Ok);
    assert_eq!(y, 2.5);
    assert_eq!(unsafe { qmc_smoothed_projection(0.0, 1.0, &mut y) }, QmcStatus::InvalidArgument);
    assert!(last_error().contains("radius"));
}

#[test]
fn sobol_handle_exposes_rows() {
    let mut ps = ptr::null_mut();
    assert_eq!(unsafe { qmc_sobol_generate(4, 3, 9, &mut ps) }, QmcStatus::Ok);
    unsafe {
        assert_eq!(qmc_point_set_len(ps), 16);
        assert_eq!(qmc_point_set_dim(ps), 3);
        let v = std::slice::from_raw_parts(qmc_point_set_values(ps), 48);
        let expected = qmc_amis::pointgen::generate_sobol(4, 3, 9).unwrap();
        assert_eq!(v, expected.values().as_slice());
        qmc_point_set_free(ps);
        qmc_point_set_free(ptr::null_mut());
        assert_eq!(qmc_point_set_len(ptr::null()), 0);
    }

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { qmc_sobol_generate(4, 100_000, 0, &mut bad) }, QmcStatus::Unsupported);
    assert!(bad.is_null());
    assert_eq!(unsafe { qmc_points_generate(QmcSampler::Rqmc, 10, 2, 0, &mut bad) }, QmcStatus::InvalidArgument);
    assert_eq!(unsafe { qmc_points_generate(QmcSampler::Mc, 10, 2, 0, &mut bad) }, QmcStatus::Ok);
    unsafe { qmc_point_set_free(bad) };
}

#[test]
fn experiment_round_trip() {
    let text = CString::new("experiment = lq_rates\nbudgets = 16, 32, 64\nreps = 3\n").unwrap();
    let mut cfg = ptr::null_mut();
    let mut res = ptr::null_mut();
    unsafe {
        assert_eq!(qmc_config_parse(text.as_ptr(), &mut cfg), QmcStatus::Ok);
        assert_eq!(qmc_experiment_run(cfg, &mut res), QmcStatus::Ok);
        assert_eq!(qmc_result_series_count(res), 6);
        let (mut budget, mut rmse) = (0usize, 0.0f64);
        assert_eq!(qmc_result_series(res, 5, &mut budget, &mut rmse), QmcStatus::Ok);
        assert_eq!(budget, 64);
        assert!(rmse > 0.0);
        assert_eq!(qmc_result_series(res, 6, &mut budget, &mut rmse), QmcStatus::InvalidArgument);

        let method = CString::new("plain").unwrap();
        let mut slope = 0.0;
        assert_eq!(qmc_result_slope(res, method.as_ptr(), QmcSampler::Rqmc, &mut slope), QmcStatus::Ok);
        assert!(slope < 0.0);

        let mut truth = [0.0; 4];
        assert_eq!(qmc_result_truth_len(res), 1);
        assert_eq!(qmc_result_truth(res, truth.as_mut_ptr(), 4), 1);
        assert_eq!(truth[0], 1.0);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("out/lq.csv").to_str().unwrap()).unwrap();
        assert_eq!(qmc_result_write_csv(res, path.as_ptr()), QmcStatus::Ok);
        assert!(dir.path().join("out/lq.csv").exists());

        qmc_result_free(res);
        qmc_config_free(cfg);
    }
}

#[test]
fn config_errors_map_to_status_codes() {
    let mut cfg = ptr::null_mut();
    unsafe {
        let bad = CString::new("experiment = toy_gmm\nwat = 1\n").unwrap();
        assert_eq!(qmc_config_parse(bad.as_ptr(), &mut cfg), QmcStatus::InvalidArgument);
        assert!(last_error().contains("wat"));

        let missing = CString::new("/nonexistent/x.cfg").unwrap();
        assert_eq!(qmc_config_load(missing.as_ptr(), &mut cfg), QmcStatus::Io);

        let name = CString::new("banana").unwrap();
        assert_eq!(qmc_config_default(name.as_ptr(), &mut cfg), QmcStatus::Ok);
        qmc_config_free(cfg);

        assert_eq!(qmc_config_parse(ptr::null(), &mut cfg), QmcStatus::NullPointer);
        let mut res = ptr::null_mut();
        assert_eq!(qmc_experiment_run(ptr::null(), &mut res), QmcStatus::NullPointer);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(qmc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
