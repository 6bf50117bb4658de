use std::ffi::CStr;
use std::ptr;

use rrdph_ffi::*;

fn last_error() -> String {
    // SAFETY: the library always returns a valid C string.
    unsafe { CStr::from_ptr(rrdph_last_error()) }.to_string_lossy().into_owned()
}

fn toy() -> *mut RrdphModel {
    let pi = [1.0, 0.0, 0.0, 0.0];
    let t = [
        0.0, 0.5, 0.5, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        0.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 0.0,
    ];
    let p = [1.0, 1.0, 0.6, 0.3];
    let mut m = ptr::null_mut();
    let s = unsafe { rrdph_model_new(RrdphRewardKind::Bernoulli, 4, pi.as_ptr(), t.as_ptr(), p.as_ptr(), &mut m) };
    assert_eq!(s, RrdphStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn bernoulli_toy_values() {
    let m = toy();
    let mut v = 0.0;
    unsafe {
        assert_eq!(rrdph_joint_pmf(m, 2, 1, &mut v), RrdphStatus::Ok);
        assert!((v - 0.35).abs() < 1e-12);
        let mut table = vec![0.0; 25];
        assert_eq!(rrdph_joint_pmf_table(m, 4, 4, table.as_mut_ptr(), table.len()), RrdphStatus::Ok);
        assert!((table[5 + 1] - 0.20).abs() < 1e-12);
        assert!((table[3] - 0.15).abs() < 1e-12);
        assert!((table.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(rrdph_pgf(m, 1.0, 1.0, &mut v), RrdphStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(rrdph_expected_rewards(m, &mut a, &mut b), RrdphStatus::Ok);
        assert!((a - (0.2 + 0.6 + 0.7 + 0.45)).abs() < 1e-12, "{a}");
        let mut d = 0;
        assert_eq!(rrdph_model_dim(m, &mut d), RrdphStatus::Ok);
        assert_eq!(d, 4);
        rrdph_model_free(m);
    }
}

#[test]
fn errors_are_reported() {
    let mut m = ptr::null_mut();
    let q = [0.5, 0.0];
    let s = unsafe { rrdph_iem_new(2, 0.5, 0.5, q.as_ptr(), &mut m) };
    assert_eq!(s, RrdphStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(last_error().contains("q[2]"), "{}", last_error());

    let s = unsafe { rrdph_iem_new(2, 0.5, 0.5, ptr::null(), &mut m) };
    assert_eq!(s, RrdphStatus::NullPointer);
    assert!(last_error().contains("q"));

    let model = toy();
    let mut buf = [0.0; 4];
    let s = unsafe { rrdph_joint_pmf_table(model, 4, 4, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(s, RrdphStatus::InvalidArgument);
    assert!(last_error().contains("25 needed"));
    let mut v = 0.0;
    assert_eq!(unsafe { rrdph_pgf(model, 2.0, 0.5, &mut v) }, RrdphStatus::InvalidArgument);
    assert_eq!(unsafe { rrdph_joint_pmf(ptr::null(), 0, 0, &mut v) }, RrdphStatus::NullPointer);
    assert_eq!(unsafe { rrdph_joint_pmf(model, 0, 0, &mut v) }, RrdphStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe {
        rrdph_model_free(model);
        rrdph_model_free(ptr::null_mut());
        rrdph_fit_free(ptr::null_mut());
    }
}

#[test]
fn simulate_and_fit() {
    let q = [0.3, 0.5, 0.7];
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { rrdph_iem_new(3, 0.4, 0.6, q.as_ptr(), &mut m) }, RrdphStatus::Ok);
    let n = 2000;
    let (mut y1, mut y2) = (vec![0u64; n], vec![0u64; n]);
    let mut again = vec![0u64; n];
    let mut scratch = vec![0u64; n];
    unsafe {
        assert_eq!(rrdph_simulate(m, n, 8, y1.as_mut_ptr(), y2.as_mut_ptr()), RrdphStatus::Ok);
        assert_eq!(rrdph_simulate(m, n, 8, again.as_mut_ptr(), scratch.as_mut_ptr()), RrdphStatus::Ok);
    }
    assert_eq!(y1, again);
    assert!(y2.iter().all(|&v| v >= 1));

    let mut fit = ptr::null_mut();
    let s = unsafe { rrdph_fit_iem(3, 0, y1.as_ptr(), y2.as_ptr(), n, 5000, 0.0, &mut fit) };
    assert_eq!(s, RrdphStatus::Ok, "{}", last_error());
    let mut count = 0;
    unsafe {
        assert_eq!(rrdph_fit_param_count(fit, &mut count), RrdphStatus::Ok);
        assert_eq!(count, 5);
        for (i, truth) in [0.4, 0.6, 0.3, 0.5, 0.7].iter().enumerate() {
            let mut name = ptr::null();
            let mut v = 0.0;
            assert_eq!(rrdph_fit_param_name(fit, i, &mut name), RrdphStatus::Ok);
            assert_eq!(rrdph_fit_param_value(fit, i, &mut v), RrdphStatus::Ok);
            let name = CStr::from_ptr(name).to_string_lossy();
            assert!((v - truth).abs() < 0.08, "{name}: {v}");
        }
        let mut v = 0.0;
        assert_eq!(rrdph_fit_param_value(fit, 5, &mut v), RrdphStatus::InvalidArgument);
        let (mut ll, mut it, mut conv) = (0.0, 0, 0);
        assert_eq!(rrdph_fit_summary(fit, &mut ll, &mut it, &mut conv), RrdphStatus::Ok);
        assert!(ll < 0.0 && it > 0 && conv == 1);
        rrdph_fit_free(fit);
        rrdph_model_free(m);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rrdph.h")).unwrap();
    for symbol in [
        "RRDPH_STATUS_OK",
        "RRDPH_REWARD_KIND_GEOMETRIC",
        "typedef struct RrdphModel RrdphModel",
        "rrdph_model_new",
        "rrdph_iem_new",
        "rrdph_model_free",
        "rrdph_joint_pmf_table",
        "rrdph_pgf",
        "rrdph_expected_rewards",
        "rrdph_simulate",
        "rrdph_fit_iem",
        "rrdph_fit_param_name",
        "rrdph_last_error",
    ] {
        assert!(header.contains(symbol), "missing {symbol}");
    }
    // the header must be valid C when a compiler is available
    if let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-x", "c"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rrdph.h"))
        .status()
    {
        assert!(status.success());
    }
}
