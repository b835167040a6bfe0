use std::ffi::{CStr, CString};
use std::ptr;

use scdl_ffi::*;

fn last_error() -> String {
    let p = scdl_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn builtin(name: &str) -> *mut ScdlPrior {
    let name = CString::new(name).unwrap();
    let mut prior = ptr::null_mut();
    assert_eq!(unsafe { scdl_prior_builtin(name.as_ptr(), &mut prior) }, ScdlStatus::Ok);
    prior
}

#[test]
fn prior_queries() {
    let prior = builtin("cifar10");
    unsafe {
        assert_eq!(scdl_prior_class_count(prior), 10);
        assert_eq!(scdl_prior_colony_count(prior), 2);
        let mut colony = 9;
        assert_eq!(scdl_prior_colony_of(prior, 3, &mut colony), ScdlStatus::Ok);
        assert_eq!(colony, 1);

        let mut len = 0;
        assert_eq!(
            scdl_prior_opposite_pool(prior, 3, ptr::null_mut(), 0, &mut len),
            ScdlStatus::BufferTooSmall
        );
        assert_eq!(len, 4);
        let mut buf = vec![0usize; len];
        assert_eq!(
            scdl_prior_opposite_pool(prior, 3, buf.as_mut_ptr(), buf.len(), &mut len),
            ScdlStatus::Ok
        );
        assert_eq!(buf, vec![0, 1, 8, 9]);

        assert_eq!(
            scdl_prior_colony_of(prior, 10, &mut colony),
            ScdlStatus::InvalidArgument
        );
        assert!(last_error().contains("10"));
        scdl_prior_free(prior);
    }
}

#[test]
fn parse_errors_carry_codes() {
    let bad = CString::new("classes: 3\na: 0, 1\n").unwrap();
    let mut prior = ptr::null_mut();
    let status = unsafe { scdl_prior_parse(bad.as_ptr(), &mut prior) };
    assert_eq!(status, ScdlStatus::Validation);
    assert!(prior.is_null());
    assert!(last_error().contains("class 2 is not covered"), "{}", last_error());

    assert_eq!(
        unsafe { scdl_prior_parse(ptr::null(), &mut prior) },
        ScdlStatus::NullPointer
    );
    let name = CString::new("imagenet").unwrap();
    assert_eq!(
        unsafe { scdl_prior_builtin(name.as_ptr(), &mut prior) },
        ScdlStatus::InvalidArgument
    );
}

#[test]
fn sampling_respects_colonies() {
    let prior = builtin("fashion-mnist");
    let rng = scdl_rng_new(7);
    unsafe {
        for _ in 0..200 {
            let mut label = 0;
            assert_eq!(
                scdl_sample_opposite(prior, rng, 5, ScdlOppositeMode::Sd, &mut label),
                ScdlStatus::Ok
            );
            assert!(![5, 7, 9].contains(&label));
            assert_eq!(
                scdl_sample_opposite(prior, rng, 5, ScdlOppositeMode::Rt, &mut label),
                ScdlStatus::Ok
            );
            assert_ne!(label, 5);
        }
        scdl_rng_free(rng);
        scdl_prior_free(prior);
    }
}

#[test]
fn composite_loss_over_raw_arrays() {
    // p = [0.7, 0.2, 0.1] from logits ln p.
    let z = [0.7f64.ln(), 0.2f64.ln(), 0.1f64.ln()];
    let mut loss = 0.0;
    let mut grad = [0.0; 3];
    let status = unsafe { scdl_composite_loss(z.as_ptr(), 3, 0, 2, 1.0, 0.5, 1e-7, &mut loss, grad.as_mut_ptr()) };
    assert_eq!(status, ScdlStatus::Ok);
    // -ln 0.7 + 0.5 * -ln 0.9
    assert!((loss - 0.4093552017676455).abs() < 1e-12);
    assert!(grad.iter().sum::<f64>().abs() < 1e-12);

    let status = unsafe { scdl_composite_loss(z.as_ptr(), 3, 0, 0, 1.0, 0.5, 1e-7, &mut loss, ptr::null_mut()) };
    assert_eq!(status, ScdlStatus::InvalidArgument);
    let status = unsafe { scdl_composite_loss(z.as_ptr(), 3, 0, -1, -1.0, 0.5, 1e-7, &mut loss, ptr::null_mut()) };
    assert_eq!(status, ScdlStatus::InvalidArgument);
}

#[test]
fn transition_and_agreement() {
    let prior = builtin("cifar10");
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(scdl_transition_new(prior, &mut t), ScdlStatus::Ok);
        let mut entries = vec![0.0; 100];
        let mut len = 0;
        assert_eq!(
            scdl_transition_entries(t, entries.as_mut_ptr(), 100, &mut len),
            ScdlStatus::Ok
        );
        assert_eq!(len, 100);
        assert_eq!(entries[3 * 10], 0.25);
        assert_eq!(entries[2], 1.0 / 6.0);

        let s = [0.1; 10];
        let mut s_bar = [0.0; 10];
        assert_eq!(
            scdl_induced_opposite(t, s.as_ptr(), 10, s_bar.as_mut_ptr()),
            ScdlStatus::Ok
        );
        assert!((s_bar.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(
            scdl_induced_opposite(t, s.as_ptr(), 9, s_bar.as_mut_ptr()),
            ScdlStatus::DimensionMismatch
        );
        scdl_transition_free(t);
        scdl_prior_free(prior);
    }

    let text = CString::new("classes: 3\na: 0\nb: 1, 2\n").unwrap();
    let mut small = ptr::null_mut();
    unsafe {
        assert_eq!(scdl_prior_parse(text.as_ptr(), &mut small), ScdlStatus::Ok);
        let mass = [1.0];
        let (mut agree, mut gap) = (false, 0.0);
        let cond = [0.6, 0.3, 0.1];
        let status = scdl_verify_minimizer_agreement(
            small,
            mass.as_ptr(),
            1,
            cond.as_ptr(),
            3,
            1.0,
            0.5,
            &mut agree,
            &mut gap,
        );
        assert_eq!(status, ScdlStatus::Ok);
        assert!(agree && gap > 0.0);
        let tied = [0.4, 0.4, 0.2];
        let status = scdl_verify_minimizer_agreement(
            small,
            mass.as_ptr(),
            1,
            tied.as_ptr(),
            3,
            1.0,
            0.5,
            &mut agree,
            &mut gap,
        );
        assert_eq!(status, ScdlStatus::DegenerateMargin);
        scdl_prior_free(small);
    }
}

#[test]
fn model_round_trip() {
    unsafe {
        let hidden = [5usize];
        let mut model = ptr::null_mut();
        assert_eq!(scdl_model_new(3, hidden.as_ptr(), 1, 4, 11, &mut model), ScdlStatus::Ok);
        let mut len = 0;
        assert_eq!(
            scdl_model_save(model, ptr::null_mut(), 0, &mut len),
            ScdlStatus::BufferTooSmall
        );
        let mut bytes = vec![0u8; len];
        assert_eq!(
            scdl_model_save(model, bytes.as_mut_ptr(), len, &mut len),
            ScdlStatus::Ok
        );

        let mut copy = ptr::null_mut();
        assert_eq!(scdl_model_load(bytes.as_ptr(), len, &mut copy), ScdlStatus::Ok);
        let x = [0.3, -1.2, 2.0];
        let (mut pa, mut pb) = ([0.0; 4], [0.0; 4]);
        let (mut la, mut lb) = (0, 0);
        assert_eq!(
            scdl_model_predict(model, x.as_ptr(), 3, pa.as_mut_ptr(), &mut la),
            ScdlStatus::Ok
        );
        assert_eq!(
            scdl_model_predict(copy, x.as_ptr(), 3, pb.as_mut_ptr(), &mut lb),
            ScdlStatus::Ok
        );
        assert_eq!(pa, pb);
        assert_eq!(la, lb);
        assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert_eq!(
            scdl_model_predict(model, x.as_ptr(), 2, pa.as_mut_ptr(), &mut la),
            ScdlStatus::DimensionMismatch
        );
        assert_eq!(scdl_model_load(bytes.as_ptr(), 3, &mut copy), ScdlStatus::Format);
        scdl_model_free(model);
        scdl_model_free(copy);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/scdl.h")).unwrap();
    for name in [
        "typedef struct ScdlPrior ScdlPrior;",
        "SCDL_STATUS_BUFFER_TOO_SMALL",
        "scdl_last_error_message",
        "scdl_composite_loss",
        "scdl_sample_opposite",
        "scdl_verify_minimizer_agreement",
        "scdl_model_predict",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/scdl.h");
    let Ok(out) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", header])
        .output()
    else {
        eprintln!("no C compiler, skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
