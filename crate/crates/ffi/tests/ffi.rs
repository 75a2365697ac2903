use std::ffi::{CStr, CString};
use std::ptr;

use lexhaz::simulate::{simulate_cohort, AgeDistribution, HazardFamily, ScenarioSpec};
use lexhaz_ffi::*;

const CONFIG: &str = r#"
[grid]
u_lo = 50.0
u_hi = 80.0
h_u = 2.0
s_hi = 6.0
h_s = 1.0

[basis]
c_u = 6
c_s = 5

[smoothing]
log10_rho_u = [1.0, 3.0]
log10_rho_s = [1.0, 3.0]
refine = false

[monte_carlo]
n_draws = 50
"#;

fn fitted() -> *mut LexhazModel {
    let spec = ScenarioSpec {
        cause1: HazardFamily::Constant { rate: 0.1 },
        cause2: HazardFamily::Constant { rate: 0.05 },
        age: AgeDistribution::Uniform { lo: 50.0, hi: 80.0 },
        s_max: 6.0,
        n: 3000,
        seed: 9,
        step: 1e-3,
    };
    let recs = simulate_cohort(&spec).unwrap();
    let u: Vec<f64> = recs.iter().map(|r| r.u).collect();
    let s: Vec<f64> = recs.iter().map(|r| r.s_exit).collect();
    let c: Vec<u8> = recs.iter().map(|r| r.cause).collect();
    let cfg = CString::new(CONFIG).unwrap();
    let mut model = ptr::null_mut();
    let st = unsafe { lexhaz_model_fit(u.as_ptr(), ptr::null(), s.as_ptr(), c.as_ptr(), u.len(), cfg.as_ptr(), &mut model) };
    assert_eq!(st, LexhazStatus::Ok, "{:?}", last_error());
    model
}

fn last_error() -> String {
    let p = lexhaz_last_error();
    if p.is_null() {
        String::new()
    } else {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }
}

#[test]
fn fit_evaluate_save_load() {
    let model = fitted();
    let u = [60.0, 70.0, 75.0];
    let s = [0.0, 2.5, 5.0];
    let mut h = [0.0; 3];
    let mut cif1 = [0.0; 3];
    let mut cif2 = [0.0; 3];
    let mut surv = [0.0; 3];
    let mut se = [0.0; 3];
    unsafe {
        assert_eq!(lexhaz_hazard(model, 1, u.as_ptr(), s.as_ptr(), 3, h.as_mut_ptr()), LexhazStatus::Ok);
        assert_eq!(lexhaz_cif(model, 1, u.as_ptr(), s.as_ptr(), 3, cif1.as_mut_ptr()), LexhazStatus::Ok);
        assert_eq!(lexhaz_cif(model, 2, u.as_ptr(), s.as_ptr(), 3, cif2.as_mut_ptr()), LexhazStatus::Ok);
        assert_eq!(lexhaz_survival(model, u.as_ptr(), s.as_ptr(), 3, surv.as_mut_ptr()), LexhazStatus::Ok);
        assert_eq!(lexhaz_log_hazard_se(model, 2, u.as_ptr(), s.as_ptr(), 3, se.as_mut_ptr()), LexhazStatus::Ok);
    }
    for i in 0..3 {
        assert!((h[i] - 0.1).abs() < 0.03, "hazard {}", h[i]);
        assert!((surv[i] + cif1[i] + cif2[i] - 1.0).abs() < 3.0 * 0.1 * 0.2);
        assert!(se[i] > 0.0);
    }
    assert_eq!((cif1[0], surv[0]), (0.0, 1.0));

    let mut cse_a = [0.0; 3];
    let mut cse_b = [0.0; 3];
    unsafe {
        assert_eq!(lexhaz_cif_se(model, 1, u.as_ptr(), s.as_ptr(), 3, 40, 5, cse_a.as_mut_ptr()), LexhazStatus::Ok);
        assert_eq!(lexhaz_cif_se(model, 1, u.as_ptr(), s.as_ptr(), 3, 40, 5, cse_b.as_mut_ptr()), LexhazStatus::Ok);
    }
    assert_eq!(cse_a, cse_b);
    assert!(cse_a[2] > 0.0);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    let mut loaded = ptr::null_mut();
    let mut h2 = [0.0; 3];
    unsafe {
        assert_eq!(lexhaz_model_save(model, path.as_ptr()), LexhazStatus::Ok);
        assert_eq!(lexhaz_model_load(path.as_ptr(), &mut loaded), LexhazStatus::Ok);
        assert_eq!(lexhaz_hazard(loaded, 1, u.as_ptr(), s.as_ptr(), 3, h2.as_mut_ptr()), LexhazStatus::Ok);
        let (mut cu, mut cs) = (0, 0);
        assert_eq!(lexhaz_model_dims(loaded, 1, &mut cu, &mut cs), LexhazStatus::Ok);
        assert_eq!((cu, cs), (6, 5));
        lexhaz_model_free(loaded);
        lexhaz_model_free(model);
    }
    assert_eq!(h, h2);
}

#[test]
fn errors_are_reported() {
    let model = fitted();
    let mut out = [0.0; 1];
    unsafe {
        assert_eq!(lexhaz_hazard(model, 3, [60.0].as_ptr(), [1.0].as_ptr(), 1, out.as_mut_ptr()), LexhazStatus::InvalidArgument);
        assert!(last_error().contains("cause"));
        assert_eq!(lexhaz_hazard(model, 1, [90.0].as_ptr(), [1.0].as_ptr(), 1, out.as_mut_ptr()), LexhazStatus::OutOfDomain);
        assert!(last_error().contains("u=90"), "{}", last_error());
        assert_eq!(lexhaz_hazard(ptr::null(), 1, [60.0].as_ptr(), [1.0].as_ptr(), 1, out.as_mut_ptr()), LexhazStatus::InvalidArgument);
        let bad = CString::new("{\"format\": \"other\"}").unwrap();
        let mut m = ptr::null_mut();
        assert_ne!(lexhaz_model_from_json(bad.as_ptr(), &mut m), LexhazStatus::Ok);
        assert!(m.is_null());
        let missing = CString::new("/nonexistent/model.json").unwrap();
        assert_eq!(lexhaz_model_load(missing.as_ptr(), &mut m), LexhazStatus::IoError);
        let bad_cfg = CString::new("[grid]\nh_u = -1.0").unwrap();
        assert_eq!(
            lexhaz_model_fit([60.0].as_ptr(), ptr::null(), [1.0].as_ptr(), [1u8].as_ptr(), 1, bad_cfg.as_ptr(), &mut m),
            LexhazStatus::InvalidArgument
        );
        assert_eq!(
            lexhaz_model_fit([60.0].as_ptr(), ptr::null(), [1.0].as_ptr(), [7u8].as_ptr(), 1, ptr::null(), &mut m),
            LexhazStatus::DataError
        );
        lexhaz_model_free(model);
        lexhaz_model_free(ptr::null_mut());
    }
    assert!(!unsafe { CStr::from_ptr(lexhaz_version()) }.to_bytes().is_empty());
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lexhaz.h")).unwrap();
    for name in [
        "lexhaz_model_load",
        "lexhaz_model_from_json",
        "lexhaz_model_fit",
        "lexhaz_hazard",
        "lexhaz_cif_se",
        "lexhaz_model_free",
        "lexhaz_last_error",
        "LEXHAZ_STATUS_OUT_OF_DOMAIN",
        "typedef struct LexhazModel LexhazModel",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
