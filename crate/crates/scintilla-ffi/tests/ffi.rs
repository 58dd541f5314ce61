use scintilla_ffi::*;
use std::ffi::CStr;
use std::ptr;

fn last_error() -> String {
    let p = scintilla_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn closed_forms_and_errors() {
    let mut r0 = 0.0;
    let s = unsafe { scintilla_fried_parameter(1e-14, 633e-9, 1000.0, &mut r0) };
    assert_eq!(s, ScintillaStatus::Ok);
    let expected = 0.185 * (633e-9f64.powi(2) / (1e-14 * 1000.0)).powf(0.6);
    assert!((r0 - expected).abs() < 1e-12 * expected);

    let s = unsafe { scintilla_fried_parameter(-1.0, 633e-9, 1000.0, &mut r0) };
    assert_eq!(s, ScintillaStatus::Domain);
    assert!(!last_error().is_empty());

    let s = unsafe { scintilla_rytov_variance(1e-14, 1e7, 100.0, ptr::null_mut()) };
    assert_eq!(s, ScintillaStatus::NullPointer);
    assert!(last_error().contains("null"));

    let mut d = 0.0;
    let s = unsafe { scintilla_structure_function(2.0, 1.0, ScintillaStructureKind::Quadratic, &mut d) };
    assert_eq!(s, ScintillaStatus::Ok);
    assert!((d - 6.88 * 4.0).abs() < 1e-12);

    let v = unsafe { CStr::from_ptr(scintilla_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn basis_couplings_and_evolution() {
    let w0 = 0.01;
    let lam = 633e-9;
    let mut basis = ptr::null_mut();
    assert_eq!(unsafe { scintilla_basis_lg_first(3, w0, 64, 0.0, &mut basis) }, ScintillaStatus::Ok);
    assert_eq!(unsafe { scintilla_basis_len(basis) }, 3);

    let mut c = ptr::null_mut();
    // Kolmogorov (no outer scale) is refused
    assert_ne!(unsafe { scintilla_couplings_compute(basis, lam, 1e-14, -1.0, &mut c) }, ScintillaStatus::Ok);
    assert_eq!(unsafe { scintilla_couplings_compute(basis, lam, 1e-14, 50.0, &mut c) }, ScintillaStatus::Ok);
    let n = unsafe { scintilla_couplings_dim(c) };
    assert_eq!(n, 3);

    let mut lt = 0.0;
    assert_eq!(unsafe { scintilla_couplings_lambda_t(c, &mut lt) }, ScintillaStatus::Ok);
    assert!(lt > 0.0);

    let (mut pr, mut pi) = (vec![0.0; n * n], vec![0.0; n * n]);
    assert_eq!(unsafe { scintilla_couplings_kinetic(c, pr.as_mut_ptr(), pi.as_mut_ptr()) }, ScintillaStatus::Ok);
    let k = 2.0 * std::f64::consts::PI / lam;
    assert!((pr[0] - 1.0 / (k * w0 * w0)).abs() < 1e-6 / (k * w0 * w0));

    let mut rr = vec![0.0; n * n];
    rr[0] = 1.0;
    let ri = vec![0.0; n * n];
    let (mut or, mut oi) = (vec![0.0; n * n], vec![0.0; n * n]);
    let s = unsafe { scintilla_evolve(c, rr.as_ptr(), ri.as_ptr(), 100.0, 0.0, or.as_mut_ptr(), oi.as_mut_ptr()) };
    assert_eq!(s, ScintillaStatus::Ok, "{}", last_error());
    assert!(or[0] < 1.0 && or[0] > 0.9);

    unsafe {
        scintilla_couplings_free(c);
        scintilla_basis_free(basis);
        scintilla_basis_free(ptr::null_mut());
    }
}

#[test]
fn concurrence_entry_points() {
    let h = 0.5;
    let mut re = [0.0; 16];
    // (|01⟩ + |10⟩)/√2
    for (i, j) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
        re[i * 4 + j] = h;
    }
    let im = [0.0; 16];
    let mut c = 0.0;
    assert_eq!(unsafe { scintilla_concurrence(re.as_ptr(), im.as_ptr(), &mut c) }, ScintillaStatus::Ok);
    assert!((c - 1.0).abs() < 1e-12);

    let ws = [0.0, 0.5, 1.0, 1.5];
    let mut out = [0.0; 4];
    let mut crossing = 0.0;
    let s = unsafe {
        scintilla_concurrence_curve(
            1,
            ws.as_ptr(),
            ws.len(),
            ScintillaStructureKind::Quadratic,
            ScintillaArms::BothArms,
            out.as_mut_ptr(),
            &mut crossing,
        )
    };
    assert_eq!(s, ScintillaStatus::Ok);
    assert!((out[0] - 1.0).abs() < 1e-6);
    assert!(crossing > 0.5 && crossing < 1.5);
}

#[test]
fn header_is_generated() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/scintilla.h")).unwrap();
    for sym in ["scintilla_last_error", "scintilla_evolve", "SCINTILLA_STATUS_OK", "ScintillaBasis"] {
        assert!(h.contains(sym), "{sym} missing from header");
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let dir = env!("CARGO_MANIFEST_DIR");
    // target/<profile>/deps/<test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let lib = exe.parent().unwrap().parent().unwrap().join("libscintilla_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let out = std::env::temp_dir().join(format!("scintilla_smoke_{}", std::process::id()));
    let cc = std::process::Command::new(std::env::var("CC").unwrap_or_else(|_| "cc".into()))
        .args(["-Wall", "-Werror", "-o"])
        .arg(&out)
        .arg(format!("{dir}/c/smoke.c"))
        .arg(format!("-I{dir}/include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .output()
        .expect("a C compiler is on PATH");
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = std::process::Command::new(&out).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("r0 "));
}
