use std::ffi::{c_char, CString};
use std::ptr;

use monoglue_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { mg_last_error(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

#[test]
fn bps_eval_matches_the_higgs_profile() {
    let x = [0.3, -0.4, 1.2];
    let mut a = [0.0; 9];
    let mut phi = [0.0; 3];
    let st = unsafe { mg_bps_eval(2.0, x.as_ptr(), a.as_mut_ptr(), phi.as_mut_ptr()) };
    assert_eq!(st, MgStatus::MgOk);
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    let lr = 2.0 * r;
    let h = 1.0 / lr.tanh() - 1.0 / lr;
    let norm = (phi[0] * phi[0] + phi[1] * phi[1] + phi[2] * phi[2]).sqrt();
    assert!((norm - 2.0 * h).abs() < 1e-12);
    assert!(a.iter().any(|v| *v != 0.0));
}

#[test]
fn bps_eval_rejects_bad_input() {
    let x = [1.0, 0.0, 0.0];
    let mut a = [0.0; 9];
    let mut phi = [0.0; 3];
    let st = unsafe { mg_bps_eval(-1.0, x.as_ptr(), a.as_mut_ptr(), phi.as_mut_ptr()) };
    assert_eq!(st, MgStatus::MgInvalid);
    assert!(last_error().contains("positive"));
    let st = unsafe { mg_bps_eval(1.0, ptr::null(), a.as_mut_ptr(), phi.as_mut_ptr()) };
    assert_eq!(st, MgStatus::MgNullPointer);
}

#[test]
fn dirac_solve_reports_unit_fluxes() {
    let positions = [2.0, 4.0, 4.0, 6.0, 4.0, 4.0];
    let charges = [1, -1];
    let mut h: *mut MgDirac = ptr::null_mut();
    let st = unsafe { mg_dirac_solve(8.0, 32, 2, positions.as_ptr(), charges.as_ptr(), 0.0, &mut h) };
    assert_eq!(st, MgStatus::MgOk, "{}", last_error());
    assert!(!h.is_null());

    let len = unsafe { mg_dirac_len(h) };
    assert_eq!(len, 32 * 32 * 32);
    let mut phi = vec![0.0; len];
    assert_eq!(unsafe { mg_dirac_higgs(h, phi.as_mut_ptr(), len) }, MgStatus::MgOk);
    assert!(phi.iter().all(|v| v.is_finite()));
    assert_eq!(unsafe { mg_dirac_higgs(h, phi.as_mut_ptr(), len - 1) }, MgStatus::MgInvalid);

    for (site, want) in [(0usize, 1.0), (1, -1.0)] {
        let mut flux = 0.0;
        assert_eq!(unsafe { mg_dirac_site_flux(h, site, 1.0, &mut flux) }, MgStatus::MgOk);
        assert!((flux - want).abs() < 0.02, "site {site}: {flux}");
    }
    let mut flux = 0.0;
    assert_eq!(unsafe { mg_dirac_site_flux(h, 5, 1.0, &mut flux) }, MgStatus::MgInvalid);
    unsafe { mg_dirac_free(h) };
}

#[test]
fn dirac_solve_rejects_unbalanced_charges() {
    let positions = [2.0, 4.0, 4.0];
    let charges = [1];
    let mut h: *mut MgDirac = ptr::null_mut();
    let st = unsafe { mg_dirac_solve(8.0, 16, 1, positions.as_ptr(), charges.as_ptr(), 0.0, &mut h) };
    assert_eq!(st, MgStatus::MgInvalid);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_handles_are_tolerated() {
    assert_eq!(unsafe { mg_dirac_len(ptr::null()) }, 0);
    unsafe { mg_dirac_free(ptr::null_mut()) };
    let mut flux = 0.0;
    assert_eq!(unsafe { mg_dirac_site_flux(ptr::null(), 0, 1.0, &mut flux) }, MgStatus::MgNullPointer);
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new("[bps]\nlambda = 1.0\nradius = 2.0\nspacings = [0.2, 0.1]\n").unwrap();
    let mode = CString::new("bps-residual").unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let st = unsafe { mg_run(cfg.as_ptr(), mode.as_ptr(), out.as_ptr()) };
    assert_eq!(st, MgStatus::MgOk, "{}", last_error());
    assert!(dir.path().join("manifest.json").exists());

    let bad = CString::new("no-such-mode").unwrap();
    assert_eq!(unsafe { mg_run(cfg.as_ptr(), bad.as_ptr(), out.as_ptr()) }, MgStatus::MgInvalid);
    let typo = CString::new("[bps]\nlamda = 1.0\n").unwrap();
    assert_eq!(unsafe { mg_run(typo.as_ptr(), mode.as_ptr(), out.as_ptr()) }, MgStatus::MgInvalid);
    assert_eq!(unsafe { mg_run(ptr::null(), mode.as_ptr(), out.as_ptr()) }, MgStatus::MgNullPointer);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/monoglue.h")).unwrap();
    for name in ["mg_last_error", "mg_bps_eval", "mg_dirac_solve", "mg_dirac_site_flux", "mg_dirac_free", "mg_run", "MG_OK", "MgDirac"] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
