use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use varimatch_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(vm_last_error()) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn segment_pair() -> (*mut VmVarifold, *mut VmVarifold) {
    // atoms at the origin and at (1, 0), frames (1,0) and (1,1)
    let a = [0.0, 0.0, 1.0, 0.0];
    let b = [1.0, 0.0, 1.0, 1.0];
    let (mut pa, mut pb) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(vm_varifold_new(2, 1, a.as_ptr(), 1, &mut pa), VmStatus::Ok);
        assert_eq!(vm_varifold_new(2, 1, b.as_ptr(), 1, &mut pb), VmStatus::Ok);
    }
    (pa, pb)
}

#[test]
fn inner_product_matches_the_reference_value() {
    let (a, b) = segment_pair();
    let cfg = {
        let mut c = ptr::null_mut();
        let json = cstr(r#"{"gamma":{"kind":"linear"}}"#);
        assert_eq!(unsafe { vm_config_parse(json.as_ptr(), &mut c) }, VmStatus::Ok);
        c
    };
    let mut ip = 0.0;
    unsafe {
        assert_eq!(vm_inner_product(a, b, cfg, &mut ip), VmStatus::Ok);
        assert!((ip - (-1.0f64).exp()).abs() < 1e-15);
        let mut d2 = -1.0;
        assert_eq!(vm_distance_sq(a, a, cfg, &mut d2), VmStatus::Ok);
        assert_eq!(d2, 0.0);
        vm_config_free(cfg);
        vm_varifold_free(a);
        vm_varifold_free(b);
    }
    assert_eq!(last_error(), "");
}

#[test]
fn errors_map_to_status_codes() {
    let (a, _) = segment_pair();
    let mut out = ptr::null_mut();
    let mut v = 0.0;
    unsafe {
        assert_eq!(vm_varifold_new(2, 1, ptr::null(), 2, &mut out), VmStatus::NullPointer);
        assert!(last_error().contains("data"));
        assert_eq!(vm_varifold_mass(ptr::null(), &mut v), VmStatus::NullPointer);
        assert_eq!(vm_varifold_mass(a, ptr::null_mut()), VmStatus::NullPointer);

        let mut c = ptr::null_mut();
        let bad = cstr(r#"{"lambda":-1}"#);
        assert_eq!(vm_config_parse(bad.as_ptr(), &mut c), VmStatus::InvalidArgument);
        assert!(last_error().contains("lambda"));
        let junk = cstr("{");
        assert_eq!(vm_config_parse(junk.as_ptr(), &mut c), VmStatus::Parse);

        let x3 = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let mut b3 = ptr::null_mut();
        assert_eq!(vm_varifold_new(3, 1, x3.as_ptr(), 1, &mut b3), VmStatus::Ok);
        assert_eq!(vm_distance_sq(a, b3, ptr::null(), &mut v), VmStatus::DimensionMismatch);

        let missing = cstr("/nonexistent/v.json");
        assert_eq!(vm_varifold_read(missing.as_ptr(), &mut out), VmStatus::Io);

        let mut q = ptr::null_mut();
        let lin = cstr(r#"{"gamma":{"kind":"linear"}}"#);
        assert_eq!(vm_config_parse(lin.as_ptr(), &mut c), VmStatus::Ok);
        assert_eq!(vm_quantize(a, c, 1, 1, &mut q, ptr::null_mut()), VmStatus::InvalidArgument);
        assert!(q.is_null());

        let mut buf = [0.0; 2];
        assert_eq!(vm_varifold_data(a, buf.as_mut_ptr(), buf.len()), VmStatus::InvalidArgument);

        vm_config_free(c);
        vm_varifold_free(b3);
        vm_varifold_free(a);
        vm_varifold_free(ptr::null_mut());
        vm_config_free(ptr::null_mut());
    }
}

#[test]
fn files_meshes_and_registration() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("square.csv");
    std::fs::write(&csv, "0,0\n1,0\n1,1\n0,1\n0,0\n").unwrap();
    let (csv_c, json_c) = (cstr(csv.to_str().unwrap()), cstr(tmp.path().join("square.json").to_str().unwrap()));
    unsafe {
        let mut sq = ptr::null_mut();
        assert_eq!(vm_varifold_from_mesh(csv_c.as_ptr(), &mut sq), VmStatus::Ok);
        assert_eq!(vm_varifold_write(sq, json_c.as_ptr()), VmStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(vm_varifold_read(json_c.as_ptr(), &mut back), VmStatus::Ok);
        let (mut atoms, mut n, mut d) = (0, 0, 0);
        assert_eq!(vm_varifold_shape(back, &mut atoms, &mut n, &mut d), VmStatus::Ok);
        assert_eq!((atoms, n, d), (4, 2, 1));
        let (mut x, mut y) = (vec![0.0; 16], vec![0.0; 16]);
        assert_eq!(vm_varifold_data(sq, x.as_mut_ptr(), 16), VmStatus::Ok);
        assert_eq!(vm_varifold_data(back, y.as_mut_ptr(), 16), VmStatus::Ok);
        assert_eq!(x, y);
        let mut mass = 0.0;
        assert_eq!(vm_varifold_mass(back, &mut mass), VmStatus::Ok);
        assert!((mass - 4.0).abs() < 1e-12);

        let mut deformed = ptr::null_mut();
        let mut energy = -1.0;
        assert_eq!(vm_register(sq, back, ptr::null(), &mut deformed, &mut energy), VmStatus::Ok);
        assert!(energy <= 1e-10);
        let mut z = vec![0.0; 16];
        assert_eq!(vm_varifold_data(deformed, z.as_mut_ptr(), 16), VmStatus::Ok);
        assert_eq!(z, x);
        for h in [sq, back, deformed] {
            vm_varifold_free(h);
        }
    }
}

fn artifact_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = artifact_dir().join("libvarimatch_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-I"])
        .arg(root.join("include"))
        .arg(root.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
