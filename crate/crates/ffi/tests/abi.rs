use std::ffi::CStr;
use std::ptr;

use cfphys_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        cf_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn head_on_collision_through_the_abi() {
    unsafe {
        let mut scene = ptr::null_mut();
        assert_eq!(cf_scene_new(&mut scene), CfStatus::Ok);
        assert_eq!(cf_scene_add_body(scene, 0.3, 0.5, 0.5, 0.0, 0.05, 10.0), CfStatus::Ok);
        assert_eq!(cf_scene_add_body(scene, 0.6, 0.5, 0.0, 0.0, 0.05, 1.0), CfStatus::Ok);
        assert_eq!(cf_scene_len(scene), 2);
        let mut traj = ptr::null_mut();
        assert_eq!(cf_simulate(scene, ptr::null(), 0, 0.6, 25.0, &mut traj), CfStatus::Ok);
        assert_eq!(cf_trajectory_n_bodies(traj), 2);
        let last = cf_trajectory_n_frames(traj) - 1;
        let (mut a, mut b) = ([0.0; 4], [0.0; 4]);
        assert_eq!(cf_trajectory_state(traj, last, 0, a.as_mut_ptr()), CfStatus::Ok);
        assert_eq!(cf_trajectory_state(traj, last, 1, b.as_mut_ptr()), CfStatus::Ok);
        assert!((a[2] - 0.5 * 9.0 / 11.0).abs() < 1e-9, "{a:?}");
        assert!((b[2] - 0.5 * 20.0 / 11.0).abs() < 1e-9, "{b:?}");

        let mut d = -1.0;
        assert_eq!(cf_trajectory_distance(traj, traj, &mut d), CfStatus::Ok);
        assert_eq!(d, 0.0);
        assert_eq!(cf_trajectory_state(traj, last + 1, 0, a.as_mut_ptr()), CfStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));
        cf_trajectory_free(traj);
        cf_scene_free(scene);
    }
}

#[test]
fn invalid_inputs_report_codes() {
    unsafe {
        assert_eq!(cf_scene_new(ptr::null_mut()), CfStatus::NullPointer);
        let mut scene = ptr::null_mut();
        cf_scene_new(&mut scene);
        assert_eq!(cf_scene_add_body(scene, 0.5, 0.5, 0.0, 0.0, -1.0, 1.0), CfStatus::InvalidArgument);
        cf_scene_add_body(scene, 0.5, 0.5, 0.0, 0.0, 0.1, 1.0);
        cf_scene_add_body(scene, 0.55, 0.5, 0.0, 0.0, 0.1, 1.0);
        let mut traj = ptr::null_mut();
        assert_eq!(cf_simulate(scene, ptr::null(), 0, 1.0, 25.0, &mut traj), CfStatus::InvalidArgument);
        assert!(traj.is_null());
        assert!(!last_error().is_empty());
        cf_scene_free(scene);
        cf_scene_free(ptr::null_mut());
        let v = CStr::from_ptr(cf_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn generated_experiment_accessors() {
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(cf_experiment_generate(CfScenario::Balls, 3, 47.5, 11, true, true, &mut e), CfStatus::Ok);
        assert_eq!(cf_experiment_n_bodies(e), 3);
        let mut m = [0.0; 3];
        assert_eq!(cf_experiment_masses(e, m.as_mut_ptr(), 2), CfStatus::BufferTooSmall);
        assert_eq!(cf_experiment_masses(e, m.as_mut_ptr(), 3), CfStatus::Ok);
        assert!(m.iter().all(|&x| x == 1.0 || x == 10.0));
        let mut n = 0;
        let mut k = [usize::MAX; 3];
        assert_eq!(cf_experiment_consequential(e, k.as_mut_ptr(), 3, &mut n), CfStatus::Ok);
        assert!(n >= 1 && k[..n].iter().all(|&i| i < 3));
        let (mut ab, mut cd) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(cf_experiment_trajectory(e, false, &mut ab), CfStatus::Ok);
        assert_eq!(cf_experiment_trajectory(e, true, &mut cd), CfStatus::Ok);
        assert_eq!(cf_trajectory_n_frames(ab), cf_trajectory_n_frames(cd));
        cf_trajectory_free(ab);
        cf_trajectory_free(cd);
        cf_experiment_free(e);
    }
}

#[test]
fn metrics_through_the_abi() {
    unsafe {
        let gt = vec![0.5; 2 * 4 * 4 * 3];
        let pred: Vec<f64> = gt.iter().map(|v| v + 0.1).collect();
        let mut p = 0.0;
        assert_eq!(cf_psnr(pred.as_ptr(), gt.as_ptr(), 2, 4, 4, &mut p), CfStatus::Ok);
        assert!((p - 20.0).abs() < 1e-9);
        assert_eq!(cf_psnr(gt.as_ptr(), gt.as_ptr(), 0, 4, 4, &mut p), CfStatus::InvalidArgument);

        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let mut a = [0usize; 3];
        let mut total = 0.0;
        assert_eq!(cf_min_cost_assignment(cost.as_ptr(), 3, 3, a.as_mut_ptr(), &mut total), CfStatus::Ok);
        assert_eq!(total, 5.0);
        assert_eq!(a, [1, 0, 2]);
        let wide = [1.0, 2.0, 3.0, 4.0, 5.0, 0.5];
        let mut b = [0usize; 3];
        assert_eq!(cf_min_cost_assignment(wide.as_ptr(), 3, 2, b.as_mut_ptr(), &mut total), CfStatus::Ok);
        assert_eq!(b.iter().filter(|&&c| c == usize::MAX).count(), 1);
    }
}

#[test]
fn header_is_valid_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let header = format!("{dir}/include/cfphys.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["cf_simulate", "cf_experiment_generate", "cf_last_error", "CF_STATUS_PANIC", "typedef struct CfScene CfScene"] {
        assert!(text.contains(name), "{name}");
    }
    let status = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", &header])
        .status();
    if let Ok(s) = status {
        assert!(s.success());
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = dir.join("../../target/debug");
    if !lib_dir.join("libcfphys_ffi.a").exists() {
        eprintln!("static library not built; skipping");
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let Ok(status) = std::process::Command::new("cc")
        .arg(dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .args(["-l:libcfphys_ffi.a", "-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(status.success());
    let run = std::process::Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "{run:?}");
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
