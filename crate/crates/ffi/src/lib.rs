//! C ABI over the simulator, experiment generation and a few metrics.
//!
//! Objects cross the boundary as opaque handles created by `cf_*_new` /
//! `cf_*_generate` / `cf_simulate` and released with the matching
//! `cf_*_free`. Every fallible call returns a [`CfStatus`]; the message of
//! the last failure on the calling thread is available from
//! [`cf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use cfphys::bench::{generate_dataset, traj_distance, Experiment, Filters, ScenarioConfig};
use cfphys::eval::{min_cost_assignment, psnr};
use cfphys::render::Frame;
use cfphys::sim::{self, Body, Scene, Trajectory, Vec2};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SimulationError = 3,
    GenerationFailed = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CfScenario {
    Balls = 0,
    Collision = 1,
}

/// Bodies in the unit box; masses are per-body defaults for simulation.
pub struct CfScene {
    bodies: Vec<Body>,
}

pub struct CfTrajectory {
    inner: Trajectory,
}

pub struct CfExperiment {
    inner: Experiment,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn fail(status: CfStatus, msg: impl Into<String>) -> CfStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> CfStatus) -> CfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(CfStatus::Panic, "internal panic"),
    }
}

/// Copies the last error message of this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be null or valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn cf_scene_new(out: *mut *mut CfScene) -> CfStatus {
    if out.is_null() {
        return fail(CfStatus::NullPointer, "out is null");
    }
    *out = Box::into_raw(Box::new(CfScene { bodies: Vec::new() }));
    CfStatus::Ok
}

/// Adds a ball. The scene is validated (inside the box, no overlaps) when
/// it is simulated.
///
/// # Safety
/// `scene` must be null or a live handle from [`cf_scene_new`].
#[no_mangle]
pub unsafe extern "C" fn cf_scene_add_body(
    scene: *mut CfScene,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    radius: f64,
    mass: f64,
) -> CfStatus {
    let Some(scene) = scene.as_mut() else {
        return fail(CfStatus::NullPointer, "scene is null");
    };
    if !(radius > 0.0 && mass > 0.0) || ![x, y, vx, vy].iter().all(|v| v.is_finite()) {
        return fail(CfStatus::InvalidArgument, "radius and mass must be positive, state finite");
    }
    let id = (scene.bodies.len() % 6) as u8;
    scene.bodies.push(Body::new(Vec2::new(x, y), Vec2::new(vx, vy), radius, mass, id));
    CfStatus::Ok
}

/// # Safety
/// `scene` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_scene_len(scene: *const CfScene) -> usize {
    scene.as_ref().map_or(0, |s| s.bodies.len())
}

/// # Safety
/// `scene` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cf_scene_free(scene: *mut CfScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Simulates `duration` seconds recorded at `fps`. `masses` may be null to
/// use the masses given to [`cf_scene_add_body`]; otherwise it holds one
/// value per body.
///
/// # Safety
/// `scene` must be a live handle, `masses` null or `n_masses` readable
/// doubles, `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn cf_simulate(
    scene: *const CfScene,
    masses: *const f64,
    n_masses: usize,
    duration: f64,
    fps: f64,
    out: *mut *mut CfTrajectory,
) -> CfStatus {
    guard(|| {
        let (Some(scene), false) = (scene.as_ref(), out.is_null()) else {
            return fail(CfStatus::NullPointer, "scene or out is null");
        };
        let masses: Vec<f64> = if masses.is_null() {
            scene.bodies.iter().map(|b| b.mass).collect()
        } else {
            std::slice::from_raw_parts(masses, n_masses).to_vec()
        };
        let s = match Scene::new(scene.bodies.clone()) {
            Ok(s) => s,
            Err(e) => return fail(CfStatus::InvalidArgument, e.to_string()),
        };
        match sim::simulate(&s, &masses, duration, fps) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(CfTrajectory { inner: t }));
                CfStatus::Ok
            }
            Err(e) => fail(CfStatus::SimulationError, e.to_string()),
        }
    })
}

/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_trajectory_n_frames(t: *const CfTrajectory) -> usize {
    t.as_ref().map_or(0, |t| t.inner.n_frames())
}

/// # Safety
/// `t` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_trajectory_n_bodies(t: *const CfTrajectory) -> usize {
    t.as_ref().map_or(0, |t| t.inner.n_bodies())
}

/// Writes `[x, y, vx, vy]` of one body at one frame.
///
/// # Safety
/// `t` must be a live handle and `out` point to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_trajectory_state(t: *const CfTrajectory, frame: usize, body: usize, out: *mut f64) -> CfStatus {
    let (Some(t), false) = (t.as_ref(), out.is_null()) else {
        return fail(CfStatus::NullPointer, "trajectory or out is null");
    };
    let Some(s) = t.inner.states.get(frame).and_then(|f| f.get(body)) else {
        return fail(CfStatus::InvalidArgument, format!("frame {frame} body {body} out of range"));
    };
    let v = [s.position.x, s.position.y, s.velocity.x, s.velocity.y];
    std::ptr::copy_nonoverlapping(v.as_ptr(), out, 4);
    CfStatus::Ok
}

/// Sum over frames and bodies of the position gap.
///
/// # Safety
/// `a` and `b` must be live handles, `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn cf_trajectory_distance(a: *const CfTrajectory, b: *const CfTrajectory, out: *mut f64) -> CfStatus {
    let (Some(a), Some(b), false) = (a.as_ref(), b.as_ref(), out.is_null()) else {
        return fail(CfStatus::NullPointer, "null argument");
    };
    match traj_distance(&a.inner, &b.inner) {
        Ok(d) => {
            *out = d;
            CfStatus::Ok
        }
        Err(e) => fail(CfStatus::InvalidArgument, e.to_string()),
    }
}

/// # Safety
/// `t` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cf_trajectory_free(t: *mut CfTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Generates one accepted experiment with the default scenario settings.
/// `n_objects` is ignored for the collision scenario.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn cf_experiment_generate(
    scenario: CfScenario,
    n_objects: usize,
    eps: f64,
    seed: u64,
    identifiability: bool,
    counterfactuality: bool,
    out: *mut *mut CfExperiment,
) -> CfStatus {
    guard(|| {
        if out.is_null() {
            return fail(CfStatus::NullPointer, "out is null");
        }
        let cfg = match scenario {
            CfScenario::Balls => ScenarioConfig::balls(n_objects),
            CfScenario::Collision => ScenarioConfig::collision(),
        };
        let filters = Filters {
            identifiability,
            counterfactuality,
        };
        match generate_dataset(&cfg, eps, filters, 1, seed, 100_000) {
            Ok((mut v, _)) => {
                *out = Box::into_raw(Box::new(CfExperiment { inner: v.remove(0) }));
                CfStatus::Ok
            }
            Err(e) => fail(CfStatus::GenerationFailed, e.to_string()),
        }
    })
}

/// # Safety
/// `e` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cf_experiment_n_bodies(e: *const CfExperiment) -> usize {
    e.as_ref().map_or(0, |e| e.inner.n_bodies())
}

/// Copies the hidden masses (one per body of the observed scene).
///
/// # Safety
/// `e` must be a live handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cf_experiment_masses(e: *const CfExperiment, buf: *mut f64, len: usize) -> CfStatus {
    let (Some(e), false) = (e.as_ref(), buf.is_null()) else {
        return fail(CfStatus::NullPointer, "experiment or buf is null");
    };
    let m = &e.inner.confounders.masses;
    if len < m.len() {
        return fail(CfStatus::BufferTooSmall, format!("need {} doubles", m.len()));
    }
    std::ptr::copy_nonoverlapping(m.as_ptr(), buf, m.len());
    CfStatus::Ok
}

/// Copies the bodies whose mass flip moves the counterfactual outcome by
/// at least the threshold; `n_out` receives their count.
///
/// # Safety
/// `e` must be a live handle, `buf` null or `len` writable values, `n_out`
/// a writable value.
#[no_mangle]
pub unsafe extern "C" fn cf_experiment_consequential(
    e: *const CfExperiment,
    buf: *mut usize,
    len: usize,
    n_out: *mut usize,
) -> CfStatus {
    let (Some(e), false) = (e.as_ref(), n_out.is_null()) else {
        return fail(CfStatus::NullPointer, "experiment or n_out is null");
    };
    let k = &e.inner.consequential_k;
    *n_out = k.len();
    if k.is_empty() {
        return CfStatus::Ok;
    }
    if buf.is_null() || len < k.len() {
        return fail(CfStatus::BufferTooSmall, format!("need {} values", k.len()));
    }
    std::ptr::copy_nonoverlapping(k.as_ptr(), buf, k.len());
    CfStatus::Ok
}

/// Copy of the observed (`counterfactual == false`) or counterfactual
/// rollout. Free it with [`cf_trajectory_free`].
///
/// # Safety
/// `e` must be a live handle and `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn cf_experiment_trajectory(
    e: *const CfExperiment,
    counterfactual: bool,
    out: *mut *mut CfTrajectory,
) -> CfStatus {
    let (Some(e), false) = (e.as_ref(), out.is_null()) else {
        return fail(CfStatus::NullPointer, "experiment or out is null");
    };
    let t = if counterfactual { &e.inner.traj_cd } else { &e.inner.traj_ab };
    *out = Box::into_raw(Box::new(CfTrajectory { inner: t.clone() }));
    CfStatus::Ok
}

/// # Safety
/// `e` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn cf_experiment_free(e: *mut CfExperiment) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Time-averaged PSNR (dB, capped) of RGB frame sequences stored as
/// `n_frames × height × width × 3` doubles in `[0, 1]`.
///
/// # Safety
/// `pred` and `gt` must each point to `n_frames·height·width·3` doubles
/// and `out` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cf_psnr(
    pred: *const f64,
    gt: *const f64,
    n_frames: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> CfStatus {
    if pred.is_null() || gt.is_null() || out.is_null() {
        return fail(CfStatus::NullPointer, "null argument");
    }
    let per = height * width * 3;
    if per == 0 || n_frames == 0 {
        return fail(CfStatus::InvalidArgument, "empty frames");
    }
    let frames = |p: *const f64| -> Vec<Frame> {
        std::slice::from_raw_parts(p, n_frames * per)
            .chunks(per)
            .map(|c| Frame {
                height,
                width,
                data: c.to_vec(),
            })
            .collect()
    };
    match psnr(&frames(pred), &frames(gt)) {
        Ok(v) => {
            *out = v;
            CfStatus::Ok
        }
        Err(e) => fail(CfStatus::InvalidArgument, e.to_string()),
    }
}

/// Minimum-cost assignment on a row-major `rows × cols` cost matrix.
/// `assignment[i]` receives the column of row `i`, or `SIZE_MAX` when the
/// row is left unassigned (more rows than columns).
///
/// # Safety
/// `cost` must point to `rows·cols` doubles, `assignment` to `rows`
/// writable values and `total` to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cf_min_cost_assignment(
    cost: *const f64,
    rows: usize,
    cols: usize,
    assignment: *mut usize,
    total: *mut f64,
) -> CfStatus {
    if cost.is_null() || assignment.is_null() || total.is_null() {
        return fail(CfStatus::NullPointer, "null argument");
    }
    if rows == 0 || cols == 0 {
        return fail(CfStatus::InvalidArgument, "empty cost matrix");
    }
    let flat = std::slice::from_raw_parts(cost, rows * cols);
    if flat.iter().any(|c| !c.is_finite()) {
        return fail(CfStatus::InvalidArgument, "costs must be finite");
    }
    let m: Vec<Vec<f64>> = flat.chunks(cols).map(<[f64]>::to_vec).collect();
    let a = min_cost_assignment(&m);
    let mut sum = 0.0;
    for (i, col) in a.iter().enumerate() {
        *assignment.add(i) = col.unwrap_or(usize::MAX);
        if let Some(j) = col {
            sum += m[i][*j];
        }
    }
    *total = sum;
    CfStatus::Ok
}
