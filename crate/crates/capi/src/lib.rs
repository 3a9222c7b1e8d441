//! C ABI over the simulation core.
//!
//! Objects cross the boundary as opaque handles created and freed here;
//! functions return an [`RwreStatus`] code and write results through out
//! pointers. The generated header lives in `include/rwre.h`.
//!
//! Safety contract for every `unsafe extern "C"` function: pointer arguments
//! must be null or valid for the documented length, and handles must come
//! from this library and not be used after free.

use std::ffi::{c_char, c_double, c_int};

use rwre::env::{DirichletParams, EnvironmentSpec, ProbVector, QuenchedEnvironment, StepSupport};
use rwre::regen::{detect_regenerations, tail_index, DirectionSpec, RegenerationRecord};
use rwre::walk::{simulate, Trajectory};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RwreStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SamplingFailed = 3,
    OutOfRange = 4,
}

/// Opaque environment handle.
pub struct RwreEnv {
    inner: QuenchedEnvironment,
}

/// Opaque trajectory handle.
pub struct RwreTrajectory {
    inner: Trajectory,
}

/// Opaque regeneration record handle.
pub struct RwreRegenRecord {
    inner: RegenerationRecord,
}

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rwre_version() -> *const c_char {
    VERSION.as_ptr() as *const c_char
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// Creates a Dirichlet environment over the 2d nearest-neighbour steps.
///
/// `alphas` must hold `2 * dimension` positive weights ordered
/// (e_1..e_d, -e_1..-e_d).
///
/// # Safety
/// `alphas` must point to `2 * dimension` doubles; `out_env` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rwre_env_new_dirichlet(
    dimension: usize,
    alphas: *const c_double,
    alphas_len: usize,
    env_seed: u64,
    out_env: *mut *mut RwreEnv,
) -> RwreStatus {
    if out_env.is_null() {
        return RwreStatus::NullPointer;
    }
    let Some(alphas) = slice_arg(alphas, alphas_len) else {
        return RwreStatus::NullPointer;
    };
    let Ok(params) = DirichletParams::new(dimension, alphas.to_vec()) else {
        return RwreStatus::InvalidArgument;
    };
    let Ok(spec) = EnvironmentSpec::dirichlet(params) else {
        return RwreStatus::InvalidArgument;
    };
    *out_env = Box::into_raw(Box::new(RwreEnv {
        inner: QuenchedEnvironment::new(env_seed, spec),
    }));
    RwreStatus::Ok
}

/// Creates an environment with the same probability vector at every site,
/// over the 2d nearest-neighbour steps.
///
/// # Safety
/// `probs` must point to `probs_len` doubles; `out_env` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rwre_env_new_deterministic(
    dimension: usize,
    probs: *const c_double,
    probs_len: usize,
    env_seed: u64,
    out_env: *mut *mut RwreEnv,
) -> RwreStatus {
    if out_env.is_null() {
        return RwreStatus::NullPointer;
    }
    let Some(probs) = slice_arg(probs, probs_len) else {
        return RwreStatus::NullPointer;
    };
    if dimension == 0 || probs_len != 2 * dimension {
        return RwreStatus::InvalidArgument;
    }
    let Ok(vector) = ProbVector::new(probs.to_vec()) else {
        return RwreStatus::InvalidArgument;
    };
    let support = StepSupport::nearest_neighbour(dimension);
    let Ok(spec) = EnvironmentSpec::deterministic(vector, support) else {
        return RwreStatus::InvalidArgument;
    };
    *out_env = Box::into_raw(Box::new(RwreEnv {
        inner: QuenchedEnvironment::new(env_seed, spec),
    }));
    RwreStatus::Ok
}

/// Frees an environment handle.
///
/// # Safety
/// `env` must be a handle from this library, not yet freed; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn rwre_env_free(env: *mut RwreEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Writes the step-probability vector at a site into `out_probs`.
///
/// # Safety
/// `site` must hold the environment dimension of coordinates and `out_probs`
/// room for one probability per support step.
#[no_mangle]
pub unsafe extern "C" fn rwre_env_prob_at(
    env: *const RwreEnv,
    site: *const i64,
    site_len: usize,
    out_probs: *mut c_double,
    out_len: usize,
) -> RwreStatus {
    let Some(env) = env.as_ref() else {
        return RwreStatus::NullPointer;
    };
    let Some(site) = slice_arg(site, site_len) else {
        return RwreStatus::NullPointer;
    };
    if out_probs.is_null() {
        return RwreStatus::NullPointer;
    }
    let support = env.inner.support();
    if site_len != support.dim() || out_len < support.len() {
        return RwreStatus::InvalidArgument;
    }
    let vector = env.inner.prob_at(site);
    std::ptr::copy_nonoverlapping(vector.probs().as_ptr(), out_probs, support.len());
    RwreStatus::Ok
}

/// kappa = 2 * sum(alpha) - max_i (alpha_i + alpha_{i+d}) for 2d weights.
///
/// # Safety
/// `alphas` must point to `alphas_len` doubles; `out_kappa` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rwre_kappa(
    dimension: usize,
    alphas: *const c_double,
    alphas_len: usize,
    out_kappa: *mut c_double,
) -> RwreStatus {
    let Some(alphas) = slice_arg(alphas, alphas_len) else {
        return RwreStatus::NullPointer;
    };
    if out_kappa.is_null() {
        return RwreStatus::NullPointer;
    }
    let Ok(params) = DirichletParams::new(dimension, alphas.to_vec()) else {
        return RwreStatus::InvalidArgument;
    };
    *out_kappa = rwre::env::kappa(&params);
    RwreStatus::Ok
}

/// Whether sum_i |alpha_i - alpha_{i+d}| > 1 (writes 1 or 0).
///
/// # Safety
/// `alphas` must point to `alphas_len` doubles; `out_flag` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rwre_t_gamma_sufficient(
    dimension: usize,
    alphas: *const c_double,
    alphas_len: usize,
    out_flag: *mut c_int,
) -> RwreStatus {
    let Some(alphas) = slice_arg(alphas, alphas_len) else {
        return RwreStatus::NullPointer;
    };
    if out_flag.is_null() {
        return RwreStatus::NullPointer;
    }
    let Ok(params) = DirichletParams::new(dimension, alphas.to_vec()) else {
        return RwreStatus::InvalidArgument;
    };
    *out_flag = rwre::env::t_gamma_sufficient(&params) as c_int;
    RwreStatus::Ok
}

/// Simulates a walk of `n_steps` from `start`; the result is reproducible
/// from (environment seed, walk seed, start, n_steps).
///
/// # Safety
/// `start` must hold the environment dimension of coordinates and `out_traj`
/// must be valid.
#[no_mangle]
pub unsafe extern "C" fn rwre_simulate(
    env: *const RwreEnv,
    start: *const i64,
    start_len: usize,
    n_steps: usize,
    walk_seed: u64,
    out_traj: *mut *mut RwreTrajectory,
) -> RwreStatus {
    let Some(env) = env.as_ref() else {
        return RwreStatus::NullPointer;
    };
    let Some(start) = slice_arg(start, start_len) else {
        return RwreStatus::NullPointer;
    };
    if out_traj.is_null() {
        return RwreStatus::NullPointer;
    }
    if start_len != env.inner.support().dim() {
        return RwreStatus::InvalidArgument;
    }
    let traj = simulate(&env.inner, start, n_steps, walk_seed);
    *out_traj = Box::into_raw(Box::new(RwreTrajectory { inner: traj }));
    RwreStatus::Ok
}

/// Number of steps in a trajectory (sites minus one); 0 for null.
///
/// # Safety
/// `traj` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rwre_trajectory_len(traj: *const RwreTrajectory) -> usize {
    traj.as_ref().map(|t| t.inner.len()).unwrap_or(0)
}

/// Copies the coordinates of site `k` into `out_site`.
///
/// # Safety
/// `out_site` must have room for the trajectory dimension of coordinates.
#[no_mangle]
pub unsafe extern "C" fn rwre_trajectory_site(
    traj: *const RwreTrajectory,
    k: usize,
    out_site: *mut i64,
    out_len: usize,
) -> RwreStatus {
    let Some(traj) = traj.as_ref() else {
        return RwreStatus::NullPointer;
    };
    if out_site.is_null() {
        return RwreStatus::NullPointer;
    }
    if k >= traj.inner.n_sites() {
        return RwreStatus::OutOfRange;
    }
    if out_len < traj.inner.dim() {
        return RwreStatus::InvalidArgument;
    }
    let site = traj.inner.site(k);
    std::ptr::copy_nonoverlapping(site.as_ptr(), out_site, site.len());
    RwreStatus::Ok
}

/// Frees a trajectory handle.
///
/// # Safety
/// `traj` must be a handle from this library, not yet freed; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn rwre_trajectory_free(traj: *mut RwreTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Detects directional regenerations along the first coordinate axis with the
/// given confirmation margin.
///
/// # Safety
/// `traj` must be a live trajectory handle; `out_record` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rwre_detect_regenerations(
    traj: *const RwreTrajectory,
    confirm_margin: i64,
    out_record: *mut *mut RwreRegenRecord,
) -> RwreStatus {
    let Some(traj) = traj.as_ref() else {
        return RwreStatus::NullPointer;
    };
    if out_record.is_null() {
        return RwreStatus::NullPointer;
    }
    if confirm_margin < 0 || traj.inner.is_empty() {
        return RwreStatus::InvalidArgument;
    }
    let dir = DirectionSpec::e1(traj.inner.dim());
    let record = detect_regenerations(&traj.inner, &dir, confirm_margin);
    *out_record = Box::into_raw(Box::new(RwreRegenRecord { inner: record }));
    RwreStatus::Ok
}

/// Number of confirmed regeneration times in a record; 0 for null.
///
/// # Safety
/// `record` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rwre_regen_len(record: *const RwreRegenRecord) -> usize {
    record.as_ref().map(|r| r.inner.times.len()).unwrap_or(0)
}

/// Whether the record ends in an unconfirmed candidate; 0 for null.
///
/// # Safety
/// `record` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn rwre_regen_censored_tail(record: *const RwreRegenRecord) -> c_int {
    record
        .as_ref()
        .map(|r| r.inner.censored_tail as c_int)
        .unwrap_or(0)
}

/// Copies the k-th confirmed regeneration (time, level) pair.
///
/// # Safety
/// `out_time` and `out_level` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rwre_regen_entry(
    record: *const RwreRegenRecord,
    k: usize,
    out_time: *mut usize,
    out_level: *mut i64,
) -> RwreStatus {
    let Some(record) = record.as_ref() else {
        return RwreStatus::NullPointer;
    };
    if out_time.is_null() || out_level.is_null() {
        return RwreStatus::NullPointer;
    }
    if k >= record.inner.times.len() {
        return RwreStatus::OutOfRange;
    }
    *out_time = record.inner.times[k];
    *out_level = record.inner.levels[k];
    RwreStatus::Ok
}

/// Frees a regeneration record handle.
///
/// # Safety
/// `record` must be a handle from this library, not yet freed; null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn rwre_regen_free(record: *mut RwreRegenRecord) {
    if !record.is_null() {
        drop(Box::from_raw(record));
    }
}

/// Number of distinct sites visited by both trajectories among their first
/// `n` positions.
///
/// # Safety
/// `a` and `b` must be live trajectory handles; `out_count` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rwre_count_intersections(
    a: *const RwreTrajectory,
    b: *const RwreTrajectory,
    n: usize,
    out_count: *mut u64,
) -> RwreStatus {
    let (Some(a), Some(b)) = (a.as_ref(), b.as_ref()) else {
        return RwreStatus::NullPointer;
    };
    if out_count.is_null() {
        return RwreStatus::NullPointer;
    }
    match rwre::intersect::count_intersections(&a.inner, &b.inner, n) {
        Ok(count) => {
            *out_count = count;
            RwreStatus::Ok
        }
        Err(_) => RwreStatus::InvalidArgument,
    }
}

/// Hill tail-index estimate from the top `k_top` order statistics of
/// positive samples, with its asymptotic standard error.
///
/// # Safety
/// `samples` must point to `samples_len` doubles; out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rwre_hill_tail_index(
    samples: *const c_double,
    samples_len: usize,
    k_top: usize,
    out_index: *mut c_double,
    out_std_error: *mut c_double,
) -> RwreStatus {
    let Some(samples) = slice_arg(samples, samples_len) else {
        return RwreStatus::NullPointer;
    };
    if out_index.is_null() || out_std_error.is_null() {
        return RwreStatus::NullPointer;
    }
    match tail_index(samples, k_top) {
        Ok(est) => {
            *out_index = est.value;
            *out_std_error = est.std_error;
            RwreStatus::Ok
        }
        Err(_) => RwreStatus::InvalidArgument,
    }
}
