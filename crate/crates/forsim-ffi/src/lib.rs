//! C ABI for the forward-simulation engine.
//!
//! Handles are opaque pointers created and freed by this library; every
//! fallible call returns a [`ForsimStatus`] and stores a message retrievable
//! via [`forsim_last_error`]. No panics cross the FFI boundary.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::path::Path;

use forsim::agents::{OthersParadigm, PredictorParams};
use forsim::metrics;
use forsim::optimization::{self, TrainState};
use forsim::policy::{self, LatticePolicy, ScoringParams};
use forsim::rollout::{
    branch_dispersion, forward_simulate, ParadigmConfig, RolloutBranch, SimContext, WorldState,
};
use forsim::selection::CenterParadigm;
use forsim::world::{load_scenario, Scenario, SimConfig};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForsimStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidArgument = -2,
    ParseError = -3,
    ValidationError = -4,
    RuntimeError = -5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let cstring = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(cstring));
}

/// Message of the most recent error on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn forsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(msg) => msg.as_ptr(),
        None => std::ptr::null(),
    })
}

const VERSION: &[u8] = concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes();

/// Library version string (static storage).
#[no_mangle]
pub extern "C" fn forsim_version() -> *const c_char {
    VERSION.as_ptr() as *const c_char
}

/// Opaque scenario handle.
pub struct ForsimScenario {
    inner: Scenario,
}

/// Opaque configuration handle.
pub struct ForsimConfig {
    inner: SimConfig,
}

/// Opaque rollout result: the branch set of one forward simulation.
pub struct ForsimRollout {
    scenario: Scenario,
    cfg: SimConfig,
    branches: Vec<RolloutBranch>,
}

/// Metric suite row with C layout; infinity marks "no conflict".
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ForsimMetricReport {
    pub s_sw: f64,
    pub s_wd: f64,
    pub a_sw: f64,
    pub cpk: f64,
    pub rp: f64,
    pub ttc_2d: f64,
    pub act: f64,
    pub orr: f64,
    pub uc: f64,
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, ForsimStatus> {
    if ptr.is_null() {
        set_error("null string argument".into());
        return Err(ForsimStatus::NullPointer);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8".into());
        ForsimStatus::InvalidArgument
    })
}

/// Load and validate a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn forsim_scenario_load(
    path: *const c_char,
    out: *mut *mut ForsimScenario,
) -> ForsimStatus {
    if out.is_null() {
        set_error("null output pointer".into());
        return ForsimStatus::NullPointer;
    }
    let path = match unsafe { cstr_arg(path) } {
        Ok(p) => p,
        Err(status) => return status,
    };
    match load_scenario(Path::new(path)) {
        Ok(scenario) => {
            unsafe { *out = Box::into_raw(Box::new(ForsimScenario { inner: scenario })) };
            ForsimStatus::Ok
        }
        Err(e) => {
            let status = match &e {
                forsim::world::WorldError::Parse(_) => ForsimStatus::ParseError,
                forsim::world::WorldError::Validation(_) => ForsimStatus::ValidationError,
                forsim::world::WorldError::Io(_) => ForsimStatus::RuntimeError,
            };
            set_error(e.to_string());
            status
        }
    }
}

/// # Safety
/// `scenario` must come from [`forsim_scenario_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn forsim_scenario_free(scenario: *mut ForsimScenario) {
    if !scenario.is_null() {
        drop(unsafe { Box::from_raw(scenario) });
    }
}

/// Default simulation configuration.
#[no_mangle]
pub extern "C" fn forsim_config_default() -> *mut ForsimConfig {
    Box::into_raw(Box::new(ForsimConfig {
        inner: SimConfig::default(),
    }))
}

/// Configuration from a JSON document (same schema as `--config`).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn forsim_config_from_json(
    json: *const c_char,
    out: *mut *mut ForsimConfig,
) -> ForsimStatus {
    if out.is_null() {
        set_error("null output pointer".into());
        return ForsimStatus::NullPointer;
    }
    let text = match unsafe { cstr_arg(json) } {
        Ok(t) => t,
        Err(status) => return status,
    };
    let cfg: SimConfig = match serde_json::from_str(text) {
        Ok(cfg) => cfg,
        Err(e) => {
            set_error(format!("config parse error: {e}"));
            return ForsimStatus::ParseError;
        }
    };
    if let Err(e) = cfg.validate() {
        set_error(e.to_string());
        return ForsimStatus::ValidationError;
    }
    unsafe { *out = Box::into_raw(Box::new(ForsimConfig { inner: cfg })) };
    ForsimStatus::Ok
}

/// # Safety
/// `config` must come from a `forsim_config_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn forsim_config_free(config: *mut ForsimConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

fn center_paradigm_from(tag: c_int) -> Option<CenterParadigm> {
    match tag {
        0 => Some(CenterParadigm::MaxLikelihood),
        1 => Some(CenterParadigm::ModeConsistent),
        2 => Some(CenterParadigm::TrajectoryAligned),
        _ => None,
    }
}

fn others_paradigm_from(tag: c_int) -> Option<OthersParadigm> {
    match tag {
        0 => Some(OthersParadigm::ConstantAction),
        1 => Some(OthersParadigm::SinglePrediction),
        2 => Some(OthersParadigm::StepwisePrediction),
        _ => None,
    }
}

/// Forward-simulate all candidate branches from the scenario's initial
/// state. `center_paradigm`: 0 max-likelihood, 1 mode-consistent,
/// 2 trajectory-aligned; `others_paradigm`: 0 constant-action,
/// 1 single-prediction, 2 stepwise-prediction.
///
/// # Safety
/// `scenario` and `config` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn forsim_rollout_run(
    scenario: *const ForsimScenario,
    config: *const ForsimConfig,
    center_paradigm: c_int,
    others_paradigm: c_int,
    seed: u64,
    out: *mut *mut ForsimRollout,
) -> ForsimStatus {
    if scenario.is_null() || config.is_null() || out.is_null() {
        set_error("null handle argument".into());
        return ForsimStatus::NullPointer;
    }
    let scenario = unsafe { &(*scenario).inner };
    let cfg_in = unsafe { &(*config).inner };
    let (Some(center), Some(others)) = (
        center_paradigm_from(center_paradigm),
        others_paradigm_from(others_paradigm),
    ) else {
        set_error("paradigm tag out of range".into());
        return ForsimStatus::InvalidArgument;
    };
    let mut cfg = cfg_in.clone();
    cfg.horizon = cfg.horizon.min(scenario.horizon);
    if cfg.t_f > cfg.horizon {
        cfg.t_f = (cfg.horizon / 2).max(1);
    }
    let lattice = LatticePolicy::default();
    let scoring = ScoringParams::default_cruise();
    let predictor = PredictorParams::for_config(&cfg);
    let world = WorldState::from_scenario(scenario, &cfg);
    let cands = match policy::generate_candidates(&world, &scenario.map, &lattice, &scoring, &cfg, None)
    {
        Ok(c) => c,
        Err(e) => {
            set_error(e.to_string());
            return ForsimStatus::RuntimeError;
        }
    };
    let ctx = SimContext {
        map: &scenario.map,
        lattice: &lattice,
        scoring: &scoring,
        predictor: &predictor,
        cfg: &cfg,
    };
    let mut branches = forward_simulate(&ctx, &world, &cands, ParadigmConfig { center, others }, seed);
    let _ = optimization::evaluate_branches(&mut branches, &scenario.map, &cfg);
    unsafe {
        *out = Box::into_raw(Box::new(ForsimRollout {
            scenario: scenario.clone(),
            cfg,
            branches,
        }));
    }
    ForsimStatus::Ok
}

/// # Safety
/// `rollout` must come from [`forsim_rollout_run`].
#[no_mangle]
pub unsafe extern "C" fn forsim_rollout_free(rollout: *mut ForsimRollout) {
    if !rollout.is_null() {
        drop(unsafe { Box::from_raw(rollout) });
    }
}

/// Number of branches (the candidate group size G).
///
/// # Safety
/// `rollout` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn forsim_rollout_branch_count(rollout: *const ForsimRollout) -> usize {
    if rollout.is_null() {
        return 0;
    }
    unsafe { &*rollout }.branches.len()
}

/// Number of recorded states in one branch (horizon + 2 when it completed).
///
/// # Safety
/// `rollout` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn forsim_rollout_branch_len(
    rollout: *const ForsimRollout,
    branch: usize,
) -> usize {
    if rollout.is_null() {
        return 0;
    }
    let r = unsafe { &*rollout };
    r.branches.get(branch).map_or(0, |b| b.states.len())
}

/// Copy the center-agent states of one branch into `buffer` as rows of
/// `[x, y, cos_h, sin_h, vx, vy]`. `capacity` counts f64 slots.
///
/// # Safety
/// `buffer` must point to at least `capacity` writable f64 values.
#[no_mangle]
pub unsafe extern "C" fn forsim_rollout_center_states(
    rollout: *const ForsimRollout,
    branch: usize,
    buffer: *mut f64,
    capacity: usize,
) -> ForsimStatus {
    if rollout.is_null() || buffer.is_null() {
        set_error("null handle or buffer".into());
        return ForsimStatus::NullPointer;
    }
    let r = unsafe { &*rollout };
    let Some(b) = r.branches.get(branch) else {
        set_error(format!("branch index {branch} out of range"));
        return ForsimStatus::InvalidArgument;
    };
    let needed = b.states.len() * 6;
    if capacity < needed {
        set_error(format!("buffer too small: need {needed} f64 slots, got {capacity}"));
        return ForsimStatus::InvalidArgument;
    }
    for (i, w) in b.states.iter().enumerate() {
        let row = w.center.state.to_array();
        unsafe {
            std::ptr::copy_nonoverlapping(row.as_ptr(), buffer.add(i * 6), 6);
        }
    }
    ForsimStatus::Ok
}

/// Discounted return of one branch under the rollout's reward config.
///
/// # Safety
/// `rollout` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn forsim_rollout_branch_return(
    rollout: *const ForsimRollout,
    branch: usize,
    out: *mut f64,
) -> ForsimStatus {
    if rollout.is_null() || out.is_null() {
        set_error("null handle or output".into());
        return ForsimStatus::NullPointer;
    }
    let r = unsafe { &*rollout };
    let Some(b) = r.branches.get(branch) else {
        set_error(format!("branch index {branch} out of range"));
        return ForsimStatus::InvalidArgument;
    };
    unsafe { *out = optimization::branch_return(b, &r.scenario.map, &r.cfg) };
    ForsimStatus::Ok
}

/// Mean pairwise distance between branch terminal positions.
///
/// # Safety
/// `rollout` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn forsim_rollout_dispersion(
    rollout: *const ForsimRollout,
    out: *mut f64,
) -> ForsimStatus {
    if rollout.is_null() || out.is_null() {
        set_error("null handle or output".into());
        return ForsimStatus::NullPointer;
    }
    let r = unsafe { &*rollout };
    match branch_dispersion(&r.branches) {
        Ok(d) => {
            unsafe { *out = d };
            ForsimStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            ForsimStatus::InvalidArgument
        }
    }
}

/// Metric suite over one branch episode.
///
/// # Safety
/// `rollout` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn forsim_rollout_branch_metrics(
    rollout: *const ForsimRollout,
    branch: usize,
    out: *mut ForsimMetricReport,
) -> ForsimStatus {
    if rollout.is_null() || out.is_null() {
        set_error("null handle or output".into());
        return ForsimStatus::NullPointer;
    }
    let r = unsafe { &*rollout };
    let Some(b) = r.branches.get(branch) else {
        set_error(format!("branch index {branch} out of range"));
        return ForsimStatus::InvalidArgument;
    };
    match metrics::episode_metrics(&b.states, &r.scenario.map, &r.cfg) {
        Ok(m) => {
            unsafe {
                *out = ForsimMetricReport {
                    s_sw: m.s_sw,
                    s_wd: m.s_wd,
                    a_sw: m.a_sw,
                    cpk: m.cpk,
                    rp: m.rp,
                    ttc_2d: m.ttc_2d,
                    act: m.act,
                    orr: m.orr,
                    uc: m.uc,
                };
            }
            ForsimStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            ForsimStatus::RuntimeError
        }
    }
}

/// Run closed-loop training on one scenario and write a checkpoint JSON.
/// Paradigm tags follow [`forsim_rollout_run`].
///
/// # Safety
/// String arguments must be NUL-terminated; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn forsim_train_run(
    scenario: *const ForsimScenario,
    config: *const ForsimConfig,
    center_paradigm: c_int,
    others_paradigm: c_int,
    iterations: usize,
    seed: u64,
    checkpoint_out: *const c_char,
) -> ForsimStatus {
    if scenario.is_null() || config.is_null() {
        set_error("null handle argument".into());
        return ForsimStatus::NullPointer;
    }
    let path = match unsafe { cstr_arg(checkpoint_out) } {
        Ok(p) => p.to_string(),
        Err(status) => return status,
    };
    let scenario = unsafe { &(*scenario).inner };
    let cfg_in = unsafe { &(*config).inner };
    let (Some(center), Some(others)) = (
        center_paradigm_from(center_paradigm),
        others_paradigm_from(others_paradigm),
    ) else {
        set_error("paradigm tag out of range".into());
        return ForsimStatus::InvalidArgument;
    };
    let mut cfg = cfg_in.clone();
    cfg.iterations = iterations;
    cfg.horizon = cfg.horizon.min(scenario.horizon);
    if cfg.t_f > cfg.horizon {
        cfg.t_f = (cfg.horizon / 2).max(1);
    }
    let init = TrainState::fresh(&cfg);
    let (state, _log) = optimization::train(
        std::slice::from_ref(scenario),
        &cfg,
        ParadigmConfig { center, others },
        seed,
        init,
    );
    let checkpoint = serde_json::json!({
        "policy_theta": state.scoring.to_vec(),
        "predictor_w": state.predictor.weights().to_vec(),
        "iteration": state.iteration,
    });
    match std::fs::write(&path, serde_json::to_string_pretty(&checkpoint).unwrap()) {
        Ok(()) => ForsimStatus::Ok,
        Err(e) => {
            set_error(format!("failed to write checkpoint: {e}"));
            ForsimStatus::RuntimeError
        }
    }
}
