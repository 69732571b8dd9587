//! C ABI over `roughflow`.
//!
//! Fields are opaque handles created by `rf_*_field_new` and released with
//! `rf_field_free`. Every fallible call returns an `RfStatus`; on a non-zero
//! status `rf_last_error` holds a message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use roughflow::config::Config;
use roughflow::fields::{assemble_chess_field, assemble_loop_field, FieldHandle};
use roughflow::params::{build_chess_schedule, build_loop_schedule, ChessParams, LoopParams};
use roughflow::stochastic::{simulate_sde, DtPolicy};
use roughflow::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParam = 2,
    Schedule = 3,
    Geometry = 4,
    Flow = 5,
    Bifurcation = 6,
    EmptyArrivals = 7,
    Sde = 8,
    Solver = 9,
    Config = 10,
    Io = 11,
    Utf8 = 12,
    Panic = 13,
}

impl From<&Error> for RfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParam { .. } => Self::InvalidParam,
            Error::Schedule(_) => Self::Schedule,
            Error::Geometry(_) => Self::Geometry,
            Error::Flow(_) => Self::Flow,
            Error::Bifurcation { .. } => Self::Bifurcation,
            Error::EmptyArrivals(_) => Self::EmptyArrivals,
            Error::Sde(_) => Self::Sde,
            Error::Solver(_) => Self::Solver,
            Error::Config(_) => Self::Config,
            Error::Io(_) | Error::Json(_) => Self::Io,
        }
    }
}

/// Loop construction parameters.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RfLoopParams {
    pub p: f64,
    pub delta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub a0: f64,
    pub n_max: usize,
}

/// Chess construction parameters.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RfChessParams {
    pub p: f64,
    pub delta: f64,
    pub gamma: f64,
    pub a0: f64,
    pub n_max: usize,
}

/// Opaque velocity field.
pub struct RfField {
    handle: FieldHandle,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(e: Error) -> RfStatus {
    let code = RfStatus::from(&e);
    set_error(e.to_string());
    code
}

fn guard(f: impl FnOnce() -> RfStatus) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(msg);
            RfStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char) -> Result<&'a str, RfStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(RfStatus::NullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|e| {
        set_error(e.to_string());
        RfStatus::Utf8
    })
}

fn null() -> RfStatus {
    set_error("null pointer argument");
    RfStatus::NullPointer
}

/// Message for the last failed call on this thread. Valid until the next call
/// that fails on the same thread; never NULL.
#[no_mangle]
pub extern "C" fn rf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn rf_loop_params_default() -> RfLoopParams {
    let d = LoopParams::default();
    RfLoopParams { p: d.p, delta: d.delta, alpha: d.alpha, epsilon: d.epsilon, a0: d.a0, n_max: d.n_max }
}

#[no_mangle]
pub extern "C" fn rf_chess_params_default() -> RfChessParams {
    let d = ChessParams::default();
    RfChessParams { p: d.p, delta: d.delta, gamma: d.gamma, a0: d.a0, n_max: d.n_max }
}

fn boxed(handle: FieldHandle, out: *mut *mut RfField) -> RfStatus {
    // SAFETY: callers checked `out` for null.
    unsafe { *out = Box::into_raw(Box::new(RfField { handle })) };
    RfStatus::Ok
}

/// Build the level-`n` loop field.
///
/// # Safety
/// `params` must point to a valid `RfLoopParams`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_loop_field_new(params: *const RfLoopParams, n: usize, out: *mut *mut RfField) -> RfStatus {
    guard(|| {
        if params.is_null() || out.is_null() {
            return null();
        }
        let p = &*params;
        let lp = LoopParams {
            p: p.p,
            delta: p.delta,
            alpha: p.alpha,
            epsilon: p.epsilon,
            a0: p.a0,
            n_max: p.n_max,
            ..LoopParams::default()
        };
        match build_loop_schedule(&lp).and_then(|s| assemble_loop_field(&s, n)) {
            Ok(f) => boxed(FieldHandle::Loop(f), out),
            Err(e) => fail(e),
        }
    })
}

/// Build the level-`n` chess field.
///
/// # Safety
/// `params` must point to a valid `RfChessParams`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_chess_field_new(params: *const RfChessParams, n: usize, out: *mut *mut RfField) -> RfStatus {
    guard(|| {
        if params.is_null() || out.is_null() {
            return null();
        }
        let p = &*params;
        let cp = ChessParams { p: p.p, delta: p.delta, gamma: p.gamma, a0: p.a0, n_max: p.n_max, ..ChessParams::default() };
        match build_chess_schedule(&cp).and_then(|s| assemble_chess_field(&s, n)) {
            Ok(f) => boxed(FieldHandle::Chess(f), out),
            Err(e) => fail(e),
        }
    })
}

/// Release a field. NULL is ignored.
///
/// # Safety
/// `field` must come from `rf_*_field_new` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rf_field_free(field: *mut RfField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Side of the periodic box and the time horizon of the field.
///
/// # Safety
/// `field` must be a live handle; `side` and `horizon` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_field_extent(field: *const RfField, side: *mut f64, horizon: *mut f64) -> RfStatus {
    if field.is_null() || side.is_null() || horizon.is_null() {
        return null();
    }
    let h = &(*field).handle;
    *side = h.side();
    *horizon = h.time_range().1;
    RfStatus::Ok
}

/// Velocity at `(t, x, y)` into `out[0..2]`.
///
/// # Safety
/// `field` must be a live handle; `out` must hold two doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_field_velocity(field: *const RfField, t: f64, x: f64, y: f64, out: *mut f64) -> RfStatus {
    guard(|| {
        if field.is_null() || out.is_null() {
            return null();
        }
        let v = (*field).handle.velocity(t, [x, y]);
        *out = v[0];
        *out.add(1) = v[1];
        RfStatus::Ok
    })
}

/// Exact flow map from `t0` to `t1` (backward when `t1 < t0`) into `out[0..2]`.
///
/// # Safety
/// `field` must be a live handle; `out` must hold two doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_field_flow_map(field: *const RfField, t0: f64, t1: f64, x: f64, y: f64, out: *mut f64) -> RfStatus {
    guard(|| {
        if field.is_null() || out.is_null() {
            return null();
        }
        match (*field).handle.flow_map(t0, t1, [x, y]) {
            Ok(p) => {
                *out = p[0];
                *out.add(1) = p[1];
                RfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Euler-Maruyama ensemble of `dX = b dt + sqrt(2 kappa) dW`.
///
/// `starts` holds `n_starts` interleaved `(x, y)` pairs; `per_start` paths
/// start from each. Wrapped terminal positions go to `out`, which must hold
/// `2 * n_starts * per_start` doubles, start-major.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn rf_simulate_sde(
    field: *const RfField,
    t0: f64,
    t1: f64,
    starts: *const f64,
    n_starts: usize,
    per_start: usize,
    kappa: f64,
    seed: u64,
    out: *mut f64,
) -> RfStatus {
    guard(|| {
        if field.is_null() || out.is_null() || (starts.is_null() && n_starts > 0) {
            return null();
        }
        let h = &(*field).handle;
        let pts: Vec<[f64; 2]> =
            (0..n_starts).map(|i| [*starts.add(2 * i), *starts.add(2 * i + 1)]).collect();
        match simulate_sde(h, t0, t1, &pts, per_start, kappa, DtPolicy::default(), seed, &[]) {
            Ok(ens) => {
                for (i, p) in ens.terminal_wrapped(h).into_iter().enumerate() {
                    *out.add(2 * i) = p[0];
                    *out.add(2 * i + 1) = p[1];
                }
                RfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Run a named scenario into `out_dir`. `config_toml` may be NULL for the
/// defaults. `passed` receives 1 when every enforced check holds.
///
/// # Safety
/// String arguments must be NUL-terminated; `passed` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_run_scenario(
    name: *const c_char,
    config_toml: *const c_char,
    out_dir: *const c_char,
    passed: *mut c_int,
) -> RfStatus {
    guard(|| {
        if passed.is_null() {
            return null();
        }
        let name = match str_arg(name) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let dir = match str_arg(out_dir) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let cfg = if config_toml.is_null() {
            Ok(Config::default())
        } else {
            match str_arg(config_toml) {
                Ok(s) => Config::from_toml(s),
                Err(s) => return s,
            }
        };
        match cfg.and_then(|c| roughflow::cli::run_scenario(name, &c, Path::new(dir))) {
            Ok(m) => {
                *passed = c_int::from(m.passed());
                RfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
