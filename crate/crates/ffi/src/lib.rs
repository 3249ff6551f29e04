//! C interface to the dp-admm simulator and calculators.
//!
//! Every function returns a [`DpStatus`]; values come back through out
//! pointers. On failure the message is kept per thread and can be read with
//! [`dp_last_error`]. Handles are opaque and must be released with their
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dp_admm::analysis::bounds::{bound_dvp, bound_nonprivate, bound_pvp_full, bound_pvp_intermediate, BoundInputs};
use dp_admm::dvp::AlphaSchedule;
use dp_admm::experiments::{run_mechanism, ExperimentConfig};
use dp_admm::noise::{sample_noise, NoiseSpec, StreamKey, StreamPurpose};
use dp_admm::trace::{Mechanism, RunTrace};
use dp_admm::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Solver = 6,
    Regime = 7,
    OutOfRange = 8,
    BufferTooSmall = 9,
    Panic = 10,
    Other = 11,
}

/// Mechanism selector for [`dp_run`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpMechanism {
    NonPrivate = 0,
    Dual = 1,
    Primal = 2,
}

impl From<DpMechanism> for Mechanism {
    fn from(m: DpMechanism) -> Self {
        match m {
            DpMechanism::NonPrivate => Mechanism::None,
            DpMechanism::Dual => Mechanism::Dvp,
            DpMechanism::Primal => Mechanism::Pvp,
        }
    }
}

/// Inputs of the sample-size calculators. `has_c_b = 0` uses `c_r` for `c_b`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DpBoundInputs {
    pub norm_f0: f64,
    pub alpha_acc: f64,
    pub delta: f64,
    pub c_r: f64,
    pub rho: f64,
    pub eta: f64,
    pub n_p: usize,
    pub d: usize,
    pub c1: f64,
    pub beta: f64,
    pub has_c_b: u8,
    pub c_b: f64,
}

impl From<&DpBoundInputs> for BoundInputs {
    fn from(b: &DpBoundInputs) -> Self {
        BoundInputs {
            norm_f0: b.norm_f0,
            alpha_acc: b.alpha_acc,
            delta: b.delta,
            c_r: b.c_r,
            rho: b.rho,
            eta: b.eta,
            n_p: b.n_p,
            d: b.d,
            c1: b.c1,
            beta: b.beta,
            c_b: (b.has_c_b != 0).then_some(b.c_b),
        }
    }
}

/// Parsed experiment configuration.
pub struct DpConfig(ExperimentConfig);

/// Recorded run of one mechanism.
pub struct DpTrace(RunTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DpStatus {
    match e {
        Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Label(_) => DpStatus::InvalidArgument,
        Error::Io { .. } => DpStatus::Io,
        Error::Parse { .. } | Error::Csv(_) => DpStatus::Parse,
        Error::Config(_) => DpStatus::Config,
        Error::SolverNonConvergence { .. } | Error::NotConverged { .. } | Error::Fit(_) => DpStatus::Solver,
        Error::NodeFailure { source, .. } => status_of(source),
        Error::Regime(_) => DpStatus::Regime,
        Error::IndexOutOfRange { .. } => DpStatus::OutOfRange,
        _ => DpStatus::Other,
    }
}

enum Fail {
    Status(DpStatus, String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(DpStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> DpStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => DpStatus::Ok,
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            DpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Status(DpStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a TOML configuration. Relative paths inside resolve against the
/// working directory.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_config_parse(text: *const c_char, out: *mut *mut DpConfig) -> DpStatus {
    guard(|| {
        let cfg = ExperimentConfig::parse(str_arg(text, "text")?)?;
        write_out(out, Box::into_raw(Box::new(DpConfig(cfg))))
    })
}

/// Loads a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_config_load(path: *const c_char, out: *mut *mut DpConfig) -> DpStatus {
    guard(|| {
        let cfg = ExperimentConfig::load(str_arg(path, "path")?)?;
        write_out(out, Box::into_raw(Box::new(DpConfig(cfg))))
    })
}

/// # Safety
/// `cfg` must come from `dp_config_parse`/`dp_config_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn dp_config_free(cfg: *mut DpConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs `mechanism` at constant privacy level `alpha` (ignored for the
/// non-private mechanism) with the given seed.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_run(cfg: *const DpConfig, mechanism: DpMechanism, alpha: f64, seed: u64, out: *mut *mut DpTrace) -> DpStatus {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| null("cfg"))?.0;
        let prep = cfg.prepare()?;
        let trace = run_mechanism(mechanism.into(), &prep, &AlphaSchedule::Constant(alpha), cfg.zeta_rule, cfg.t_stop, seed)?;
        write_out(out, Box::into_raw(Box::new(DpTrace(trace))))
    })
}

/// # Safety
/// `trace` must come from `dp_run` or be null.
#[no_mangle]
pub unsafe extern "C" fn dp_trace_free(trace: *mut DpTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

unsafe fn trace_ref<'a>(trace: *const DpTrace) -> Result<&'a RunTrace, Fail> {
    Ok(&trace.as_ref().ok_or_else(|| null("trace"))?.0)
}

/// Number of completed rounds, node count and dimension.
///
/// # Safety
/// `trace` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_trace_shape(trace: *const DpTrace, rounds: *mut usize, nodes: *mut usize, dim: *mut usize) -> DpStatus {
    guard(|| {
        let t = trace_ref(trace)?;
        write_out(rounds, t.len())?;
        write_out(nodes, t.node_count())?;
        write_out(dim, t.dim())
    })
}

/// Consensus objective, max consensus residual and node-mean empirical loss
/// at round `t` (0 is the initial state).
///
/// # Safety
/// `trace` must be a live handle; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_trace_round(
    trace: *const DpTrace,
    t: usize,
    objective: *mut f64,
    residual: *mut f64,
    mean_loss: *mut f64,
) -> DpStatus {
    guard(|| {
        let r = trace_ref(trace)?.at(t)?;
        write_out(objective, r.objective)?;
        write_out(residual, r.consensus_residual)?;
        write_out(mean_loss, r.mean_empirical_loss())
    })
}

/// Copies node `node`'s classifier at round `t` into `buf` of length `len`.
///
/// # Safety
/// `trace` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_trace_classifier(trace: *const DpTrace, t: usize, node: usize, buf: *mut f64, len: usize) -> DpStatus {
    guard(|| {
        let r = trace_ref(trace)?.at(t)?;
        let n = r.nodes.get(node).ok_or(Error::IndexOutOfRange { index: node, len: r.nodes.len() })?;
        copy_out(n.f.as_slice(), buf, len)
    })
}

/// Writes the trace as CSV.
///
/// # Safety
/// `trace` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dp_trace_write_csv(trace: *const DpTrace, path: *const c_char) -> DpStatus {
    guard(|| {
        let t = trace_ref(trace)?;
        let path = str_arg(path, "path")?;
        let file = std::fs::File::create(path).map_err(|e| Fail::Status(DpStatus::Io, format!("{path}: {e}")))?;
        t.write_csv(std::io::BufWriter::new(file))?;
        Ok(())
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Fail> {
    if buf.is_null() {
        return Err(null("buf"));
    }
    if len < src.len() {
        return Err(Fail::Status(DpStatus::BufferTooSmall, format!("buffer holds {len}, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Draws one noise vector with density proportional to `exp(−ζ‖ε‖)` from
/// the mechanism stream of (`seed`, `node`, `iteration`).
///
/// # Safety
/// `buf` must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_sample_noise(dim: usize, zeta: f64, seed: u64, node: u64, iteration: u64, buf: *mut f64) -> DpStatus {
    guard(|| {
        let spec = NoiseSpec { dim, zeta, stream: StreamKey::new(seed, StreamPurpose::Mechanism, node, iteration) };
        copy_out(sample_noise(&spec)?.as_slice(), buf, dim)
    })
}

unsafe fn bound_call(inputs: *const DpBoundInputs, out: *mut f64, f: impl FnOnce(&BoundInputs) -> dp_admm::Result<f64>) -> DpStatus {
    guard(|| {
        let x = BoundInputs::from(inputs.as_ref().ok_or_else(|| null("inputs"))?);
        write_out(out, f(&x)?)
    })
}

/// # Safety
/// `inputs` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_bound_nonprivate(inputs: *const DpBoundInputs, out: *mut f64) -> DpStatus {
    bound_call(inputs, out, bound_nonprivate)
}

/// # Safety
/// `inputs` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_bound_dvp(inputs: *const DpBoundInputs, alpha_min: f64, out: *mut f64) -> DpStatus {
    bound_call(inputs, out, |x| bound_dvp(x, alpha_min))
}

/// # Safety
/// `inputs` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_bound_pvp_intermediate(inputs: *const DpBoundInputs, alpha_min: f64, out: *mut f64) -> DpStatus {
    bound_call(inputs, out, |x| bound_pvp_intermediate(x, alpha_min))
}

/// # Safety
/// `inputs` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_bound_pvp_full(inputs: *const DpBoundInputs, alpha_min: f64, out: *mut f64) -> DpStatus {
    bound_call(inputs, out, |x| bound_pvp_full(x, alpha_min))
}
