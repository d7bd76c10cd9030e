//! C interface to `bventropy`.
//!
//! Objects cross the boundary as opaque handles created by `bve_*_new`-style
//! constructors and released with the matching `bve_*_free`. Every fallible
//! call returns a [`BveStatus`]; on failure a message is available from
//! [`bve_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use bventropy::codec::{self, Codeword, Interval};
use bventropy::gauge::Gauge;
use bventropy::metric::{self, FiniteMetricSpace, Metric, ScaleWindow, SearchMode};
use bventropy::variation::{self, RealLine, StepFunction};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BveStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    MetricError = 3,
    GaugeError = 4,
    VariationError = 5,
    CodecError = 6,
    Panic = 99,
}

/// Finite metric space.
pub struct BveSpace(FiniteMetricSpace);

/// Gauge function Ψ.
pub struct BveGauge(Gauge);

/// Real-valued step function on `[0, L)`.
pub struct BveStep(StepFunction<f64>);

/// Serialized codeword with its exact payload bit count.
pub struct BveCodeword {
    bytes: Vec<u8>,
    bit_length: u64,
    budget_bits: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl ToString) {
    let msg = CString::new(msg.to_string().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: BveStatus, msg: impl ToString) -> BveStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> BveStatus) -> BveStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(BveStatus::Panic, "internal panic"),
    }
}

macro_rules! deref {
    ($p:expr) => {
        match unsafe { $p.as_ref() } {
            Some(v) => v,
            None => return fail(BveStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
}

macro_rules! out {
    ($p:expr) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => return fail(BveStatus::NullPointer, concat!(stringify!($p), " is null")),
        }
    };
}

unsafe fn slice_in<'a, T>(p: *const T, n: usize) -> Option<&'a [T]> {
    if n == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(p, n))
    }
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call.
#[no_mangle]
pub extern "C" fn bve_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bve_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Space from a row-major `n × n` distance matrix.
///
/// # Safety
/// `dist` must point to `n * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bve_space_from_matrix(
    n: usize,
    dist: *const f64,
    out: *mut *mut BveSpace,
) -> BveStatus {
    guard(|| {
        let out = out!(out);
        let Some(d) = n
            .checked_mul(n)
            .and_then(|nn| unsafe { slice_in(dist, nn) })
        else {
            return fail(BveStatus::NullPointer, "dist is null");
        };
        match FiniteMetricSpace::from_flat(n, d.to_vec()) {
            Ok(s) => {
                *out = boxed(BveSpace(s));
                BveStatus::Ok
            }
            Err(e) => fail(BveStatus::MetricError, e),
        }
    })
}

/// Regular lattice with `side^dim` points and the given spacing.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bve_space_lattice(
    side: usize,
    dim: usize,
    spacing: f64,
    out: *mut *mut BveSpace,
) -> BveStatus {
    guard(|| {
        let out = out!(out);
        match FiniteMetricSpace::lattice(side, dim, spacing) {
            Ok(s) => {
                *out = boxed(BveSpace(s));
                BveStatus::Ok
            }
            Err(e) => fail(BveStatus::MetricError, e),
        }
    })
}

/// # Safety
/// `space` must come from a `bve_space_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn bve_space_free(space: *mut BveSpace) {
    free(space)
}

/// # Safety
/// `space` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bve_space_len(space: *const BveSpace) -> usize {
    space.as_ref().map_or(0, |s| s.0.len())
}

/// Doubling and packing dimensions over the scale window `[lo, hi]`.
///
/// # Safety
/// `space` must be a live handle; `d` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bve_space_dimensions(
    space: *const BveSpace,
    lo: f64,
    hi: f64,
    d: *mut u32,
    p: *mut u32,
) -> BveStatus {
    guard(|| {
        let s = deref!(space);
        let (d, p) = (out!(d), out!(p));
        match metric::dimensions(&s.0, ScaleWindow::new(lo, hi), metric::auto_mode(&s.0)) {
            Ok(r) => {
                *d = r.d;
                *p = r.p;
                BveStatus::Ok
            }
            Err(e) => fail(BveStatus::MetricError, e),
        }
    })
}

fn mode(exact: bool) -> SearchMode {
    if exact {
        SearchMode::Exact
    } else {
        SearchMode::Greedy
    }
}

/// `α`-covering number of the whole space (closed balls).
///
/// # Safety
/// `space` must be a live handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bve_covering_number(
    space: *const BveSpace,
    alpha: f64,
    exact: bool,
    count: *mut usize,
) -> BveStatus {
    guard(|| {
        let s = deref!(space);
        let count = out!(count);
        let all: Vec<usize> = (0..s.0.len()).collect();
        match metric::covering_number(&s.0, &all, alpha, mode(exact)) {
            Ok(r) => {
                *count = r.count;
                BveStatus::Ok
            }
            Err(e) => fail(BveStatus::MetricError, e),
        }
    })
}

/// `α`-packing number of the whole space.
///
/// # Safety
/// `space` must be a live handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bve_packing_number(
    space: *const BveSpace,
    alpha: f64,
    exact: bool,
    count: *mut usize,
) -> BveStatus {
    guard(|| {
        let s = deref!(space);
        let count = out!(count);
        let all: Vec<usize> = (0..s.0.len()).collect();
        match metric::packing_number(&s.0, &all, alpha, mode(exact)) {
            Ok(r) => {
                *count = r.count;
                BveStatus::Ok
            }
            Err(e) => fail(BveStatus::MetricError, e),
        }
    })
}

/// Gauge from a token: `id`, `pow:<gamma>` or `table:<path>`.
///
/// # Safety
/// `token` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bve_gauge_parse(
    token: *const c_char,
    out: *mut *mut BveGauge,
) -> BveStatus {
    guard(|| {
        let out = out!(out);
        if token.is_null() {
            return fail(BveStatus::NullPointer, "token is null");
        }
        let Ok(token) = (unsafe { CStr::from_ptr(token) }).to_str() else {
            return fail(BveStatus::InvalidArgument, "token is not UTF-8");
        };
        match Gauge::parse_token(token) {
            Ok(g) => {
                *out = boxed(BveGauge(g));
                BveStatus::Ok
            }
            Err(e) => fail(BveStatus::GaugeError, e),
        }
    })
}

/// # Safety
/// `gauge` must come from [`bve_gauge_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn bve_gauge_free(gauge: *mut BveGauge) {
    free(gauge)
}

/// `Ψ(s)`; NaN for a null handle.
///
/// # Safety
/// `gauge` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn bve_gauge_eval(gauge: *const BveGauge, s: f64) -> f64 {
    gauge.as_ref().map_or(f64::NAN, |g| g.0.eval(s))
}

/// Step function equal to `values[i]` on `[breakpoints[i], breakpoints[i+1])`,
/// with `breakpoints[pieces] = length`. `breakpoints` holds `pieces` left
/// ends starting at 0.
///
/// # Safety
/// `breakpoints` and `values` must point to `pieces` doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bve_step_new(
    length: f64,
    breakpoints: *const f64,
    values: *const f64,
    pieces: usize,
    out: *mut *mut BveStep,
) -> BveStatus {
    guard(|| {
        let out = out!(out);
        let (Some(b), Some(v)) = (unsafe { slice_in(breakpoints, pieces) }, unsafe {
            slice_in(values, pieces)
        }) else {
            return fail(BveStatus::NullPointer, "breakpoints or values is null");
        };
        let mut b = b.to_vec();
        b.push(length);
        match StepFunction::new(length, b, v.to_vec()) {
            Ok(f) => {
                *out = boxed(BveStep(f));
                BveStatus::Ok
            }
            Err(e) => fail(BveStatus::VariationError, e),
        }
    })
}

/// # Safety
/// `step` must come from a `bve_step_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn bve_step_free(step: *mut BveStep) {
    free(step)
}

/// # Safety
/// `step` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn bve_step_pieces(step: *const BveStep) -> usize {
    step.as_ref().map_or(0, |f| f.0.pieces())
}

/// Copies left ends and values into caller buffers of capacity `cap`.
///
/// # Safety
/// `step` must be a live handle; both buffers must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn bve_step_read(
    step: *const BveStep,
    breakpoints: *mut f64,
    values: *mut f64,
    cap: usize,
) -> BveStatus {
    guard(|| {
        let f = &deref!(step).0;
        let n = f.pieces();
        if cap < n {
            return fail(
                BveStatus::InvalidArgument,
                format!("buffer holds {cap}, need {n}"),
            );
        }
        if breakpoints.is_null() || values.is_null() {
            return fail(BveStatus::NullPointer, "output buffer is null");
        }
        let (b, v) = unsafe {
            (
                slice::from_raw_parts_mut(breakpoints, n),
                slice::from_raw_parts_mut(values, n),
            )
        };
        b.copy_from_slice(&f.breakpoints()[..n]);
        v.copy_from_slice(f.values());
        BveStatus::Ok
    })
}

/// `TV^Ψ` of a step function with real values.
///
/// # Safety
/// Handles must be live; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bve_step_tv_psi(
    step: *const BveStep,
    gauge: *const BveGauge,
    value: *mut f64,
) -> BveStatus {
    guard(|| {
        let (f, g, value) = (deref!(step), deref!(gauge), out!(value));
        *value = variation::tv_psi(&f.0, &RealLine, &g.0);
        BveStatus::Ok
    })
}

/// `L¹` distance of two step functions on the same interval.
///
/// # Safety
/// Handles must be live; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bve_l1_distance(
    a: *const BveStep,
    b: *const BveStep,
    value: *mut f64,
) -> BveStatus {
    guard(|| {
        let (a, b, value) = (deref!(a), deref!(b), out!(value));
        match variation::l1_distance(&a.0, &b.0, &RealLine) {
            Ok(d) => {
                *value = d;
                BveStatus::Ok
            }
            Err(e) => fail(BveStatus::VariationError, e),
        }
    })
}

/// Encodes `step` (values in `[-half_width, half_width]`, `TV^Ψ ≤ budget`)
/// to `L¹` accuracy `epsilon`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bve_encode(
    step: *const BveStep,
    gauge: *const BveGauge,
    half_width: f64,
    budget: f64,
    epsilon: f64,
    out: *mut *mut BveCodeword,
) -> BveStatus {
    guard(|| {
        let (f, g, out) = (deref!(step), deref!(gauge), out!(out));
        let iv = match Interval::new(half_width) {
            Ok(iv) => iv,
            Err(e) => return fail(BveStatus::CodecError, e),
        };
        let enc = match &g.0 {
            Gauge::Identity => codec::encode_bv(&f.0, &iv, budget, epsilon),
            psi => codec::encode_bvpsi(&f.0, &iv, psi, budget, epsilon),
        };
        match enc {
            Ok(enc) => {
                *out = boxed(BveCodeword {
                    bytes: enc.codeword.to_bytes(),
                    bit_length: enc.bit_length(),
                    budget_bits: enc.budget_bits,
                });
                BveStatus::Ok
            }
            Err(e) => fail(BveStatus::CodecError, e),
        }
    })
}

/// # Safety
/// `cw` must come from [`bve_encode`] or be null.
#[no_mangle]
pub unsafe extern "C" fn bve_codeword_free(cw: *mut BveCodeword) {
    free(cw)
}

/// Serialized bytes, borrowed from the handle.
///
/// # Safety
/// `cw` must be live; `data` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bve_codeword_bytes(
    cw: *const BveCodeword,
    data: *mut *const u8,
    len: *mut usize,
) -> BveStatus {
    guard(|| {
        let (cw, data, len) = (deref!(cw), out!(data), out!(len));
        *data = cw.bytes.as_ptr();
        *len = cw.bytes.len();
        BveStatus::Ok
    })
}

/// Exact number of payload bits; 0 for a null handle.
///
/// # Safety
/// `cw` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn bve_codeword_bit_length(cw: *const BveCodeword) -> u64 {
    cw.as_ref().map_or(0, |c| c.bit_length)
}

/// Bit bound the codeword is certified against; NaN for a null handle.
///
/// # Safety
/// `cw` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn bve_codeword_budget_bits(cw: *const BveCodeword) -> f64 {
    cw.as_ref().map_or(f64::NAN, |c| c.budget_bits)
}

/// Decodes serialized codeword bytes for values in `[-half_width, half_width]`.
///
/// # Safety
/// `data` must point to `len` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bve_decode(
    data: *const u8,
    len: usize,
    half_width: f64,
    out: *mut *mut BveStep,
) -> BveStatus {
    guard(|| {
        let out = out!(out);
        let Some(bytes) = (unsafe { slice_in(data, len) }) else {
            return fail(BveStatus::NullPointer, "data is null");
        };
        let decoded = Interval::new(half_width)
            .and_then(|iv| Codeword::from_bytes(bytes).and_then(|cw| codec::decode(&cw, &iv)));
        match decoded {
            Ok(f) => {
                *out = boxed(BveStep(f));
                BveStatus::Ok
            }
            Err(e) => fail(BveStatus::CodecError, e),
        }
    })
}
