//! C interface to the tracker and the detection metrics.
//!
//! Every fallible function returns a [`CactusStatus`]; on failure a message
//! is available from [`cactus_last_error`] on the same thread. Trackers are
//! opaque handles created by [`cactus_tracker_new`] and released with
//! [`cactus_tracker_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cactus::config::RunConfig;
use cactus::eval::{overlap, FrameCounts};
use cactus::features::Frame;
use cactus::pipeline::Tracker;
use cactus::pmf::OrientedBox;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CactusStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Tracking = 4,
    ZeroGroundTruth = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// An oriented box in pixels; `angle` is the long-axis direction in radians.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CactusBox {
    pub cx: f64,
    pub cy: f64,
    pub half_len: f64,
    pub half_wid: f64,
    pub angle: f64,
}

/// One filter's output for one frame.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CactusTrack {
    pub frame: u64,
    pub sef_id: u64,
    pub bbox: CactusBox,
    pub energy: f64,
    pub rho: f64,
}

/// Opaque tracker handle.
pub struct CactusTracker {
    tracker: Tracker,
    k: usize,
    size: Option<(usize, usize)>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: CactusStatus, msg: impl Into<String>) -> CactusStatus {
    set_error(msg);
    status
}

fn guarded(f: impl FnOnce() -> CactusStatus) -> CactusStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(CactusStatus::Panic, "internal panic"),
    }
}

fn to_box(b: &CactusBox) -> OrientedBox {
    OrientedBox::new(b.cx, b.cy, b.half_len, b.half_wid, b.angle)
}

fn from_box(b: &OrientedBox) -> CactusBox {
    CactusBox {
        cx: b.cx,
        cy: b.cy,
        half_len: b.half_len,
        half_wid: b.half_wid,
        angle: b.angle,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cactus_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cactus_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a tracker from a run configuration in TOML (may be NULL for
/// defaults) and stores the handle in `out`.
///
/// # Safety
/// `config_toml` must be NULL or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cactus_tracker_new(config_toml: *const c_char, out: *mut *mut CactusTracker) -> CactusStatus {
    guarded(|| {
        if out.is_null() {
            return fail(CactusStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let cfg = if config_toml.is_null() {
            RunConfig::default()
        } else {
            let text = match CStr::from_ptr(config_toml).to_str() {
                Ok(t) => t,
                Err(_) => return fail(CactusStatus::InvalidArgument, "config is not UTF-8"),
            };
            match RunConfig::from_toml(text) {
                Ok(c) => c,
                Err(e) => return fail(CactusStatus::Config, e.to_string()),
            }
        };
        if let Err(e) = cfg.validate() {
            return fail(CactusStatus::Config, e);
        }
        let bank = match cfg.filter_bank() {
            Ok(b) => b,
            Err(e) => return fail(CactusStatus::Config, e.to_string()),
        };
        let handle = CactusTracker {
            tracker: Tracker::new(cfg.tracker.clone(), bank, cfg.preprocess, cfg.mhi),
            k: cfg.tracker.k,
            size: None,
        };
        *out = Box::into_raw(Box::new(handle));
        CactusStatus::Ok
    })
}

/// Releases a tracker; NULL is ignored.
///
/// # Safety
/// `tracker` must be NULL or a handle from [`cactus_tracker_new`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn cactus_tracker_free(tracker: *mut CactusTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Number of filters, i.e. outputs per frame.
///
/// # Safety
/// `tracker` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn cactus_tracker_filter_count(tracker: *const CactusTracker) -> usize {
    tracker.as_ref().map_or(0, |t| t.k)
}

/// Tracks one 8-bit greyscale frame (`width × height`, row-major). Writes
/// one record per filter into `out` (capacity `capacity`) and the number
/// written into `written`. Boxes are in input pixels.
///
/// # Safety
/// `pixels` must point to `width * height` bytes, `out` to `capacity`
/// records, and `tracker` and `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cactus_tracker_push_gray(
    tracker: *mut CactusTracker,
    pixels: *const u8,
    width: usize,
    height: usize,
    out: *mut CactusTrack,
    capacity: usize,
    written: *mut usize,
) -> CactusStatus {
    guarded(|| {
        if tracker.is_null() || pixels.is_null() || out.is_null() || written.is_null() {
            return fail(CactusStatus::NullPointer, "null argument");
        }
        *written = 0;
        let t = &mut *tracker;
        if width == 0 || height == 0 {
            return fail(CactusStatus::InvalidArgument, "frame dimensions must be positive");
        }
        if *t.size.get_or_insert((width, height)) != (width, height) {
            return fail(CactusStatus::InvalidArgument, "frame size changed between frames");
        }
        if capacity < t.k {
            return fail(CactusStatus::BufferTooSmall, format!("need room for {} records", t.k));
        }
        let data = std::slice::from_raw_parts(pixels, width * height).to_vec();
        let tracked = match t.tracker.push(&Frame::gray(width, height, data)) {
            Ok(x) => x,
            Err(e) => return fail(CactusStatus::Tracking, e.to_string()),
        };
        let dst = std::slice::from_raw_parts_mut(out, capacity);
        for (d, o) in dst.iter_mut().zip(&tracked.outputs) {
            *d = CactusTrack {
                frame: o.frame as u64,
                sef_id: o.sef_id as u64,
                bbox: from_box(&o.bbox),
                energy: o.energy,
                rho: o.rho,
            };
        }
        *written = tracked.outputs.len();
        CactusStatus::Ok
    })
}

/// Intersection over union of two oriented boxes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cactus_overlap(a: *const CactusBox, b: *const CactusBox, out: *mut f64) -> CactusStatus {
    guarded(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(CactusStatus::NullPointer, "null argument");
        }
        *out = overlap(&to_box(&*a), &to_box(&*b));
        CactusStatus::Ok
    })
}

/// `1 − (fn + fp) / gt` from totals.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cactus_nmotda(gt: usize, fn_: usize, fp: usize, out: *mut f64) -> CactusStatus {
    guarded(|| {
        if out.is_null() {
            return fail(CactusStatus::NullPointer, "out is null");
        }
        if fn_ > gt {
            return fail(CactusStatus::InvalidArgument, "misses exceed ground truth");
        }
        match (FrameCounts { gt, fn_, fp }).nmotda() {
            Ok(v) => {
                *out = v;
                CactusStatus::Ok
            }
            Err(e) => fail(CactusStatus::ZeroGroundTruth, e.to_string()),
        }
    })
}
