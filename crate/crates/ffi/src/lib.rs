//! C ABI for `qdm-core`.
//!
//! Scenes and scan results are opaque handles owned by the library and
//! released with their `_free` function. Every fallible call returns a
//! [`QdmStatus`]; on failure a human-readable message is available from
//! [`qdm_last_error_message`] until the next failing call on the same
//! thread. Map data is copied into caller-provided buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qdm_core::measurement::{measurement_induced_rate, WeakMeasurementChannel};
use qdm_core::presets;
use qdm_core::sample::{boltzmann_populations, resolution_fwhm, Environment, MesoscopicSpin, UnitsMode};
use qdm_core::scanner::{assemble_maps, scan, ColorSource, ImageMaps, Pipeline, ScanGrid, StochasticSettings};
use qdm_core::scene::{load_scene, parse_scene, Scene};
use qdm_core::QdmError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Scene preset selector for [`qdm_scene_preset`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdmPreset {
    Example1 = 0,
    Example2 = 1,
}

/// Opaque scene handle.
pub struct QdmScene {
    inner: Scene,
}

/// Opaque scan result handle.
pub struct QdmScan {
    maps: ImageMaps,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &QdmError) -> QdmStatus {
    match e {
        QdmError::Domain(_) | QdmError::RecordTooShort { .. } | QdmError::MissingPixels(_) => {
            QdmStatus::InvalidArgument
        }
        QdmError::Parse { .. } => QdmStatus::Parse,
        QdmError::Io(_) => QdmStatus::Io,
        _ => QdmStatus::Numerical,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (QdmStatus, String)>) -> QdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QdmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QdmStatus::Panic
        }
    }
}

fn core<T>(r: qdm_core::Result<T>) -> Result<T, (QdmStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (QdmStatus, String) {
    (QdmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (QdmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (QdmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), (QdmStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qdm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qdm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Lateral FWHM of a `1/r^n` response at probe height `h_p`.
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qdm_resolution_fwhm(h_p: f64, n: f64, out: *mut f64) -> QdmStatus {
    guard(|| write_out(out, core(resolution_fwhm(h_p, n))?, "out"))
}

/// Measurement-induced dephasing rate `κ²/(4Δt)`.
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qdm_measurement_induced_rate(kappa: f64, delta_t: f64, out: *mut f64) -> QdmStatus {
    guard(|| {
        let chan = core(WeakMeasurementChannel::new(kappa, delta_t))?;
        write_out(out, measurement_induced_rate(&chan), "out")
    })
}

/// Thermal ground/excited populations of a spin of `m0` Bohr magnetons in
/// field `field` (T) at temperature `temperature` (K).
///
/// # Safety
/// `p_ground` and `p_excited` must be valid writable pointers.
#[no_mangle]
pub unsafe extern "C" fn qdm_boltzmann_populations(
    m0: f64,
    field: f64,
    temperature: f64,
    p_ground: *mut f64,
    p_excited: *mut f64,
) -> QdmStatus {
    guard(|| {
        let spin = core(MesoscopicSpin::new(0.0, 0.0, m0, 1e-9))?;
        let env = core(Environment::new(1e-9, temperature, field, UnitsMode::Si))?;
        let (g, e) = boltzmann_populations(&spin, &env);
        write_out(p_ground, g, "p_ground")?;
        write_out(p_excited, e, "p_excited")
    })
}

fn into_handle(scene: Scene, out: *mut *mut QdmScene) -> Result<(), (QdmStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { out.write(Box::into_raw(Box::new(QdmScene { inner: scene }))) };
    Ok(())
}

/// Parse scene text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qdm_scene_parse(text: *const c_char, out: *mut *mut QdmScene) -> QdmStatus {
    guard(|| into_handle(core(parse_scene(c_str(text, "text")?))?, out))
}

/// Load a scene file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qdm_scene_load(path: *const c_char, out: *mut *mut QdmScene) -> QdmStatus {
    guard(|| into_handle(core(load_scene(Path::new(c_str(path, "path")?)))?, out))
}

/// Build one of the reference scenes.
///
/// # Safety
/// `out` must be a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qdm_scene_preset(kind: QdmPreset, seed: u64, out: *mut *mut QdmScene) -> QdmStatus {
    guard(|| {
        let scene = match kind {
            QdmPreset::Example1 => presets::example1(seed),
            QdmPreset::Example2 => presets::example2(seed),
        };
        into_handle(core(scene)?, out)
    })
}

/// Number of spins and fluctuators in a scene.
///
/// # Safety
/// `scene` must come from a `qdm_scene_*` constructor; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn qdm_scene_counts(
    scene: *const QdmScene,
    n_spins: *mut usize,
    n_fluctuators: *mut usize,
) -> QdmStatus {
    guard(|| {
        let s = scene.as_ref().ok_or_else(|| null("scene"))?;
        if !n_spins.is_null() {
            n_spins.write(s.inner.env.spins.len());
        }
        if !n_fluctuators.is_null() {
            n_fluctuators.write(s.inner.env.bath.as_ref().map_or(0, |b| b.len()));
        }
        Ok(())
    })
}

/// Release a scene. Null is ignored.
///
/// # Safety
/// `scene` must come from a `qdm_scene_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn qdm_scene_free(scene: *mut QdmScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Scan a scene over an `nx × ny` grid spanning its field of view at its
/// probe height, with the default probe for its units. `steps == 0` selects
/// the closed-form pipeline, otherwise the record-based one with `steps`
/// measurements per pixel.
///
/// # Safety
/// `scene` must be a live scene handle; `out` a valid writable pointer.
#[no_mangle]
pub unsafe extern "C" fn qdm_scan(
    scene: *const QdmScene,
    nx: usize,
    ny: usize,
    seed: u64,
    steps: usize,
    out: *mut *mut QdmScan,
) -> QdmStatus {
    guard(|| {
        let s = &scene.as_ref().ok_or_else(|| null("scene"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let pipeline = if steps == 0 {
            Pipeline::ClosedForm
        } else {
            let mut st = StochasticSettings::default();
            st.n_steps = steps;
            st.max_lag = st.max_lag.min(steps / 20).max(1);
            Pipeline::Stochastic(st)
        };
        let grid = core(ScanGrid::new(nx, ny, s.fov, s.env.probe_height, 1.0))?
            .with_center(s.center)
            .with_pipeline(pipeline);
        let probe = presets::default_probe(s);
        let results = core(scan(&s.env, &probe, &grid, seed))?;
        let color = if s.env.spins.is_empty() {
            ColorSource::Gamma
        } else {
            ColorSource::PExcited
        };
        let maps = core(assemble_maps(&results, nx, ny, color))?;
        out.write(Box::into_raw(Box::new(QdmScan { maps })));
        Ok(())
    })
}

/// Grid dimensions of a scan.
///
/// # Safety
/// `scan` must be a live scan handle; `nx`, `ny` valid writable pointers.
#[no_mangle]
pub unsafe extern "C" fn qdm_scan_dims(scan: *const QdmScan, nx: *mut usize, ny: *mut usize) -> QdmStatus {
    guard(|| {
        let m = &scan.as_ref().ok_or_else(|| null("scan"))?.maps;
        write_out(nx, m.nx, "nx")?;
        write_out(ny, m.ny, "ny")
    })
}

/// Map channel selector for [`qdm_scan_copy_map`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdmMap {
    /// Normalized static shift.
    Field = 0,
    /// Normalized decoherence rate.
    Decoherence = 1,
    /// Colour channel; unresolved pixels hold -1.
    Color = 2,
    /// Static shift in rad/s (or normalized energy units).
    FieldRaw = 3,
    /// Total decoherence rate in s⁻¹ (or normalized units).
    DecoherenceRaw = 4,
}

/// Copy one map, row-major with `iy` outer, into `buf` of `len` doubles.
/// `len` must be at least `nx·ny`.
///
/// # Safety
/// `scan` must be a live scan handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn qdm_scan_copy_map(
    scan: *const QdmScan,
    which: QdmMap,
    buf: *mut f64,
    len: usize,
) -> QdmStatus {
    guard(|| {
        let m = &scan.as_ref().ok_or_else(|| null("scan"))?.maps;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let src = match which {
            QdmMap::Field => &m.field,
            QdmMap::Decoherence => &m.decoherence,
            QdmMap::Color => &m.color,
            QdmMap::FieldRaw => &m.field_raw,
            QdmMap::DecoherenceRaw => &m.gamma_raw,
        };
        if len < src.len() {
            return Err((
                QdmStatus::BufferTooSmall,
                format!("buffer holds {len} values, map has {}", src.len()),
            ));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
        Ok(())
    })
}

/// Release a scan. Null is ignored.
///
/// # Safety
/// `scan` must come from [`qdm_scan`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qdm_scan_free(scan: *mut QdmScan) {
    if !scan.is_null() {
        drop(Box::from_raw(scan));
    }
}
