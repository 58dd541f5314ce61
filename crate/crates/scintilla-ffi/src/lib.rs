//! C ABI over the scintilla library.
//!
//! Conventions:
//! - Every fallible call returns a `ScintillaStatus`; results go through out-pointers.
//! - On failure, `scintilla_last_error()` describes the error for the calling thread.
//! - Handles are opaque and must be released with their `_free` function.
//! - Complex matrices cross the boundary as separate row-major real and imaginary arrays.
//! - Panics are caught and reported as `SCINTILLA_STATUS_PANIC`.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use scintilla::couplings::{CouplingAssembler, CouplingSet, ModeFrame};
use scintilla::grid::FrequencyGrid;
use scintilla::ipe::{evolve, IpeSingle, StepControl};
use scintilla::metrics;
use scintilla::modes::ModalBasis;
use scintilla::quadrature::PolarQuadrature;
use scintilla::single_screen::{concurrence_curve, PairArms, SpssOptions};
use scintilla::turbulence::{self, StructureKind, TurbulenceSpec};
use scintilla::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScintillaStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Dimension = 3,
    Containment = 4,
    InfraredDivergence = 5,
    Quadrature = 6,
    StepUnderflow = 7,
    NonFinite = 8,
    InvalidState = 9,
    Config = 10,
    Io = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScintillaStructureKind {
    Kolmogorov = 0,
    Quadratic = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScintillaArms {
    OneArm = 0,
    BothArms = 1,
}

/// Modal basis handle.
pub struct ScintillaBasis(ModalBasis);

/// Coupling set handle (P, Λ, Λ_T).
pub struct ScintillaCouplings(CouplingSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ScintillaStatus {
    match e {
        Error::Domain(_) => ScintillaStatus::Domain,
        Error::Dimension(_) => ScintillaStatus::Dimension,
        Error::Containment { .. } => ScintillaStatus::Containment,
        Error::InfraredDivergence(_) => ScintillaStatus::InfraredDivergence,
        Error::Quadrature { .. } => ScintillaStatus::Quadrature,
        Error::StepUnderflow { .. } => ScintillaStatus::StepUnderflow,
        Error::NonFinite(_) => ScintillaStatus::NonFinite,
        Error::InvalidState(_) => ScintillaStatus::InvalidState,
        Error::Config { .. } => ScintillaStatus::Config,
        Error::Io(_) | Error::Json(_) => ScintillaStatus::Io,
    }
}

struct Fail(ScintillaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ScintillaStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ScintillaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScintillaStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {m}"));
            ScintillaStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn read_matrix(re: *const f64, im: *const f64, n: usize) -> Result<Array2<C64>, Fail> {
    let (re, im) = (slice(re, n * n, "re")?, slice(im, n * n, "im")?);
    Ok(Array2::from_shape_fn((n, n), |(i, j)| C64::new(re[i * n + j], im[i * n + j])))
}

unsafe fn write_matrix(m: &Array2<C64>, re: *mut f64, im: *mut f64) -> Result<(), Fail> {
    let len = m.len();
    let (re, im) = (slice_mut(re, len, "out_re")?, slice_mut(im, len, "out_im")?);
    for (k, v) in m.iter().enumerate() {
        re[k] = v.re;
        im[k] = v.im;
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn scintilla_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static string.
#[no_mangle]
pub extern "C" fn scintilla_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// r0 = 0.185 (λ²/(Cn² z))^(3/5), SI units.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scintilla_fried_parameter(cn2: f64, wavelength: f64, z: f64, out_r0: *mut f64) -> ScintillaStatus {
    guard(|| {
        *out(out_r0, "out_r0")? = turbulence::fried_parameter(cn2, wavelength, z)?;
        Ok(())
    })
}

/// σ_R² = 1.23 Cn² k^(7/6) z^(11/6), SI units.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scintilla_rytov_variance(cn2: f64, wavenumber: f64, z: f64, out_sigma2: *mut f64) -> ScintillaStatus {
    guard(|| {
        *out(out_sigma2, "out_sigma2")? = turbulence::rytov_variance(cn2, wavenumber, z)?;
        Ok(())
    })
}

/// Phase structure function at separation `x` for Fried parameter `r0`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scintilla_structure_function(
    x: f64,
    r0: f64,
    kind: ScintillaStructureKind,
    out_d: *mut f64,
) -> ScintillaStatus {
    guard(|| {
        *out(out_d, "out_d")? = turbulence::structure_function(x, r0, structure_kind(kind))?;
        Ok(())
    })
}

fn structure_kind(k: ScintillaStructureKind) -> StructureKind {
    match k {
        ScintillaStructureKind::Kolmogorov => StructureKind::Kolmogorov,
        ScintillaStructureKind::Quadratic => StructureKind::Quadratic,
    }
}

/// First `n_modes` LG modes of waist `waist` [m] on an `n_side`² frequency
/// grid of half-width `extent` [1/m]; `extent <= 0` picks 8/(π·waist).
///
/// # Safety
/// `out_basis` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scintilla_basis_lg_first(
    n_modes: usize,
    waist: f64,
    n_side: usize,
    extent: f64,
    out_basis: *mut *mut ScintillaBasis,
) -> ScintillaStatus {
    guard(|| {
        let slot = out(out_basis, "out_basis")?;
        let ext = if extent > 0.0 { extent } else { 8.0 / (std::f64::consts::PI * waist) };
        let grid = FrequencyGrid::new(n_side, ext)?;
        let b = ModalBasis::lg_first(n_modes, waist, grid)?;
        *slot = Box::into_raw(Box::new(ScintillaBasis(b)));
        Ok(())
    })
}

/// Number of modes; 0 for a null handle.
///
/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scintilla_basis_len(basis: *const ScintillaBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.0.len())
}

/// # Safety
/// `basis` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scintilla_basis_free(basis: *mut ScintillaBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Couplings in the waist frame for a von Karman spectrum (outer scale > 0).
///
/// # Safety
/// `basis` must be a live handle and `out_couplings` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scintilla_couplings_compute(
    basis: *const ScintillaBasis,
    wavelength: f64,
    cn2: f64,
    outer_scale: f64,
    out_couplings: *mut *mut ScintillaCouplings,
) -> ScintillaStatus {
    guard(|| {
        let b = basis.as_ref().ok_or_else(|| null("basis"))?;
        let slot = out(out_couplings, "out_couplings")?;
        let spec = TurbulenceSpec::von_karman(cn2, outer_scale)?;
        let asm = CouplingAssembler::new(&b.0, wavelength, &spec, &PolarQuadrature::default(), ModeFrame::Waist, 0.0)?;
        *slot = Box::into_raw(Box::new(ScintillaCouplings(asm.coupling_set()?)));
        Ok(())
    })
}

/// Basis dimension of a coupling set; 0 for a null handle.
///
/// # Safety
/// `c` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scintilla_couplings_dim(c: *const ScintillaCouplings) -> usize {
    c.as_ref().map_or(0, |c| c.0.dim())
}

/// Λ_T [1/m].
///
/// # Safety
/// `c` must be a live handle and `out_lambda_t` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scintilla_couplings_lambda_t(c: *const ScintillaCouplings, out_lambda_t: *mut f64) -> ScintillaStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("couplings"))?;
        *out(out_lambda_t, "out_lambda_t")? = c.0.lambda_t;
        Ok(())
    })
}

/// Kinetic matrix P into two dim² row-major arrays.
///
/// # Safety
/// `c` must be a live handle; `out_re` and `out_im` must hold dim² doubles.
#[no_mangle]
pub unsafe extern "C" fn scintilla_couplings_kinetic(
    c: *const ScintillaCouplings,
    out_re: *mut f64,
    out_im: *mut f64,
) -> ScintillaStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("couplings"))?;
        write_matrix(&c.0.p, out_re, out_im)
    })
}

/// # Safety
/// `c` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scintilla_couplings_free(c: *mut ScintillaCouplings) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Integrates the IPE from 0 to `z` [m] with fixed couplings.
/// `tolerance <= 0` uses the default 1e-6.
///
/// # Safety
/// `c` must be a live handle; all arrays must hold dim² doubles.
#[no_mangle]
pub unsafe extern "C" fn scintilla_evolve(
    c: *const ScintillaCouplings,
    rho_re: *const f64,
    rho_im: *const f64,
    z: f64,
    tolerance: f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> ScintillaStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("couplings"))?;
        let rho = read_matrix(rho_re, rho_im, c.0.dim())?;
        let mut ctl = StepControl::default();
        if tolerance > 0.0 {
            ctl.tolerance = tolerance;
        }
        let mut rhs = IpeSingle::new(c.0.clone());
        let tr = evolve(&rho, &mut rhs, (0.0, z), &ctl)?;
        write_matrix(&tr.last().rho, out_re, out_im)
    })
}

/// Wootters concurrence of a 4×4 two-qubit density matrix.
///
/// # Safety
/// `rho_re` and `rho_im` must hold 16 doubles; `out_c` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scintilla_concurrence(rho_re: *const f64, rho_im: *const f64, out_c: *mut f64) -> ScintillaStatus {
    guard(|| {
        let rho = read_matrix(rho_re, rho_im, 4)?;
        *out(out_c, "out_c")? = metrics::concurrence(&rho)?;
        Ok(())
    })
}

/// Single-screen concurrence sweep for the ℓ = ±`l` Bell state. Writes
/// `n` concurrences and the interpolated zero crossing (NaN if none).
///
/// # Safety
/// `w_over_r0` and `out_concurrence` must hold `n` doubles; `out_crossing`
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn scintilla_concurrence_curve(
    l: i32,
    w_over_r0: *const f64,
    n: usize,
    kind: ScintillaStructureKind,
    arms: ScintillaArms,
    out_concurrence: *mut f64,
    out_crossing: *mut f64,
) -> ScintillaStatus {
    guard(|| {
        let ws = slice(w_over_r0, n, "w_over_r0")?;
        let dst = slice_mut(out_concurrence, n, "out_concurrence")?;
        let crossing = out(out_crossing, "out_crossing")?;
        let arms = match arms {
            ScintillaArms::OneArm => PairArms::OneArm,
            ScintillaArms::BothArms => PairArms::BothArms,
        };
        let c = concurrence_curve(l, ws, structure_kind(kind), arms, SpssOptions::default())?;
        for (d, p) in dst.iter_mut().zip(&c.points) {
            *d = p.concurrence;
        }
        *crossing = c.crossing.unwrap_or(f64::NAN);
        Ok(())
    })
}
