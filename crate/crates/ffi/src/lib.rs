//! C interface to `monofbf`.
//!
//! Operators are opaque handles created by one of the `monofbf_operator_*`
//! constructors and released with [`monofbf_operator_free`]. Every call
//! returns a [`MonofbfStatus`]; on failure a description is available from
//! [`monofbf_last_error_message`] on the same thread. Images are row-major
//! `double` arrays of `height * width` values.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use monofbf::autodiff::DifferentiableMap;
use monofbf::checkpoint::{load_checkpoint, Model};
use monofbf::fbf::{invert_operator, ArmijoConfig, BoxConstraint, StopConfig};
use monofbf::forward::{SaturatedBlurModel, SaturationParams};
use monofbf::restore::{self, Formulation, RestorationSpec};
use monofbf::spectral::{monotonicity_certificate, ProbeConfig};
use monofbf::{Error, Image, Kernel};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MonofbfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    /// Step search failure, non-finite values or a collapsed power iteration.
    Numerical = 5,
    Io = 6,
    Format = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MonofbfFormulation {
    Direct = 0,
    LeastSquares = 1,
}

/// An operator `F` acting on images.
pub struct MonofbfOperator {
    map: Arc<dyn DifferentiableMap>,
    lin: Option<Kernel>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: MonofbfStatus,
    message: String,
}

impl Failure {
    fn new(status: MonofbfStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn null(what: &str) -> Self {
        Self::new(MonofbfStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Shape { .. } | Error::Dimension(_) => MonofbfStatus::Shape,
            Error::Config(_) => MonofbfStatus::Config,
            Error::Io { .. } => MonofbfStatus::Io,
            Error::Format { .. } | Error::Json(_) => MonofbfStatus::Format,
            e if e.is_numerical() => MonofbfStatus::Numerical,
            _ => MonofbfStatus::InvalidArgument,
        };
        Self::new(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MonofbfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MonofbfStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(_) => {
            set_last_error("internal panic");
            MonofbfStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn output<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn operator<'a>(op: *const MonofbfOperator) -> Result<&'a MonofbfOperator, Failure> {
    op.as_ref().ok_or_else(|| Failure::null("operator"))
}

fn pixels(height: usize, width: usize) -> Result<usize, Failure> {
    match height.checked_mul(width) {
        Some(n) if n > 0 => Ok(n),
        _ => Err(Failure::new(
            MonofbfStatus::InvalidArgument,
            format!("bad image size {height}x{width}"),
        )),
    }
}

unsafe fn read_image(
    height: usize,
    width: usize,
    p: *const f64,
    what: &str,
) -> Result<Image, Failure> {
    let n = pixels(height, width)?;
    Ok(Image::new(height, width, input(p, n, what)?.to_vec())?)
}

fn stop_config(max_iter: usize, tol: f64) -> Result<StopConfig, Failure> {
    let mut stop = StopConfig::default();
    if max_iter > 0 {
        stop.max_iter = max_iter;
    }
    if tol > 0.0 {
        stop.residual_tol = tol;
    } else if tol != 0.0 || tol.is_nan() {
        return Err(Failure::new(
            MonofbfStatus::InvalidArgument,
            format!("tolerance must be nonnegative, got {tol}"),
        ));
    }
    Ok(stop)
}

fn emit(handle: MonofbfOperator, out: *mut *mut MonofbfOperator) {
    // SAFETY: callers check `out` before doing any work.
    unsafe { *out = Box::into_raw(Box::new(handle)) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn monofbf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn monofbf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Loads a checkpoint written by `monofbf train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn monofbf_operator_from_checkpoint(
    path: *const c_char,
    out: *mut *mut MonofbfOperator,
) -> MonofbfStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::null("path"));
        }
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure::new(MonofbfStatus::InvalidArgument, "path is not UTF-8"))?;
        let (model, _) = load_checkpoint(path)?;
        let lin = match &model {
            Model::Linear(k) => Some(k.clone()),
            Model::Net(_) => None,
        };
        emit(
            MonofbfOperator {
                map: model.into_map(),
                lin,
            },
            out,
        );
        Ok(())
    })
}

/// The saturated-blur model `x ↦ (1/K) Σ ψ_δ(k_i ⊛ x)`.
///
/// `kernels` holds `count` normalized `size × size` kernels back to back.
///
/// # Safety
/// `kernels` must point to `count * size * size` doubles and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn monofbf_operator_sat_blur(
    kernels: *const f64,
    count: usize,
    size: usize,
    delta: f64,
    out: *mut *mut MonofbfOperator,
) -> MonofbfStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let taps = size
            .checked_mul(size)
            .and_then(|s| s.checked_mul(count))
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::new(MonofbfStatus::InvalidArgument, "empty kernel array"))?;
        let data = input(kernels, taps, "kernels")?;
        let ks = data
            .chunks(size * size)
            .map(|c| Kernel::new(size, c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let lin = (ks.len() == 1).then(|| ks[0].clone());
        let model = SaturatedBlurModel::new(ks, SaturationParams::new(delta)?)?;
        emit(
            MonofbfOperator {
                map: Arc::new(model),
                lin,
            },
            out,
        );
        Ok(())
    })
}

/// Releases an operator. NULL is ignored.
///
/// # Safety
/// `op` must come from a `monofbf_operator_*` constructor and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn monofbf_operator_free(op: *mut MonofbfOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Writes `F(x)` to `out`.
///
/// # Safety
/// `x` and `out` must hold `height * width` doubles.
#[no_mangle]
pub unsafe extern "C" fn monofbf_operator_apply(
    op: *const MonofbfOperator,
    height: usize,
    width: usize,
    x: *const f64,
    out: *mut f64,
) -> MonofbfStatus {
    guard(|| {
        let op = operator(op)?;
        let x = read_image(height, width, x, "x")?;
        let out = output(out, height * width, "out")?;
        let y = op.map.forward(x.as_tensor())?;
        if y.numel() != out.len() {
            return Err(
                Error::Dimension(format!("operator output has shape {:?}", y.shape())).into(),
            );
        }
        out.copy_from_slice(y.as_slice());
        Ok(())
    })
}

/// Estimates the smallest eigenvalue of the symmetric part of the Jacobian
/// of `F` at `x`. `n_iter = 0` selects the default.
///
/// # Safety
/// `x` must hold `height * width` doubles and `out_lambda` must be writable.
#[no_mangle]
pub unsafe extern "C" fn monofbf_operator_lambda_min(
    op: *const MonofbfOperator,
    height: usize,
    width: usize,
    x: *const f64,
    n_iter: usize,
    seed: u64,
    out_lambda: *mut f64,
) -> MonofbfStatus {
    guard(|| {
        let op = operator(op)?;
        let x = read_image(height, width, x, "x")?;
        if out_lambda.is_null() {
            return Err(Failure::null("out_lambda"));
        }
        let mut cfg = ProbeConfig::default().with_seed(seed);
        if n_iter > 0 {
            cfg.n_iter = n_iter;
        }
        let report = monotonicity_certificate(&op.map, &[x.into_tensor()], 0.0, &cfg)?;
        *out_lambda = report.min_lambda_t;
        Ok(())
    })
}

/// Recovers `x̄` from `F(x̄)` over the box `[0, 1]`. `max_iter = 0` and
/// `tol = 0` select the defaults.
///
/// # Safety
/// `x_bar` and `out_x` must hold `height * width` doubles; `out_iterations`
/// may be NULL.
#[no_mangle]
pub unsafe extern "C" fn monofbf_invert(
    op: *const MonofbfOperator,
    height: usize,
    width: usize,
    x_bar: *const f64,
    max_iter: usize,
    tol: f64,
    out_x: *mut f64,
    out_iterations: *mut usize,
) -> MonofbfStatus {
    guard(|| {
        let op = operator(op)?;
        let x_bar = read_image(height, width, x_bar, "x_bar")?;
        let out = output(out_x, height * width, "out_x")?;
        let stop = stop_config(max_iter, tol)?;
        let (x, trace) = invert_operator(
            op.map.clone(),
            x_bar.as_tensor(),
            &BoxConstraint::default(),
            &ArmijoConfig::default(),
            &stop,
        )?;
        out.copy_from_slice(x.as_slice());
        if let Some(it) = out_iterations.as_mut() {
            *it = trace.iterations();
        }
        Ok(())
    })
}

/// Restores `y` by solving the direct or least-squares inclusion with TV
/// weight `rho` over `[0, 1]`. For least squares, `lin_kernel` (a
/// `lin_size × lin_size` kernel) may be NULL when the operator has a
/// single kernel of its own.
///
/// # Safety
/// `y` and `out_x` must hold `height * width` doubles; `lin_kernel` is NULL
/// or holds `lin_size * lin_size` doubles; `out_iterations` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn monofbf_restore(
    op: *const MonofbfOperator,
    formulation: MonofbfFormulation,
    lin_kernel: *const f64,
    lin_size: usize,
    height: usize,
    width: usize,
    y: *const f64,
    rho: f64,
    max_iter: usize,
    tol: f64,
    out_x: *mut f64,
    out_iterations: *mut usize,
) -> MonofbfStatus {
    guard(|| {
        let op = operator(op)?;
        let y = read_image(height, width, y, "y")?;
        let out = output(out_x, height * width, "out_x")?;
        let lin = if lin_kernel.is_null() {
            op.lin.clone()
        } else {
            let taps = lin_size.checked_mul(lin_size).unwrap_or(0);
            Some(Kernel::new(
                lin_size,
                input(lin_kernel, taps, "lin_kernel")?.to_vec(),
            )?)
        };
        let formulation = match formulation {
            MonofbfFormulation::Direct => Formulation::Direct,
            MonofbfFormulation::LeastSquares => Formulation::LeastSquares,
        };
        let mut spec = RestorationSpec::new(formulation, op.map.clone(), lin, y).with_rho(rho);
        spec.stop = stop_config(max_iter, tol)?;
        let r = spec.solve()?;
        out.copy_from_slice(r.x_hat.as_slice());
        if let Some(it) = out_iterations.as_mut() {
            *it = r.trace.iterations();
        }
        Ok(())
    })
}

unsafe fn metric(
    height: usize,
    width: usize,
    x: *const f64,
    reference: *const f64,
    out: *mut f64,
    f: fn(&Image, &Image) -> monofbf::Result<f64>,
) -> MonofbfStatus {
    guard(|| {
        let x = read_image(height, width, x, "x")?;
        let r = read_image(height, width, reference, "reference")?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        *out = f(&x, &r)?;
        Ok(())
    })
}

/// PSNR for peak value 1; `+inf` for identical images.
///
/// # Safety
/// `x` and `reference` must hold `height * width` doubles.
#[no_mangle]
pub unsafe extern "C" fn monofbf_psnr(
    height: usize,
    width: usize,
    x: *const f64,
    reference: *const f64,
    out: *mut f64,
) -> MonofbfStatus {
    metric(height, width, x, reference, out, restore::psnr)
}

/// Mean SSIM with an 11×11 Gaussian window.
///
/// # Safety
/// `x` and `reference` must hold `height * width` doubles.
#[no_mangle]
pub unsafe extern "C" fn monofbf_ssim(
    height: usize,
    width: usize,
    x: *const f64,
    reference: *const f64,
    out: *mut f64,
) -> MonofbfStatus {
    metric(height, width, x, reference, out, restore::ssim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_status_codes() {
        let f: Failure = Error::NonFinite("x".into()).into();
        assert_eq!(f.status, MonofbfStatus::Numerical);
        let f: Failure = Error::Dimension("x".into()).into();
        assert_eq!(f.status, MonofbfStatus::Shape);
        let f: Failure = Error::Config("x".into()).into();
        assert_eq!(f.status, MonofbfStatus::Config);
    }

    #[test]
    fn panics_are_contained() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, MonofbfStatus::Panic);
        let msg = unsafe { CStr::from_ptr(monofbf_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
    }

    #[test]
    fn stop_overrides() {
        assert_eq!(stop_config(0, 0.0).ok().unwrap(), StopConfig::default());
        let s = stop_config(7, 1e-3).ok().unwrap();
        assert_eq!((s.max_iter, s.residual_tol), (7, 1e-3));
        assert!(stop_config(0, -1.0).is_err());
        assert!(stop_config(0, f64::NAN).is_err());
    }
}
