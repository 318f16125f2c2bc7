//! C ABI for prefdn.
//!
//! Every fallible call returns a [`PrefdnStatus`]; on failure a message is
//! available from [`prefdn_last_error_message`] on the same thread. Images
//! are opaque handles created by `prefdn_image_*` functions and released
//! with [`prefdn_image_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use prefdn::gradients::mse_gradient;
use prefdn::image::{read_image, write_image, Image};
use prefdn::pyramid::{denoise, soft_threshold, ParamBounds, PyramidParams};
use prefdn::trainer::clamp_params;
use prefdn::user_loss::{loss_gradient_weights, variant_loss, LossVariant};
use prefdn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefdnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    ParamRange = 4,
    Format = 5,
    Io = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefdnLossVariant {
    BestMatch = 0,
    ForcedChoice = 1,
    Hybrid = 2,
}

fn variant_arg(v: u32) -> Result<LossVariant, Fail> {
    match v {
        0 => Ok(LossVariant::BestMatch),
        1 => Ok(LossVariant::ForcedChoice),
        2 => Ok(LossVariant::Hybrid),
        _ => Err(Fail(
            PrefdnStatus::InvalidArgument,
            format!("unknown loss variant {v}"),
        )),
    }
}

/// σ and ε per pyramid level.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefdnParams {
    pub sigmas: [f64; 3],
    pub epsilons: [f64; 3],
}

impl From<PrefdnParams> for PyramidParams {
    fn from(p: PrefdnParams) -> Self {
        PyramidParams::new(p.sigmas, p.epsilons)
    }
}

impl From<PyramidParams> for PrefdnParams {
    fn from(p: PyramidParams) -> Self {
        Self {
            sigmas: p.sigmas,
            epsilons: p.epsilons,
        }
    }
}

/// Opaque grayscale image.
pub struct PrefdnImage(Image);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PrefdnStatus {
    match e {
        Error::Shape { .. } => PrefdnStatus::ShapeMismatch,
        Error::ParamRange(_) => PrefdnStatus::ParamRange,
        Error::Format(_) | Error::UnsupportedFormat(_) | Error::Json(_) => PrefdnStatus::Format,
        Error::Io(_) => PrefdnStatus::Io,
        Error::Numeric(_) => PrefdnStatus::Numeric,
        _ => PrefdnStatus::InvalidArgument,
    }
}

struct Fail(PrefdnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PrefdnStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PrefdnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PrefdnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PrefdnStatus::Panic
        }
    }
}

unsafe fn image_ref<'a>(img: *const PrefdnImage, what: &str) -> Result<&'a Image, Fail> {
    img.as_ref().map(|i| &i.0).ok_or_else(|| null(what))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Fail> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail(PrefdnStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_image_out(out: *mut *mut PrefdnImage, img: Image) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(Box::into_raw(Box::new(PrefdnImage(img))));
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next prefdn call on the same thread.
#[no_mangle]
pub extern "C" fn prefdn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn prefdn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `width * height` row-major pixels into a new image.
///
/// # Safety
/// `pixels` must point to `width * height` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn prefdn_image_new(
    width: usize,
    height: usize,
    pixels: *const f64,
    out: *mut *mut PrefdnImage,
) -> PrefdnStatus {
    guard(|| {
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Fail(PrefdnStatus::InvalidArgument, "image too large".into()))?;
        let data = std::slice::from_raw_parts(pixels, n).to_vec();
        let img = Image::new(width, height, data)?;
        write_image_out(out, img)
    })
}

/// Releases an image handle. NULL is ignored.
///
/// # Safety
/// `img` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn prefdn_image_free(img: *mut PrefdnImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Width in pixels, 0 for NULL.
///
/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn prefdn_image_width(img: *const PrefdnImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// Height in pixels, 0 for NULL.
///
/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn prefdn_image_height(img: *const PrefdnImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// Copies the pixels into `out`, which holds `len` doubles.
///
/// # Safety
/// `img` must be a live handle and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn prefdn_image_copy_pixels(
    img: *const PrefdnImage,
    out: *mut f64,
    len: usize,
) -> PrefdnStatus {
    guard(|| {
        let img = image_ref(img, "img")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len < img.len() {
            return Err(Fail(
                PrefdnStatus::BufferTooSmall,
                format!("buffer holds {len} values, image has {}", img.len()),
            ));
        }
        ptr::copy_nonoverlapping(img.pixels().as_ptr(), out, img.len());
        Ok(())
    })
}

/// Reads a PGM or PNG file chosen by extension.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn prefdn_image_load(
    path: *const c_char,
    out: *mut *mut PrefdnImage,
) -> PrefdnStatus {
    guard(|| {
        let img = read_image(path_arg(path)?)?;
        write_image_out(out, img)
    })
}

/// Writes a PGM (16-bit) or PNG (8-bit) file chosen by extension.
///
/// # Safety
/// `img` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn prefdn_image_save(
    img: *const PrefdnImage,
    path: *const c_char,
) -> PrefdnStatus {
    guard(|| {
        let img = image_ref(img, "img")?;
        write_image(img, path_arg(path)?)?;
        Ok(())
    })
}

/// Runs the pyramid denoiser and returns a new image.
///
/// # Safety
/// `img` must be a live handle, `params` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn prefdn_denoise(
    img: *const PrefdnImage,
    params: *const PrefdnParams,
    out: *mut *mut PrefdnImage,
) -> PrefdnStatus {
    guard(|| {
        let img = image_ref(img, "img")?;
        let params = *params.as_ref().ok_or_else(|| null("params"))?;
        let result = denoise(img, &params.into())?;
        write_image_out(out, result)
    })
}

/// `sign(x) * max(|x| - epsilon, 0)`.
#[no_mangle]
pub extern "C" fn prefdn_soft_threshold(x: f64, epsilon: f64) -> f64 {
    soft_threshold(x, epsilon)
}

/// Projects `params` into the default bounds.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn prefdn_clamp_params(
    params: *const PrefdnParams,
    out: *mut PrefdnParams,
) -> PrefdnStatus {
    guard(|| {
        let p = *params.as_ref().ok_or_else(|| null("params"))?;
        let clamped = clamp_params(&p.into(), &ParamBounds::default());
        write_out(out, clamped.into(), "out")
    })
}

unsafe fn errors_arg<'a>(errors: *const f64, q: usize) -> Result<&'a [f64], Fail> {
    if errors.is_null() {
        return Err(null("errors"));
    }
    Ok(std::slice::from_raw_parts(errors, q))
}

/// Loss of one choice given the `q` candidate errors. `variant` is a
/// `PrefdnLossVariant` value.
///
/// # Safety
/// `errors` must hold `q` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn prefdn_loss(
    errors: *const f64,
    q: usize,
    selected: usize,
    variant: u32,
    out: *mut f64,
) -> PrefdnStatus {
    guard(|| {
        let e = errors_arg(errors, q)?;
        write_out(out, variant_loss(e, selected, variant_arg(variant)?)?, "out")
    })
}

/// ∂loss/∂e_q for each candidate, written to `out_weights[0..q]`.
///
/// # Safety
/// `errors` must hold `q` doubles and `out_weights` be writable for `q`.
#[no_mangle]
pub unsafe extern "C" fn prefdn_loss_gradient_weights(
    errors: *const f64,
    q: usize,
    selected: usize,
    variant: u32,
    out_weights: *mut f64,
) -> PrefdnStatus {
    guard(|| {
        let e = errors_arg(errors, q)?;
        if out_weights.is_null() {
            return Err(null("out_weights"));
        }
        let w = loss_gradient_weights(e, selected, variant_arg(variant)?)?;
        ptr::copy_nonoverlapping(w.as_ptr(), out_weights, w.len());
        Ok(())
    })
}

/// Mean squared error between `denoise(img, params)` and `target` and its
/// gradient with respect to σ and ε.
///
/// # Safety
/// Handles must be live; `params` readable; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn prefdn_mse_gradient(
    img: *const PrefdnImage,
    params: *const PrefdnParams,
    target: *const PrefdnImage,
    out_loss: *mut f64,
    out_grad: *mut PrefdnParams,
) -> PrefdnStatus {
    guard(|| {
        let img = image_ref(img, "img")?;
        let target = image_ref(target, "target")?;
        let p = *params.as_ref().ok_or_else(|| null("params"))?;
        if out_loss.is_null() || out_grad.is_null() {
            return Err(null("output"));
        }
        let (loss, grad) = mse_gradient(img, &p.into(), target)?;
        out_loss.write(loss);
        out_grad.write(PrefdnParams {
            sigmas: grad.d_sigmas,
            epsilons: grad.d_epsilons,
        });
        Ok(())
    })
}
