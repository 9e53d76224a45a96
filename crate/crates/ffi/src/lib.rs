//! C ABI over the `celp` core.
//!
//! Every function returns a [`CelpStatus`]. On failure a message is kept
//! per thread and can be read with [`celp_last_error`]. Models are opaque
//! handles created by `celp_model_*` constructors and released with
//! [`celp_model_free`]. All computation runs in 64-bit floats.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use celp::episodes::{Episode, Fusion, Shot};
use celp::lps::{sample_latent_prototype, LpsConfig};
use celp::mask::{LabelMask, IGNORE};
use celp::model::{Backbone, Checkpoint, Decoder, DecoderShape, Model, PreparedEpisode, MID_CHANNELS};
use celp::numeric::{cosine, FeatureMap, Tensor};
use celp::rng::{SplitMix64, Stream};
use celp::CelpError;

/// Result codes shared by every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CelpStatus {
    Ok = 0,
    NullPointer = 1,
    Dimension = 2,
    EmptyRegion = 3,
    /// Latent mining found no candidate centre.
    NoLatentRegion = 4,
    InvalidMask = 5,
    OutOfRange = 6,
    Format = 7,
    Config = 8,
    Io = 9,
    Internal = 10,
}

/// Opaque model: frozen backbone plus trained decoder.
pub struct CelpModel {
    model: Model<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &CelpError) -> CelpStatus {
    match err {
        CelpError::Dimension(_) => CelpStatus::Dimension,
        CelpError::EmptyRegion { .. } => CelpStatus::EmptyRegion,
        CelpError::EmptyCandidates => CelpStatus::NoLatentRegion,
        CelpError::InvalidCenter { .. } | CelpError::InvalidLabel { .. } => CelpStatus::InvalidMask,
        CelpError::OutOfRange(_) => CelpStatus::OutOfRange,
        CelpError::Format { .. } | CelpError::UnsupportedDtype(_) => CelpStatus::Format,
        CelpError::Config { .. } => CelpStatus::Config,
        CelpError::Io { .. } => CelpStatus::Io,
        _ => CelpStatus::Internal,
    }
}

enum Failure {
    Null(&'static str),
    Core(CelpError),
}

impl From<CelpError> for Failure {
    fn from(e: CelpError) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CelpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CelpStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            CelpStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            CelpStatus::Internal
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

/// Message of the last failed call on this thread, or an empty string if
/// none has failed. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn celp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Cosine similarity of two length-`n` vectors; 0 when either is (near) zero.
///
/// # Safety
/// `u` and `v` must point to `n` readable doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn celp_cosine(u: *const f64, v: *const f64, n: usize, out: *mut f64) -> CelpStatus {
    guard(|| {
        let (u, v) = (input(u, n, "u")?, input(v, n, "v")?);
        let out = output(out, 1, "out")?;
        out[0] = cosine(u, v)?;
        Ok(())
    })
}

/// Feature grid produced by the backbone for an `height×width` image.
///
/// # Safety
/// `out_h` and `out_w` must be writable.
#[no_mangle]
pub unsafe extern "C" fn celp_feature_grid(
    height: usize,
    width: usize,
    out_h: *mut usize,
    out_w: *mut usize,
) -> CelpStatus {
    guard(|| {
        let (h, w) = Backbone::<f64>::output_grid(height, width);
        output(out_h, 1, "out_h")?[0] = h;
        output(out_w, 1, "out_w")?[0] = w;
        Ok(())
    })
}

/// Latent prototype sampling on caller-supplied features.
///
/// `feature_m` is `c_m×h×w` and `feature_h` is `c_h×h×w`, row-major;
/// `mask` holds `h·w` labels in {0, 1, 255}. `sigma = 0` selects the
/// default count threshold. On success `out_mask` (`h·w`) receives the
/// pseudo-mask, `out_prototype` (`c_m`) the latent prototype and
/// `out_center` the sampled centre. Returns `NoLatentRegion` when the
/// candidate set is empty.
///
/// # Safety
/// Every pointer must reference a buffer of the stated length.
#[no_mangle]
pub unsafe extern "C" fn celp_mine(
    feature_m: *const f64,
    c_m: usize,
    feature_h: *const f64,
    c_h: usize,
    h: usize,
    w: usize,
    mask: *const u8,
    delta: f64,
    sigma: usize,
    seed: u64,
    out_mask: *mut u8,
    out_prototype: *mut f64,
    out_center: *mut usize,
) -> CelpStatus {
    guard(|| {
        let hw = h * w;
        let fm = FeatureMap::from_vec(c_m, h, w, input(feature_m, c_m * hw, "feature_m")?.to_vec())?;
        let fh = FeatureMap::from_vec(c_h, h, w, input(feature_h, c_h * hw, "feature_h")?.to_vec())?;
        let mask = LabelMask::new(h, w, input(mask, hw, "mask")?.to_vec())?;
        let out_mask = output(out_mask, hw, "out_mask")?;
        let out_prototype = output(out_prototype, c_m, "out_prototype")?;
        let out_center = output(out_center, 1, "out_center")?;
        let cfg = LpsConfig {
            delta,
            sigma: (sigma > 0).then_some(sigma),
            seed,
        };
        cfg.validate()?;
        let mut rng = SplitMix64::derive(seed, Stream::Lps);
        let sample = sample_latent_prototype(&fm, &fh, &mask, &cfg, &mut rng)?.ok_or(CelpError::EmptyCandidates)?;
        out_mask.copy_from_slice(sample.pseudo_mask.labels());
        out_prototype.copy_from_slice(sample.prototype.values());
        out_center[0] = sample.center_index;
        Ok(())
    })
}

fn shape_for(hidden: usize) -> DecoderShape {
    DecoderShape {
        hidden,
        ..DecoderShape::for_features(MID_CHANNELS)
    }
}

fn store(model: Model<f64>, out: *mut *mut CelpModel) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    let boxed = Box::into_raw(Box::new(CelpModel { model }));
    // SAFETY: checked non-null above; the caller owns the slot.
    unsafe { *out = boxed };
    Ok(())
}

/// Loads a decoder checkpoint written by `celp train` (`hidden` must match
/// the training configuration) on top of the standard frozen backbone.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn celp_model_load(path: *const c_char, hidden: usize, out: *mut *mut CelpModel) -> CelpStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path).to_string_lossy().into_owned();
        let decoder = Checkpoint::load(&path)?.to_decoder::<f64>(shape_for(hidden))?;
        store(Model::new(Backbone::standard(), decoder)?, out)
    })
}

/// Untrained model with decoder weights drawn from `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn celp_model_init(seed: u64, hidden: usize, out: *mut *mut CelpModel) -> CelpStatus {
    guard(|| {
        if hidden == 0 {
            return Err(CelpError::config("hidden", "must be at least 1").into());
        }
        let mut rng = SplitMix64::derive(seed, Stream::Init);
        let decoder = Decoder::init(shape_for(hidden), &mut rng);
        store(Model::new(Backbone::standard(), decoder)?, out)
    })
}

/// Predicts the query foreground on the feature grid.
///
/// `query` is `3×height×width`; `supports` holds `k` such images back to
/// back and `support_masks` their `k` binary masks of `height·width`.
/// `vote = 0` averages supports, `vote = j` marks positions predicted
/// foreground by at least `j` supports. `out_mask` must hold the feature
/// grid reported by [`celp_feature_grid`].
///
/// # Safety
/// `model` must come from a `celp_model_*` constructor and every buffer
/// must have the stated length.
#[no_mangle]
pub unsafe extern "C" fn celp_model_predict(
    model: *const CelpModel,
    query: *const f64,
    supports: *const f64,
    support_masks: *const u8,
    k: usize,
    height: usize,
    width: usize,
    vote: usize,
    out_mask: *mut u8,
) -> CelpStatus {
    guard(|| {
        if model.is_null() {
            return Err(Failure::Null("model"));
        }
        let model = &(*model).model;
        if k == 0 {
            return Err(CelpError::OutOfRange("k must be at least 1".into()).into());
        }
        let plane = height * width;
        let image = |data: &[f64]| Tensor::new(vec![3, height, width], data.to_vec());
        let query = image(input(query, 3 * plane, "query")?)?;
        let images = input(supports, k * 3 * plane, "supports")?;
        let masks = input(support_masks, k * plane, "support_masks")?;
        let supports = (0..k)
            .map(|i| {
                Ok(Shot {
                    image: image(&images[i * 3 * plane..(i + 1) * 3 * plane])?,
                    mask: LabelMask::new(height, width, masks[i * plane..(i + 1) * plane].to_vec())?,
                })
            })
            .collect::<celp::Result<Vec<_>>>()?;
        let episode = Episode {
            class_id: 0,
            supports,
            query: Shot {
                image: query,
                mask: LabelMask::filled(height, width, IGNORE),
            },
        };
        let prepared = PreparedEpisode::new(&model.backbone, &episode)?;
        let fusion = if vote == 0 { Fusion::Average } else { Fusion::Vote(vote) };
        let pred = model
            .predict(&prepared, fusion, 1e-7)?
            .ok_or(CelpError::EmptyRegion { label: 1 })?;
        let out = output(out_mask, pred.labels().len(), "out_mask")?;
        out.copy_from_slice(pred.labels());
        Ok(())
    })
}

/// Number of trainable decoder parameters.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn celp_model_parameter_count(model: *const CelpModel, out: *mut usize) -> CelpStatus {
    guard(|| {
        if model.is_null() {
            return Err(Failure::Null("model"));
        }
        output(out, 1, "out")?[0] = (*model).model.decoder.parameter_count();
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from a `celp_model_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn celp_model_free(model: *mut CelpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
