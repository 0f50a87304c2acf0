//! C ABI over the ropnet engine.
//!
//! Models and plans are opaque heap handles released with their `_free`
//! function. Every fallible call returns a [`RopStatus`]; on failure the
//! message is available from [`rop_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use ropnet::data::{load_ppm, preprocess};
use ropnet::model::{build_custom_rop_net, build_mobilenet_like, count_parameters, forward, load_model, save_model};
use ropnet::model::{ModelSpec, Parameters};
use ropnet::runtime::{ExecutionPlan, PlanInstance};
use ropnet::tensor::{BatchNormMode, Tensor};
use ropnet::train::input_size;
use ropnet::voting::{vote, TieRule, VoteOptions};
use ropnet::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RopStatus {
    Ok = 0,
    NullPointer = 1,
    Parameter = 2,
    Shape = 3,
    Format = 4,
    Numeric = 5,
    Capability = 6,
    Data = 7,
    Validation = 8,
    Io = 9,
    Panic = 10,
}

impl From<&Error> for RopStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) => RopStatus::Shape,
            Error::Parameter(_) => RopStatus::Parameter,
            Error::Format { .. } => RopStatus::Format,
            Error::Numeric(_) => RopStatus::Numeric,
            Error::Capability(_) => RopStatus::Capability,
            Error::Data(_) | Error::Split(_) | Error::Csv(_) => RopStatus::Data,
            Error::Validation(_) => RopStatus::Validation,
            Error::Io { .. } => RopStatus::Io,
        }
    }
}

/// A loaded or freshly built model.
pub struct RopModel {
    inner: Arc<(ModelSpec, Parameters)>,
}

/// A static execution plan for one model at a fixed batch size.
pub struct RopPlan {
    model: Arc<(ModelSpec, Parameters)>,
    plan: ExecutionPlan,
    storage: Vec<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> RopStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RopStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            RopStatus::NullPointer
        }
        Ok(Err(Failure::Engine(e))) => {
            set_error(e.to_string());
            RopStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            RopStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::param(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, what: &'static str) -> FfiResult<&'a mut [T]> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn boxed_model(spec: ModelSpec, params: Parameters) -> *mut RopModel {
    Box::into_raw(Box::new(RopModel {
        inner: Arc::new((spec, params)),
    }))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rop_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rop_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds the custom network with freshly initialized weights.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn rop_model_build_custom(
    input_size: usize,
    width: f64,
    seed: u64,
    out: *mut *mut RopModel,
) -> RopStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let (spec, params) = build_custom_rop_net(input_size, width, seed)?;
        *out = boxed_model(spec, params);
        Ok(())
    })
}

/// Builds the MobileNet-shaped baseline with freshly initialized weights.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn rop_model_build_mobilenet(input_size: usize, seed: u64, out: *mut *mut RopModel) -> RopStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let (spec, params) = build_mobilenet_like(input_size, seed)?;
        *out = boxed_model(spec, params);
        Ok(())
    })
}

/// # Safety
/// `path` must be null or a NUL-terminated string; `out` as for the builders.
#[no_mangle]
pub unsafe extern "C" fn rop_model_load(path: *const c_char, out: *mut *mut RopModel) -> RopStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = as_mut(out, "out")?;
        let (spec, params) = load_model(path)?;
        *out = boxed_model(spec, params);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rop_model_save(model: *const RopModel, path: *const c_char) -> RopStatus {
    guard(|| {
        let model = as_ref(model, "model")?;
        let path = path_arg(path, "path")?;
        save_model(&model.inner.0, &model.inner.1, path)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rop_model_free(model: *mut RopModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length of the square RGB input the model expects.
///
/// # Safety
/// `model` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rop_model_input_size(model: *const RopModel, out: *mut usize) -> RopStatus {
    guard(|| {
        let model = as_ref(model, "model")?;
        *as_mut(out, "out")? = input_size(&model.inner.0)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live handle; both outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn rop_model_count_parameters(
    model: *const RopModel,
    trainable: *mut usize,
    total: *mut usize,
) -> RopStatus {
    guard(|| {
        let model = as_ref(model, "model")?;
        let trainable = as_mut(trainable, "trainable")?;
        let total = as_mut(total, "total")?;
        let c = count_parameters(&model.inner.0, &model.inner.1)?;
        *trainable = c.trainable;
        *total = c.total;
        Ok(())
    })
}

fn input_tensor(spec: &ModelSpec, data: &[f32], n: usize) -> FfiResult<Tensor<f32>> {
    let [h, w, c] = spec.input_shape;
    if data.len() != n * h * w * c {
        return Err(Error::shape(format!(
            "expected {n} x {h} x {w} x {c} = {} input values, got {}",
            n * h * w * c,
            data.len()
        ))
        .into());
    }
    Ok(Tensor::new(&[n, h, w, c], data)?)
}

/// Eager inference on `n` preprocessed NHWC images in `[0, 1]`.
/// `input_len` must equal `n * size * size * 3`; `out` receives `n`
/// probabilities.
///
/// # Safety
/// `input` must hold `input_len` floats and `out` room for `n` floats.
#[no_mangle]
pub unsafe extern "C" fn rop_model_predict(
    model: *const RopModel,
    input: *const f32,
    input_len: usize,
    n: usize,
    out: *mut f32,
) -> RopStatus {
    guard(|| {
        let model = as_ref(model, "model")?;
        let data = slice_arg(input, input_len, "input")?;
        let out = slice_mut_arg(out, n, "out")?;
        if n == 0 {
            return Err(Error::param("batch must contain at least one image").into());
        }
        let x = input_tensor(&model.inner.0, data, n)?;
        let y = forward(&model.inner.0, &model.inner.1, &x, BatchNormMode::Infer)?;
        out.copy_from_slice(y.data());
        Ok(())
    })
}

/// Loads a PPM image, resizes it to the model input and scores it.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rop_model_predict_ppm(model: *const RopModel, path: *const c_char, out: *mut f32) -> RopStatus {
    guard(|| {
        let model = as_ref(model, "model")?;
        let path = path_arg(path, "path")?;
        let out = as_mut(out, "out")?;
        let (spec, params) = &*model.inner;
        let img = preprocess(&load_ppm(path)?, input_size(spec)?)?;
        let x = Tensor::new(&[1, img.shape()[0], img.shape()[1], 3], img.data())?;
        *out = forward(spec, params, &x, BatchNormMode::Infer)?.data()[0];
        Ok(())
    })
}

/// Plans execution of `model` for a fixed batch size. The plan keeps its
/// own reference to the model, which may be freed independently.
///
/// # Safety
/// `model` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rop_plan_create(model: *const RopModel, batch: usize, out: *mut *mut RopPlan) -> RopStatus {
    guard(|| {
        let model = as_ref(model, "model")?;
        let out = as_mut(out, "out")?;
        let plan = ExecutionPlan::new(&model.inner.0, &model.inner.1, batch)?;
        let storage = vec![0.0; plan.arena_len];
        *out = Box::into_raw(Box::new(RopPlan {
            model: Arc::clone(&model.inner),
            plan,
            storage,
        }));
        Ok(())
    })
}

/// # Safety
/// `plan` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rop_plan_free(plan: *mut RopPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// # Safety
/// `plan` must be null or a live handle; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn rop_plan_arena_bytes(plan: *const RopPlan, out: *mut usize) -> RopStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(plan, "plan")?.plan.arena_bytes();
        Ok(())
    })
}

/// Runs the plan on a full batch. `input_len` must equal the planned
/// batch times the per-image size; `out` receives one probability per image.
///
/// # Safety
/// `input` must hold `input_len` floats and `out` room for `out_len` floats.
/// A plan must not be executed from two threads at once.
#[no_mangle]
pub unsafe extern "C" fn rop_plan_execute(
    plan: *mut RopPlan,
    input: *const f32,
    input_len: usize,
    out: *mut f32,
    out_len: usize,
) -> RopStatus {
    guard(|| {
        let p = as_mut(plan, "plan")?;
        let data = slice_arg(input, input_len, "input")?;
        let out = slice_mut_arg(out, out_len, "out")?;
        let n = p.plan.batch_shape[0];
        if out_len != n {
            return Err(Error::shape(format!("plan produces {n} outputs, buffer holds {out_len}")).into());
        }
        let x = input_tensor(&p.model.0, data, n)?;
        let storage = std::mem::take(&mut p.storage);
        let mut inst = PlanInstance::with_storage(p.plan.clone(), &p.model.0, &p.model.1, storage)?;
        let result = inst.execute(&x);
        p.storage = inst.into_storage();
        out.copy_from_slice(result?.data());
        Ok(())
    })
}

/// Majority vote over one eye's image probabilities.
///
/// # Safety
/// `probs` must hold `n` floats; both outputs null or writable.
#[no_mangle]
pub unsafe extern "C" fn rop_vote(
    probs: *const f32,
    n: usize,
    threshold: f64,
    ties_positive: bool,
    decision: *mut u8,
    positive_votes: *mut usize,
) -> RopStatus {
    guard(|| {
        let probs = slice_arg(probs, n, "probs")?;
        let decision = as_mut(decision, "decision")?;
        let positive_votes = as_mut(positive_votes, "positive_votes")?;
        let opts = VoteOptions {
            threshold,
            tie_rule: if ties_positive {
                TieRule::Positive
            } else {
                TieRule::Negative
            },
            ..VoteOptions::default()
        };
        let v = vote(probs, &opts)?;
        *decision = v.decision;
        *positive_votes = v.votes.iter().map(|&x| x as usize).sum();
        Ok(())
    })
}
