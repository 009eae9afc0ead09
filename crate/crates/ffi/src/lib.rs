//! C ABI over the hwprune core: load models and datasets, estimate cost,
//! run float, INT8 and simulated inference.
//!
//! Every function returns an [`HwpStatus`]; on failure the message is kept
//! per thread and read back with [`hwp_last_error`]. Handles are opaque and
//! released with the matching `*_free`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hwprune::dataset::Dataset;
use hwprune::model::ModelGraph;
use hwprune::perf::{model_cost, DataflowMode, HwConstants, PePolicy};
use hwprune::quant::{quant_infer, QuantModel};
use hwprune::sim::{check_run, simulate_model, SimOptions};
use hwprune::tensor::Tensor;
use hwprune::Error;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HwpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Io = 4,
    Model = 5,
    Numeric = 6,
    Simulation = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Values for the `mode` parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HwpMode {
    Streaming = 0,
    Temporal = 1,
}

/// Whole-model estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HwpCost {
    pub macs: u64,
    /// Sum of per-stage cycles.
    pub cycles: u64,
    /// Slowest stage.
    pub bottleneck_cycles: u64,
    pub dsp: u64,
    pub bram: u64,
    pub latency_seconds: f64,
}

/// Trained float model.
pub struct HwpModel(ModelGraph);

/// INT8 model.
pub struct HwpQuantModel(QuantModel);

pub struct HwpDataset(Dataset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(HwpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Invalid(_) | Error::Shape { .. } | Error::Prune { .. } => HwpStatus::InvalidArgument,
            Error::Format { .. } | Error::Yaml(_) => HwpStatus::Format,
            Error::Io(_) => HwpStatus::Io,
            Error::Model(_) | Error::MissingCache(_) => HwpStatus::Model,
            Error::NonFinite(_) => HwpStatus::Numeric,
            Error::Simulation(_) => HwpStatus::Simulation,
        };
        Fail(status, e.to_string())
    }
}

fn fail<T>(status: HwpStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

/// Runs `f`, turning errors and panics into a status plus last-error text.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HwpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HwpStatus::Ok,
        Ok(Err(Fail(s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            HwpStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    match p.as_ref() {
        Some(v) => Ok(v),
        None => fail(HwpStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    match p.as_mut() {
        Some(v) => Ok(v),
        None => fail(HwpStatus::NullPointer, format!("{what} is null")),
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return fail(HwpStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(HwpStatus::InvalidArgument, "path is not UTF-8"),
    }
}

unsafe fn bytes_arg<'a>(p: *const u8, len: usize) -> Result<&'a [u8], Fail> {
    if p.is_null() {
        return if len == 0 { Ok(&[]) } else { fail(HwpStatus::NullPointer, "buffer is null") };
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn image_arg(dims: [usize; 3], p: *const f32, len: usize) -> Result<Tensor, Fail> {
    if p.is_null() {
        return fail(HwpStatus::NullPointer, "image is null");
    }
    let want = dims.iter().product::<usize>();
    if len != want {
        return fail(HwpStatus::InvalidArgument, format!("image has {len} values, model expects {want}"));
    }
    Ok(Tensor::new(dims.to_vec(), std::slice::from_raw_parts(p, len).to_vec())?)
}

/// `mode` is an [`HwpMode`] value, taken as an integer so that an
/// out-of-range value from C is an error rather than undefined behaviour.
fn policy(mode: u32, pe_max: u32) -> Result<PePolicy, Fail> {
    let m = match mode {
        x if x == HwpMode::Streaming as u32 => DataflowMode::Streaming,
        x if x == HwpMode::Temporal as u32 => DataflowMode::Temporal,
        _ => return fail(HwpStatus::InvalidArgument, format!("unknown mode {mode}")),
    };
    Ok(PePolicy::new(m, pe_max as usize)?)
}

/// Copies `values` into a caller buffer of `cap` entries; `*len` always
/// receives the required length.
unsafe fn write_out(values: &[f32], out: *mut f32, cap: usize, len: *mut usize) -> Result<(), Fail> {
    *out_ref(len, "length output")? = values.len();
    if cap < values.len() {
        return fail(HwpStatus::BufferTooSmall, format!("need {} values, buffer holds {cap}", values.len()));
    }
    if out.is_null() {
        return fail(HwpStatus::NullPointer, "output buffer is null");
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    *out_ref(out, "handle output")? = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hwp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hwp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hwp_model_load(path: *const c_char, out: *mut *mut HwpModel) -> HwpStatus {
    guard(|| {
        let p = path_arg(path)?;
        let bytes = std::fs::read(&p).map_err(|e| Fail(HwpStatus::Io, format!("{}: {e}", p.display())))?;
        store(out, HwpModel(ModelGraph::from_bytes(&bytes)?))
    })
}

/// # Safety
/// `data` must point to `len` readable bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hwp_model_from_bytes(data: *const u8, len: usize, out: *mut *mut HwpModel) -> HwpStatus {
    guard(|| store(out, HwpModel(ModelGraph::from_bytes(bytes_arg(data, len)?)?)))
}

/// # Safety
/// `model` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn hwp_model_free(model: *mut HwpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input extents `(channels, height, width)`.
///
/// # Safety
/// `model` must be a live handle and `dims` point to three writable values.
#[no_mangle]
pub unsafe extern "C" fn hwp_model_input_dims(model: *const HwpModel, dims: *mut usize) -> HwpStatus {
    guard(|| {
        let m = deref(model, "model")?;
        if dims.is_null() {
            return fail(HwpStatus::NullPointer, "dims is null");
        }
        let d = m.0.input_dims().as_shape();
        ptr::copy_nonoverlapping(d.as_ptr(), dims, 3);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hwp_model_estimate(
    model: *const HwpModel,
    mode: u32,
    pe_max: u32,
    out: *mut HwpCost,
) -> HwpStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let r = model_cost(m.0.arch(), &policy(mode, pe_max)?, &HwConstants::default())?;
        *out_ref(out, "cost output")? = HwpCost {
            macs: r.macs,
            cycles: r.cycles,
            bottleneck_cycles: r.bottleneck_cycles,
            dsp: r.dsp,
            bram: r.bram,
            latency_seconds: r.latency_seconds(),
        };
        Ok(())
    })
}

/// Float logits for one `C×H×W` image.
///
/// # Safety
/// `image` must hold `len` floats; `logits` must hold `cap` floats.
#[no_mangle]
pub unsafe extern "C" fn hwp_model_logits(
    model: *const HwpModel,
    image: *const f32,
    len: usize,
    logits: *mut f32,
    cap: usize,
    out_len: *mut usize,
) -> HwpStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let x = image_arg(m.0.input_dims().as_shape(), image, len)?;
        write_out(m.0.logits(&x)?.data(), logits, cap, out_len)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hwp_qmodel_load(path: *const c_char, out: *mut *mut HwpQuantModel) -> HwpStatus {
    guard(|| {
        let p = path_arg(path)?;
        store(out, HwpQuantModel(QuantModel::load(&p)?))
    })
}

/// # Safety
/// `data` must point to `len` readable bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hwp_qmodel_from_bytes(
    data: *const u8,
    len: usize,
    out: *mut *mut HwpQuantModel,
) -> HwpStatus {
    guard(|| store(out, HwpQuantModel(QuantModel::from_bytes(bytes_arg(data, len)?)?)))
}

/// # Safety
/// `q` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn hwp_qmodel_free(q: *mut HwpQuantModel) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Integer reference inference; logits are dequantized.
///
/// # Safety
/// As for [`hwp_model_logits`].
#[no_mangle]
pub unsafe extern "C" fn hwp_qmodel_infer(
    q: *const HwpQuantModel,
    image: *const f32,
    len: usize,
    logits: *mut f32,
    cap: usize,
    out_len: *mut usize,
) -> HwpStatus {
    guard(|| {
        let q = deref(q, "quantized model")?;
        let x = image_arg(q.0.arch.input.as_shape(), image, len)?;
        write_out(&quant_infer(&q.0, &x)?, logits, cap, out_len)
    })
}

/// Runs the accelerator simulator and checks it against the integer
/// reference and the analytical estimate; `cycles` receives the simulated
/// end-to-end cycles of the conv and pool engines.
///
/// # Safety
/// As for [`hwp_model_logits`]; `cycles` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hwp_qmodel_simulate(
    q: *const HwpQuantModel,
    mode: u32,
    pe_max: u32,
    image: *const f32,
    len: usize,
    logits: *mut f32,
    cap: usize,
    out_len: *mut usize,
    cycles: *mut u64,
) -> HwpStatus {
    guard(|| {
        let q = deref(q, "quantized model")?;
        let x = image_arg(q.0.arch.input.as_shape(), image, len)?;
        let opts = SimOptions { policy: policy(mode, pe_max)?, ..SimOptions::default() };
        let run = simulate_model(&q.0, &x, &opts)?;
        check_run(&q.0, &x, &run, &opts)?;
        *out_ref(cycles, "cycle output")? = run.report.total_cycles();
        write_out(&run.logits, logits, cap, out_len)
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hwp_dataset_load(path: *const c_char, out: *mut *mut HwpDataset) -> HwpStatus {
    guard(|| {
        let p = path_arg(path)?;
        store(out, HwpDataset(Dataset::load(&p)?))
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn hwp_dataset_free(ds: *mut HwpDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle and `len` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hwp_dataset_len(ds: *const HwpDataset, len: *mut usize) -> HwpStatus {
    guard(|| {
        *out_ref(len, "length output")? = deref(ds, "dataset")?.0.len();
        Ok(())
    })
}

/// Copies image `index` into `pixels` and its class into `label`.
///
/// # Safety
/// `pixels` must hold `cap` floats; `out_len` and `label` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hwp_dataset_image(
    ds: *const HwpDataset,
    index: usize,
    pixels: *mut f32,
    cap: usize,
    out_len: *mut usize,
    label: *mut usize,
) -> HwpStatus {
    guard(|| {
        let d = &deref(ds, "dataset")?.0;
        let Some(img) = d.images.get(index) else {
            return fail(HwpStatus::InvalidArgument, format!("index {index} out of range ({} images)", d.len()));
        };
        *out_ref(label, "label output")? = d.labels[index];
        write_out(img.data(), pixels, cap, out_len)
    })
}
