//! C ABI over `coldstart-core`.
//!
//! Every function returns a [`CsStatus`]. On failure the message is kept per
//! thread and can be read with [`cs_last_error`]. Handles are opaque and must
//! be released with their `_free` function.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use libc::{c_char, c_double, size_t};

use coldstart::config::Config;
use coldstart::error::Error;
use coldstart::experiment;
use coldstart::finetune::{embed_for_ranking, rank, relevance};
use coldstart::pipeline::Run;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Io = 5,
    Parse = 6,
    MissingArtifact = 7,
    FingerprintMismatch = 8,
    Checkpoint = 9,
    Diverged = 10,
    NotFound = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// Pipeline stages for [`cs_run_stage`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsStage {
    Ingest = 0,
    Split = 1,
    GroundTruth = 2,
    Pretrain = 3,
    Finetune = 4,
    Eval = 5,
    Bench = 6,
    Ablation = 7,
    Report = 8,
}

/// A config bound to an artifact directory.
pub struct CsRun {
    run: Run,
}

/// Fused embeddings of cold users and all items from a fine-tuned run.
pub struct CsModel {
    dim: usize,
    users: BTreeMap<u32, Vec<f64>>,
    items: Vec<Vec<f64>>,
    train: BTreeMap<u32, Vec<u32>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CsStatus {
    match e {
        Error::Parse { .. } | Error::EmptyDataset => CsStatus::Parse,
        Error::Config(_) => CsStatus::Config,
        Error::Io(_) => CsStatus::Io,
        Error::MissingArtifact { .. } => CsStatus::MissingArtifact,
        Error::FingerprintMismatch { .. } => CsStatus::FingerprintMismatch,
        Error::Checkpoint(_) => CsStatus::Checkpoint,
        Error::Diverged(_) | Error::NonFinite { .. } | Error::NonFiniteGrad(_) => CsStatus::Diverged,
        _ => CsStatus::InvalidArgument,
    }
}

fn fail(status: CsStatus, msg: impl Into<String>) -> CsStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), CsStatus>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CsStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(CsStatus::Panic, msg)
        }
    }
}

fn core<T>(r: coldstart::Result<T>) -> Result<T, CsStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn opt_str<'a>(p: *const c_char) -> Result<Option<&'a str>, CsStatus> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| fail(CsStatus::InvalidUtf8, "string is not valid UTF-8"))
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, CsStatus> {
    opt_str(p)?.ok_or_else(|| fail(CsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn req_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, CsStatus> {
    p.as_ref().ok_or_else(|| fail(CsStatus::NullPointer, format!("{what} is null")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated)
/// and stores the full length, without the NUL, in `len_out`. With a null
/// or short buffer only the length is reported.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null; `len_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn cs_last_error(buf: *mut c_char, cap: size_t, len_out: *mut size_t) -> CsStatus {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map(|c| c.as_bytes()).unwrap_or(b"");
        if !len_out.is_null() {
            *len_out = bytes.len();
        }
        if buf.is_null() || cap <= bytes.len() {
            return if buf.is_null() { CsStatus::Ok } else { CsStatus::BufferTooSmall };
        }
        ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
        *buf.add(bytes.len()) = 0;
        CsStatus::Ok
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opens a run. `config_path` may be null for the defaults. `overrides` is
/// null or newline-separated `key=value` pairs.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_run_new(config_path: *const c_char, out_dir: *const c_char, overrides: *const c_char, out: *mut *mut CsRun) -> CsStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(CsStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let config = opt_str(config_path)?.map(PathBuf::from);
        let dir = req_str(out_dir, "out_dir")?;
        let mut pairs = Vec::new();
        for line in opt_str(overrides)?.unwrap_or("").lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| fail(CsStatus::Config, format!("override `{line}` is not key=value")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let cfg = core(Config::load(config.as_deref(), &pairs))?;
        let run = core(Run::new(cfg, dir))?;
        *out = Box::into_raw(Box::new(CsRun { run }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from [`cs_run_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_run_free(run: *mut CsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Runs one stage, reading and writing artifacts in the run directory.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_run_stage(run: *const CsRun, stage: CsStage) -> CsStatus {
    guard(|| {
        let r = &req_ref(run, "run")?.run;
        core(match stage {
            CsStage::Ingest => r.ingest(),
            CsStage::Split => r.split(),
            CsStage::GroundTruth => r.ground_truth(),
            CsStage::Pretrain => r.pretrain(),
            CsStage::Finetune => r.finetune(),
            CsStage::Eval => r.eval().map(|_| ()),
            CsStage::Bench => r.bench().map(|_| ()),
            CsStage::Ablation => r.ablation().map(|_| ()),
            CsStage::Report => r.report().map(|_| ()),
        })
    })
}

/// Every stage from ingest to report.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cs_run_all(run: *const CsRun) -> CsStatus {
    guard(|| core(req_ref(run, "run")?.run.run_all().map(|_| ())))
}

/// Reads one metric (e.g. `recall@20`, `intrinsic_cosine_Rg`) from the run's
/// evaluation artifact.
///
/// # Safety
/// `run` must be a live handle, `name` NUL-terminated, outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn cs_run_metric(run: *const CsRun, name: *const c_char, value: *mut c_double, std_err: *mut c_double) -> CsStatus {
    guard(|| {
        let r = &req_ref(run, "run")?.run;
        let name = req_str(name, "name")?;
        let report = core(r.load_eval())?;
        let m = report.metric(name).ok_or_else(|| fail(CsStatus::NotFound, format!("no metric `{name}`")))?;
        if !value.is_null() {
            *value = m.value;
        }
        if !std_err.is_null() {
            *std_err = m.stderr;
        }
        Ok(())
    })
}

/// Loads the fine-tuned model of a run and embeds its cold users and all
/// items.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_model_load(run: *const CsRun, out: *mut *mut CsModel) -> CsStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(CsStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let r = &req_ref(run, "run")?.run;
        let prep = core(r.load_split())?;
        let model = core(r.load_finetune(&prep))?;
        let ctx = core(experiment::eval_contexts(&r.cfg, &prep, &model))?;
        let (users, items, _) = core(embed_for_ranking(&model, &ctx, &prep.extrinsic, prep.num_items()))?;
        *out = Box::into_raw(Box::new(CsModel { dim: model.dims.d, users, items, train: prep.extrinsic.train.clone() }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`cs_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cs_model_free(model: *mut CsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding size, item count and number of embedded users.
///
/// # Safety
/// `model` must be a live handle; outputs writable or null.
#[no_mangle]
pub unsafe extern "C" fn cs_model_shape(model: *const CsModel, dim: *mut size_t, num_items: *mut size_t, num_users: *mut size_t) -> CsStatus {
    guard(|| {
        let m = req_ref(model, "model")?;
        for (p, v) in [(dim, m.dim), (num_items, m.items.len()), (num_users, m.users.len())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Inner-product relevance of a cold user to an item.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_model_score(model: *const CsModel, user: u32, item: u32, out: *mut c_double) -> CsStatus {
    guard(|| {
        let m = req_ref(model, "model")?;
        if out.is_null() {
            return Err(fail(CsStatus::NullPointer, "out is null"));
        }
        let u = m.users.get(&user).ok_or_else(|| fail(CsStatus::NotFound, format!("user {user} is not a cold user of this run")))?;
        let i = m.items.get(item as usize).ok_or_else(|| fail(CsStatus::NotFound, format!("item {item} out of range")))?;
        *out = relevance(u, i);
        Ok(())
    })
}

/// Writes the user's top `k` items (training items excluded, ties by id)
/// into `items` and their count into `written`.
///
/// # Safety
/// `model` must be a live handle, `items` valid for `k` entries, `written` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_model_top_k(model: *const CsModel, user: u32, k: size_t, items: *mut u32, written: *mut size_t) -> CsStatus {
    guard(|| {
        let m = req_ref(model, "model")?;
        if items.is_null() || written.is_null() {
            return Err(fail(CsStatus::NullPointer, "output buffer is null"));
        }
        let u = m.users.get(&user).ok_or_else(|| fail(CsStatus::NotFound, format!("user {user} is not a cold user of this run")))?;
        let scores: Vec<f64> = m.items.iter().map(|i| relevance(u, i)).collect();
        let exclude = m.train.get(&user).map(Vec::as_slice).unwrap_or(&[]);
        let ranked = rank(&scores, exclude);
        let n = ranked.len().min(k);
        ptr::copy_nonoverlapping(ranked.as_ptr(), items, n);
        *written = n;
        Ok(())
    })
}
