//! C ABI over the `dncf` engine.
//!
//! Datasets and models are opaque heap handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns a
//! [`DncfStatus`]; the message of the most recent failure on the calling
//! thread is available from [`dncf_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dncf::cli::{train_model, MetricsLog, Prepared};
use dncf::eval::evaluate;
use dncf::synth::{generate, SynthConfig};
use dncf::{Checkpoint, CombinerKind, Dataset, Error, Model, ModelKind, ModelSpec, OptimizerKind, TrainSettings};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DncfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Config = 5,
    Numeric = 6,
    Checkpoint = 7,
    Internal = 8,
    Panic = 9,
}

impl From<&Error> for DncfStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => DncfStatus::Io,
            Error::Parse { .. } | Error::Format(_) | Error::Index { .. } | Error::Sampling(_) | Error::Protocol(_) => {
                DncfStatus::Data
            }
            Error::Config(_) | Error::Fusion(_) | Error::Shape(_) => DncfStatus::Config,
            Error::Checkpoint(_) => DncfStatus::Checkpoint,
            Error::NonFinite(_) => DncfStatus::Numeric,
            Error::Internal(_) => DncfStatus::Internal,
        }
    }
}

/// Loaded interaction data with its test instances.
pub struct DncfDataset {
    data: Dataset,
}

/// A model of any kind together with its hyperparameters.
pub struct DncfModel {
    model: Model,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DncfMetrics {
    pub hr: f64,
    pub ndcg: f64,
    pub k: usize,
    pub users: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DncfTrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub l2: f64,
    pub neg_ratio: usize,
    pub seed: u64,
    /// 0 = Adam, 1 = SGD.
    pub optimizer: u32,
    pub eval_every: usize,
    /// 0 disables early stopping.
    pub patience: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: DncfStatus, msg: impl Into<String>) -> DncfStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), DncfStatus>) -> DncfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DncfStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(DncfStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: dncf::Result<T>) -> Result<T, DncfStatus> {
    r.map_err(|e| fail(DncfStatus::from(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DncfStatus> {
    if p.is_null() {
        return Err(fail(DncfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DncfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, DncfStatus> {
    str_arg(p, what).map(PathBuf::from)
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, DncfStatus> {
    p.as_ref().ok_or_else(|| fail(DncfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, DncfStatus> {
    p.as_mut().ok_or_else(|| fail(DncfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, DncfStatus> {
    p.as_mut().ok_or_else(|| fail(DncfStatus::NullPointer, "output pointer is null"))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dncf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dncf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads `<train>`, `<test>` and `<negatives>` files into a new dataset.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dncf_dataset_load(
    train: *const c_char,
    test: *const c_char,
    negatives: *const c_char,
    out: *mut *mut DncfDataset,
) -> DncfStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let (tr, te, ne) = (path_arg(train, "train")?, path_arg(test, "test")?, path_arg(negatives, "negatives")?);
        let data = lift(dncf::load_dataset(&tr, &te, &ne))?;
        *out = Box::into_raw(Box::new(DncfDataset { data }));
        Ok(())
    })
}

/// Generates a clustered synthetic dataset.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dncf_dataset_synthetic(
    users: usize,
    items: usize,
    clusters: usize,
    seed: u64,
    out: *mut *mut DncfDataset,
) -> DncfStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let cfg = SynthConfig {
            users,
            items,
            clusters,
            seed,
            ..SynthConfig::default()
        };
        let data = lift(generate(&cfg))?;
        *out = Box::into_raw(Box::new(DncfDataset { data }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dncf_dataset_num_users(dataset: *const DncfDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.store.num_users())
}

/// # Safety
/// `dataset` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dncf_dataset_num_items(dataset: *const DncfDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.store.num_items())
}

/// # Safety
/// `dataset` must be a handle from this library or NULL, and not used again.
#[no_mangle]
pub unsafe extern "C" fn dncf_dataset_free(dataset: *mut DncfDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Creates a freshly initialized model sized for `dataset`.
/// `kind` is one of itempop, dgmf, dmlp, dnmf, dncf_mf; `combiner` one of
/// sum, mean, concat, attention (NULL means sum).
///
/// # Safety
/// Strings must be NUL-terminated; `dataset` live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dncf_model_new(
    kind: *const c_char,
    factors: usize,
    combiner: *const c_char,
    dataset: *const DncfDataset,
    seed: u64,
    out: *mut *mut DncfModel,
) -> DncfStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let ds = handle(dataset, "dataset")?;
        let kind: ModelKind = lift(str_arg(kind, "kind")?.parse())?;
        let mut spec = ModelSpec::new(kind, factors);
        if !combiner.is_null() {
            spec.combiner = lift(str_arg(combiner, "combiner")?.parse::<CombinerKind>())?;
        }
        let store = &ds.data.store;
        let model = lift(Model::new(spec, store.num_users(), store.num_items(), seed))?;
        *out = Box::into_raw(Box::new(DncfModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a handle from this library or NULL, and not used again.
#[no_mangle]
pub unsafe extern "C" fn dncf_model_free(model: *mut DncfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Defaults: 50 epochs, batch 256, Adam at 0.001, L2 1e-6, 4 negatives,
/// validation every epoch, patience 5.
#[no_mangle]
pub extern "C" fn dncf_train_options_default() -> DncfTrainOptions {
    let s = TrainSettings::default();
    DncfTrainOptions {
        epochs: s.epochs,
        batch_size: s.batch_size,
        lr: s.lr,
        l2: s.l2,
        neg_ratio: s.neg_ratio,
        seed: s.seed,
        optimizer: 0,
        eval_every: s.eval_every,
        patience: s.patience.unwrap_or(0),
    }
}

/// Trains `model` with a held-out validation item per user, keeps the best
/// validation state and writes its HR@10 / NDCG@10 on the test instances.
///
/// # Safety
/// Handles must be live; `options` readable; `metrics` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn dncf_model_train(
    model: *mut DncfModel,
    dataset: *const DncfDataset,
    options: *const DncfTrainOptions,
    metrics: *mut DncfMetrics,
) -> DncfStatus {
    guard(|| {
        let m = handle_mut(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        let o = *handle(options, "options")?;
        let optimizer = match o.optimizer {
            0 => OptimizerKind::Adam,
            1 => OptimizerKind::Sgd,
            other => return Err(fail(DncfStatus::InvalidArgument, format!("unknown optimizer {other}"))),
        };
        if o.batch_size == 0 || o.neg_ratio == 0 || o.eval_every == 0 {
            return Err(fail(DncfStatus::InvalidArgument, "batch_size, neg_ratio and eval_every must be positive"));
        }
        let settings = TrainSettings {
            epochs: o.epochs,
            batch_size: o.batch_size,
            lr: o.lr,
            l2: o.l2,
            neg_ratio: o.neg_ratio,
            seed: o.seed,
            optimizer,
            eval_every: o.eval_every,
            patience: (o.patience > 0).then_some(o.patience),
        };
        let prepared = lift(Prepared::from_dataset(ds.data.clone(), o.seed))?;
        let summary = lift(train_model(m.model.clone(), &settings, &prepared, &mut MetricsLog::disabled(), ""))?;
        m.model = summary.model;
        if let Some(out) = metrics.as_mut() {
            *out = DncfMetrics {
                hr: summary.test.hr_at(10),
                ndcg: summary.test.ndcg_at(10),
                k: 10,
                users: summary.test.users,
            };
        }
        Ok(())
    })
}

/// Leave-one-out HR@k / NDCG@k over the dataset's test instances.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dncf_model_evaluate(
    model: *const DncfModel,
    dataset: *const DncfDataset,
    k: usize,
    out: *mut DncfMetrics,
) -> DncfStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        let out = out_ptr(out)?;
        if k == 0 {
            return Err(fail(DncfStatus::InvalidArgument, "k must be positive"));
        }
        let r = lift(evaluate(&m.model, &ds.data.store, &ds.data.test, k))?;
        *out = DncfMetrics {
            hr: r.hr_at(k),
            ndcg: r.ndcg_at(k),
            k,
            users: r.users,
        };
        Ok(())
    })
}

/// Score of (user, item): a probability, or a raw score for itempop and
/// dncf_mf.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dncf_model_score(
    model: *const DncfModel,
    dataset: *const DncfDataset,
    user: usize,
    item: usize,
    out: *mut f64,
) -> DncfStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        let out = out_ptr(out)?;
        *out = lift(m.model.score(&ds.data.store, user, item))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dncf_model_save(model: *const DncfModel, path: *const c_char) -> DncfStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let path = path_arg(path, "path")?;
        lift(m.model.to_checkpoint().save(&path))
    })
}

/// Replaces the parameters of `model` with a checkpoint of the same shape.
///
/// # Safety
/// `model` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dncf_model_load(model: *mut DncfModel, path: *const c_char) -> DncfStatus {
    guard(|| {
        let m = handle_mut(model, "model")?;
        let path = path_arg(path, "path")?;
        let ckpt = lift(Checkpoint::load(&path))?;
        lift(m.model.load_checkpoint(&ckpt))
    })
}

/// # Safety
/// `model` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn dncf_model_num_parameters(model: *const DncfModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_parameters())
}
