//! C ABI over the core library. Objects cross the boundary as opaque
//! handles created and released by this library; every fallible call
//! returns a [`ClauseStatus`] and leaves a message retrievable with
//! [`clause_last_error_message`] on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use clause::episode::{replay_trace, Budgets, EpisodeConfig, EpisodeTrace, Mode, Prices};
use clause::harness::{evaluate, generate_tasks, run_episode, Dataset, RunOptions, SyntheticTaskConfig};
use clause::lcmappo::load_checkpoint;
use clause::neural::{Model, NetConfig};
use clause::Error;

/// Outcome of a call. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClauseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Config = 4,
    Io = 5,
    Checkpoint = 6,
    Audit = 7,
    OutOfRange = 8,
    Internal = 9,
    Panic = 10,
}

/// A graph with its train and eval questions.
pub struct ClauseDataset {
    inner: Dataset,
}

/// Trained (or freshly initialised) networks plus the prices they were
/// trained against.
pub struct ClauseModel {
    model: Model,
    prices: Prices,
}

/// Per-episode caps.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClauseBudgets {
    pub beta_edge: f64,
    pub beta_lat: f64,
    pub beta_tok: f64,
}

/// Result of one episode.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClauseEpisodeResult {
    pub em: u8,
    pub c_edge: u64,
    pub c_lat: u64,
    pub c_tok: u64,
    pub selected: u32,
}

/// Aggregates over a set of evaluation episodes.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClauseEvalReport {
    pub episodes: u64,
    pub em: f64,
    pub mean_edge: f64,
    pub mean_lat: f64,
    pub mean_tok: f64,
    pub feasibility: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> ClauseStatus {
    match e {
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => ClauseStatus::Parse,
        Error::Config(_) | Error::Infeasible(_) | Error::EmptyGraph | Error::EmptyQuestion => ClauseStatus::Config,
        Error::Io(_) => ClauseStatus::Io,
        Error::Checkpoint(_) => ClauseStatus::Checkpoint,
        Error::Audit { .. } => ClauseStatus::Audit,
        _ => ClauseStatus::Internal,
    }
}

struct Fail(ClauseStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, translating errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ClauseStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClauseStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside the library");
            ClauseStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(ClauseStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ClauseStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(ClauseStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(ClauseStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn budgets(b: &ClauseBudgets) -> Result<Budgets, Fail> {
    Ok(Budgets::new(b.beta_edge, b.beta_lat, b.beta_tok)?)
}

/// Length in bytes of the last error message on this thread, excluding the
/// terminating nul; 0 when there is none.
#[no_mangle]
pub extern "C" fn clause_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes().len()))
}

/// Copies the last error message (nul-terminated, truncated to fit) into
/// `buf`. Returns the number of bytes written excluding the nul, or -1 when
/// `buf` is null or `len` is 0.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn clause_last_error_message(buf: *mut c_char, len: usize) -> i64 {
    if buf.is_null() || len == 0 {
        return -1;
    }
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
        n as i64
    })
}

/// Generates a synthetic task family from a JSON configuration (`"{}"`
/// selects the defaults; unknown keys are rejected).
///
/// # Safety
/// `config_json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clause_dataset_generate(config_json: *const c_char, out: *mut *mut ClauseDataset) -> ClauseStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let cfg: SyntheticTaskConfig =
            serde_json::from_str(text(config_json, "config_json")?).map_err(|e| Fail(ClauseStatus::Parse, e.to_string()))?;
        let ds = generate_tasks(&cfg)?;
        *out = Box::into_raw(Box::new(ClauseDataset { inner: ds }));
        Ok(())
    })
}

/// Loads a directory written by the `gen-data` command.
///
/// # Safety
/// `dir` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clause_dataset_load_dir(dir: *const c_char, out: *mut *mut ClauseDataset) -> ClauseStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let ds = clause::cli::read_dataset(Path::new(text(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(ClauseDataset { inner: ds }));
        Ok(())
    })
}

/// Triple, train-example and eval-example counts.
///
/// # Safety
/// `ds` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn clause_dataset_counts(
    ds: *const ClauseDataset,
    triples: *mut u64,
    train: *mut u64,
    eval: *mut u64,
) -> ClauseStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.inner;
        out_ptr(triples, "triples")?;
        out_ptr(train, "train")?;
        out_ptr(eval, "eval")?;
        *triples = ds.graph.triple_count() as u64;
        *train = ds.train.len() as u64;
        *eval = ds.eval.len() as u64;
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `ds` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn clause_dataset_free(ds: *mut ClauseDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fresh networks with the default sizes.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clause_model_new(seed: u64, out: *mut *mut ClauseModel) -> ClauseStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let model = Model::new(NetConfig::default(), seed)?;
        *out = Box::into_raw(Box::new(ClauseModel { model, prices: Prices::default() }));
        Ok(())
    })
}

/// Loads a checkpoint written by training.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clause_model_load(path: *const c_char, out: *mut *mut ClauseModel) -> ClauseStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let (model, prices) = load_checkpoint(Path::new(text(path, "path")?))?;
        *out = Box::into_raw(Box::new(ClauseModel { model, prices }));
        Ok(())
    })
}

/// Writes the 64-character hex parameter checksum plus a nul into `buf`,
/// which must hold at least 65 bytes.
///
/// # Safety
/// `model` must come from this library; `buf` must point to `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn clause_model_checksum(model: *const ClauseModel, buf: *mut c_char, len: usize) -> ClauseStatus {
    guard(|| {
        let m = handle(model, "model")?;
        out_ptr(buf, "buf")?;
        let sum = m.model.checksum();
        if len < sum.len() + 1 {
            return Err(Fail(ClauseStatus::OutOfRange, format!("buffer of {len} bytes cannot hold the checksum")));
        }
        ptr::copy_nonoverlapping(sum.as_ptr().cast::<c_char>(), buf, sum.len());
        *buf.add(sum.len()) = 0;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn clause_model_free(model: *mut ClauseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs eval example `index` in cap mode. When `trace_json` is non-null it
/// receives the episode trace as JSON, to be released with
/// [`clause_string_free`].
///
/// # Safety
/// Handles must come from this library; `out` must be writable;
/// `trace_json` may be null.
#[no_mangle]
pub unsafe extern "C" fn clause_run_eval_episode(
    ds: *const ClauseDataset,
    model: *const ClauseModel,
    index: u64,
    caps: ClauseBudgets,
    seed: u64,
    greedy: bool,
    out: *mut ClauseEpisodeResult,
    trace_json: *mut *mut c_char,
) -> ClauseStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.inner;
        let m = handle(model, "model")?;
        out_ptr(out, "out")?;
        let ex = ds
            .eval
            .get(index as usize)
            .ok_or_else(|| Fail(ClauseStatus::OutOfRange, format!("eval index {index} of {}", ds.eval.len())))?;
        let opts = RunOptions { greedy, cap_prices: Some(m.prices), ..RunOptions::default() };
        let r = run_episode(&ds.graph, ex, &m.model.actors, Mode::Cap(budgets(&caps)?), EpisodeConfig::default(), seed, opts)?;
        let c = r.counters.as_array();
        *out = ClauseEpisodeResult { em: r.em, c_edge: c[0], c_lat: c[1], c_tok: c[2], selected: r.selected.len() as u32 };
        if !trace_json.is_null() {
            let json = r.trace.to_json()?;
            *trace_json = CString::new(json).map_err(|e| Fail(ClauseStatus::Internal, e.to_string()))?.into_raw();
        }
        Ok(())
    })
}

/// Evaluates the first `n` eval examples (all when `n` is 0) in cap mode.
///
/// # Safety
/// Handles must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clause_evaluate(
    ds: *const ClauseDataset,
    model: *const ClauseModel,
    caps: ClauseBudgets,
    seed: u64,
    n: u64,
    out: *mut ClauseEvalReport,
) -> ClauseStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.inner;
        let m = handle(model, "model")?;
        out_ptr(out, "out")?;
        let take = if n == 0 { ds.eval.len() } else { (n as usize).min(ds.eval.len()) };
        let b = budgets(&caps)?;
        let opts = RunOptions { greedy: true, cap_prices: Some(m.prices), ..RunOptions::default() };
        let (r, _) = evaluate(&ds.graph, &ds.eval[..take], &m.model.actors, Mode::Cap(b), &EpisodeConfig::default(), seed, opts, None)?;
        *out = ClauseEvalReport {
            episodes: r.episodes as u64,
            em: r.em,
            mean_edge: r.mean_cost[0],
            mean_lat: r.mean_cost[1],
            mean_tok: r.mean_cost[2],
            feasibility: r.feasibility,
        };
        Ok(())
    })
}

/// Replays a JSON trace against the dataset's graph. Returns
/// `ClauseStatus::Audit` when the trace does not reproduce.
///
/// # Safety
/// `ds` must come from this library; `trace_json` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn clause_audit_trace(ds: *const ClauseDataset, trace_json: *const c_char) -> ClauseStatus {
    guard(|| {
        let ds = &handle(ds, "dataset")?.inner;
        let trace = EpisodeTrace::from_json(text(trace_json, "trace_json")?)?;
        replay_trace(&ds.graph, &trace)?;
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn clause_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
