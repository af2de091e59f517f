//! C ABI over the medner library.
//!
//! Every fallible entry point returns a [`MednerStatus`]; on failure the
//! message is available from [`medner_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.
//! Strings returned to C are released with [`medner_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use medner::corpus::{generate_synthetic_corpus, save_annotations, save_conll, Corpus};
use medner::crf::{viterbi, CrfScores};
use medner::training::{load_checkpoint, Model};
use medner::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MednerStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Checkpoint = 5,
    Numeric = 6,
    Panic = 7,
}

/// Loaded model with a trained head.
pub struct MednerModel {
    model: Model,
}

/// In-memory annotated corpus.
pub struct MednerCorpus {
    corpus: Corpus,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> MednerStatus {
    match err {
        Error::Io(_) => MednerStatus::Io,
        Error::Parse { .. } | Error::Bio { .. } | Error::Json(_) => MednerStatus::Parse,
        Error::Checkpoint { .. } => MednerStatus::Checkpoint,
        Error::Numeric(_) => MednerStatus::Numeric,
        Error::Shape { .. } | Error::Contract(_) | Error::Length { .. } | Error::Config { .. } => {
            MednerStatus::InvalidArgument
        }
    }
}

struct Failure(MednerStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MednerStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any failure or panic, and returns the status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MednerStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MednerStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            MednerStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MednerStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn medner_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn medner_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Harmonic mean of precision and recall.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn medner_f1_from_pr(precision: f64, recall: f64, out: *mut f64) -> MednerStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = medner::eval::f1_from_pr(precision, recall)?;
        Ok(())
    })
}

unsafe fn crf_scores(
    emissions: *const f64,
    n: usize,
    k: usize,
    transitions: *const f64,
    start: *const f64,
    stop: *const f64,
) -> Result<CrfScores, Failure> {
    if n == 0 || k == 0 {
        return Err(Failure(MednerStatus::InvalidArgument, "n and k must be positive".into()));
    }
    let len = n
        .checked_mul(k)
        .ok_or_else(|| Failure(MednerStatus::InvalidArgument, "n * k overflows".into()))?;
    let e = slice_arg(emissions, len, "emissions")?;
    let t = slice_arg(transitions, k * k, "transitions")?;
    let s = slice_arg(start, k, "start")?;
    let p = slice_arg(stop, k, "stop")?;
    Ok(CrfScores::new(e.to_vec(), t.to_vec(), s.to_vec(), p.to_vec())?)
}

/// Log partition function of a linear-chain CRF. `emissions` is row-major
/// `n x k`, `transitions` is `k x k` indexed `[from][to]`.
///
/// # Safety
/// Every pointer must reference the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn medner_crf_log_partition(
    emissions: *const f64,
    n: usize,
    k: usize,
    transitions: *const f64,
    start: *const f64,
    stop: *const f64,
    out: *mut f64,
) -> MednerStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = crf_scores(emissions, n, k, transitions, start, stop)?.log_partition();
        Ok(())
    })
}

/// Best tag sequence; ties resolve to the lexicographically smallest.
/// `tags_out` receives `n` entries.
///
/// # Safety
/// As for [`medner_crf_log_partition`]; `tags_out` must hold `n` entries.
#[no_mangle]
pub unsafe extern "C" fn medner_crf_viterbi(
    emissions: *const f64,
    n: usize,
    k: usize,
    transitions: *const f64,
    start: *const f64,
    stop: *const f64,
    tags_out: *mut usize,
    score_out: *mut f64,
) -> MednerStatus {
    guard(|| {
        if tags_out.is_null() {
            return Err(null("tags_out"));
        }
        if score_out.is_null() {
            return Err(null("score_out"));
        }
        let (tags, score) = viterbi(&crf_scores(emissions, n, k, transitions, start, stop)?);
        std::slice::from_raw_parts_mut(tags_out, n).copy_from_slice(&tags);
        *score_out = score;
        Ok(())
    })
}

/// Generates a synthetic corpus.
///
/// # Safety
/// `out` must be a valid pointer; it receives a handle owned by the caller.
#[no_mangle]
pub unsafe extern "C" fn medner_corpus_generate(size: usize, seed: u64, out: *mut *mut MednerCorpus) -> MednerStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let corpus = generate_synthetic_corpus(size, seed);
        *out = Box::into_raw(Box::new(MednerCorpus { corpus }));
        Ok(())
    })
}

/// Number of sentences; 0 for a NULL handle.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn medner_corpus_len(corpus: *const MednerCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.len())
}

/// Writes the tag file and, when `annotations_path` is not NULL, the
/// annotation file.
///
/// # Safety
/// `corpus` must be a live handle and the paths NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn medner_corpus_save(
    corpus: *const MednerCorpus,
    tags_path: *const c_char,
    annotations_path: *const c_char,
) -> MednerStatus {
    guard(|| {
        let c = corpus.as_ref().ok_or_else(|| null("corpus"))?;
        save_conll(&c.corpus, Path::new(str_arg(tags_path, "tags_path")?))?;
        if !annotations_path.is_null() {
            save_annotations(&c.corpus, Path::new(str_arg(annotations_path, "annotations_path")?))?;
        }
        Ok(())
    })
}

/// # Safety
/// `corpus` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn medner_corpus_free(corpus: *mut MednerCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Loads a trained checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn medner_model_load(path: *const c_char, out: *mut *mut MednerModel) -> MednerStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = load_checkpoint(Path::new(str_arg(path, "path")?))?.model;
        model.task()?;
        *out = Box::into_raw(Box::new(MednerModel { model }));
        Ok(())
    })
}

/// Tags one line of whitespace-tokenized text. `json_out` receives a JSON
/// object with tokens, tags, spans and relations; free it with
/// [`medner_string_free`].
///
/// # Safety
/// `model` must be a live handle, `text` a NUL-terminated string and
/// `json_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn medner_model_predict_json(
    model: *const MednerModel,
    text: *const c_char,
    json_out: *mut *mut c_char,
) -> MednerStatus {
    guard(|| {
        if json_out.is_null() {
            return Err(null("json_out"));
        }
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let line = str_arg(text, "text")?;
        if line.contains('\n') {
            return Err(Failure(MednerStatus::InvalidArgument, "text must be a single line".into()));
        }
        let json = medner::cli::predict_line(&m.model, line)?;
        *json_out = CString::new(json)
            .map_err(|_| Failure(MednerStatus::Panic, "interior NUL in output".into()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn medner_model_free(model: *mut MednerModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
