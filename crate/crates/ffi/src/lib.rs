//! C interface to psadkit.
//!
//! Every fallible function returns a status code: `PSADKIT_OK` (0), a
//! positive code mirroring `psadkit::Error::code`, or one of the negative
//! codes for misuse at the boundary. The message for the most recent failure
//! on the calling thread is available from `psadkit_last_error`.
//!
//! Objects are opaque and owned by the caller once returned; release them
//! with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use psadkit::dataset::{load_corpus, Context, Corpus, ParticipantProfile};
use psadkit::featurize::{featurize_corpus, FeatureSet, FrameParams, LexiconSet, N_FEATURES};
use psadkit::psad::{train_psad_corpus, PsadConfig, PsadModel};
use psadkit::stats::wilcoxon_signed_rank;
use psadkit::Error;

pub const PSADKIT_OK: c_int = 0;
pub const PSADKIT_ERR_MISSING_FILE: c_int = 1;
pub const PSADKIT_ERR_SCHEMA_VIOLATION: c_int = 2;
pub const PSADKIT_ERR_DUPLICATE_SAMPLE: c_int = 3;
pub const PSADKIT_ERR_CORPUS_TOO_SMALL: c_int = 4;
pub const PSADKIT_ERR_SIGNAL_TOO_SHORT: c_int = 5;
pub const PSADKIT_ERR_EMPTY_TRANSCRIPT: c_int = 6;
pub const PSADKIT_ERR_SCALER_NOT_FITTED: c_int = 7;
pub const PSADKIT_ERR_TOO_FEW_POINTS: c_int = 8;
pub const PSADKIT_ERR_DEGENERATE_CLUSTERING: c_int = 9;
pub const PSADKIT_ERR_ALL_ZERO_DIFFERENCES: c_int = 10;
pub const PSADKIT_ERR_NO_PAIRED_PARTICIPANTS: c_int = 11;
pub const PSADKIT_ERR_SHAPE_MISMATCH: c_int = 12;
pub const PSADKIT_ERR_STALE_CACHE: c_int = 13;
pub const PSADKIT_ERR_EMPTY_DATASET: c_int = 14;
pub const PSADKIT_ERR_CONFIG_INVALID: c_int = 15;
pub const PSADKIT_ERR_VERSION_MISMATCH: c_int = 16;
pub const PSADKIT_ERR_CORRUPT_FILE: c_int = 17;
pub const PSADKIT_ERR_EMPTY_SUBSET: c_int = 18;
pub const PSADKIT_ERR_MODEL_NOT_TRAINED: c_int = 19;
pub const PSADKIT_ERR_EMPTY_PREDICTIONS: c_int = 20;
pub const PSADKIT_ERR_EMPTY_GRID: c_int = 21;
pub const PSADKIT_ERR_IO: c_int = 22;
pub const PSADKIT_ERR_AUDIO: c_int = 23;
/// A required pointer argument was null.
pub const PSADKIT_ERR_NULL_ARGUMENT: c_int = -1;
/// A string argument was not valid UTF-8.
pub const PSADKIT_ERR_INVALID_UTF8: c_int = -2;
/// An enum-like integer argument was out of range.
pub const PSADKIT_ERR_INVALID_ARGUMENT: c_int = -3;
/// The library panicked; this is a bug.
pub const PSADKIT_ERR_PANIC: c_int = -99;

pub const PSADKIT_CONTEXT_NON_EVALUATIVE: c_int = 0;
pub const PSADKIT_CONTEXT_EVALUATIVE: c_int = 1;

/// Loaded corpus with its extracted features.
pub struct PsadkitCorpus {
    corpus: Corpus,
    features: Vec<FeatureSet>,
}

/// Trained detector.
pub struct PsadkitModel {
    model: PsadModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    code: c_int,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: e.code() as c_int,
            message: e.to_string(),
        }
    }
}

fn fail(code: c_int, message: &str) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

fn set_last_error(message: Option<String>) {
    let c = message.map(|m| CString::new(m.replace('\0', " ")).expect("nul bytes removed"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            PSADKIT_OK
        }
        Ok(Err(e)) => {
            set_last_error(Some(e.message));
            e.code
        }
        Err(_) => {
            set_last_error(Some("internal panic".into()));
            PSADKIT_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(PSADKIT_ERR_NULL_ARGUMENT, &format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PSADKIT_ERR_INVALID_UTF8, &format!("{what} is not UTF-8")))
}

fn nonnull<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(fail(PSADKIT_ERR_NULL_ARGUMENT, &format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message for the last failed call on this thread, or null after a
/// success. Valid until the next psadkit call on the same thread.
#[no_mangle]
pub extern "C" fn psadkit_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn psadkit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a corpus manifest and extract features with the built-in lexicons.
///
/// # Safety
/// `manifest` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn psadkit_corpus_load(manifest: *const c_char, out: *mut *mut PsadkitCorpus) -> c_int {
    guard(|| {
        nonnull(out, "out")?;
        let path = PathBuf::from(str_arg(manifest, "manifest")?);
        let corpus = load_corpus(&path)?;
        let (features, _) = featurize_corpus(&corpus, &LexiconSet::builtin(), FrameParams::default())?;
        *out = Box::into_raw(Box::new(PsadkitCorpus { corpus, features }));
        Ok(())
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn psadkit_corpus_len(corpus: *const PsadkitCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.len())
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psadkit_corpus_free(corpus: *mut PsadkitCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Train a detector on the whole corpus. `config_json` may be null for the
/// default configuration.
///
/// # Safety
/// `corpus` must be a live handle, `config_json` null or a valid C string,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn psadkit_model_train(
    corpus: *const PsadkitCorpus,
    config_json: *const c_char,
    out: *mut *mut PsadkitModel,
) -> c_int {
    guard(|| {
        nonnull(out, "out")?;
        nonnull(corpus, "corpus")?;
        let c = &*corpus;
        let config: PsadConfig = if config_json.is_null() {
            PsadConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Error::ConfigInvalid(e.to_string()))?
        };
        config.validate()?;
        let model = train_psad_corpus(&c.corpus, &c.features, &config)?;
        *out = Box::into_raw(Box::new(PsadkitModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `dir` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn psadkit_model_save(model: *const PsadkitModel, dir: *const c_char) -> c_int {
    guard(|| {
        nonnull(model, "model")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        (*model).model.save_bundle(&dir)?;
        Ok(())
    })
}

/// # Safety
/// `dir` must be a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn psadkit_model_load(dir: *const c_char, out: *mut *mut PsadkitModel) -> c_int {
    guard(|| {
        nonnull(out, "out")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let model = PsadModel::load_bundle(&dir)?;
        *out = Box::into_raw(Box::new(PsadkitModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn psadkit_model_free(model: *mut PsadkitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Score one sample.
///
/// `features` points to 17 raw feature values in the canonical order,
/// `scales` to the four trait scores (DASS, SIAS, BFNE, DERS). On success
/// `probability` receives the positive-class probability and `positive`
/// receives 1 or 0.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn psadkit_model_predict(
    model: *const PsadkitModel,
    features: *const f64,
    context: c_int,
    scales: *const f64,
    probability: *mut f64,
    positive: *mut c_int,
) -> c_int {
    guard(|| {
        nonnull(model, "model")?;
        nonnull(features, "features")?;
        nonnull(scales, "scales")?;
        nonnull(probability, "probability")?;
        nonnull(positive, "positive")?;
        let context = match context {
            PSADKIT_CONTEXT_NON_EVALUATIVE => Context::NonEvaluative,
            PSADKIT_CONTEXT_EVALUATIVE => Context::Evaluative,
            _ => return Err(fail(PSADKIT_ERR_INVALID_ARGUMENT, "context must be 0 or 1")),
        };
        let mut raw = [0.0; N_FEATURES];
        raw.copy_from_slice(std::slice::from_raw_parts(features, N_FEATURES));
        let s = std::slice::from_raw_parts(scales, 4);
        let profile = ParticipantProfile {
            participant_id: String::new(),
            dass: s[0],
            sias: s[1],
            bfne: s[2],
            ders: s[3],
        };
        let p = (*model).model.predict(&FeatureSet::from_array(raw)?, context, &profile)?;
        *probability = p.probability;
        *positive = c_int::from(p.label.positive);
        Ok(())
    })
}

/// Exact or normal-approximation two-sided Wilcoxon signed-rank p-value for
/// `n` paired observations `(x[i], y[i])`.
///
/// # Safety
/// `x` and `y` must be valid for `n` reads, `p_value` writable.
#[no_mangle]
pub unsafe extern "C" fn psadkit_wilcoxon(x: *const f64, y: *const f64, n: usize, p_value: *mut f64) -> c_int {
    guard(|| {
        nonnull(x, "x")?;
        nonnull(y, "y")?;
        nonnull(p_value, "p_value")?;
        let x = std::slice::from_raw_parts(x, n);
        let y = std::slice::from_raw_parts(y, n);
        let pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
        *p_value = wilcoxon_signed_rank(&pairs)?.p_value;
        Ok(())
    })
}
