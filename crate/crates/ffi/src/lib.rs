//! C ABI over the `langpref` library.
//!
//! Every fallible function returns an [`LpStatus`]; on failure the message
//! is available from [`lp_last_error_message`] on the same thread. Strings
//! returned through out-parameters are owned by the caller and must be
//! released with [`lp_string_free`]. Handles are opaque and released with
//! their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use langpref::contextlab::{build_contrastive_context, label_position, render_prompt, PositionLabel};
use langpref::corpus::{load_dataset, segment_report, DatasetEntry, DatasetFormat, LanguageTag, TranslationStore};
use langpref::metrics::{bonferroni, fit_surrogate, paired_t_test, required_sample_size, Stars, Surrogate};
use langpref::probe::AblationSample;
use langpref::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Constraint = 5,
    Domain = 6,
    Config = 7,
    OutOfRange = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpPosition {
    First = 0,
    Middle = 1,
    Last = 2,
}

/// Result of a paired two-sided t-test with Bonferroni correction.
/// `stars` is 0 for not significant, else 1 to 3.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LpSignificance {
    pub t_stat: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub stars: u32,
    pub degenerate: bool,
}

/// Opaque handle over a loaded dataset.
pub struct LpDataset {
    entries: Vec<DatasetEntry>,
}

/// Opaque handle over a fitted linear surrogate.
pub struct LpSurrogate {
    inner: Surrogate,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> LpStatus {
    match err {
        Error::Io { .. } => LpStatus::Io,
        Error::Parse { .. } | Error::InvalidOutput(_) => LpStatus::Parse,
        Error::Constraint { .. } | Error::MissingTranslation { .. } => LpStatus::Constraint,
        Error::Domain(_) => LpStatus::Domain,
        Error::Config(_) | Error::MissingStage { .. } | Error::Capability { .. } => LpStatus::Config,
        Error::Range { .. } => LpStatus::OutOfRange,
        _ => LpStatus::Internal,
    }
}

struct Fail(LpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LpStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            LpStatus::Internal
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(LpStatus::NullPointer, format!("{name} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(LpStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

fn into_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s).map(CString::into_raw).map_err(|_| Fail(LpStatus::InvalidUtf8, "output contains a nul byte".into()))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn lp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a line-delimited dataset. `format` is `eli5_webgpt` or `miracl`.
///
/// # Safety
/// `path` and `format` must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lp_dataset_load(
    path: *const c_char,
    format: *const c_char,
    out: *mut *mut LpDataset,
) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let format: DatasetFormat = str_arg(format, "format")?.parse()?;
        let entries = load_dataset(Path::new(path), format)?;
        *out = Box::into_raw(Box::new(LpDataset { entries }));
        Ok(())
    })
}

/// Number of queries in the dataset; 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lp_dataset_len(dataset: *const LpDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.entries.len())
}

/// Renders the all-English citation probe prompt for `statement` of query
/// `index`, cited to `cited_id`.
///
/// # Safety
/// `dataset` must be a live handle, `statement` a nul-terminated string and
/// `out` writable. Free the result with [`lp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn lp_dataset_render_prompt(
    dataset: *const LpDataset,
    index: usize,
    statement: *const c_char,
    cited_id: u8,
    out: *mut *mut c_char,
) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let statement = str_arg(statement, "statement")?;
        let entry = ds
            .entries
            .get(index)
            .ok_or_else(|| Fail(LpStatus::OutOfRange, format!("query index {index} out of range")))?;
        let store = TranslationStore::new();
        let ctx = build_contrastive_context(&entry.query, &entry.docs, &store, cited_id, &LanguageTag::en())?;
        let bundle = render_prompt(&ctx, statement, &entry.docs, &store)?;
        *out = into_c_string(bundle.full_text())?;
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lp_dataset_free(dataset: *mut LpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Splits a report into single-citation statements; writes JSON
/// `{"statements": [...], "dropped": [...]}` to `out_json`.
///
/// # Safety
/// `report` must be a nul-terminated string and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn lp_segment_report(
    report: *const c_char,
    k_docs: usize,
    out_json: *mut *mut c_char,
) -> LpStatus {
    guard(|| {
        let out = out_arg(out_json, "out_json")?;
        let seg = segment_report(str_arg(report, "report")?, k_docs)?;
        let json = serde_json::to_string(&seg).map_err(|e| Fail(LpStatus::Internal, e.to_string()))?;
        *out = into_c_string(json)?;
        Ok(())
    })
}

/// `correct_target / n - correct_en / n`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lp_accuracy_gap(
    correct_target: usize,
    correct_en: usize,
    n: usize,
    out: *mut f64,
) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if n == 0 || correct_target > n || correct_en > n {
            return Err(Fail(LpStatus::Domain, format!("counts {correct_target}, {correct_en} invalid for n = {n}")));
        }
        *out = correct_target as f64 / n as f64 - correct_en as f64 / n as f64;
        Ok(())
    })
}

/// Paired two-sided t-test of `target - en` over `n` pairs, Bonferroni
/// corrected for `family_size` comparisons.
///
/// # Safety
/// `en` and `target` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lp_paired_t_test(
    en: *const f64,
    target: *const f64,
    n: usize,
    family_size: usize,
    out: *mut LpSignificance,
) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if family_size == 0 {
            return Err(Fail(LpStatus::Domain, "family_size must be at least 1".into()));
        }
        let t = paired_t_test(slice_arg(en, n, "en")?, slice_arg(target, n, "target")?)?;
        let p_adjusted = bonferroni(t.p_raw, family_size);
        let stars = match Stars::from_p(p_adjusted) {
            Stars::Ns => 0,
            Stars::One => 1,
            Stars::Two => 2,
            Stars::Three => 3,
        };
        *out = LpSignificance { t_stat: t.t_stat, p_raw: t.p_raw, p_adjusted, stars, degenerate: t.degenerate };
        Ok(())
    })
}

/// Smallest per-group n for a two-sided two-sample t-test.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lp_required_sample_size(effect: f64, alpha: f64, power: f64, out: *mut usize) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = required_sample_size(effect, alpha, power)?;
        Ok(())
    })
}

/// Position of the document at 1-based `ordinal` among `k_docs`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lp_label_position(k_docs: usize, ordinal: usize, out: *mut LpPosition) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = match label_position(k_docs, ordinal)? {
            PositionLabel::First => LpPosition::First,
            PositionLabel::Middle => LpPosition::Middle,
            PositionLabel::Last => LpPosition::Last,
        };
        Ok(())
    })
}

/// Fits the linear surrogate. `masks` is row-major `n_samples x n_sentences`
/// with nonzero bytes meaning "sentence kept".
///
/// # Safety
/// `masks` must hold `n_samples * n_sentences` bytes, `targets` `n_samples`
/// doubles, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lp_surrogate_fit(
    masks: *const u8,
    targets: *const f64,
    n_samples: usize,
    n_sentences: usize,
    lambda: f64,
    out: *mut *mut LpSurrogate,
) -> LpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cells = n_samples
            .checked_mul(n_sentences)
            .ok_or_else(|| Fail(LpStatus::OutOfRange, "mask size overflows".into()))?;
        let masks = slice_arg(masks, cells, "masks")?;
        let targets = slice_arg(targets, n_samples, "targets")?;
        let samples: Vec<AblationSample> = targets
            .iter()
            .enumerate()
            .map(|(i, &y)| AblationSample {
                mask: masks[i * n_sentences..(i + 1) * n_sentences].iter().map(|&b| b != 0).collect(),
                logit_prob: y,
            })
            .collect();
        let inner = fit_surrogate(&samples, lambda)?;
        *out = Box::into_raw(Box::new(LpSurrogate { inner }));
        Ok(())
    })
}

/// # Safety
/// `surrogate` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lp_surrogate_weight_count(surrogate: *const LpSurrogate) -> usize {
    surrogate.as_ref().map_or(0, |s| s.inner.weights.len())
}

/// Copies up to `len` weights into `out`.
///
/// # Safety
/// `surrogate` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn lp_surrogate_weights(surrogate: *const LpSurrogate, out: *mut f64, len: usize) -> LpStatus {
    guard(|| {
        let s = surrogate.as_ref().ok_or_else(|| null("surrogate"))?;
        let w = &s.inner.weights;
        if len < w.len() {
            return Err(Fail(LpStatus::OutOfRange, format!("buffer holds {len} of {} weights", w.len())));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(w.as_ptr(), out, w.len());
        Ok(())
    })
}

/// Bias, residual and rank flag of a fitted surrogate.
///
/// # Safety
/// `surrogate` must be a live handle; out-pointers may be null to skip them.
#[no_mangle]
pub unsafe extern "C" fn lp_surrogate_summary(
    surrogate: *const LpSurrogate,
    bias: *mut f64,
    fit_residual: *mut f64,
    rank_deficient: *mut bool,
) -> LpStatus {
    guard(|| {
        let s = &surrogate.as_ref().ok_or_else(|| null("surrogate"))?.inner;
        if let Some(b) = bias.as_mut() {
            *b = s.bias;
        }
        if let Some(r) = fit_residual.as_mut() {
            *r = s.fit_residual;
        }
        if let Some(f) = rank_deficient.as_mut() {
            *f = s.rank_deficient;
        }
        Ok(())
    })
}

/// # Safety
/// `surrogate` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lp_surrogate_free(surrogate: *mut LpSurrogate) {
    if !surrogate.is_null() {
        drop(Box::from_raw(surrogate));
    }
}
