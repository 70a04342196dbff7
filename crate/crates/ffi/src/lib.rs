//! C ABI over the `r2ag` library.
//!
//! Handles are opaque pointers created by `*_load`/`*_init` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`R2agStatus`]; on failure [`r2ag_last_error`] describes the cause.
//! Strings returned through `out` parameters are owned by the caller and
//! must be released with [`r2ag_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use r2ag::embeddings::{load_embeddings, EmbeddingTable, GroupVectors};
use r2ag::evaluation::score_patient;
use r2ag::generation::{retrieve_for_patient, select_paths};
use r2ag::gro::Selection;
use r2ag::kg::{load_kg, KnowledgeGraph};
use r2ag::linker::link_concepts;
use r2ag::policy::{init_params, PolicyParams};
use r2ag::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum R2agStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Invalid configuration or argument value.
    Config = 3,
    /// Input files or data could not be read or were malformed.
    Data = 4,
    /// The text-generation endpoint failed.
    Endpoint = 5,
    /// The library panicked; the handle involved should be discarded.
    Panic = 6,
}

/// Graph, embeddings and the derived group vectors.
pub struct R2agModel {
    kg: KnowledgeGraph,
    table: EmbeddingTable,
    gv: GroupVectors,
}

/// Retriever policy parameters.
pub struct R2agPolicy {
    params: PolicyParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(R2agStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Endpoint(_) => R2agStatus::Endpoint,
            Error::Config(_) | Error::Shape(_) => R2agStatus::Config,
            _ => R2agStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(R2agStatus::Data, e.to_string())
    }
}

fn guard<F>(f: F) -> R2agStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => R2agStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            R2agStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(R2agStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(R2agStatus::InvalidUtf8, format!("`{name}` is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(R2agStatus::NullArgument, format!("`{name}` is null")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(R2agStatus::NullArgument, "`out` is null".into()));
    }
    *out = value;
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(R2agStatus::NullArgument, "`out` is null".into()));
    }
    let c = CString::new(s).map_err(|e| Failure(R2agStatus::Data, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn r2ag_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn r2ag_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn r2ag_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads the concept and relation TSV files and the embedding file.
///
/// # Safety
/// Path arguments must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn r2ag_model_load(
    concepts: *const c_char,
    relations: *const c_char,
    embeddings: *const c_char,
    out: *mut *mut R2agModel,
) -> R2agStatus {
    guard(|| {
        let concepts = str_arg(concepts, "concepts")?;
        let relations = str_arg(relations, "relations")?;
        let embeddings = str_arg(embeddings, "embeddings")?;
        let kg = load_kg(Path::new(concepts), Path::new(relations))?;
        let table = load_embeddings(Path::new(embeddings), &kg)?;
        let gv = GroupVectors::build(&kg, &table)?;
        write_out(out, Box::into_raw(Box::new(R2agModel { kg, table, gv })))
    })
}

/// # Safety
/// `model` must be null or a handle from [`r2ag_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn r2ag_model_free(model: *mut R2agModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of concepts in the graph; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn r2ag_model_concept_count(model: *const R2agModel) -> usize {
    model.as_ref().map_or(0, |m| m.kg.concept_count())
}

/// Embedding dimension; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn r2ag_model_dim(model: *const R2agModel) -> usize {
    model.as_ref().map_or(0, |m| m.table.dim())
}

/// Fresh Glorot-initialized policy of dimension `d`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn r2ag_policy_init(d: usize, seed: u64, out: *mut *mut R2agPolicy) -> R2agStatus {
    guard(|| {
        let params = init_params(d, seed)?;
        write_out(out, Box::into_raw(Box::new(R2agPolicy { params })))
    })
}

/// Loads a JSON checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn r2ag_policy_load(path: *const c_char, out: *mut *mut R2agPolicy) -> R2agStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let params = PolicyParams::load(Path::new(path))?;
        write_out(out, Box::into_raw(Box::new(R2agPolicy { params })))
    })
}

/// Writes a JSON checkpoint.
///
/// # Safety
/// `policy` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn r2ag_policy_save(policy: *const R2agPolicy, path: *const c_char) -> R2agStatus {
    guard(|| {
        let policy = ref_arg(policy, "policy")?;
        let path = str_arg(path, "path")?;
        Ok(policy.params.save(Path::new(path))?)
    })
}

/// # Safety
/// `policy` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn r2ag_policy_free(policy: *mut R2agPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Concept ids linked in `text`, as a JSON array of strings.
///
/// # Safety
/// `model` must be a live handle, `text` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn r2ag_link(model: *const R2agModel, text: *const c_char, out: *mut *mut c_char) -> R2agStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let text = str_arg(text, "text")?;
        let ids: Vec<&str> = link_concepts(text, &m.kg).concepts().map(|c| m.kg.id(c).as_str()).collect();
        write_string(out, serde_json::to_string(&ids)?)
    })
}

/// Runs the retriever over `pre_admission` for `horizon` steps and returns
/// the reasoning paths as a JSON array of `{"origin", "steps"}` objects,
/// ordered by origin id. `sample = 0` picks the most probable action at
/// every step; otherwise actions are sampled with a generator seeded by
/// `seed`.
///
/// # Safety
/// Handles must be live, `pre_admission` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn r2ag_retrieve(
    model: *const R2agModel,
    policy: *const R2agPolicy,
    pre_admission: *const c_char,
    horizon: usize,
    sample: i32,
    seed: u64,
    out: *mut *mut c_char,
) -> R2agStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let p = ref_arg(policy, "policy")?;
        let text = str_arg(pre_admission, "pre_admission")?;
        if p.params.d != m.table.dim() {
            return Err(Failure(
                R2agStatus::Config,
                format!("policy d = {} but embeddings have d = {}", p.params.d, m.table.dim()),
            ));
        }
        let selection = if sample != 0 { Selection::Sample } else { Selection::Greedy };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let paths = retrieve_for_patient(&p.params, text, &m.kg, &m.table, &m.gv, horizon, selection, &mut rng)?;
        let dumps: Vec<_> = select_paths(paths, &m.kg, None).iter().map(|path| path.to_dump(&m.kg)).collect();
        write_string(out, serde_json::to_string(&dumps)?)
    })
}

/// Clinical-efficacy and NLG metrics of one generated text against its
/// reference, as a JSON object with `ngram`, `concept` (null when the
/// reference has no such items) and `nlg` fields.
///
/// # Safety
/// `model` must be a live handle, the texts NUL-terminated strings and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn r2ag_score(
    model: *const R2agModel,
    generated: *const c_char,
    reference: *const c_char,
    out: *mut *mut c_char,
) -> R2agStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let generated = str_arg(generated, "generated")?;
        let reference = str_arg(reference, "reference")?;
        let row = score_patient("", generated, reference, &m.kg);
        let mut v = serde_json::to_value(&row)?;
        v.as_object_mut().expect("row is an object").remove("id");
        write_string(out, serde_json::to_string(&v)?)
    })
}
