//! C ABI over the sedge library.
//!
//! Conventions:
//! - Every fallible call returns a [`SedgeStatus`]; `SEDGE_STATUS_OK`
//!   is zero. On failure, [`sedge_last_error`] returns a
//!   human-readable message for the current thread.
//! - Handles (`SedgePool`, `SedgeModel`) are opaque. They are created
//!   by `*_load`, `sedge_generate_pool`, or `sedge_train` and must be
//!   released with the matching `*_free`. Handles are safe to share
//!   across threads for reads; freeing while another thread uses the
//!   handle is undefined behavior, as in any C library.
//! - Out-parameters are written only when the call succeeds.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sedge_core::adapter::adapt_logits;
use sedge_core::ensemble::{model_features, predict, CombineMode, ModelFeatures};
use sedge_core::error::SedgeError;
use sedge_core::eval::evaluate;
use sedge_core::nn::argmax;
use sedge_core::params::{model_adapter_map, Params};
use sedge_core::pool::{PoolCache, PoolManifest};
use sedge_core::synth::{generate_pool, GenConfig};
use sedge_core::train::{load_run, save_run, train, TrainConfig};

/// Result of every fallible call in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SedgeStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument failed validation (bad length, unknown name, bad range).
    InvalidArgument = 2,
    /// The filesystem refused a read or write.
    IoError = 3,
    /// A file or JSON string did not parse.
    ParseError = 4,
    /// Loaded data is structurally inconsistent.
    ValidationError = 5,
    /// Internal failure; the message has details.
    RuntimeError = 6,
}

/// Cached pool of frozen model outputs plus its manifest.
pub struct SedgePool {
    cache: PoolCache,
}

/// A trained dispatcher plus adapters, ready for inference.
pub struct SedgeModel {
    manifest: PoolManifest,
    params: Params,
    feats: ModelFeatures,
    adapter_of: Vec<usize>,
    top_k: usize,
    combine: CombineMode,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = owned);
}

fn fail(status: SedgeStatus, msg: &str) -> SedgeStatus {
    set_error(msg);
    status
}

fn status_of(err: &SedgeError) -> SedgeStatus {
    match err {
        SedgeError::Io { .. } => SedgeStatus::IoError,
        SedgeError::Json { .. }
        | SedgeError::BadMagic { .. }
        | SedgeError::BadVersion { .. }
        | SedgeError::BadDtype { .. }
        | SedgeError::DimOverflow { .. }
        | SedgeError::PayloadLength { .. }
        | SedgeError::NonFinite { .. }
        | SedgeError::InvalidTensor(_) => SedgeStatus::ParseError,
        SedgeError::Validation { .. } => SedgeStatus::ValidationError,
        SedgeError::UnknownDomain { .. } | SedgeError::InvalidArgument(_) => {
            SedgeStatus::InvalidArgument
        }
    }
}

fn core_fail(err: SedgeError) -> SedgeStatus {
    fail(status_of(&err), &err.to_string())
}

/// Runs a closure, translating panics into `RuntimeError`.
fn guarded(body: impl FnOnce() -> SedgeStatus) -> SedgeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(SedgeStatus::RuntimeError, "internal panic"),
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, SedgeStatus> {
    if ptr.is_null() {
        return Err(fail(
            SedgeStatus::NullArgument,
            &format!("{what} must not be null"),
        ));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| fail(SedgeStatus::InvalidArgument, &format!("{what} is not UTF-8")))
}

fn model_from_params(
    manifest: &PoolManifest,
    params: Params,
    cfg: &TrainConfig,
) -> Box<SedgeModel> {
    Box::new(SedgeModel {
        manifest: manifest.clone(),
        feats: model_features(&params.net),
        adapter_of: model_adapter_map(manifest),
        params,
        top_k: cfg.top_k,
        combine: cfg.combine,
    })
}

/// Message for the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread. Never
/// null.
#[no_mangle]
pub extern "C" fn sedge_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string, e.g. "0.1.0".
#[no_mangle]
pub extern "C" fn sedge_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a pool directory (manifest plus cached tensors).
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sedge_pool_load(
    dir: *const c_char,
    out: *mut *mut SedgePool,
) -> SedgeStatus {
    guarded(|| {
        if out.is_null() {
            return fail(SedgeStatus::NullArgument, "out must not be null");
        }
        let dir = match unsafe { required_str(dir, "dir") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match PoolCache::load(Path::new(dir)) {
            Ok(cache) => {
                unsafe { *out = Box::into_raw(Box::new(SedgePool { cache })) };
                SedgeStatus::Ok
            }
            Err(e) => core_fail(e),
        }
    })
}

/// Generates a synthetic pool into `out_dir` and returns a handle to
/// it. `config_json` may be null for the default generator config.
///
/// # Safety
/// Strings must be NUL-terminated; `out` may be null if the caller
/// only wants the files.
#[no_mangle]
pub unsafe extern "C" fn sedge_generate_pool(
    config_json: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut SedgePool,
) -> SedgeStatus {
    guarded(|| {
        let dir = match unsafe { required_str(out_dir, "out_dir") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let cfg = if config_json.is_null() {
            GenConfig::default()
        } else {
            let text = match unsafe { required_str(config_json, "config_json") } {
                Ok(s) => s,
                Err(status) => return status,
            };
            match serde_json::from_str::<GenConfig>(text) {
                Ok(cfg) => cfg,
                Err(e) => return fail(SedgeStatus::ParseError, &format!("config_json: {e}")),
            }
        };
        if let Err(e) = cfg.validate() {
            return core_fail(e);
        }
        match generate_pool(&cfg, Path::new(dir)) {
            Ok(cache) => {
                if !out.is_null() {
                    unsafe { *out = Box::into_raw(Box::new(SedgePool { cache })) };
                }
                SedgeStatus::Ok
            }
            Err(e) => core_fail(e),
        }
    })
}

/// Releases a pool handle. Null is a no-op.
///
/// # Safety
/// `pool` must be null or a pointer from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sedge_pool_free(pool: *mut SedgePool) {
    if !pool.is_null() {
        drop(unsafe { Box::from_raw(pool) });
    }
}

// The getters are written out one by one, not through a macro:
// cbindgen does not expand macros, and a declaration missing from the
// header is invisible to every C caller.

/// Safely views a pool handle; null gives None.
fn pool_ref<'a>(pool: *const SedgePool) -> Option<&'a PoolCache> {
    unsafe { pool.as_ref().map(|p| &p.cache) }
}

/// Number of frozen models in the pool; 0 for a null handle.
///
/// # Safety
/// `pool` must be null or a live pool handle.
#[no_mangle]
pub unsafe extern "C" fn sedge_pool_num_models(pool: *const SedgePool) -> usize {
    pool_ref(pool).map_or(0, |c| c.manifest.num_models())
}

/// Number of shared label classes; 0 for a null handle.
///
/// # Safety
/// `pool` must be null or a live pool handle.
#[no_mangle]
pub unsafe extern "C" fn sedge_pool_num_classes(pool: *const SedgePool) -> usize {
    pool_ref(pool).map_or(0, |c| c.manifest.num_classes)
}

/// Number of domains; 0 for a null handle.
///
/// # Safety
/// `pool` must be null or a live pool handle.
#[no_mangle]
pub unsafe extern "C" fn sedge_pool_num_domains(pool: *const SedgePool) -> usize {
    pool_ref(pool).map_or(0, |c| c.manifest.domains.len())
}

/// Number of cached samples; 0 for a null handle.
///
/// # Safety
/// `pool` must be null or a live pool handle.
#[no_mangle]
pub unsafe extern "C" fn sedge_pool_num_samples(pool: *const SedgePool) -> usize {
    pool_ref(pool).map_or(0, |c| c.num_samples())
}

/// Width of the sample embeddings; 0 for a null handle.
///
/// # Safety
/// `pool` must be null or a live pool handle.
#[no_mangle]
pub unsafe extern "C" fn sedge_pool_embed_dim(pool: *const SedgePool) -> usize {
    pool_ref(pool).map_or(0, |c| c.manifest.d_q)
}

/// Domain name at `index` as a NUL-terminated string copied into
/// `buf` (capacity `buf_len`, including the terminator).
///
/// # Safety
/// `pool` must be a live handle and `buf` must hold `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sedge_pool_domain_name(
    pool: *const SedgePool,
    index: usize,
    buf: *mut c_char,
    buf_len: usize,
) -> SedgeStatus {
    guarded(|| {
        if pool.is_null() || buf.is_null() {
            return fail(SedgeStatus::NullArgument, "pool and buf must not be null");
        }
        let domains = unsafe { &(*pool).cache.manifest.domains };
        let Some(name) = domains.get(index) else {
            return fail(
                SedgeStatus::InvalidArgument,
                &format!("domain index {index} out of range ({} domains)", domains.len()),
            );
        };
        if name.len() + 1 > buf_len {
            return fail(
                SedgeStatus::InvalidArgument,
                &format!("buffer of {buf_len} too small for {} bytes", name.len() + 1),
            );
        }
        unsafe {
            ptr::copy_nonoverlapping(name.as_ptr() as *const c_char, buf, name.len());
            *buf.add(name.len()) = 0;
        }
        SedgeStatus::Ok
    })
}

/// Trains a dispatcher on `pool` holding out `target_domain`.
/// `config_json` may be null for defaults; `run_dir` may be null to
/// skip persisting the run (existing files in `run_dir` are
/// overwritten).
///
/// # Safety
/// `pool` must be a live handle, strings NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sedge_train(
    pool: *const SedgePool,
    target_domain: *const c_char,
    config_json: *const c_char,
    run_dir: *const c_char,
    out: *mut *mut SedgeModel,
) -> SedgeStatus {
    guarded(|| {
        if pool.is_null() || out.is_null() {
            return fail(SedgeStatus::NullArgument, "pool and out must not be null");
        }
        let cache = unsafe { &(*pool).cache };
        let target = match unsafe { required_str(target_domain, "target_domain") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let cfg = if config_json.is_null() {
            TrainConfig::default()
        } else {
            let text = match unsafe { required_str(config_json, "config_json") } {
                Ok(s) => s,
                Err(status) => return status,
            };
            match serde_json::from_str::<TrainConfig>(text) {
                Ok(cfg) => cfg,
                Err(e) => return fail(SedgeStatus::ParseError, &format!("config_json: {e}")),
            }
        };
        let target_id = match cache.manifest.domain_id(target) {
            Ok(id) => id,
            Err(e) => return core_fail(e),
        };
        let artifacts = match train(cache, target_id, &cfg) {
            Ok(a) => a,
            Err(e) => return core_fail(e),
        };
        if !run_dir.is_null() {
            let dir = match unsafe { required_str(run_dir, "run_dir") } {
                Ok(s) => s,
                Err(status) => return status,
            };
            if let Err(e) = std::fs::create_dir_all(dir) {
                return fail(SedgeStatus::IoError, &format!("{dir}: {e}"));
            }
            if let Err(e) = save_run(&artifacts, cache, Path::new(dir)) {
                return core_fail(e);
            }
        }
        let model = model_from_params(&cache.manifest, artifacts.best_params, &cfg);
        unsafe { *out = Box::into_raw(model) };
        SedgeStatus::Ok
    })
}

/// Loads a persisted run directory against the pool it was trained on.
///
/// # Safety
/// `pool` must be a live handle, `dir` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sedge_model_load(
    dir: *const c_char,
    pool: *const SedgePool,
    out: *mut *mut SedgeModel,
) -> SedgeStatus {
    guarded(|| {
        if pool.is_null() || out.is_null() {
            return fail(SedgeStatus::NullArgument, "pool and out must not be null");
        }
        let cache = unsafe { &(*pool).cache };
        let dir = match unsafe { required_str(dir, "dir") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        match load_run(Path::new(dir), cache) {
            Ok((params, summary)) => {
                let model = model_from_params(&cache.manifest, params, &summary.config);
                unsafe { *out = Box::into_raw(model) };
                SedgeStatus::Ok
            }
            Err(e) => core_fail(e),
        }
    })
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sedge_model_free(model: *mut SedgeModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of models the dispatcher mixes; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn sedge_model_num_models(model: *const SedgeModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.manifest.num_models())
}

/// Number of shared label classes; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn sedge_model_num_classes(model: *const SedgeModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.manifest.num_classes)
}

/// Expected embedding length for `sedge_dispatch`; 0 for null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn sedge_model_embed_dim(model: *const SedgeModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.manifest.d_q)
}

/// Expected total length of the concatenated raw logits passed to
/// `sedge_dispatch`: the sum over models of their group's label
/// width, in model id order. 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn sedge_model_logits_len(model: *const SedgeModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| {
        (0..m.manifest.num_models())
            .map(|k| m.manifest.group_of(k).c_o)
            .sum()
    })
}

/// Dispatches one sample. `embedding` holds `sedge_model_embed_dim`
/// values; `logits` holds `sedge_model_logits_len` values, the raw
/// outputs of every frozen model concatenated in model id order.
///
/// On success writes the per-model mixture weights to `weights_out`
/// (`sedge_model_num_models` values), the combined prediction vector
/// to `prediction_out` (`sedge_model_num_classes` values), and the
/// predicted class to `class_out`. Each out-pointer may be null to
/// skip that output.
///
/// # Safety
/// `model` must be a live handle and every non-null pointer must
/// reference a buffer of the documented length.
#[no_mangle]
pub unsafe extern "C" fn sedge_dispatch(
    model: *const SedgeModel,
    embedding: *const f64,
    embedding_len: usize,
    logits: *const f64,
    logits_len: usize,
    weights_out: *mut f64,
    prediction_out: *mut f64,
    class_out: *mut usize,
) -> SedgeStatus {
    guarded(|| {
        if model.is_null() || embedding.is_null() || logits.is_null() {
            return fail(
                SedgeStatus::NullArgument,
                "model, embedding and logits must not be null",
            );
        }
        let m = unsafe { &*model };
        let d_q = m.manifest.d_q;
        if embedding_len != d_q {
            return fail(
                SedgeStatus::InvalidArgument,
                &format!("embedding has {embedding_len} values, expected {d_q}"),
            );
        }
        let expected: usize = (0..m.manifest.num_models())
            .map(|k| m.manifest.group_of(k).c_o)
            .sum();
        if logits_len != expected {
            return fail(
                SedgeStatus::InvalidArgument,
                &format!("logits have {logits_len} values, expected {expected}"),
            );
        }
        let embedding = unsafe { std::slice::from_raw_parts(embedding, embedding_len) };
        let logits = unsafe { std::slice::from_raw_parts(logits, logits_len) };
        if let Some(bad) = embedding.iter().chain(logits).find(|v| !v.is_finite()) {
            return fail(
                SedgeStatus::InvalidArgument,
                &format!("non-finite input value {bad}"),
            );
        }

        let mut adapted = Vec::with_capacity(m.manifest.num_models());
        let mut offset = 0;
        for k in 0..m.manifest.num_models() {
            let c_o = m.manifest.group_of(k).c_o;
            let raw = &logits[offset..offset + c_o];
            offset += c_o;
            adapted.push(adapt_logits(raw, &m.params.adapters[m.adapter_of[k]]));
        }
        let outcome = match predict(
            embedding,
            &adapted,
            &m.params.net,
            &m.feats,
            m.top_k,
            m.combine,
        ) {
            Ok(o) => o,
            Err(e) => return core_fail(e),
        };
        unsafe {
            if !weights_out.is_null() {
                ptr::copy_nonoverlapping(
                    outcome.full_weights.as_ptr(),
                    weights_out,
                    outcome.full_weights.len(),
                );
            }
            if !prediction_out.is_null() {
                ptr::copy_nonoverlapping(
                    outcome.prediction.as_ptr(),
                    prediction_out,
                    outcome.prediction.len(),
                );
            }
            if !class_out.is_null() {
                *class_out = argmax(&outcome.prediction);
            }
        }
        SedgeStatus::Ok
    })
}

/// Accuracy of `model` over every cached sample of one domain in
/// `pool`. The pool must structurally match the pool the model was
/// trained on.
///
/// # Safety
/// Handles must be live, `domain` NUL-terminated, `acc_out` valid.
#[no_mangle]
pub unsafe extern "C" fn sedge_evaluate_domain(
    model: *const SedgeModel,
    pool: *const SedgePool,
    domain: *const c_char,
    acc_out: *mut f64,
) -> SedgeStatus {
    guarded(|| {
        if model.is_null() || pool.is_null() || acc_out.is_null() {
            return fail(
                SedgeStatus::NullArgument,
                "model, pool and acc_out must not be null",
            );
        }
        let m = unsafe { &*model };
        let cache = unsafe { &(*pool).cache };
        if cache.manifest != m.manifest {
            return fail(
                SedgeStatus::InvalidArgument,
                "pool manifest does not match the model's training manifest",
            );
        }
        let domain = match unsafe { required_str(domain, "domain") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let domain_id = match cache.manifest.domain_id(domain) {
            Ok(id) => id,
            Err(e) => return core_fail(e),
        };
        let indices = cache.domain_indices(domain_id);
        match evaluate(cache, &m.params, &indices, m.top_k, m.combine) {
            Ok(acc) => {
                unsafe { *acc_out = acc };
                SedgeStatus::Ok
            }
            Err(e) => core_fail(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_static_and_terminated() {
        let v = unsafe { CStr::from_ptr(sedge_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn error_message_replaces_interior_nul() {
        set_error("a\0b");
        let msg = unsafe { CStr::from_ptr(sedge_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "a b");
    }
}
