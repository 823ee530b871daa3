//! C ABI for the etid unlearning library.
//!
//! All objects are opaque handles created and destroyed through this API.
//! Functions return [`EtidStatus`]; on failure the thread-local error
//! message is available via [`etid_last_error`]. Strings returned by the
//! library must be released with [`etid_string_free`].

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;

use libc::size_t;

use etid::dataset::{generate_synthetic, load_csv, sample_unlearning, split, Dataset, UnlearnRequest};
use etid::error::EtidError;
use etid::matrix::Matrix;
use etid::nn::{LossKind, TrainConfig};
use etid::roel::Ensemble;
use etid::tid::{handle_request, TidConfig};

/// Status codes for every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EtidStatus {
    Ok = 0,
    Error = 1,
    InvalidArgument = 2,
    ValidityExpired = 3,
    ShapeMismatch = 4,
    IoError = 5,
    NullPointer = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(err: &EtidError) -> EtidStatus {
    let status = match err {
        EtidError::Validation(_) | EtidError::Parse { .. } => EtidStatus::InvalidArgument,
        EtidError::ValidityExpired { .. } => EtidStatus::ValidityExpired,
        EtidError::Shape { .. } => EtidStatus::ShapeMismatch,
        EtidError::Io(_) | EtidError::Format(_) | EtidError::Json(_) => EtidStatus::IoError,
    };
    let msg = CString::new(err.to_string()).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
    status
}

/// Opaque dataset handle.
pub struct EtidDataset {
    inner: Dataset,
}

/// Opaque ensemble handle.
pub struct EtidEnsemble {
    inner: Ensemble,
}

/// SGD hyperparameters for one training phase.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EtidTrainConfig {
    pub learning_rate: f64,
    pub epochs: size_t,
    pub batch_size: size_t,
    pub seed: u64,
    pub shuffle: bool,
}

impl EtidTrainConfig {
    fn to_config(self, loss: LossKind) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            shuffle: self.shuffle,
            loss,
        }
    }
}

/// Message for the most recent error on this thread, or null when the last
/// call succeeded. Owned by the library; do not free.
#[no_mangle]
pub extern "C" fn etid_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}

/// Release a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn etid_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn path_from_c<'a>(path: *const c_char) -> Result<&'a Path, EtidStatus> {
    if path.is_null() {
        return Err(EtidStatus::NullPointer);
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| EtidStatus::InvalidArgument)
}

/// Generate a seeded synthetic Gaussian-cluster dataset.
#[no_mangle]
pub unsafe extern "C" fn etid_dataset_generate(
    n_samples: size_t,
    n_features: size_t,
    n_classes: size_t,
    cluster_spread: f64,
    seed: u64,
    out: *mut *mut EtidDataset,
) -> EtidStatus {
    if out.is_null() {
        return EtidStatus::NullPointer;
    }
    match generate_synthetic(n_samples, n_features, n_classes, cluster_spread, seed) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(EtidDataset { inner }));
            EtidStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Load a dataset from a CSV file with header `id,label,f0..`.
#[no_mangle]
pub unsafe extern "C" fn etid_dataset_load_csv(
    path: *const c_char,
    out: *mut *mut EtidDataset,
) -> EtidStatus {
    if out.is_null() {
        return EtidStatus::NullPointer;
    }
    let path = match path_from_c(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_csv(path) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(EtidDataset { inner }));
            EtidStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Seeded disjoint train/test split.
#[no_mangle]
pub unsafe extern "C" fn etid_dataset_split(
    dataset: *const EtidDataset,
    train_ratio: f64,
    seed: u64,
    out_train: *mut *mut EtidDataset,
    out_test: *mut *mut EtidDataset,
) -> EtidStatus {
    if dataset.is_null() || out_train.is_null() || out_test.is_null() {
        return EtidStatus::NullPointer;
    }
    match split(&(*dataset).inner, train_ratio, seed) {
        Ok((train, test)) => {
            *out_train = Box::into_raw(Box::new(EtidDataset { inner: train }));
            *out_test = Box::into_raw(Box::new(EtidDataset { inner: test }));
            EtidStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn etid_dataset_len(dataset: *const EtidDataset) -> size_t {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.len()
}

#[no_mangle]
pub unsafe extern "C" fn etid_dataset_num_features(dataset: *const EtidDataset) -> size_t {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.num_features()
}

#[no_mangle]
pub unsafe extern "C" fn etid_dataset_num_classes(dataset: *const EtidDataset) -> size_t {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.num_classes()
}

/// Copy the dataset's sample ids into `out` (capacity `cap`); returns the
/// number of ids written.
#[no_mangle]
pub unsafe extern "C" fn etid_dataset_ids(
    dataset: *const EtidDataset,
    out: *mut u64,
    cap: size_t,
) -> size_t {
    if dataset.is_null() || out.is_null() {
        return 0;
    }
    let ids = (*dataset).inner.ids();
    let n = ids.len().min(cap);
    std::ptr::copy_nonoverlapping(ids.as_ptr(), out, n);
    n
}

#[no_mangle]
pub unsafe extern "C" fn etid_dataset_free(dataset: *mut EtidDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Train a leave-one-part-out ensemble of `k` sub-models on the dataset.
/// `hidden` points to `hidden_len` hidden-layer widths.
#[no_mangle]
pub unsafe extern "C" fn etid_ensemble_build(
    train: *const EtidDataset,
    k: size_t,
    hidden: *const size_t,
    hidden_len: size_t,
    train_cfg: EtidTrainConfig,
    parallel: bool,
    out: *mut *mut EtidEnsemble,
) -> EtidStatus {
    if train.is_null() || out.is_null() || (hidden.is_null() && hidden_len > 0) {
        return EtidStatus::NullPointer;
    }
    let hidden = std::slice::from_raw_parts(hidden, hidden_len);
    let cfg = train_cfg.to_config(LossKind::CrossEntropy);
    match Ensemble::build(&(*train).inner, k, hidden, &cfg, parallel) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(EtidEnsemble { inner }));
            EtidStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn etid_ensemble_k(ensemble: *const EtidEnsemble) -> size_t {
    if ensemble.is_null() {
        return 0;
    }
    (*ensemble).inner.k()
}

/// Number of erased training ids recorded so far.
#[no_mangle]
pub unsafe extern "C" fn etid_ensemble_ledger_len(ensemble: *const EtidEnsemble) -> size_t {
    if ensemble.is_null() {
        return 0;
    }
    (*ensemble).inner.ledger().len()
}

/// Averaged posterior probabilities for `rows` feature rows of width `cols`.
/// `out` must hold `rows * num_classes` doubles.
#[no_mangle]
pub unsafe extern "C" fn etid_ensemble_predict(
    ensemble: *const EtidEnsemble,
    features: *const f64,
    rows: size_t,
    cols: size_t,
    out: *mut f64,
) -> EtidStatus {
    if ensemble.is_null() || features.is_null() || out.is_null() {
        return EtidStatus::NullPointer;
    }
    let data = std::slice::from_raw_parts(features, rows * cols).to_vec();
    let x = match Matrix::from_vec(rows, cols, data) {
        Ok(x) => x,
        Err(e) => return set_error(&e),
    };
    match (*ensemble).inner.predict(&x) {
        Ok(probs) => {
            std::ptr::copy_nonoverlapping(probs.data().as_ptr(), out, probs.data().len());
            EtidStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Erase the given training ids via iterative distillation and rectification.
/// On success `out_report_json`, when non-null, receives a JSON report that
/// must be freed with `etid_string_free`.
#[no_mangle]
pub unsafe extern "C" fn etid_ensemble_unlearn(
    ensemble: *mut EtidEnsemble,
    train: *const EtidDataset,
    ids: *const u64,
    ids_len: size_t,
    distill_cfg: EtidTrainConfig,
    rectify_cfg: EtidTrainConfig,
    parallel: bool,
    out_report_json: *mut *mut c_char,
) -> EtidStatus {
    if ensemble.is_null() || train.is_null() || ids.is_null() {
        return EtidStatus::NullPointer;
    }
    let id_set: BTreeSet<u64> = std::slice::from_raw_parts(ids, ids_len).iter().copied().collect();
    let req = UnlearnRequest::new(id_set);
    let cfg = TidConfig {
        distill: distill_cfg.to_config(LossKind::KlToTargets),
        rectify: rectify_cfg.to_config(LossKind::CrossEntropy),
        parallel,
    };
    match handle_request(&mut (*ensemble).inner, &(*train).inner, &req, &cfg) {
        Ok(report) => {
            if !out_report_json.is_null() {
                let json = serde_json::to_string(&report).unwrap_or_default();
                *out_report_json = CString::new(json).unwrap_or_default().into_raw();
            }
            EtidStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

/// Draw a seeded uniform unlearning request of round(ratio * N) training ids.
/// Returns the number of ids written to `out` (capacity `cap`).
#[no_mangle]
pub unsafe extern "C" fn etid_sample_unlearning(
    train: *const EtidDataset,
    ratio: f64,
    seed: u64,
    out: *mut u64,
    cap: size_t,
) -> size_t {
    if train.is_null() || out.is_null() {
        return 0;
    }
    match sample_unlearning(&(*train).inner, ratio, seed) {
        Ok(req) => {
            let ids: Vec<u64> = req.sample_ids.into_iter().collect();
            let n = ids.len().min(cap);
            std::ptr::copy_nonoverlapping(ids.as_ptr(), out, n);
            n
        }
        Err(e) => {
            set_error(&e);
            0
        }
    }
}

/// Persist the ensemble (manifest plus per-sub-model checkpoints) to a
/// directory.
#[no_mangle]
pub unsafe extern "C" fn etid_ensemble_save(
    ensemble: *const EtidEnsemble,
    dir: *const c_char,
) -> EtidStatus {
    if ensemble.is_null() {
        return EtidStatus::NullPointer;
    }
    let dir = match path_from_c(dir) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match (*ensemble).inner.save_dir(dir) {
        Ok(()) => EtidStatus::Ok,
        Err(e) => set_error(&e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn etid_ensemble_load(
    dir: *const c_char,
    out: *mut *mut EtidEnsemble,
) -> EtidStatus {
    if out.is_null() {
        return EtidStatus::NullPointer;
    }
    let dir = match path_from_c(dir) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match Ensemble::load_dir(dir) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(EtidEnsemble { inner }));
            EtidStatus::Ok
        }
        Err(e) => set_error(&e),
    }
}

#[no_mangle]
pub unsafe extern "C" fn etid_ensemble_free(ensemble: *mut EtidEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(epochs: usize, seed: u64) -> EtidTrainConfig {
        EtidTrainConfig {
            learning_rate: 0.1,
            epochs,
            batch_size: 16,
            seed,
            shuffle: true,
        }
    }

    #[test]
    fn full_c_api_flow() {
        unsafe {
            let mut data: *mut EtidDataset = std::ptr::null_mut();
            assert_eq!(
                etid_dataset_generate(200, 4, 2, 1.0, 5, &mut data),
                EtidStatus::Ok
            );
            assert_eq!(etid_dataset_len(data), 200);

            let mut train: *mut EtidDataset = std::ptr::null_mut();
            let mut test: *mut EtidDataset = std::ptr::null_mut();
            assert_eq!(
                etid_dataset_split(data, 0.8, 6, &mut train, &mut test),
                EtidStatus::Ok
            );
            assert_eq!(etid_dataset_len(train), 160);

            let hidden = [8usize];
            let mut ensemble: *mut EtidEnsemble = std::ptr::null_mut();
            assert_eq!(
                etid_ensemble_build(
                    train,
                    5,
                    hidden.as_ptr(),
                    1,
                    cfg(5, 7),
                    false,
                    &mut ensemble,
                ),
                EtidStatus::Ok
            );
            assert_eq!(etid_ensemble_k(ensemble), 5);

            let mut ids = [0u64; 4];
            let n = etid_sample_unlearning(train, 0.02, 8, ids.as_mut_ptr(), ids.len());
            assert_eq!(n, 3);

            let mut report: *mut c_char = std::ptr::null_mut();
            assert_eq!(
                etid_ensemble_unlearn(
                    ensemble,
                    train,
                    ids.as_ptr(),
                    n,
                    cfg(5, 9),
                    cfg(1, 10),
                    false,
                    &mut report,
                ),
                EtidStatus::Ok
            );
            assert!(!report.is_null());
            let text = CStr::from_ptr(report).to_str().unwrap();
            assert!(text.contains("\"ledger_total\":3"), "{text}");
            etid_string_free(report);
            assert_eq!(etid_ensemble_ledger_len(ensemble), 3);

            let mut probs = vec![0.0f64; 2 * etid_dataset_len(test)];
            let features: Vec<f64> = {
                // Reuse the split test features through the public API only.
                let d = &(*test).inner;
                d.features().data().to_vec()
            };
            assert_eq!(
                etid_ensemble_predict(
                    ensemble,
                    features.as_ptr(),
                    etid_dataset_len(test),
                    4,
                    probs.as_mut_ptr(),
                ),
                EtidStatus::Ok
            );
            assert!((probs[0] + probs[1] - 1.0).abs() < 1e-9);

            // Error path: double unlearning of the same ids.
            let status = etid_ensemble_unlearn(
                ensemble,
                train,
                ids.as_ptr(),
                n,
                cfg(5, 9),
                cfg(1, 10),
                false,
                std::ptr::null_mut(),
            );
            assert_eq!(status, EtidStatus::InvalidArgument);
            let msg = CStr::from_ptr(etid_last_error()).to_str().unwrap();
            assert!(msg.contains("already been unlearned"), "{msg}");

            etid_ensemble_free(ensemble);
            etid_dataset_free(train);
            etid_dataset_free(test);
            etid_dataset_free(data);
        }
    }
}
