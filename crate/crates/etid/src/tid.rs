//! Iterative information distillation: erase requested samples from a
//! leave-one-part-out ensemble by KL-distilling each target sub-model toward
//! a retrained-alike reference on the erased rows, then rectify every
//! sub-model on its own remaining data and extend the erasure ledger.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{group_by_part, Dataset, SampleId, UnlearnRequest};
use crate::error::{EtidError, Result};
use crate::matrix::Matrix;
use crate::nn::{LossKind, MlpModel, Targets, TrainConfig};
use crate::roel::Ensemble;
use crate::seeds::derive_seed;

/// Distillation stops early once the KL objective drops below this.
pub const DISTILL_STOP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TidConfig {
    /// KL phase toward the reference posteriors.
    pub distill: TrainConfig,
    /// Cross-entropy phase on remaining data.
    pub rectify: TrainConfig,
    pub parallel: bool,
}

impl TidConfig {
    pub fn validate(&self) -> Result<()> {
        self.distill.validate()?;
        self.rectify.validate()?;
        if self.distill.loss != LossKind::KlToTargets {
            return Err(EtidError::validation(
                "distillation phase must use the kl_to_targets loss",
            ));
        }
        if self.rectify.loss != LossKind::CrossEntropy {
            return Err(EtidError::validation(
                "rectification phase must use the cross_entropy loss",
            ));
        }
        Ok(())
    }
}

/// Snapshot state for one in-flight unlearning request. References are
/// copied before any target sub-model is touched.
#[derive(Debug)]
pub struct UnlearnSession {
    groups: Vec<BTreeSet<SampleId>>,
    references: BTreeMap<usize, MlpModel>,
    validity: Vec<ValidityRatio>,
}

impl UnlearnSession {
    pub fn groups(&self) -> &[BTreeSet<SampleId>] {
        &self.groups
    }

    pub fn reference(&self, part: usize) -> Option<&MlpModel> {
        self.references.get(&part)
    }

    pub fn validity(&self) -> &[ValidityRatio] {
        &self.validity
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValidityRatio {
    pub ref_part: usize,
    pub target_part: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnlearnReport {
    pub request_size: usize,
    pub group_sizes: Vec<usize>,
    pub validity_ratios: Vec<ValidityRatio>,
    pub distill_iterations: usize,
    pub init_seconds: f64,
    pub distill_seconds: f64,
    pub rectify_seconds: f64,
    pub total_seconds: f64,
    pub parallel: bool,
    pub ledger_total: usize,
}

/// Group the request by part, gate on the retrained-alike condition for every
/// pair with a non-empty group, and snapshot the references. Fails without
/// touching the ensemble.
pub fn init_session(e: &Ensemble, req: &UnlearnRequest) -> Result<UnlearnSession> {
    if req.is_empty() {
        return Err(EtidError::validation("empty unlearning request"));
    }
    for &id in &req.sample_ids {
        if e.partition().part_of(id).is_none() {
            return Err(EtidError::validation(format!(
                "sample id {id} is not a training id"
            )));
        }
        if e.ledger().contains(&id) {
            return Err(EtidError::validation(format!(
                "sample id {id} has already been unlearned"
            )));
        }
    }
    let groups = group_by_part(req, e.partition())?;
    // The gate conditions on prior erasures only: whether each reference is
    // still retrained-alike is a property of the ensemble's current state,
    // not of the incoming request.
    let no_pending = BTreeSet::new();
    let mut validity = Vec::new();
    for (i, group) in groups.iter().enumerate() {
        if group.is_empty() {
            continue;
        }
        for j in 0..e.k() {
            if j == i {
                continue;
            }
            let (ok, delta) = e.is_retrained_alike(i, j, &no_pending)?;
            let ratio = delta.ratio();
            validity.push(ValidityRatio {
                ref_part: i,
                target_part: j,
                ratio,
            });
            if !ok {
                return Err(EtidError::ValidityExpired { i, j, ratio });
            }
        }
    }
    let references: BTreeMap<usize, MlpModel> = groups
        .iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(i, _)| (i, e.sub_models()[i].clone()))
        .collect();
    Ok(UnlearnSession {
        groups,
        references,
        validity,
    })
}

/// One distillation iteration: fine-tune every sub-model but `ref_part` with
/// KL loss toward the reference posteriors on the subset rows. Target jobs
/// are independently seeded; with `parallel` they run concurrently.
pub fn unlearn_subset(
    e: &mut Ensemble,
    ref_part: usize,
    reference: &MlpModel,
    x_subset: &Matrix,
    cfg: &TrainConfig,
    parallel: bool,
) -> Result<()> {
    if x_subset.rows() == 0 {
        return Ok(());
    }
    let soft = Targets::Soft(reference.forward(x_subset)?);
    let k = e.k();
    let taken: Vec<(usize, MlpModel)> = (0..k)
        .filter(|&j| j != ref_part)
        .map(|j| (j, std::mem::replace(&mut e.sub_models_mut()[j], dummy_model())))
        .collect();
    let job = |(j, model): (usize, MlpModel)| -> Result<(usize, MlpModel)> {
        let seed = derive_seed(cfg.seed, (ref_part * k + j) as u64);
        let tuned = model.train_until(
            x_subset,
            &soft,
            &cfg.clone().with_seed(seed),
            Some(DISTILL_STOP_TOL),
        )?;
        Ok((j, tuned))
    };
    let tuned: Result<Vec<(usize, MlpModel)>> = if parallel {
        taken.into_par_iter().map(job).collect()
    } else {
        taken.into_iter().map(job).collect()
    };
    for (j, model) in tuned? {
        e.sub_models_mut()[j] = model;
    }
    Ok(())
}

/// Cross-entropy fine-tuning of every sub-model on its own remaining data
/// D_{-j} minus all erased ids. Erased rows never enter any batch.
pub fn rectify(
    e: &mut Ensemble,
    train: &Dataset,
    erased: &BTreeSet<SampleId>,
    cfg: &TrainConfig,
    parallel: bool,
) -> Result<()> {
    if cfg.epochs == 0 {
        return Ok(());
    }
    let k = e.k();
    let mut remaining: Vec<Vec<SampleId>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut ids = crate::dataset::build_subset(e.partition(), j)?;
        ids.retain(|id| !erased.contains(id));
        if ids.is_empty() {
            return Err(EtidError::validation(format!(
                "sub-model {j} has no remaining data after erasure"
            )));
        }
        debug_assert!(ids.is_disjoint(erased));
        remaining.push(ids.into_iter().collect());
    }
    let taken: Vec<(usize, MlpModel)> = (0..k)
        .map(|j| (j, std::mem::replace(&mut e.sub_models_mut()[j], dummy_model())))
        .collect();
    let job = |(j, model): (usize, MlpModel)| -> Result<(usize, MlpModel)> {
        let x = train.features_for(&remaining[j])?;
        let y = Targets::Hard(train.labels_for(&remaining[j])?);
        let seed = derive_seed(cfg.seed, j as u64);
        let tuned = model.train(&x, &y, &cfg.clone().with_seed(seed))?;
        Ok((j, tuned))
    };
    let tuned: Result<Vec<(usize, MlpModel)>> = if parallel {
        taken.into_par_iter().map(job).collect()
    } else {
        taken.into_iter().map(job).collect()
    };
    for (j, model) in tuned? {
        e.sub_models_mut()[j] = model;
    }
    Ok(())
}

/// Extend the ledger with the request and discard the session snapshots.
pub fn update_references_and_ledger(
    e: &mut Ensemble,
    session: UnlearnSession,
    req: &UnlearnRequest,
) {
    drop(session);
    e.extend_ledger(&req.sample_ids);
}

/// Full request flow: init, one distillation iteration per non-empty group in
/// ascending part order, one rectification pass, ledger update.
pub fn handle_request(
    e: &mut Ensemble,
    train: &Dataset,
    req: &UnlearnRequest,
    cfg: &TidConfig,
) -> Result<UnlearnReport> {
    cfg.validate()?;
    let started = Instant::now();
    let init_t = Instant::now();
    let session = init_session(e, req)?;
    let init_seconds = init_t.elapsed().as_secs_f64();

    let distill_t = Instant::now();
    let mut distill_iterations = 0;
    for i in 0..e.k() {
        let group = &session.groups[i];
        if group.is_empty() {
            continue;
        }
        let ids: Vec<SampleId> = group.iter().copied().collect();
        let x = train.features_for(&ids)?;
        let reference = session
            .references
            .get(&i)
            .expect("reference exists for every non-empty group");
        unlearn_subset(e, i, reference, &x, &cfg.distill, cfg.parallel)?;
        distill_iterations += 1;
    }
    let distill_seconds = distill_t.elapsed().as_secs_f64();

    let rectify_t = Instant::now();
    let mut erased: BTreeSet<SampleId> = e.ledger().clone();
    erased.extend(req.sample_ids.iter().copied());
    rectify(e, train, &erased, &cfg.rectify, cfg.parallel)?;
    let rectify_seconds = rectify_t.elapsed().as_secs_f64();

    let group_sizes = session.groups.iter().map(BTreeSet::len).collect();
    let validity_ratios = session.validity.clone();
    update_references_and_ledger(e, session, req);

    Ok(UnlearnReport {
        request_size: req.len(),
        group_sizes,
        validity_ratios,
        distill_iterations,
        init_seconds,
        distill_seconds,
        rectify_seconds,
        total_seconds: started.elapsed().as_secs_f64(),
        parallel: cfg.parallel,
        ledger_total: e.ledger().len(),
    })
}

fn dummy_model() -> MlpModel {
    MlpModel::new(&[1, 1], 0).expect("static layer sizes")
}
