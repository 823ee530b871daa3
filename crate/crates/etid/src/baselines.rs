//! Comparison methods for the evaluation protocol: naive retraining (single
//! and ensemble), the SISA shard ensemble with partial retraining, and the
//! random-relabel fine-tuning baseline.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{partition_any, Dataset, PartitionMap, SampleId, UnlearnRequest};
use crate::error::{EtidError, Result};
use crate::matrix::Matrix;
use crate::nn::{MlpModel, Targets, TrainConfig};
use crate::roel::{full_layer_sizes, Ensemble};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    RetrainSingle,
    RetrainEnsemble,
    Sisa,
    Relabel,
}

/// Train one model on the whole dataset.
pub fn train_single(train: &Dataset, hidden: &[usize], cfg: &TrainConfig) -> Result<MlpModel> {
    cfg.validate()?;
    let sizes = full_layer_sizes(train, hidden);
    let model = MlpModel::new(&sizes, cfg.seed)?;
    let y = Targets::Hard(train.labels().to_vec());
    model.train(train.features(), &y, cfg)
}

/// Naive single-model retraining on D \ erased.
pub fn retrain_single(
    train: &Dataset,
    erased: &BTreeSet<SampleId>,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    let remaining = remaining_ids(train, erased)?;
    train_single(&train.subset(&remaining)?, hidden, cfg)
}

/// Naive ensemble retraining: re-partition D \ erased with the same K and
/// seed discipline and rebuild from scratch. The consistency oracle M^rt.
pub fn retrain_ensemble(
    train: &Dataset,
    erased: &BTreeSet<SampleId>,
    k: usize,
    hidden: &[usize],
    cfg: &TrainConfig,
    parallel: bool,
) -> Result<Ensemble> {
    let remaining = remaining_ids(train, erased)?;
    Ensemble::build(&train.subset(&remaining)?, k, hidden, cfg, parallel)
}

fn remaining_ids(train: &Dataset, erased: &BTreeSet<SampleId>) -> Result<BTreeSet<SampleId>> {
    let mut remaining = train.id_set();
    remaining.retain(|id| !erased.contains(id));
    if remaining.is_empty() {
        return Err(EtidError::validation("no remaining data after erasure"));
    }
    Ok(remaining)
}

/// SISA-style shard ensemble: sub-model i is trained on part d_i only, and an
/// erasure retrains exactly the shards that intersect the request.
#[derive(Debug, Clone)]
pub struct SisaEnsemble {
    sub_models: Vec<MlpModel>,
    partition: PartitionMap,
    hidden: Vec<usize>,
    train_config: TrainConfig,
    ledger: BTreeSet<SampleId>,
}

impl SisaEnsemble {
    pub fn build(
        train: &Dataset,
        k: usize,
        hidden: &[usize],
        cfg: &TrainConfig,
        parallel: bool,
    ) -> Result<SisaEnsemble> {
        cfg.validate()?;
        let part_map = partition_any(train, k, derive_seed(cfg.seed, u64::MAX))?;
        let sizes = full_layer_sizes(train, hidden);
        let job = |i: usize| -> Result<MlpModel> {
            let ids: Vec<SampleId> = part_map.part_ids(i).into_iter().collect();
            let x = train.features_for(&ids)?;
            let y = Targets::Hard(train.labels_for(&ids)?);
            let seed = derive_seed(cfg.seed, i as u64);
            MlpModel::new(&sizes, seed)?.train(&x, &y, &cfg.clone().with_seed(seed))
        };
        let sub_models: Result<Vec<MlpModel>> = if parallel {
            (0..k).into_par_iter().map(job).collect()
        } else {
            (0..k).map(job).collect()
        };
        Ok(SisaEnsemble {
            sub_models: sub_models?,
            partition: part_map,
            hidden: hidden.to_vec(),
            train_config: cfg.clone(),
            ledger: BTreeSet::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.partition.k()
    }

    pub fn sub_models(&self) -> &[MlpModel] {
        &self.sub_models
    }

    pub fn partition(&self) -> &PartitionMap {
        &self.partition
    }

    pub fn ledger(&self) -> &BTreeSet<SampleId> {
        &self.ledger
    }

    /// Averaged shard posteriors, for metric comparability with ROEL.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut acc = self.sub_models[0].forward(x)?;
        for m in &self.sub_models[1..] {
            let out = m.forward(x)?;
            for (a, v) in acc.data_mut().iter_mut().zip(out.data()) {
                *a += v;
            }
        }
        let k = self.sub_models.len() as f64;
        for v in acc.data_mut() {
            *v /= k;
        }
        Ok(acc)
    }

    pub fn save_dir(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = SisaManifest {
            format_version: 1,
            k: self.k(),
            partition: self.partition.clone(),
            hidden: self.hidden.clone(),
            train_config: self.train_config.clone(),
            ledger: self.ledger.iter().copied().collect(),
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        for (i, m) in self.sub_models.iter().enumerate() {
            crate::checkpoint::save_checkpoint(m, &dir.join(format!("model_{i:03}.ckpt")))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &std::path::Path) -> Result<SisaEnsemble> {
        let json = std::fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: SisaManifest = serde_json::from_str(&json)?;
        if manifest.format_version != 1 {
            return Err(EtidError::Format(format!(
                "unsupported manifest version {}",
                manifest.format_version
            )));
        }
        let mut sub_models = Vec::with_capacity(manifest.k);
        for i in 0..manifest.k {
            sub_models.push(crate::checkpoint::load_checkpoint(
                &dir.join(format!("model_{i:03}.ckpt")),
            )?);
        }
        Ok(SisaEnsemble {
            sub_models,
            partition: manifest.partition,
            hidden: manifest.hidden,
            train_config: manifest.train_config,
            ledger: manifest.ledger.into_iter().collect(),
        })
    }

    /// Retrain from scratch exactly the shards intersecting the request, on
    /// shard-minus-erased data. Returns the indices of retrained shards.
    pub fn unlearn(
        &mut self,
        train: &Dataset,
        req: &UnlearnRequest,
        parallel: bool,
    ) -> Result<Vec<usize>> {
        for &id in &req.sample_ids {
            if self.partition.part_of(id).is_none() {
                return Err(EtidError::validation(format!(
                    "sample id {id} is not a training id"
                )));
            }
            if self.ledger.contains(&id) {
                return Err(EtidError::validation(format!(
                    "sample id {id} has already been unlearned"
                )));
            }
        }
        let mut erased = self.ledger.clone();
        erased.extend(req.sample_ids.iter().copied());
        let affected: Vec<usize> = (0..self.k())
            .filter(|&i| {
                self.partition
                    .part_ids(i)
                    .iter()
                    .any(|id| req.sample_ids.contains(id))
            })
            .collect();
        let sizes = full_layer_sizes(train, &self.hidden);
        let cfg = &self.train_config;
        let shard_data: Result<Vec<(usize, Vec<SampleId>)>> = affected
            .iter()
            .map(|&i| {
                let mut ids = self.partition.part_ids(i);
                ids.retain(|id| !erased.contains(id));
                if ids.is_empty() {
                    return Err(EtidError::validation(format!(
                        "shard {i} emptied by the erasure request"
                    )));
                }
                Ok((i, ids.into_iter().collect()))
            })
            .collect();
        let shard_data = shard_data?;
        let job = |(i, ids): &(usize, Vec<SampleId>)| -> Result<(usize, MlpModel)> {
            let x = train.features_for(ids)?;
            let y = Targets::Hard(train.labels_for(ids)?);
            let seed = derive_seed(cfg.seed, *i as u64);
            let model = MlpModel::new(&sizes, seed)?.train(&x, &y, &cfg.clone().with_seed(seed))?;
            Ok((*i, model))
        };
        let retrained: Result<Vec<(usize, MlpModel)>> = if parallel {
            shard_data.par_iter().map(job).collect()
        } else {
            shard_data.iter().map(job).collect()
        };
        for (i, model) in retrained? {
            self.sub_models[i] = model;
        }
        self.ledger = erased;
        Ok(affected)
    }
}

#[derive(Serialize, Deserialize)]
struct SisaManifest {
    format_version: u32,
    k: usize,
    partition: PartitionMap,
    hidden: Vec<usize>,
    train_config: TrainConfig,
    ledger: Vec<SampleId>,
}

/// Fine-tune every sub-model on the erased rows with fresh random labels,
/// resampled to differ from the true class.
pub fn relabel_unlearn_ensemble(
    e: &mut Ensemble,
    train: &Dataset,
    req: &UnlearnRequest,
    cfg: &TrainConfig,
) -> Result<()> {
    let c = train.num_classes();
    if c < 2 {
        return Err(EtidError::validation(
            "relabel needs at least 2 classes to pick an alternative label",
        ));
    }
    cfg.validate()?;
    if req.is_empty() {
        return Err(EtidError::validation("empty unlearning request"));
    }
    let ids: Vec<SampleId> = req.sample_ids.iter().copied().collect();
    let x = train.features_for(&ids)?;
    let true_labels = train.labels_for(&ids)?;
    let random_labels = resample_labels(&true_labels, c, cfg.seed);
    let targets = Targets::Hard(random_labels);
    let k = e.k();
    for j in 0..k {
        let model = std::mem::replace(
            &mut e.sub_models_mut()[j],
            MlpModel::new(&[1, 1], 0).expect("static layer sizes"),
        );
        let seed = derive_seed(cfg.seed, j as u64);
        e.sub_models_mut()[j] = model.train(&x, &targets, &cfg.clone().with_seed(seed))?;
    }
    e.extend_ledger(&req.sample_ids);
    Ok(())
}

/// Single-model variant of the relabel baseline.
pub fn relabel_unlearn_model(
    model: MlpModel,
    train: &Dataset,
    req: &UnlearnRequest,
    cfg: &TrainConfig,
) -> Result<MlpModel> {
    let c = train.num_classes();
    if c < 2 {
        return Err(EtidError::validation(
            "relabel needs at least 2 classes to pick an alternative label",
        ));
    }
    cfg.validate()?;
    let ids: Vec<SampleId> = req.sample_ids.iter().copied().collect();
    let x = train.features_for(&ids)?;
    let true_labels = train.labels_for(&ids)?;
    let targets = Targets::Hard(resample_labels(&true_labels, c, cfg.seed));
    model.train(&x, &targets, cfg)
}

fn resample_labels(true_labels: &[usize], num_classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    true_labels
        .iter()
        .map(|&y| {
            let draw = rng.gen_range(0..num_classes - 1);
            if draw >= y {
                draw + 1
            } else {
                draw
            }
        })
        .collect()
}
