//! Reference-oriented ensemble learning: K sub-models, each trained on all
//! parts but one, averaged at prediction time. Sub-models mutually serve as
//! retrained-alike references for distillation-based erasure, and the
//! delta-alike predicates here decide whether that property still holds
//! after accumulated erasures.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::dataset::{build_subset, partition, Dataset, PartitionMap, SampleId};
use crate::error::{EtidError, Result};
use crate::matrix::Matrix;
use crate::nn::{MlpModel, Targets, TrainConfig};
use crate::seeds::derive_seed;

/// Similarity ratio between two training-id sets. Identical sets get a
/// dedicated sentinel instead of a division by zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaAlike {
    Finite(f64),
    Identical,
}

impl DeltaAlike {
    pub fn ratio(&self) -> f64 {
        match self {
            DeltaAlike::Finite(v) => *v,
            DeltaAlike::Identical => f64::INFINITY,
        }
    }

    pub fn is_at_least(&self, threshold: f64) -> bool {
        match self {
            DeltaAlike::Finite(v) => *v >= threshold,
            DeltaAlike::Identical => true,
        }
    }
}

/// delta = |A ∩ B| / max(|A \ B|, |B \ A|); symmetric in its arguments.
pub fn delta_alike(ids_a: &BTreeSet<SampleId>, ids_b: &BTreeSet<SampleId>) -> Result<DeltaAlike> {
    if ids_a.is_empty() || ids_b.is_empty() {
        return Err(EtidError::validation(
            "delta-alike is undefined for empty training-id sets",
        ));
    }
    let shared = ids_a.intersection(ids_b).count();
    let unique = (ids_a.len() - shared).max(ids_b.len() - shared);
    if unique == 0 {
        Ok(DeltaAlike::Identical)
    } else {
        Ok(DeltaAlike::Finite(shared as f64 / unique as f64))
    }
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    sub_models: Vec<MlpModel>,
    partition: PartitionMap,
    train_config: TrainConfig,
    /// Cumulative set of erased training ids.
    ledger: BTreeSet<SampleId>,
}

impl Ensemble {
    /// Train K leave-one-part-out sub-models. Sub-model i never sees part i;
    /// each job is independently seeded so parallel and serial runs agree.
    pub fn build(
        train: &Dataset,
        k: usize,
        hidden: &[usize],
        cfg: &TrainConfig,
        parallel: bool,
    ) -> Result<Ensemble> {
        cfg.validate()?;
        let part_map = partition(train, k, derive_seed(cfg.seed, u64::MAX))?;
        Ensemble::build_with_partition(train, part_map, hidden, cfg, parallel)
    }

    pub fn build_with_partition(
        train: &Dataset,
        part_map: PartitionMap,
        hidden: &[usize],
        cfg: &TrainConfig,
        parallel: bool,
    ) -> Result<Ensemble> {
        let k = part_map.k();
        let layer_sizes = full_layer_sizes(train, hidden);
        let job = |i: usize| -> Result<MlpModel> {
            let ids: Vec<SampleId> = build_subset(&part_map, i)?.into_iter().collect();
            let x = train.features_for(&ids)?;
            let y = Targets::Hard(train.labels_for(&ids)?);
            let seed = derive_seed(cfg.seed, i as u64);
            let model = MlpModel::new(&layer_sizes, seed)?;
            model.train(&x, &y, &cfg.clone().with_seed(seed))
        };
        let sub_models: Result<Vec<MlpModel>> = if parallel {
            (0..k).into_par_iter().map(job).collect()
        } else {
            (0..k).map(job).collect()
        };
        Ok(Ensemble {
            sub_models: sub_models?,
            partition: part_map,
            train_config: cfg.clone(),
            ledger: BTreeSet::new(),
        })
    }

    pub fn from_parts(
        sub_models: Vec<MlpModel>,
        partition: PartitionMap,
        train_config: TrainConfig,
        ledger: BTreeSet<SampleId>,
    ) -> Result<Ensemble> {
        if sub_models.len() != partition.k() {
            return Err(EtidError::validation(format!(
                "{} sub-models for K={}",
                sub_models.len(),
                partition.k()
            )));
        }
        Ok(Ensemble {
            sub_models,
            partition,
            train_config,
            ledger,
        })
    }

    pub fn k(&self) -> usize {
        self.partition.k()
    }

    pub fn sub_models(&self) -> &[MlpModel] {
        &self.sub_models
    }

    pub(crate) fn sub_models_mut(&mut self) -> &mut Vec<MlpModel> {
        &mut self.sub_models
    }

    pub fn partition(&self) -> &PartitionMap {
        &self.partition
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    pub fn ledger(&self) -> &BTreeSet<SampleId> {
        &self.ledger
    }

    pub(crate) fn extend_ledger(&mut self, ids: &BTreeSet<SampleId>) {
        self.ledger.extend(ids.iter().copied());
    }

    /// Averaged sub-model posteriors: M = (1/K) sum M_i.
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

    /// Training ids sub-model i was effectively fitted on: D_{-i} minus the
    /// erasure ledger.
    pub fn effective_training_ids(&self, i: usize) -> Result<BTreeSet<SampleId>> {
        let mut ids = build_subset(&self.partition, i)?;
        ids.retain(|id| !self.ledger.contains(id));
        Ok(ids)
    }

    /// Retrained-alike check between reference part i and target part j:
    /// delta between D_{-i} and D_{-j}, both minus (ledger ∪ pending).
    /// A fresh ensemble with equal part sizes yields K - 2. The pass
    /// condition tolerates the one-sample remainder of a non-divisible
    /// partition, so a fresh ensemble passes for every K >= 3.
    pub fn is_retrained_alike(
        &self,
        ref_part: usize,
        target_part: usize,
        pending_unlearn: &BTreeSet<SampleId>,
    ) -> Result<(bool, DeltaAlike)> {
        if ref_part == target_part {
            return Err(EtidError::validation(
                "reference and target part must differ",
            ));
        }
        let mut ref_ids = self.effective_training_ids(ref_part)?;
        ref_ids.retain(|id| !pending_unlearn.contains(id));
        let mut target_ids = self.effective_training_ids(target_part)?;
        target_ids.retain(|id| !pending_unlearn.contains(id));
        if ref_ids.is_empty() || target_ids.is_empty() {
            return Err(EtidError::validation(
                "delta-alike is undefined for empty training-id sets",
            ));
        }
        let shared = ref_ids.intersection(&target_ids).count();
        let unique = (ref_ids.len() - shared).max(target_ids.len() - shared);
        let sizes = self.partition.part_sizes();
        let slack = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
        let delta = delta_alike(&ref_ids, &target_ids)?;
        Ok((shared + slack >= unique, delta))
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format_version: 1,
            k: self.k(),
            partition: self.partition.clone(),
            train_config: self.train_config.clone(),
            ledger: self.ledger.iter().copied().collect(),
        };
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(dir.join("manifest.json"), json)?;
        for (i, m) in self.sub_models.iter().enumerate() {
            save_checkpoint(m, &dir.join(format!("model_{i:03}.ckpt")))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Ensemble> {
        let json = fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&json)?;
        if manifest.format_version != 1 {
            return Err(EtidError::Format(format!(
                "unsupported manifest version {}",
                manifest.format_version
            )));
        }
        let mut sub_models = Vec::with_capacity(manifest.k);
        for i in 0..manifest.k {
            sub_models.push(load_checkpoint(&dir.join(format!("model_{i:03}.ckpt")))?);
        }
        Ensemble::from_parts(
            sub_models,
            manifest.partition,
            manifest.train_config,
            manifest.ledger.into_iter().collect(),
        )
    }
}

pub fn full_layer_sizes(train: &Dataset, hidden: &[usize]) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden.len() + 2);
    sizes.push(train.num_features());
    sizes.extend_from_slice(hidden);
    sizes.push(train.num_classes());
    sizes
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    k: usize,
    partition: PartitionMap,
    train_config: TrainConfig,
    ledger: Vec<SampleId>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic;
    use crate::nn::LossKind;

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 3,
            batch_size: 16,
            seed,
            shuffle: true,
            loss: LossKind::CrossEntropy,
        }
    }

    #[test]
    fn delta_alike_known_values() {
        let a: BTreeSet<u64> = (0..10).collect();
        let b: BTreeSet<u64> = (0..10).collect();
        assert_eq!(delta_alike(&a, &b).unwrap(), DeltaAlike::Identical);

        let c: BTreeSet<u64> = (10..20).collect();
        assert_eq!(delta_alike(&a, &c).unwrap(), DeltaAlike::Finite(0.0));

        // K=5 leave-one-out: shared 3s, uniques s each -> delta = 3.
        let s = 7;
        let d_minus_i: BTreeSet<u64> = (s..5 * s).collect();
        let d_minus_j: BTreeSet<u64> = (0..s).chain(2 * s..5 * s).collect();
        assert_eq!(
            delta_alike(&d_minus_i, &d_minus_j).unwrap(),
            DeltaAlike::Finite(3.0)
        );

        assert!(delta_alike(&BTreeSet::new(), &a).is_err());
    }

    #[test]
    fn fresh_ensemble_is_retrained_alike_with_k_minus_2() {
        // 120 is divisible by both part counts, so parts are exactly equal.
        let train = generate_synthetic(120, 4, 2, 1.0, 3).unwrap();
        for k in [3usize, 5] {
            let e = Ensemble::build(&train, k, &[8], &quick_cfg(1), false).unwrap();
            for i in 0..k {
                for j in 0..k {
                    if i == j {
                        continue;
                    }
                    let (ok, delta) = e.is_retrained_alike(i, j, &BTreeSet::new()).unwrap();
                    assert!(ok);
                    assert_eq!(delta.ratio(), (k - 2) as f64);
                }
            }
        }
    }

    #[test]
    fn sub_model_never_sees_its_own_part() {
        let train = generate_synthetic(60, 3, 3, 1.0, 5).unwrap();
        let e = Ensemble::build(&train, 3, &[6], &quick_cfg(2), false).unwrap();
        for i in 0..3 {
            let training_ids = build_subset(e.partition(), i).unwrap();
            assert!(training_ids.is_disjoint(&e.partition().part_ids(i)));
            assert_eq!(training_ids.len(), 40);
        }
    }

    #[test]
    fn predict_matches_brute_force_mean() {
        let train = generate_synthetic(60, 3, 3, 1.0, 5).unwrap();
        let e = Ensemble::build(&train, 3, &[6], &quick_cfg(4), false).unwrap();
        let x = train.features();
        let pred = e.predict(x).unwrap();
        for r in 0..x.rows() {
            for c in 0..3 {
                let mean: f64 = e
                    .sub_models()
                    .iter()
                    .map(|m| m.forward(x).unwrap().get(r, c))
                    .sum::<f64>()
                    / 3.0;
                assert!((pred.get(r, c) - mean).abs() < 1e-12);
            }
            let sum: f64 = pred.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn parallel_build_matches_serial() {
        let train = generate_synthetic(60, 3, 2, 1.0, 6).unwrap();
        let a = Ensemble::build(&train, 3, &[4], &quick_cfg(7), false).unwrap();
        let b = Ensemble::build(&train, 3, &[4], &quick_cfg(7), true).unwrap();
        assert_eq!(a.sub_models(), b.sub_models());
    }

    #[test]
    fn directory_round_trip() {
        let train = generate_synthetic(60, 3, 2, 1.0, 6).unwrap();
        let mut e = Ensemble::build(&train, 3, &[4], &quick_cfg(8), false).unwrap();
        e.extend_ledger(&[1u64, 5u64].into_iter().collect());
        let dir = tempfile::tempdir().unwrap();
        e.save_dir(dir.path()).unwrap();
        let loaded = Ensemble::load_dir(dir.path()).unwrap();
        assert_eq!(e.sub_models(), loaded.sub_models());
        assert_eq!(e.ledger(), loaded.ledger());
        assert_eq!(e.partition().assignment(), loaded.partition().assignment());
    }
}
