//! The four-desiderata measurement suite: accuracy, consistency (posterior
//! L2 distance to a retrained oracle), wall-clock efficiency, and the
//! membership-inference verifiability protocol with rank-based AUC and a
//! paired significance test across seeds.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{Dataset, SampleId};
use crate::error::{EtidError, Result};
use crate::matrix::Matrix;
use crate::nn::{MlpModel, Targets, TrainConfig};
use crate::roel::Ensemble;
use crate::seeds::derive_seed;

/// Anything that maps feature rows to posterior rows.
pub trait Predictor {
    fn posteriors(&self, x: &Matrix) -> Result<Matrix>;
}

impl Predictor for MlpModel {
    fn posteriors(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x)
    }
}

impl Predictor for Ensemble {
    fn posteriors(&self, x: &Matrix) -> Result<Matrix> {
        self.predict(x)
    }
}

impl Predictor for crate::baselines::SisaEnsemble {
    fn posteriors(&self, x: &Matrix) -> Result<Matrix> {
        self.predict(x)
    }
}

/// Fraction of rows whose argmax posterior matches the label.
pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() == 0 {
        return Err(EtidError::validation("accuracy over an empty set"));
    }
    if probs.rows() != labels.len() {
        return Err(EtidError::shape(
            format!("{} labels", probs.rows()),
            format!("{} labels", labels.len()),
        ));
    }
    let correct = probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn model_accuracy(model: &impl Predictor, x: &Matrix, labels: &[usize]) -> Result<f64> {
    accuracy(&model.posteriors(x)?, labels)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Summed per-row L2 distance between two posterior matrices.
pub fn consistency_outputs(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(EtidError::shape(
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    if a.rows() == 0 {
        return Err(EtidError::validation("consistency over an empty set"));
    }
    let mut total = 0.0;
    for (ra, rb) in a.iter_rows().zip(b.iter_rows()) {
        let sq: f64 = ra.iter().zip(rb).map(|(p, q)| (p - q) * (p - q)).sum();
        total += sq.sqrt();
    }
    Ok(total)
}

/// Con(X) between an unlearned model and its retrained oracle.
pub fn consistency(
    model_u: &impl Predictor,
    model_rt: &impl Predictor,
    x: &Matrix,
) -> Result<f64> {
    consistency_outputs(&model_u.posteriors(x)?, &model_rt.posteriors(x)?)
}

/// Wall-clock a phase, returning its output and elapsed seconds.
pub fn time_phase<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Rank-statistic AUC over positive and negative scores; ties count one half.
pub fn auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(EtidError::validation("AUC needs both score sets non-empty"));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("scores must be comparable"));
    // Midranks over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let np = positives.len() as f64;
    let nn = negatives.len() as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    Ok(u / (np * nn))
}

/// Balanced membership-inference training set: target posteriors as features,
/// member/non-member as labels.
#[derive(Debug, Clone)]
pub struct MiDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

/// Sample |test| member rows from the training set (disjoint from the
/// unlearning ids), pair them with the full test set, and featurize both
/// through the target model.
pub fn build_mi_dataset(
    target: &impl Predictor,
    train: &Dataset,
    test: &Dataset,
    unlearn_ids: &BTreeSet<SampleId>,
    seed: u64,
) -> Result<MiDataset> {
    let candidates: Vec<SampleId> = train
        .ids()
        .iter()
        .copied()
        .filter(|id| !unlearn_ids.contains(id))
        .collect();
    if candidates.len() < test.len() {
        return Err(EtidError::validation(format!(
            "need {} member candidates outside the unlearning set, have {}",
            test.len(),
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = candidates;
    pool.shuffle(&mut rng);
    let member_ids: Vec<SampleId> = pool[..test.len()].to_vec();
    debug_assert!(member_ids.iter().all(|id| !unlearn_ids.contains(id)));

    let member_posteriors = target.posteriors(&train.features_for(&member_ids)?)?;
    let nonmember_posteriors = target.posteriors(test.features())?;
    let c = member_posteriors.cols();
    let n = member_posteriors.rows() + nonmember_posteriors.rows();
    let mut data = Vec::with_capacity(n * c);
    data.extend_from_slice(member_posteriors.data());
    data.extend_from_slice(nonmember_posteriors.data());
    let mut labels = vec![1usize; member_posteriors.rows()];
    labels.extend(vec![0usize; nonmember_posteriors.rows()]);
    Ok(MiDataset {
        features: Matrix::from_vec(n, c, data)?,
        labels,
    })
}

/// Binary attack model with exactly two trainable layers.
pub fn train_attack(mi: &MiDataset, hidden: usize, cfg: &TrainConfig) -> Result<MlpModel> {
    let sizes = [mi.features.cols(), hidden, 2];
    let model = MlpModel::new(&sizes, cfg.seed)?;
    model.train(&mi.features, &Targets::Hard(mi.labels.clone()), cfg)
}

/// M-AUC: how well the attack separates the unlearning rows (members) from an
/// equal number of test rows (non-members), scored through `evaluated`.
pub fn m_auc(
    attack: &MlpModel,
    evaluated: &impl Predictor,
    x_unlearn: &Matrix,
    x_test: &Matrix,
) -> Result<f64> {
    if x_unlearn.rows() == 0 || x_test.rows() == 0 {
        return Err(EtidError::validation("M-AUC needs non-empty sample sets"));
    }
    if x_unlearn.rows() != x_test.rows() {
        return Err(EtidError::validation(format!(
            "member and non-member sets must match in size ({} vs {})",
            x_unlearn.rows(),
            x_test.rows()
        )));
    }
    let member_scores = attack_scores(attack, evaluated, x_unlearn)?;
    let nonmember_scores = attack_scores(attack, evaluated, x_test)?;
    auc(&member_scores, &nonmember_scores)
}

fn attack_scores(
    attack: &MlpModel,
    evaluated: &impl Predictor,
    x: &Matrix,
) -> Result<Vec<f64>> {
    let posteriors = evaluated.posteriors(x)?;
    let attack_out = attack.forward(&posteriors)?;
    Ok((0..attack_out.rows()).map(|r| attack_out.get(r, 1)).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifiabilityResult {
    pub m_auc_before: f64,
    pub m_auc_after: f64,
    pub delta: f64,
    pub p_value: f64,
    pub per_seed_before: Vec<f64>,
    pub per_seed_after: Vec<f64>,
}

/// Repeat the MI examination across seeds: per seed, resample the member set
/// and the non-member evaluation set, rebuild the attack on the target model,
/// and score both models. Significance is a paired two-sided t-test.
#[allow(clippy::too_many_arguments)]
pub fn verifiability(
    target: &impl Predictor,
    unlearned: &impl Predictor,
    train: &Dataset,
    test: &Dataset,
    unlearn_ids: &BTreeSet<SampleId>,
    n_seeds: usize,
    attack_hidden: usize,
    attack_cfg: &TrainConfig,
) -> Result<VerifiabilityResult> {
    if n_seeds < 2 {
        return Err(EtidError::validation(
            "need at least 2 seeds for a variance estimate",
        ));
    }
    if unlearn_ids.is_empty() {
        return Err(EtidError::validation("no unlearning ids to examine"));
    }
    if test.len() < unlearn_ids.len() {
        return Err(EtidError::validation(format!(
            "need {} test rows to mirror the unlearning set, have {}",
            unlearn_ids.len(),
            test.len()
        )));
    }
    let unlearn_vec: Vec<SampleId> = unlearn_ids.iter().copied().collect();
    let x_unlearn = train.features_for(&unlearn_vec)?;
    let mut before = Vec::with_capacity(n_seeds);
    let mut after = Vec::with_capacity(n_seeds);
    for s in 0..n_seeds {
        let seed = derive_seed(attack_cfg.seed, s as u64);
        let mi = build_mi_dataset(target, train, test, unlearn_ids, seed)?;
        let attack = train_attack(&mi, attack_hidden, &attack_cfg.clone().with_seed(seed))?;

        let mut test_ids: Vec<SampleId> = test.ids().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        test_ids.shuffle(&mut rng);
        let x_ta = test.features_for(&test_ids[..unlearn_vec.len()])?;

        before.push(m_auc(&attack, target, &x_unlearn, &x_ta)?);
        after.push(m_auc(&attack, unlearned, &x_unlearn, &x_ta)?);
    }
    let mean_b = mean(&before);
    let mean_a = mean(&after);
    let p_value = paired_t_test(&before, &after)?;
    Ok(VerifiabilityResult {
        m_auc_before: mean_b,
        m_auc_after: mean_a,
        delta: (mean_b - mean_a).abs(),
        p_value,
        per_seed_before: before,
        per_seed_after: after,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two-sided paired t-test p-value over matched samples.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EtidError::validation(
            "paired t-test needs two equal-length samples of size >= 2",
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let mean_d = mean(&diffs);
    let var = diffs.iter().map(|d| (d - mean_d).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    if se < 1e-300 {
        // Zero variance: identical pairs are insignificant, any constant
        // nonzero difference is maximally significant.
        return Ok(if mean_d.abs() < 1e-300 { 1.0 } else { 0.0 });
    }
    let t = mean_d / se;
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| EtidError::validation(format!("t-distribution: {e}")))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Flat result record for one (method, seed) evaluation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub seed: u64,
    pub acc_remaining: f64,
    pub acc_test: f64,
    pub acc_unlearn: f64,
    pub con_remaining: f64,
    pub con_test: f64,
    pub con_unlearn: f64,
    /// Per-sample means of the Con sums, for scale-free comparison.
    pub con_remaining_mean: f64,
    pub con_test_mean: f64,
    pub con_unlearn_mean: f64,
    pub seconds_serial: f64,
    pub seconds_parallel: f64,
    pub m_auc_before: f64,
    pub m_auc_after: f64,
    pub delta: f64,
    pub p_value: f64,
}

impl MetricsReport {
    pub fn csv_header() -> &'static str {
        "method,seed,acc_remaining,acc_test,acc_unlearn,con_remaining,con_test,con_unlearn,\
         con_remaining_mean,con_test_mean,con_unlearn_mean,seconds_serial,seconds_parallel,\
         m_auc_before,m_auc_after,delta,p_value"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.seed,
            self.acc_remaining,
            self.acc_test,
            self.acc_unlearn,
            self.con_remaining,
            self.con_test,
            self.con_unlearn,
            self.con_remaining_mean,
            self.con_test_mean,
            self.con_unlearn_mean,
            self.seconds_serial,
            self.seconds_parallel,
            self.m_auc_before,
            self.m_auc_after,
            self.delta,
            self.p_value
        )
    }
}
