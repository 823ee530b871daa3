//! Experiment harness: seeded run preparation, per-method target
//! construction, unlearning responses, retrained oracles, and metric
//! assembly. The CLI commands and sweeps are thin layers over this module.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    relabel_unlearn_ensemble, retrain_ensemble, retrain_single, train_single, SisaEnsemble,
};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{ExperimentConfig, Method};
use crate::dataset::{
    generate_clustered, load_csv, sample_unlearning, split, Dataset, SampleId, UnlearnRequest,
};
use crate::error::{EtidError, Result};
use crate::eval::{
    accuracy, consistency_outputs, time_phase, verifiability, MetricsReport, Predictor,
};
use crate::matrix::Matrix;
use crate::nn::MlpModel;
use crate::roel::Ensemble;
use crate::seeds::derive_seed;
use crate::tid::{handle_request, TidConfig, UnlearnReport};

/// Everything one seeded run shares across methods.
pub struct RunData {
    pub train: Dataset,
    pub test: Dataset,
    pub request: UnlearnRequest,
    pub run_seed: u64,
    pub seed_index: usize,
}

pub fn prepare_run(cfg: &ExperimentConfig, seed_index: usize) -> Result<RunData> {
    let run_seed = derive_seed(cfg.seed, seed_index as u64);
    let full = match &cfg.data.csv_path {
        Some(path) => load_csv(path)?,
        None => generate_clustered(
            cfg.data.n_samples,
            cfg.data.n_features,
            cfg.data.n_classes,
            cfg.data.modes_per_class,
            cfg.data.cluster_spread,
            derive_seed(run_seed, 0),
        )?,
    };
    let (train, test) = split(&full, cfg.data.train_ratio, derive_seed(run_seed, 1))?;
    let request = sample_unlearning(&train, cfg.unlearn_ratio, derive_seed(run_seed, 2))?;
    Ok(RunData {
        train,
        test,
        request,
        run_seed,
        seed_index,
    })
}

/// A persistable trained model of any method family.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Single(MlpModel),
    Roel(Ensemble),
    Sisa(SisaEnsemble),
}

impl Predictor for TrainedModel {
    fn posteriors(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            TrainedModel::Single(m) => m.forward(x),
            TrainedModel::Roel(e) => e.predict(x),
            TrainedModel::Sisa(e) => e.predict(x),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct KindTag {
    kind: String,
}

impl TrainedModel {
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let kind = match self {
            TrainedModel::Single(_) => "single",
            TrainedModel::Roel(_) => "roel",
            TrainedModel::Sisa(_) => "sisa",
        };
        fs::write(
            dir.join("kind.json"),
            serde_json::to_string(&KindTag { kind: kind.into() })?,
        )?;
        match self {
            TrainedModel::Single(m) => save_checkpoint(m, &dir.join("model.ckpt")),
            TrainedModel::Roel(e) => e.save_dir(dir),
            TrainedModel::Sisa(e) => e.save_dir(dir),
        }
    }

    pub fn load_dir(dir: &Path) -> Result<TrainedModel> {
        let tag: KindTag = serde_json::from_str(&fs::read_to_string(dir.join("kind.json"))?)?;
        match tag.kind.as_str() {
            "single" => Ok(TrainedModel::Single(load_checkpoint(&dir.join("model.ckpt"))?)),
            "roel" => Ok(TrainedModel::Roel(Ensemble::load_dir(dir)?)),
            "sisa" => Ok(TrainedModel::Sisa(SisaEnsemble::load_dir(dir)?)),
            other => Err(EtidError::Format(format!("unknown model kind `{other}`"))),
        }
    }
}

fn model_seed(run: &RunData) -> u64 {
    derive_seed(run.run_seed, 10)
}

/// Train the deployed target model for one method.
pub fn build_target(cfg: &ExperimentConfig, method: Method, run: &RunData) -> Result<TrainedModel> {
    let tc = cfg.train.clone().with_seed(model_seed(run));
    match method {
        Method::RetrainSingle => Ok(TrainedModel::Single(train_single(
            &run.train,
            &cfg.hidden,
            &tc,
        )?)),
        Method::Sisa => Ok(TrainedModel::Sisa(SisaEnsemble::build(
            &run.train,
            cfg.k,
            &cfg.hidden,
            &tc,
            cfg.parallel,
        )?)),
        // ETID, Relabel and Retrain-ETID all start from the same ROEL target.
        Method::Etid | Method::Relabel | Method::RetrainEnsemble => Ok(TrainedModel::Roel(
            Ensemble::build(&run.train, cfg.k, &cfg.hidden, &tc, cfg.parallel)?,
        )),
    }
}

pub struct UnlearnOutcome {
    pub unlearned: TrainedModel,
    pub seconds_serial: f64,
    pub seconds_parallel: f64,
    pub report: Option<UnlearnReport>,
}

fn tid_config(cfg: &ExperimentConfig, run: &RunData, parallel: bool) -> TidConfig {
    TidConfig {
        distill: cfg.distill.clone().with_seed(derive_seed(run.run_seed, 11)),
        rectify: cfg.rectify.clone().with_seed(derive_seed(run.run_seed, 12)),
        parallel,
    }
}

/// Apply one method's unlearning response to its target, timing both serial
/// and parallel execution where the method supports parallelism.
pub fn unlearn_target(
    cfg: &ExperimentConfig,
    method: Method,
    run: &RunData,
    target: &TrainedModel,
) -> Result<UnlearnOutcome> {
    match (method, target) {
        (Method::Etid, TrainedModel::Roel(e)) => {
            let mut serial = e.clone();
            let train = &run.train;
            let (res_s, secs_serial) = time_phase(|| {
                handle_request(&mut serial, train, &run.request, &tid_config(cfg, run, false))
            });
            let report = res_s?;
            let mut par = e.clone();
            let (res_p, secs_parallel) = time_phase(|| {
                handle_request(&mut par, train, &run.request, &tid_config(cfg, run, true))
            });
            res_p?;
            Ok(UnlearnOutcome {
                unlearned: TrainedModel::Roel(serial),
                seconds_serial: secs_serial,
                seconds_parallel: secs_parallel,
                report: Some(report),
            })
        }
        (Method::RetrainSingle, TrainedModel::Single(_)) => {
            let tc = cfg.train.clone().with_seed(model_seed(run));
            let (res, secs) =
                time_phase(|| retrain_single(&run.train, &run.request.sample_ids, &cfg.hidden, &tc));
            Ok(UnlearnOutcome {
                unlearned: TrainedModel::Single(res?),
                seconds_serial: secs,
                seconds_parallel: secs,
                report: None,
            })
        }
        (Method::RetrainEnsemble, TrainedModel::Roel(_)) => {
            let tc = cfg.train.clone().with_seed(model_seed(run));
            let (res_s, secs_serial) = time_phase(|| {
                retrain_ensemble(
                    &run.train,
                    &run.request.sample_ids,
                    cfg.k,
                    &cfg.hidden,
                    &tc,
                    false,
                )
            });
            let serial = res_s?;
            let (res_p, secs_parallel) = time_phase(|| {
                retrain_ensemble(
                    &run.train,
                    &run.request.sample_ids,
                    cfg.k,
                    &cfg.hidden,
                    &tc,
                    true,
                )
            });
            res_p?;
            Ok(UnlearnOutcome {
                unlearned: TrainedModel::Roel(serial),
                seconds_serial: secs_serial,
                seconds_parallel: secs_parallel,
                report: None,
            })
        }
        (Method::Sisa, TrainedModel::Sisa(e)) => {
            let mut serial = e.clone();
            let (res_s, secs_serial) =
                time_phase(|| serial.unlearn(&run.train, &run.request, false));
            res_s?;
            let mut par = e.clone();
            let (res_p, secs_parallel) = time_phase(|| par.unlearn(&run.train, &run.request, true));
            res_p?;
            Ok(UnlearnOutcome {
                unlearned: TrainedModel::Sisa(serial),
                seconds_serial: secs_serial,
                seconds_parallel: secs_parallel,
                report: None,
            })
        }
        (Method::Relabel, TrainedModel::Roel(e)) => {
            let mut tuned = e.clone();
            let rc = cfg.rectify.clone().with_seed(derive_seed(run.run_seed, 14));
            let (res, secs) =
                time_phase(|| relabel_unlearn_ensemble(&mut tuned, &run.train, &run.request, &rc));
            res?;
            Ok(UnlearnOutcome {
                unlearned: TrainedModel::Roel(tuned),
                seconds_serial: secs,
                seconds_parallel: secs,
                report: None,
            })
        }
        _ => Err(EtidError::validation(format!(
            "target model kind does not match method {}",
            method.name()
        ))),
    }
}

/// The naive-retrained counterpart used as the consistency oracle. Retrain
/// methods and SISA are their own counterparts, so no oracle is needed.
pub fn build_oracle(
    cfg: &ExperimentConfig,
    method: Method,
    run: &RunData,
) -> Result<Option<TrainedModel>> {
    match method {
        Method::Etid | Method::Relabel => {
            let tc = cfg.train.clone().with_seed(model_seed(run));
            Ok(Some(TrainedModel::Roel(retrain_ensemble(
                &run.train,
                &run.request.sample_ids,
                cfg.k,
                &cfg.hidden,
                &tc,
                cfg.parallel,
            )?)))
        }
        Method::RetrainSingle | Method::RetrainEnsemble | Method::Sisa => Ok(None),
    }
}

/// Assemble the full metrics row for one (method, seed) run.
pub fn evaluate_run(
    cfg: &ExperimentConfig,
    method: Method,
    run: &RunData,
    target: &TrainedModel,
    unlearned: &TrainedModel,
    oracle: Option<&TrainedModel>,
    seconds_serial: f64,
    seconds_parallel: f64,
) -> Result<MetricsReport> {
    let unlearn_ids: Vec<SampleId> = run.request.sample_ids.iter().copied().collect();
    let remaining_ids: Vec<SampleId> = run
        .train
        .ids()
        .iter()
        .copied()
        .filter(|id| !run.request.sample_ids.contains(id))
        .collect();
    let x_r = run.train.features_for(&remaining_ids)?;
    let y_r = run.train.labels_for(&remaining_ids)?;
    let x_t = run.test.features();
    let y_t = run.test.labels();
    let x_u = run.train.features_for(&unlearn_ids)?;
    let y_u = run.train.labels_for(&unlearn_ids)?;

    let probs_r = unlearned.posteriors(&x_r)?;
    let probs_t = unlearned.posteriors(x_t)?;
    let probs_u = unlearned.posteriors(&x_u)?;

    let (con_r, con_t, con_u) = match oracle {
        Some(rt) => (
            consistency_outputs(&probs_r, &rt.posteriors(&x_r)?)?,
            consistency_outputs(&probs_t, &rt.posteriors(x_t)?)?,
            consistency_outputs(&probs_u, &rt.posteriors(&x_u)?)?,
        ),
        // Retraining-based responses coincide with their own oracle.
        None => (0.0, 0.0, 0.0),
    };

    let ver = verifiability(
        target,
        unlearned,
        &run.train,
        &run.test,
        &run.request.sample_ids,
        cfg.attack_repeats,
        cfg.attack_hidden,
        &cfg.attack.clone().with_seed(derive_seed(run.run_seed, 13)),
    )?;

    Ok(MetricsReport {
        method: method.name().to_string(),
        seed: run.seed_index as u64,
        acc_remaining: accuracy(&probs_r, &y_r)?,
        acc_test: accuracy(&probs_t, y_t)?,
        acc_unlearn: accuracy(&probs_u, &y_u)?,
        con_remaining: con_r,
        con_test: con_t,
        con_unlearn: con_u,
        con_remaining_mean: con_r / x_r.rows() as f64,
        con_test_mean: con_t / x_t.rows() as f64,
        con_unlearn_mean: con_u / x_u.rows() as f64,
        seconds_serial,
        seconds_parallel,
        m_auc_before: ver.m_auc_before,
        m_auc_after: ver.m_auc_after,
        delta: ver.delta,
        p_value: ver.p_value,
    })
}

/// End-to-end run of one method on one seed, entirely in memory.
pub fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    seed_index: usize,
) -> Result<MetricsReport> {
    let run = prepare_run(cfg, seed_index)?;
    let target = build_target(cfg, method, &run)?;
    let outcome = unlearn_target(cfg, method, &run, &target)?;
    let oracle = build_oracle(cfg, method, &run)?;
    evaluate_run(
        cfg,
        method,
        &run,
        &target,
        &outcome.unlearned,
        oracle.as_ref(),
        outcome.seconds_serial,
        outcome.seconds_parallel,
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub k: usize,
    pub unlearn_ratio: f64,
    pub seed: usize,
    #[serde(flatten)]
    pub report: MetricsReport,
}

pub fn sweep_csv_header() -> String {
    format!("method,k,unlearn_ratio,seed,{}", &MetricsReport::csv_header()[12..])
}

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let report_row = self.report.csv_row();
        let tail = report_row.splitn(3, ',').nth(2).unwrap_or("");
        format!(
            "{},{},{},{},{}",
            self.method, self.k, self.unlearn_ratio, self.seed, tail
        )
    }
}

/// Cross-product sweep over K values and unlearning ratios, every method,
/// every seed.
pub fn sweep(cfg: &ExperimentConfig, ks: &[usize], urs: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        for &ur in urs {
            let mut cell_cfg = cfg.clone();
            cell_cfg.k = k;
            cell_cfg.unlearn_ratio = ur;
            cell_cfg.validate()?;
            for &method in &cfg.methods {
                for seed_index in 0..cfg.n_seeds {
                    let report = run_method(&cell_cfg, method, seed_index)?;
                    rows.push(SweepRow {
                        method: method.name().to_string(),
                        k,
                        unlearn_ratio: ur,
                        seed: seed_index,
                        report,
                    });
                }
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataConfig;
    use crate::nn::{LossKind, TrainConfig};

    /// Tiny configuration for harness smoke tests.
    pub fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            format_version: 1,
            data: DataConfig {
                csv_path: None,
                n_samples: 300,
                n_features: 6,
                n_classes: 3,
                modes_per_class: 1,
                cluster_spread: 1.5,
                train_ratio: 0.8,
            },
            // K=5 keeps the validity gate above 1 for uneven random requests.
            k: 5,
            unlearn_ratio: 0.02,
            hidden: vec![16],
            train: TrainConfig {
                learning_rate: 0.1,
                epochs: 15,
                batch_size: 16,
                seed: 0,
                shuffle: true,
                loss: LossKind::CrossEntropy,
            },
            distill: TrainConfig {
                learning_rate: 0.2,
                epochs: 10,
                batch_size: 8,
                seed: 0,
                shuffle: true,
                loss: LossKind::KlToTargets,
            },
            rectify: TrainConfig {
                learning_rate: 0.02,
                epochs: 2,
                batch_size: 16,
                seed: 0,
                shuffle: true,
                loss: LossKind::CrossEntropy,
            },
            attack: TrainConfig {
                learning_rate: 0.1,
                epochs: 10,
                batch_size: 16,
                seed: 0,
                shuffle: true,
                loss: LossKind::CrossEntropy,
            },
            attack_hidden: 8,
            attack_repeats: 2,
            methods: vec![Method::Etid],
            n_seeds: 1,
            parallel: false,
            seed: 99,
            output_dir: std::path::PathBuf::from("unused"),
        }
    }

    #[test]
    fn run_method_produces_consistent_report() {
        let cfg = tiny_config();
        let report = run_method(&cfg, Method::Etid, 0).unwrap();
        assert_eq!(report.method, "etid");
        assert!((report.delta - (report.m_auc_before - report.m_auc_after).abs()).abs() < 1e-12);
        assert!(report.acc_test > 0.3, "acc_test {}", report.acc_test);
    }

    #[test]
    fn run_method_is_deterministic_apart_from_timing() {
        let cfg = tiny_config();
        let mut a = run_method(&cfg, Method::Etid, 0).unwrap();
        let mut b = run_method(&cfg, Method::Etid, 0).unwrap();
        a.seconds_serial = 0.0;
        a.seconds_parallel = 0.0;
        b.seconds_serial = 0.0;
        b.seconds_parallel = 0.0;
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn trained_model_round_trips_every_kind() {
        let cfg = tiny_config();
        let run = prepare_run(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (name, method) in [
            ("single", Method::RetrainSingle),
            ("roel", Method::Etid),
            ("sisa", Method::Sisa),
        ] {
            let model = build_target(&cfg, method, &run).unwrap();
            let path = dir.path().join(name);
            model.save_dir(&path).unwrap();
            let loaded = TrainedModel::load_dir(&path).unwrap();
            let x = run.test.features();
            assert_eq!(
                model.posteriors(x).unwrap(),
                loaded.posteriors(x).unwrap()
            );
        }
    }
}
