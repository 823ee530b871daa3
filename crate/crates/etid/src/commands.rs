//! CLI command implementations and the on-disk result layout:
//! `<out>/<method>/<seed>/` holding target, unlearned, and oracle model
//! directories plus request, timing, and metrics files.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::dataset::{generate_clustered, write_csv, UnlearnRequest};
use crate::error::{EtidError, Result};
use crate::eval::MetricsReport;
use crate::experiment::{
    build_oracle, build_target, evaluate_run, prepare_run, sweep, sweep_csv_header, unlearn_target,
    RunData, TrainedModel,
};

fn run_dir(out: &Path, method: Method, seed_index: usize) -> PathBuf {
    out.join(method.name()).join(seed_index.to_string())
}

#[derive(Serialize, Deserialize)]
struct Timing {
    seconds_serial: f64,
    seconds_parallel: f64,
}

/// `gen-data`: write the synthetic dataset to a CSV for external use.
pub fn cmd_gen_data(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let d = generate_clustered(
        cfg.data.n_samples,
        cfg.data.n_features,
        cfg.data.n_classes,
        cfg.data.modes_per_class,
        cfg.data.cluster_spread,
        cfg.seed,
    )?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_csv(&d, path)?;
    println!("wrote {} samples to {}", d.len(), path.display());
    Ok(())
}

/// `train`: build and persist the target model for every method and seed.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    for &method in &cfg.methods {
        for seed_index in 0..cfg.n_seeds {
            let run = prepare_run(cfg, seed_index)?;
            let dir = run_dir(out, method, seed_index);
            fs::create_dir_all(&dir)?;
            cfg.save(&dir.join("config.json"))?;
            let target = build_target(cfg, method, &run)?;
            target.save_dir(&dir.join("target"))?;
            println!("trained {}/{seed_index}", method.name());
        }
    }
    Ok(())
}

fn load_request(run: &RunData, request_path: Option<&Path>) -> Result<UnlearnRequest> {
    match request_path {
        Some(path) => UnlearnRequest::from_reader(BufReader::new(fs::File::open(path)?)),
        None => Ok(run.request.clone()),
    }
}

fn save_request(req: &UnlearnRequest, path: &Path) -> Result<()> {
    let mut text = String::new();
    for id in &req.sample_ids {
        text.push_str(&id.to_string());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// `unlearn`: load each persisted target, apply the method's unlearning
/// response, and persist the unlearned model, the retrained oracle, and the
/// timing/report files.
pub fn cmd_unlearn(
    cfg: &ExperimentConfig,
    out: &Path,
    request_path: Option<&Path>,
) -> Result<()> {
    for &method in &cfg.methods {
        for seed_index in 0..cfg.n_seeds {
            let mut run = prepare_run(cfg, seed_index)?;
            run.request = load_request(&run, request_path)?;
            let dir = run_dir(out, method, seed_index);
            let target = TrainedModel::load_dir(&dir.join("target"))?;
            let outcome = unlearn_target(cfg, method, &run, &target)?;
            outcome.unlearned.save_dir(&dir.join("unlearned"))?;
            if let Some(oracle) = build_oracle(cfg, method, &run)? {
                oracle.save_dir(&dir.join("oracle"))?;
            }
            save_request(&run.request, &dir.join("request.txt"))?;
            fs::write(
                dir.join("timing.json"),
                serde_json::to_string_pretty(&Timing {
                    seconds_serial: outcome.seconds_serial,
                    seconds_parallel: outcome.seconds_parallel,
                })?,
            )?;
            if let Some(report) = &outcome.report {
                fs::write(
                    dir.join("unlearn_report.json"),
                    serde_json::to_string_pretty(report)?,
                )?;
            }
            println!(
                "unlearned {}/{seed_index}: {} ids, serial {:.3}s, parallel {:.3}s",
                method.name(),
                run.request.len(),
                outcome.seconds_serial,
                outcome.seconds_parallel
            );
        }
    }
    Ok(())
}

/// `evaluate`: measure persisted target/unlearned/oracle triples; no model is
/// retrained here (attack models for the MI protocol are fit fresh).
pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MetricsReport>> {
    let mut reports = Vec::new();
    let results_path = out.join("results.csv");
    let mut csv = String::from(MetricsReport::csv_header());
    csv.push('\n');
    for &method in &cfg.methods {
        for seed_index in 0..cfg.n_seeds {
            let mut run = prepare_run(cfg, seed_index)?;
            let dir = run_dir(out, method, seed_index);
            let request_file = dir.join("request.txt");
            if request_file.exists() {
                run.request = load_request(&run, Some(&request_file))?;
            }
            let target = TrainedModel::load_dir(&dir.join("target"))?;
            let unlearned = TrainedModel::load_dir(&dir.join("unlearned"))?;
            let oracle_dir = dir.join("oracle");
            let oracle = if oracle_dir.exists() {
                Some(TrainedModel::load_dir(&oracle_dir)?)
            } else {
                None
            };
            let timing: Timing =
                serde_json::from_str(&fs::read_to_string(dir.join("timing.json"))?)?;
            let report = evaluate_run(
                cfg,
                method,
                &run,
                &target,
                &unlearned,
                oracle.as_ref(),
                timing.seconds_serial,
                timing.seconds_parallel,
            )?;
            fs::write(
                dir.join("metrics.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            csv.push_str(&report.csv_row());
            csv.push('\n');
            println!(
                "evaluated {}/{seed_index}: acc_test {:.3}, con_unlearn {:.4}, |delta| {:.4}",
                method.name(),
                report.acc_test,
                report.con_unlearn,
                report.delta
            );
            reports.push(report);
        }
    }
    fs::write(results_path, csv)?;
    Ok(reports)
}

/// `bench`: unlearning wall-clock comparison across methods (medians over
/// seeds, serial and parallel).
pub fn cmd_bench(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct BenchRow {
        method: String,
        median_seconds_serial: f64,
        median_seconds_parallel: f64,
    }
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let mut serial = Vec::new();
        let mut parallel = Vec::new();
        for seed_index in 0..cfg.n_seeds {
            let run = prepare_run(cfg, seed_index)?;
            let target = build_target(cfg, method, &run)?;
            let outcome = unlearn_target(cfg, method, &run, &target)?;
            serial.push(outcome.seconds_serial);
            parallel.push(outcome.seconds_parallel);
        }
        let row = BenchRow {
            method: method.name().to_string(),
            median_seconds_serial: median(&mut serial),
            median_seconds_parallel: median(&mut parallel),
        };
        println!(
            "{:>17}: serial {:.3}s, parallel {:.3}s",
            row.method, row.median_seconds_serial, row.median_seconds_parallel
        );
        rows.push(row);
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("bench.json"), serde_json::to_string_pretty(&rows)?)?;
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// `sweep`: grid over K values and unlearning ratios, one CSV row per
/// (method, K, UR, seed).
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, ks: &[usize], urs: &[f64]) -> Result<PathBuf> {
    if ks.is_empty() || urs.is_empty() {
        return Err(EtidError::validation("sweep needs at least one K and one UR"));
    }
    let rows = sweep(cfg, ks, urs)?;
    let mut csv = sweep_csv_header();
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    fs::create_dir_all(out)?;
    let path = out.join("sweep.csv");
    fs::write(&path, csv)?;
    println!("wrote {} sweep rows to {}", rows.len(), path.display());
    Ok(path)
}
