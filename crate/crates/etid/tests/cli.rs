//! End-to-end tests of the `etid` binary: pipeline composition, output
//! layout, determinism of persisted results, and error exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use etid::config::{ExperimentConfig, Method};
use etid::nn::TrainConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_etid"))
}

fn tiny_config(out: &Path, methods: Vec<Method>, k: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.data.n_samples = 250;
    cfg.data.n_features = 6;
    cfg.data.n_classes = 3;
    cfg.data.cluster_spread = 1.5;
    cfg.k = k;
    cfg.unlearn_ratio = 0.02;
    cfg.hidden = vec![12];
    cfg.train = TrainConfig { epochs: 10, ..cfg.train };
    cfg.distill = TrainConfig { epochs: 8, ..cfg.distill };
    cfg.rectify = TrainConfig { epochs: 2, ..cfg.rectify };
    cfg.attack = TrainConfig { epochs: 8, ..cfg.attack };
    cfg.attack_hidden = 8;
    cfg.attack_repeats = 2;
    cfg.methods = methods;
    cfg.n_seeds = 1;
    cfg.parallel = false;
    cfg.seed = 23;
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.json");
    cfg.save(&path).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn gen_data_writes_loadable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), vec![Method::RetrainSingle], 5);
    let cfg_path = write_config(dir.path(), &cfg);
    let csv = dir.path().join("data.csv");
    run_ok(bin().args(["--config"]).arg(&cfg_path).arg("gen-data").arg(&csv));
    let loaded = etid::dataset::load_csv(&csv).unwrap();
    assert_eq!(loaded.len(), 250);
    assert_eq!(loaded.num_features(), 6);
}

#[test]
fn train_unlearn_evaluate_composes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = tiny_config(&out, vec![Method::Etid, Method::RetrainSingle], 5);
    let cfg_path = write_config(dir.path(), &cfg);

    run_ok(bin().args(["--config"]).arg(&cfg_path).arg("train"));
    for method in ["etid", "retrain_single"] {
        assert!(out.join(method).join("0").join("target").join("kind.json").exists());
    }

    run_ok(bin().args(["--config"]).arg(&cfg_path).arg("unlearn"));
    let etid_run = out.join("etid").join("0");
    assert!(etid_run.join("unlearned").join("manifest.json").exists());
    assert!(etid_run.join("oracle").join("manifest.json").exists());
    assert!(etid_run.join("request.txt").exists());
    assert!(etid_run.join("timing.json").exists());
    assert!(etid_run.join("unlearn_report.json").exists());

    run_ok(bin().args(["--config"]).arg(&cfg_path).arg("evaluate"));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3, "header + one row per method");
    assert!(results.starts_with("method,seed,"));

    // Evaluation reads persisted artifacts, so a second run reproduces the
    // result table byte for byte (timing comes from timing.json, not clocks).
    run_ok(bin().args(["--config"]).arg(&cfg_path).arg("evaluate"));
    let again = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(results, again);
}

#[test]
fn repeated_unlearn_is_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = tiny_config(&out, vec![Method::Etid], 5);
    let cfg_path = write_config(dir.path(), &cfg);
    run_ok(bin().args(["--config"]).arg(&cfg_path).arg("train"));
    run_ok(bin().args(["--config"]).arg(&cfg_path).arg("unlearn"));
    let run_dir = out.join("etid").join("0");
    let first = fs::read(run_dir.join("unlearned").join("model_000.ckpt")).unwrap();
    let first_report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("unlearn_report.json")).unwrap())
            .unwrap();
    run_ok(bin().args(["--config"]).arg(&cfg_path).arg("unlearn"));
    let second = fs::read(run_dir.join("unlearned").join("model_000.ckpt")).unwrap();
    let mut second_report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("unlearn_report.json")).unwrap())
            .unwrap();
    assert_eq!(first, second, "checkpoint bytes differ between runs");
    let mut first_report = first_report;
    for key in ["init_seconds", "distill_seconds", "rectify_seconds", "total_seconds"] {
        first_report[key] = 0.0.into();
        second_report[key] = 0.0.into();
    }
    assert_eq!(first_report, second_report);
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut cfg = tiny_config(&out, vec![Method::Etid], 5);
    cfg.unlearn_ratio = 1.5;
    let cfg_path = write_config(dir.path(), &cfg);
    let res = bin().args(["--config"]).arg(&cfg_path).arg("train").output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("unlearn_ratio"), "stderr: {stderr}");
    assert!(stderr.contains("\"exit_code\":2"), "stderr: {stderr}");
}

#[test]
fn expired_references_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = tiny_config(&out, vec![Method::Etid], 3);
    let cfg_path = write_config(dir.path(), &cfg);
    run_ok(bin().args(["--config"]).arg(&cfg_path).arg("train"));

    // The target manifest records the partition; erase half of part 2 first.
    let run_dir = out.join("etid").join("0");
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(run_dir.join("target").join("manifest.json")).unwrap(),
    )
    .unwrap();
    let assignment = manifest["partition"]["assignment"].as_object().unwrap();
    let part2: Vec<&String> = assignment
        .iter()
        .filter(|(_, v)| v.as_u64() == Some(2))
        .map(|(k, _)| k)
        .collect();
    let part0: Vec<&String> = assignment
        .iter()
        .filter(|(_, v)| v.as_u64() == Some(0))
        .map(|(k, _)| k)
        .collect();
    let req1 = dir.path().join("req1.txt");
    let half: Vec<String> = part2[..part2.len() / 2].iter().map(|s| s.to_string()).collect();
    fs::write(&req1, half.join("\n")).unwrap();
    run_ok(bin().args(["--config"]).arg(&cfg_path).arg("unlearn").arg("--request").arg(&req1));

    // Promote the unlearned ensemble (ledger included) to be the new target,
    // then any further request must abort with the reference-expiry code.
    fs::remove_dir_all(run_dir.join("target")).unwrap();
    fs::rename(run_dir.join("unlearned"), run_dir.join("target")).unwrap();
    let req2 = dir.path().join("req2.txt");
    fs::write(&req2, format!("{}\n{}", part0[0], part0[1])).unwrap();
    let res = bin()
        .args(["--config"])
        .arg(&cfg_path)
        .arg("unlearn")
        .arg("--request")
        .arg(&req2)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.contains("\"exit_code\":3"), "stderr: {stderr}");
}

#[test]
fn sweep_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = tiny_config(&out, vec![Method::Etid, Method::Sisa], 5);
    let cfg_path = write_config(dir.path(), &cfg);
    run_ok(
        bin()
            .args(["--config"])
            .arg(&cfg_path)
            .args(["sweep", "--ks", "3,5", "--urs", "0.02"]),
    );
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    // 2 methods x 2 K values x 1 UR x 1 seed.
    assert_eq!(csv.lines().count(), 5, "{csv}");
    assert!(csv.starts_with("method,k,unlearn_ratio,seed,"));
}
