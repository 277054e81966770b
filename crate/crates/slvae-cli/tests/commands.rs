use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command as Process, Output};

use slvae::diffusion::{read_dataset, DatasetConfig, SimConfig};
use slvae::eval::Method;
use slvae::forward::ForwardConfig;
use slvae::inference::InferenceConfig;
use slvae::numerics::AdamConfig;
use slvae::vae::TrainConfig;
use slvae_cli::{run, Command, RunConfig};

fn karate_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/karate.edges")
}

fn small_config(out: &Path) -> RunConfig {
    RunConfig {
        name: "cli-test".into(),
        seed: 99,
        graph: Some(karate_path()),
        observation: Some(out.join("heldout_observation.txt")),
        truth: Some(out.join("heldout_truth.txt")),
        out: out.to_path_buf(),
        sim: SimConfig { beta: 0.2, max_iterations: 2, ..Default::default() },
        data: DatasetConfig { num_episodes: 30, subsets_per_episode: 2, mc_runs: 10 },
        forward: ForwardConfig { epochs: 7, hidden: 8, ..Default::default() },
        train: TrainConfig { latent_dim: 4, hidden: 16, epochs: 6, ..Default::default() },
        inference: InferenceConfig {
            adam: AdamConfig::with_lr(0.1),
            project_every_step: false,
            obs_variance: 0.02,
            delta: 0.3,
            ..Default::default()
        },
        methods: vec![Method::SlVae, Method::Lpsi],
        trials: 4,
        ..Default::default()
    }
    .resolved()
}

fn slvae(args: &[&str], config: &Path) -> Output {
    Process::new(env!("CARGO_BIN_EXE_slvae"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, cfg.to_json()).unwrap();
    p
}

#[test]
fn gen_data_manifest_and_reproducible_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("out"));
    run(Command::GenData, &cfg).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.out.join("dataset_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["episodes"], 30);
    let (n, episodes) = read_dataset(cfg.dataset.as_ref().unwrap()).unwrap();
    assert_eq!((n, episodes.len()), (34, 30));
    let first = manifest["dataset_sha256"].clone();

    run(Command::GenData, &cfg).unwrap();
    let again: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.out.join("dataset_manifest.json")).unwrap()).unwrap();
    assert_eq!(again["dataset_sha256"], first);
}

#[test]
fn train_writes_one_row_per_epoch_and_reproduces_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("out"));
    run(Command::GenData, &cfg).unwrap();
    run(Command::Train, &cfg).unwrap();
    let rows = |f: &str| fs::read_to_string(cfg.out.join(f)).unwrap().lines().count() - 1;
    assert_eq!(rows("forward_loss.csv"), cfg.forward.epochs);
    assert_eq!(rows("vae_loss.csv"), cfg.train.epochs);
    let bundle = fs::read(cfg.model.as_ref().unwrap()).unwrap();
    run(Command::Train, &cfg).unwrap();
    assert_eq!(fs::read(cfg.model.as_ref().unwrap()).unwrap(), bundle);
}

#[test]
fn infer_prediction_covers_every_node_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("out"));
    for c in [Command::GenData, Command::Train, Command::Infer] {
        run(c, &cfg).unwrap();
    }
    let pred = fs::read_to_string(cfg.out.join("prediction.tsv")).unwrap();
    assert_eq!(pred.lines().count(), 1 + 34);
    assert!(pred.lines().skip(1).all(|l| l.ends_with("\t0") || l.ends_with("\t1")));
    run(Command::Infer, &cfg).unwrap();
    assert_eq!(fs::read_to_string(cfg.out.join("prediction.tsv")).unwrap(), pred);

    let short = dir.path().join("short.txt");
    fs::write(&short, "0.5\n0.5\n").unwrap();
    let bad = RunConfig { observation: Some(short), ..cfg };
    let err = run(Command::Infer, &bad).unwrap_err();
    assert!(err.to_string().contains("34 nodes"), "{err}");
}

#[test]
fn eval_outputs_exactly_the_declared_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = small_config(&out);
    let declared = run(Command::Eval, &cfg).unwrap();
    let declared: BTreeSet<PathBuf> = declared.into_iter().collect();
    let mut found = BTreeSet::new();
    let mut stack = vec![out.clone()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                found.insert(p);
            }
        }
    }
    assert_eq!(found, declared);
    assert_eq!(declared.len(), 2 + 2 * cfg.trials);
}

#[test]
fn eval_summary_echoes_config_and_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("out"));
    run(Command::Eval, &cfg).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(cfg.out.join("summary.json")).unwrap()).unwrap();
    let echoed: RunConfig = serde_json::from_value(summary["config"].clone()).unwrap();
    assert_eq!(echoed, cfg);

    let csv = fs::read_to_string(cfg.out.join("report.csv")).unwrap();
    for m in summary["methods"].as_array().unwrap() {
        let name = m["method"].as_str().unwrap();
        let rows: Vec<Vec<f64>> = csv
            .lines()
            .skip(1)
            .filter(|l| l.starts_with(&format!("{name},")))
            .map(|l| l.split(',').skip(2).map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), cfg.trials);
        for (col, key) in ["precision", "recall", "f1", "auc"].iter().enumerate() {
            let mean = rows.iter().map(|r| r[col]).sum::<f64>() / rows.len() as f64;
            let reported = m[key]["mean"].as_f64().unwrap();
            assert!((mean - reported).abs() < 1e-12, "{name} {key}: {mean} vs {reported}");
        }
    }
}

#[test]
fn binary_echoes_config_and_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(&dir.path().join("out"));
    let path = write_config(dir.path(), &cfg);
    let out = slvae(&["gen-data"], &path);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("# gen-data resolved config"));
    assert!(stdout.contains("\"obs_variance\""));

    let typo = dir.path().join("typo.json");
    fs::write(&typo, r#"{"seed": 1, "inference": {"n_optt": 5}}"#).unwrap();
    let out = slvae(&["train"], &typo);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_optt"));

    let missing = dir.path().join("missing.json");
    fs::write(&missing, r#"{"seed": 1}"#).unwrap();
    let out = Process::new(env!("CARGO_BIN_EXE_slvae"))
        .args(["gen-data", "--config"])
        .arg(&missing)
        .args(["--out"])
        .arg(dir.path().join("o2"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("`graph`"));
}
