//! Command implementations behind the `slvae` binary.
//!
//! Each command takes a fully resolved [`RunConfig`] and returns the list of
//! artifacts it declares. The binary exits nonzero when any of them is
//! missing afterwards.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use slvae::bundle::ModelBundle;
use slvae::diffusion::{
    build_dataset_with, encode_dataset, load_cascades, read_dataset, write_dataset, CascadeOptions, DatasetConfig,
    EpisodePair, SimConfig,
};
use slvae::eval::{
    draw_test_case, precision_recall_f1, run_experiment_on, time_scaling, train_models, ExperimentSpec, LpsiConfig,
    Method, ModelCache, TestCase,
};
use slvae::forward::ForwardConfig;
use slvae::graph::{load_edge_list_remapped, load_edge_list_with, Normalization};
use slvae::inference::{infer, InferenceConfig, Stage};
use slvae::par::Exec;
use slvae::seed::{derive_seed, label, rng_for};
use slvae::vae::TrainConfig;
use slvae::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Infer,
    Eval,
    Scale,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Infer => "infer",
            Command::Eval => "eval",
            Command::Scale => "scale",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScaleConfig {
    pub sizes: Vec<usize>,
    pub degree: usize,
    pub repeats: usize,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig {
            sizes: vec![1000, 2000, 4000],
            degree: 10,
            repeats: 3,
        }
    }
}

/// Everything a command may need. Unset paths fall back to files inside
/// `out` when the config is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub graph: Option<PathBuf>,
    /// Treat node ids in the edge list as arbitrary labels.
    pub remap_ids: bool,
    pub normalization: Normalization,
    pub cascades: Option<PathBuf>,
    pub cascade: CascadeOptions,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub observation: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: PathBuf,
    pub parallel: bool,
    pub sim: SimConfig,
    pub data: DatasetConfig,
    pub forward: ForwardConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub lpsi: LpsiConfig,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub observation_runs: usize,
    pub scale: ScaleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = ExperimentSpec::default();
        RunConfig {
            name: spec.name,
            seed: spec.seed,
            graph: None,
            remap_ids: false,
            normalization: Normalization::default(),
            cascades: None,
            cascade: CascadeOptions::default(),
            dataset: None,
            model: None,
            observation: None,
            truth: None,
            out: PathBuf::from("out"),
            parallel: true,
            sim: spec.sim,
            data: spec.data,
            forward: spec.forward,
            train: spec.train,
            inference: spec.inference,
            lpsi: spec.lpsi,
            methods: spec.methods,
            trials: spec.trials,
            observation_runs: spec.observation_runs,
            scale: ScaleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).context("invalid config")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Fill in derived paths.
    pub fn resolved(mut self) -> Self {
        if self.dataset.is_none() {
            self.dataset = Some(self.out.join("dataset.bin"));
        }
        if self.model.is_none() {
            self.model = Some(self.out.join("model.bin"));
        }
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn spec(&self) -> ExperimentSpec {
        ExperimentSpec {
            name: self.name.clone(),
            sim: self.sim.clone(),
            data: self.data.clone(),
            forward: self.forward.clone(),
            train: self.train.clone(),
            inference: self.inference.clone(),
            lpsi: self.lpsi.clone(),
            methods: self.methods.clone(),
            trials: self.trials,
            observation_runs: self.observation_runs,
            seed: self.seed,
        }
    }

    fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// `field` must be set and, for inputs, exist on disk.
fn input_path<'a>(field: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
    let Some(p) = p else {
        bail!("config field `{field}` is required for this command");
    };
    if !p.exists() {
        bail!("config field `{field}`: {} does not exist", p.display());
    }
    Ok(p)
}

fn load_graph(cfg: &RunConfig) -> Result<Graph> {
    let path = input_path("graph", &cfg.graph)?;
    let g = if cfg.remap_ids {
        let (g, _) = load_edge_list_remapped(path)?;
        Graph::with_normalization(g.num_nodes(), g.edges().to_vec(), cfg.normalization)?
    } else {
        load_edge_list_with(path, cfg.normalization)?
    };
    log::info!("graph {}: {} nodes, {} edges", path.display(), g.num_nodes(), g.num_edges());
    Ok(g)
}

fn training_episodes(cfg: &RunConfig, g: &Graph) -> Result<Vec<EpisodePair>> {
    match &cfg.cascades {
        Some(_) => {
            let path = input_path("cascades", &cfg.cascades)?;
            Ok(load_cascades(path, g.num_nodes(), &cfg.cascade)?)
        }
        None => Ok(build_dataset_with(
            cfg.exec(),
            g,
            &cfg.sim,
            &cfg.data,
            derive_seed(cfg.seed, label::DATASET, 0),
        )?),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn config_value(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// One value per line, in node order; `#` starts a comment.
pub fn read_vector(path: &Path, expected: usize, field: &str) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::with_capacity(expected);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line
            .parse()
            .with_context(|| format!("{}:{}: not a number: {line:?}", path.display(), i + 1))?;
        out.push(v);
    }
    if out.len() != expected {
        bail!(
            "config field `{field}`: {} has {} values but the graph has {expected} nodes",
            path.display(),
            out.len()
        );
    }
    Ok(out)
}

pub fn format_vector(v: &[f64]) -> String {
    let mut s = String::new();
    for x in v {
        writeln!(s, "{x}").unwrap();
    }
    s
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Dispatch `cmd`; returns the declared artifacts.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    match cmd {
        Command::GenData => cmd_gen_data(cfg),
        Command::Train => cmd_train(cfg),
        Command::Infer => cmd_infer(cfg),
        Command::Eval => cmd_eval(cfg),
        Command::Scale => cmd_scale(cfg),
    }
}

pub fn missing_artifacts(artifacts: &[PathBuf]) -> Vec<PathBuf> {
    artifacts.iter().filter(|p| !p.is_file()).cloned().collect()
}

/// Training set, its manifest, and one held-out query with its truth.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let g = load_graph(cfg)?;
    cfg.sim.validate()?;
    let episodes = training_episodes(cfg, &g)?;
    let dataset_path = cfg.dataset.clone().expect("resolved config");
    let hash = write_dataset(&dataset_path, g.num_nodes(), &episodes)?;
    let held_out = draw_test_case(&g, &cfg.spec(), 0)?;
    let obs_path = write_file(&cfg.out.join("heldout_observation.txt"), format_vector(&held_out.observation))?;
    let truth_path = write_file(&cfg.out.join("heldout_truth.txt"), format_vector(held_out.truth.as_slice()))?;
    let manifest = json!({
        "nodes": g.num_nodes(),
        "episodes": episodes.len(),
        "subsets": episodes.iter().map(|e| e.subsets.len()).sum::<usize>(),
        "degenerate_episodes": episodes.iter().filter(|e| e.degenerate).count(),
        "origin": if cfg.cascades.is_some() { "cascades" } else { "simulated" },
        "master_seed": cfg.seed,
        "dataset_seed": derive_seed(cfg.seed, label::DATASET, 0),
        "pattern": cfg.sim.pattern,
        "beta": cfg.sim.beta,
        "gamma": cfg.sim.gamma,
        "max_iterations": cfg.sim.max_iterations,
        "mc_runs": cfg.data.mc_runs,
        "graph_sha256": g.content_hash(),
        "dataset_sha256": hash,
        "config": config_value(cfg),
    });
    let manifest_path = write_json(&cfg.out.join("dataset_manifest.json"), &manifest)?;
    println!("dataset: {} episodes, sha256 {hash}", episodes.len());
    Ok(vec![dataset_path, manifest_path, obs_path, truth_path])
}

/// Surrogate then VAE, the latent bank, and per-epoch loss traces.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let g = load_graph(cfg)?;
    let dataset_path = input_path("dataset", &cfg.dataset)?;
    let (n, episodes) = read_dataset(dataset_path)?;
    if n != g.num_nodes() {
        bail!("config field `dataset`: built for {n} nodes but the graph has {}", g.num_nodes());
    }
    let spec = cfg.spec();
    spec.train.validate(n)?;
    let models = train_models(&g, &spec, &episodes)?;
    log::info!("trained in {:.2}s", models.train_seconds);
    let model_path = cfg.model.clone().expect("resolved config");
    let bundle_hash = models.bundle.write(&model_path)?;

    let mut fwd_csv = String::from("epoch,train_mse,holdout_mse\n");
    let ft = &models.forward_trace;
    // index 0 of the trace is the untrained baseline
    for (e, tr) in ft.train_mse.iter().enumerate().skip(1) {
        let ho = ft.holdout_mse.get(e).map(|v| v.to_string()).unwrap_or_default();
        writeln!(fwd_csv, "{e},{tr},{ho}").unwrap();
    }
    let mut vae_csv = String::from("epoch,loss\n");
    for (e, l) in models.vae_trace.epoch_loss.iter().enumerate() {
        writeln!(vae_csv, "{},{l}", e + 1).unwrap();
    }
    let fwd_path = write_file(&cfg.out.join("forward_loss.csv"), fwd_csv)?;
    let vae_path = write_file(&cfg.out.join("vae_loss.csv"), vae_csv)?;
    let terms = models.vae_trace.last_terms;
    let manifest = json!({
        "bundle_sha256": bundle_hash,
        "dataset_sha256": sha256_hex(&encode_dataset(n, &episodes)?),
        "model_hash": spec.model_hash(),
        "forward_best_epoch": ft.best_epoch,
        "forward_initial_mse": ft.train_mse.first(),
        "forward_epochs": ft.train_mse.len().saturating_sub(1),
        "vae_epochs": models.vae_trace.epoch_loss.len(),
        "final_terms": {
            "forward_mse": terms.forward_mse,
            "reconstruction": terms.reconstruction,
            "kl": terms.kl,
            "penalty": terms.penalty,
            "total": terms.total,
        },
        "bank_size": models.bundle.bank.len(),
        "config": config_value(cfg),
    });
    let manifest_path = write_json(&cfg.out.join("train_manifest.json"), &manifest)?;
    println!("model bundle sha256 {bundle_hash}");
    Ok(vec![model_path, fwd_path, vae_path, manifest_path])
}

fn stage_endpoints(trace: &[slvae::inference::IterRecord], stage: Stage) -> Option<(f64, f64)> {
    let mut it = trace.iter().filter(|r| r.stage == stage).map(|r| r.loss);
    let first = it.next()?;
    Some((first, it.last().unwrap_or(first)))
}

/// Prediction TSV (`node`, `score`, `decision`) and a summary.
pub fn cmd_infer(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let g = load_graph(cfg)?;
    let model_path = input_path("model", &cfg.model)?;
    let obs_path = input_path("observation", &cfg.observation)?;
    let bundle = ModelBundle::read(model_path)?;
    if bundle.num_nodes() != g.num_nodes() {
        bail!(
            "config field `model`: bundle is for {} nodes but the graph has {}",
            bundle.num_nodes(),
            g.num_nodes()
        );
    }
    let y = read_vector(obs_path, g.num_nodes(), "observation")?;
    let mut rng = rng_for(cfg.seed, label::INFER, 0);
    let out = infer(&y, &bundle.forward, &bundle.vae, &bundle.bank, &g, &cfg.inference, &mut rng)?;

    let mut tsv = String::from("node\tscore\tdecision\n");
    for (i, (s, d)) in out.scores.iter().zip(out.sources.as_slice()).enumerate() {
        writeln!(tsv, "{i}\t{s}\t{}", *d as u8).unwrap();
    }
    let pred_path = write_file(&cfg.out.join("prediction.tsv"), tsv)?;

    let seeds = out.sources.count();
    let init = stage_endpoints(&out.trace, Stage::Init);
    let opt = stage_endpoints(&out.trace, Stage::Opt);
    println!("predicted {seeds} source nodes");
    if let Some((a, b)) = init {
        println!("init loss {a:.6} -> {b:.6}");
    }
    if let Some((a, b)) = opt {
        println!("pred loss {a:.6} -> {b:.6}");
    }
    let mut summary = json!({
        "predicted_sources": seeds,
        "init_loss": init.map(|(a, b)| [a, b]),
        "pred_loss": opt.map(|(a, b)| [a, b]),
        "config": config_value(cfg),
    });
    if cfg.truth.is_some() {
        let truth = read_vector(input_path("truth", &cfg.truth)?, g.num_nodes(), "truth")?;
        let (p, r, f1) = precision_recall_f1(out.sources.as_slice(), &truth)?;
        println!("against truth: precision {p:.4} recall {r:.4} f1 {f1:.4}");
        summary["precision"] = json!(p);
        summary["recall"] = json!(r);
        summary["f1"] = json!(f1);
    }
    let summary_path = write_json(&cfg.out.join("infer_summary.json"), &summary)?;
    Ok(vec![pred_path, summary_path])
}

pub fn score_dump_path(out: &Path, method: Method, trial: usize) -> PathBuf {
    out.join("scores").join(format!("{}_trial{trial:03}.tsv", method.name()))
}

/// Per-trial CSV, JSON summary, and per-trial node scores.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let g = load_graph(cfg)?;
    let spec = cfg.spec();
    spec.validate(g.num_nodes())?;
    let episodes = training_episodes(cfg, &g)?;
    let dataset_hash = sha256_hex(&encode_dataset(g.num_nodes(), &episodes)?);
    let cases = (0..spec.trials)
        .map(|t| draw_test_case(&g, &spec, t))
        .collect::<slvae::Result<Vec<TestCase>>>()?;
    let report = run_experiment_on(&g, &spec, cfg.exec(), &mut ModelCache::new(), &episodes, &dataset_hash, &cases)?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let csv_path = write_file(&cfg.out.join("report.csv"), csv)?;

    let methods: Vec<serde_json::Value> = report
        .methods
        .iter()
        .map(|m| {
            json!({
                "method": m.method,
                "successful_trials": m.trials.len(),
                "requested_trials": m.requested_trials,
                "flagged": m.flagged,
                "failures": m.failures,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
                "auc": m.auc,
            })
        })
        .collect();
    let summary = json!({
        "name": report.name,
        "dataset_hash": report.dataset_hash,
        "model_hash": report.model_hash,
        "methods": methods,
        "config": config_value(cfg),
    });
    let summary_path = write_json(&cfg.out.join("summary.json"), &summary)?;

    for d in &report.dumps {
        let mut tsv = String::from("node\ttruth\tscore\tdecision\n");
        for i in 0..d.scores.len() {
            writeln!(tsv, "{i}\t{}\t{}\t{}", d.truth[i] as u8, d.scores[i], (d.prediction[i] >= 0.5) as u8).unwrap();
        }
        write_file(&score_dump_path(&cfg.out, d.method, d.trial), tsv)?;
    }
    for m in &report.methods {
        println!(
            "{:<18} precision {:.4}±{:.4}  recall {:.4}±{:.4}  f1 {:.4}±{:.4}  auc {:.4}±{:.4}{}",
            m.method.name(),
            m.precision.mean,
            m.precision.std,
            m.recall.mean,
            m.recall.std,
            m.f1.mean,
            m.f1.std,
            m.auc.mean,
            m.auc.std,
            if m.flagged { "  [flagged]" } else { "" }
        );
    }
    let mut artifacts = vec![csv_path, summary_path];
    for &m in &spec.methods {
        artifacts.extend((0..spec.trials).map(|t| score_dump_path(&cfg.out, m, t)));
    }
    Ok(artifacts)
}

/// Training and inference wall-clock per synthetic graph size.
pub fn cmd_scale(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let spec = cfg.spec();
    let rows = time_scaling(&cfg.scale.sizes, cfg.scale.degree, cfg.scale.repeats, &spec, cfg.exec())?;
    let mut csv = String::from("nodes,train_seconds,infer_seconds\n");
    for r in &rows {
        writeln!(csv, "{},{},{}", r.nodes, r.train_seconds, r.infer_seconds).unwrap();
        println!("|V|={:<6} train {:.3}s  infer {:.4}s", r.nodes, r.train_seconds, r.infer_seconds);
    }
    let csv_path = write_file(&cfg.out.join("scaling.csv"), csv)?;
    let json_path = write_json(
        &cfg.out.join("scaling.json"),
        &json!({ "rows": rows, "config": config_value(cfg) }),
    )?;
    Ok(vec![csv_path, json_path])
}

/// Print the resolved config as pretty JSON.
pub fn echo_config<W: std::io::Write>(mut w: W, cmd: Command, cfg: &RunConfig) -> std::io::Result<()> {
    writeln!(w, "# {} resolved config", cmd.name())?;
    writeln!(w, "{}", cfg.to_json())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"seed": 1, "sim": {"beta": 0.2, "betta": 0.3}}"#).unwrap_err();
        assert!(format!("{err:#}").contains("betta"));
        assert!(RunConfig::from_json(r#"{"sead": 1}"#).is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default().resolved();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.dataset.as_deref(), Some(Path::new("out/dataset.bin")));
    }

    #[test]
    fn missing_graph_names_the_field() {
        let cfg = RunConfig::default().resolved();
        let err = cmd_gen_data(&cfg).unwrap_err();
        assert!(err.to_string().contains("`graph`"), "{err}");
        let cfg = RunConfig {
            graph: Some("/nonexistent/graph.edges".into()),
            ..RunConfig::default()
        };
        assert!(cmd_gen_data(&cfg).unwrap_err().to_string().contains("`graph`"));
    }

    #[test]
    fn vector_length_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("obs.txt");
        fs::write(&p, "0.5\n1\n# trailing comment\n").unwrap();
        assert_eq!(read_vector(&p, 2, "observation").unwrap(), vec![0.5, 1.0]);
        let err = read_vector(&p, 3, "observation").unwrap_err();
        assert!(err.to_string().contains("`observation`"));
    }
}
