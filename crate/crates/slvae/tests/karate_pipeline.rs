use std::path::PathBuf;

use slvae::bundle::ModelBundle;
use slvae::diffusion::{build_dataset_with, sample_sources, DatasetConfig, SimConfig};
use slvae::eval::precision_recall_f1;
use slvae::forward::{ForwardParams, SiClosureOracle};
use slvae::graph::load_edge_list;
use slvae::inference::{build_latent_bank, infer, InferenceConfig};
use slvae::numerics::AdamConfig;
use slvae::par::Exec;
use slvae::seed::{rng_for, rng_from};
use slvae::vae::{train_vae, TrainConfig};
use slvae::Graph;

fn karate() -> Graph {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/karate.edges");
    load_edge_list(path).unwrap()
}

#[test]
fn karate_has_34_nodes_and_78_edges() {
    let g = karate();
    assert_eq!(g.num_nodes(), 34);
    assert_eq!(g.num_edges(), 78);
    assert_eq!(g.degree(0), 16);
    assert_eq!(g.degree(33), 17);
}

/// With the exact deterministic-SI map as forward model, MAP inference
/// should recover most of a three-seed source from its one-hop closure.
#[test]
fn exact_oracle_recovers_three_seed_sources() {
    let g = karate();
    let sim = SimConfig { beta: 1.0, max_iterations: 1, ..Default::default() };
    let data = DatasetConfig { num_episodes: 400, subsets_per_episode: 0, mc_runs: 1 };
    let episodes = build_dataset_with(Exec::Parallel, &g, &sim, &data, 21).unwrap();
    let oracle = SiClosureOracle::new(&g, 1);

    // the forward model is frozen during VAE training, so its weights do
    // not influence the encoder/decoder updates
    let placeholder = ForwardParams::init(3, 8, &mut rng_from(1));
    let train = TrainConfig { epochs: 300, latent_dim: 8, ..Default::default() };
    let (vae, _, trace) = train_vae(&g, &episodes, &placeholder, &train, &mut rng_from(2)).unwrap();
    assert!(trace.epoch_loss.last().unwrap() < &trace.epoch_loss[0]);

    let sources: Vec<Vec<f64>> = episodes.iter().map(|e| e.source.as_slice().to_vec()).collect();
    let bank = build_latent_bank(&vae, &sources, 2000, &mut rng_from(3)).unwrap();
    let cfg = InferenceConfig {
        adam: AdamConfig::with_lr(0.1),
        project_every_step: false,
        obs_variance: 0.02,
        delta: 0.3,
        ..Default::default()
    };

    let mut f1_sum = 0.0;
    for t in 0..10 {
        let truth = sample_sources(&g, 0.1, &mut rng_for(77, "trial", t)).unwrap();
        assert_eq!(truth.count(), 3);
        let y = oracle.predict_exact(&g, truth.as_slice()).unwrap();
        let out = infer(&y, &oracle, &vae, &bank, &g, &cfg, &mut rng_for(77, "infer", t)).unwrap();
        let (_, _, f1) = precision_recall_f1(out.sources.as_slice(), truth.as_slice()).unwrap();
        f1_sum += f1;
    }
    let mean = f1_sum / 10.0;
    println!("exact-oracle mean F1 = {mean:.3}");
    assert!(mean >= 0.6, "mean F1 {mean}");
}

#[test]
fn bundle_file_round_trip_is_bitwise() {
    let g = karate();
    let sim = SimConfig { max_iterations: 2, ..Default::default() };
    let data = DatasetConfig { num_episodes: 30, subsets_per_episode: 1, mc_runs: 5 };
    let episodes = build_dataset_with(Exec::Sequential, &g, &sim, &data, 5).unwrap();
    let fwd = ForwardParams::init(3, 8, &mut rng_from(6));
    let train = TrainConfig { epochs: 3, latent_dim: 4, hidden: 16, ..Default::default() };
    let (vae, forward, _) = train_vae(&g, &episodes, &fwd, &train, &mut rng_from(7)).unwrap();
    let sources: Vec<Vec<f64>> = episodes.iter().map(|e| e.source.as_slice().to_vec()).collect();
    let bank = build_latent_bank(&vae, &sources, 10, &mut rng_from(8)).unwrap();
    let bundle = ModelBundle { forward, vae, bank };

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    let h1 = bundle.write(&path).unwrap();
    let back = ModelBundle::read(&path).unwrap();
    assert_eq!(back, bundle);
    let h2 = back.write(dir.path().join("again.bin")).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(dir.path().join("again.bin")).unwrap());
}
