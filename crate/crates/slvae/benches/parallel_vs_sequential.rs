use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use slvae::diffusion::{build_dataset_with, estimate_mc_observation_with, sample_sources, DatasetConfig, SimConfig};
use slvae::eval::{draw_test_case, evaluate_cases, train_models, ExperimentSpec, Method};
use slvae::forward::ForwardConfig;
use slvae::graph::random_regular;
use slvae::par::Exec;
use slvae::seed::rng_from;
use slvae::vae::TrainConfig;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_mc_observation(c: &mut Criterion) {
    let mut group = c.benchmark_group("mc_observation");
    for n in [500usize, 2000] {
        let g = random_regular(n, 10, &mut rng_from(3)).unwrap();
        let seeds = sample_sources(&g, 0.1, &mut rng_from(4)).unwrap();
        let sim = SimConfig { max_iterations: 5, ..Default::default() };
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| estimate_mc_observation_with(exec, &g, &seeds, &sim, 200, black_box(7)).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_dataset(c: &mut Criterion) {
    let g = random_regular(300, 10, &mut rng_from(5)).unwrap();
    let sim = SimConfig { max_iterations: 3, ..Default::default() };
    let data = DatasetConfig { num_episodes: 40, subsets_per_episode: 2, mc_runs: 50 };
    let mut group = c.benchmark_group("build_dataset");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| build_dataset_with(exec, &g, &sim, &data, black_box(11)).unwrap()));
    }
    group.finish();
}

fn bench_trials(c: &mut Criterion) {
    let g = random_regular(200, 10, &mut rng_from(6)).unwrap();
    let spec = ExperimentSpec {
        sim: SimConfig { max_iterations: 2, ..Default::default() },
        data: DatasetConfig { num_episodes: 40, subsets_per_episode: 1, mc_runs: 20 },
        forward: ForwardConfig { epochs: 5, hidden: 16, ..Default::default() },
        train: TrainConfig { epochs: 5, latent_dim: 4, hidden: 16, ..Default::default() },
        methods: vec![Method::SlVae, Method::Lpsi],
        trials: 8,
        seed: 13,
        ..Default::default()
    };
    let episodes = build_dataset_with(Exec::Parallel, &g, &spec.sim, &spec.data, 17).unwrap();
    let models = train_models(&g, &spec, &episodes).unwrap();
    let cases: Vec<_> = (0..spec.trials).map(|t| draw_test_case(&g, &spec, t).unwrap()).collect();
    let mut group = c.benchmark_group("trials");
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| evaluate_cases(exec, &g, &spec, Some(&models), black_box(&cases))));
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(5));
    targets = bench_mc_observation, bench_dataset, bench_trials
}
criterion_main!(benches);
