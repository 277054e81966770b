use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::experiment::{draw_test_case, train_models, ExperimentSpec};
use crate::diffusion::build_dataset_with;
use crate::error::{Error, Result};
use crate::graph::random_regular;
use crate::inference::infer;
use crate::par::Exec;
use crate::seed::{derive_seed, label, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub nodes: usize,
    pub train_seconds: f64,
    pub infer_seconds: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

/// Wall-clock medians of training and single-query inference on random
/// `degree`-regular graphs of each size.
pub fn time_scaling(
    sizes: &[usize],
    degree: usize,
    repeats: usize,
    spec: &ExperimentSpec,
    exec: Exec,
) -> Result<Vec<ScalingRow>> {
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("sizes must be sorted ascending".into()));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let g = random_regular(n, degree, &mut rng_for(spec.seed, label::DATASET, n as u64))?;
        spec.validate(n)?;
        let episodes = build_dataset_with(exec, &g, &spec.sim, &spec.data, derive_seed(spec.seed, label::DATASET, 0))?;
        let mut train_t = Vec::with_capacity(repeats);
        let mut infer_t = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let models = train_models(&g, spec, &episodes)?;
            train_t.push(models.train_seconds);
            let case = draw_test_case(&g, spec, r)?;
            let b = &models.bundle;
            let mut rng = rng_for(spec.seed, label::INFER, r as u64);
            let start = Instant::now();
            infer(&case.observation, &b.forward, &b.vae, &b.bank, &g, &spec.inference, &mut rng)?;
            infer_t.push(start.elapsed().as_secs_f64());
        }
        let row = ScalingRow {
            nodes: n,
            train_seconds: median(train_t),
            infer_seconds: median(infer_t),
        };
        log::info!("scaling |V|={n}: train {:.3}s infer {:.4}s", row.train_seconds, row.infer_seconds);
        rows.push(row);
    }
    Ok(rows)
}
