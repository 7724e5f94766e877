use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{build_r_hat, build_r_hat_kds, Estimator, QuadraticForm};
use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::kernels::{median_bandwidth, KernelFamily, KernelSpec};
use crate::models::{DiffusionBasis, FeatureBasis};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub kernel: KernelFamily,
    pub d: usize,
    pub n: usize,
    pub repeats: usize,
    pub seed: u64,
    pub skds_ms: f64,
    pub skds_ms_sd: f64,
    pub kds_ms: f64,
    pub kds_ms_sd: f64,
    /// `kds_ms / skds_ms`
    pub speedup: f64,
    pub skds_loss: f64,
    pub kds_loss: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// One loss-and-gradient step through the quadratic form: returns the loss
/// and the gradient norm.
fn step(q: &QuadraticForm, theta: &DVector<f64>) -> (f64, f64) {
    let r_theta = &q.r_hat * theta;
    let loss = theta.dot(&r_theta);
    let grad = r_theta * 2.0;
    (loss, grad.norm())
}

/// Wall-clock comparison of one SKDS and one KDS loss+gradient evaluation on
/// a random linear drift and diagonal cone diffusion. Both paths assemble
/// their quadratic form on the linear-pairs estimator, single-threaded.
pub fn timing_bench(
    kernel: KernelFamily,
    d: usize,
    n: usize,
    repeats: usize,
    seed: u64,
) -> Result<TimingReport> {
    if d == 0 || n < 2 || repeats == 0 {
        return invalid("timing bench needs d >= 1, n >= 2 and repeats >= 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    let data = Dataset::new(n, d, values)?;
    let features = FeatureBasis::affine(d);
    let diffusion = DiffusionBasis::unit_coordinates(d);
    let l = features.len();
    let mut theta = DVector::zeros(d * l + d);
    for c in 0..d {
        for p in 0..l {
            theta[c * l + p] = 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        theta[c * l + 1 + c] = -1.0;
    }
    for i in 0..d {
        theta[d * l + i] = rng.random_range(0.5..1.5);
    }
    let bw = median_bandwidth(&data)?;
    let spec = KernelSpec::new(kernel, bw, d)?;

    let mut skds_t = Vec::with_capacity(repeats);
    let mut kds_t = Vec::with_capacity(repeats);
    let mut skds_loss = 0.0;
    let mut kds_loss = 0.0;
    for _ in 0..repeats {
        let t0 = Instant::now();
        let q = build_r_hat(&features, &diffusion, &spec, &data, Estimator::LinearPairs)?;
        let (loss, gnorm) = step(&q, &theta);
        skds_t.push(t0.elapsed().as_secs_f64() * 1e3);
        skds_loss = std::hint::black_box(loss) + 0.0 * gnorm;

        let t0 = Instant::now();
        let q = build_r_hat_kds(&features, &diffusion, &spec, &data, Estimator::LinearPairs)?;
        let (loss, gnorm) = step(&q, &theta);
        kds_t.push(t0.elapsed().as_secs_f64() * 1e3);
        kds_loss = std::hint::black_box(loss) + 0.0 * gnorm;
    }
    let (skds_ms, skds_ms_sd) = mean_sd(&skds_t);
    let (kds_ms, kds_ms_sd) = mean_sd(&kds_t);
    Ok(TimingReport {
        kernel,
        d,
        n,
        repeats,
        seed,
        skds_ms,
        skds_ms_sd,
        kds_ms,
        kds_ms_sd,
        speedup: kds_ms / skds_ms,
        skds_loss,
        kds_loss,
    })
}
