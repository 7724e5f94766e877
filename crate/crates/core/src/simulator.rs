//! Sampling from stationary distributions: Euler-Maruyama rollouts of a
//! model and exact stationary draws for Ornstein-Uhlenbeck processes.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::models::{Intervention, SdeModel};

/// Initial state of every chain.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    Zeros,
    Gaussian(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub burn_in_steps: u64,
    pub thinning: u64,
    pub n_samples: usize,
    pub seed: u64,
    pub init: Init,
    pub divergence_threshold: f64,
    /// Independent chains sharing `n_samples`; each pays the full burn-in.
    pub chains: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            burn_in_steps: 5000,
            thinning: 10,
            n_samples: 1000,
            seed: 0,
            init: Init::Zeros,
            divergence_threshold: 1e6,
            chains: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return invalid("dt must be finite and positive");
        }
        if self.thinning == 0 {
            return invalid("thinning must be at least 1");
        }
        if self.n_samples == 0 {
            return invalid("n_samples must be at least 1");
        }
        if self.chains == 0 {
            return invalid("chains must be at least 1");
        }
        if !(self.divergence_threshold.is_finite() && self.divergence_threshold > 0.0) {
            return invalid("divergence_threshold must be finite and positive");
        }
        if let Init::Gaussian(s) = self.init {
            if !(s.is_finite() && s >= 0.0) {
                return invalid("gaussian init scale must be finite and nonnegative");
            }
        }
        Ok(())
    }
}

/// Rolls out `x <- x + b(x) dt + σ(x) sqrt(dt) ξ` and keeps one state per
/// `thinning` steps after the burn-in. Chain `c` draws from the ChaCha stream
/// `c` of `seed`, so the output does not depend on scheduling.
pub fn euler_maruyama_sample(
    model: &SdeModel,
    phi: &Intervention,
    cfg: &SimConfig,
) -> Result<Dataset> {
    model.validate()?;
    phi.validate(model.d)?;
    cfg.validate()?;
    let d = model.d;
    let chains = cfg.chains.min(cfg.n_samples);
    let sizes: Vec<usize> = (0..chains)
        .map(|c| cfg.n_samples / chains + usize::from(c < cfg.n_samples % chains))
        .collect();
    let run = |c: usize| run_chain(model, phi, cfg, c as u64, sizes[c]);
    let parts: Vec<Result<Vec<f64>>> = if chains > 1 {
        (0..chains).into_par_iter().map(run).collect()
    } else {
        vec![run(0)]
    };
    let mut values = Vec::with_capacity(cfg.n_samples * d);
    for p in parts {
        values.extend(p?);
    }
    Dataset::new(cfg.n_samples, d, values)
}

fn run_chain(
    model: &SdeModel,
    phi: &Intervention,
    cfg: &SimConfig,
    chain: u64,
    n: usize,
) -> Result<Vec<f64>> {
    let d = model.d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain);
    let mut x = DVector::<f64>::zeros(d);
    if let Init::Gaussian(s) = cfg.init {
        x.iter_mut()
            .for_each(|v| *v = s * rng.sample::<f64, _>(StandardNormal));
    }
    // the diffusion coefficients of every supported model are state independent
    let sigma = model.sigma_unchecked(x.as_slice(), phi) * cfg.dt.sqrt();
    let m = sigma.ncols();
    let mut xi = DVector::<f64>::zeros(m);
    let mut out = Vec::with_capacity(n * d);
    let total = cfg.burn_in_steps + cfg.thinning * n as u64;
    for step in 1..=total {
        let b = model.drift_unchecked(x.as_slice(), phi);
        xi.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        x.axpy(cfg.dt, &b, 1.0);
        x.gemv(1.0, &sigma, &xi, 1.0);
        let norm = x.amax();
        if !(norm <= cfg.divergence_threshold) {
            return Err(Error::Diverged { step, norm });
        }
        if step > cfg.burn_in_steps && (step - cfg.burn_in_steps) % cfg.thinning == 0 {
            out.extend_from_slice(x.as_slice());
        }
    }
    Ok(out)
}

/// Solves `M Σ + Σ M^T + Q = 0` through the `d^2 x d^2` Kronecker system.
pub fn lyapunov_solve(m: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if d == 0 || m.ncols() != d || q.shape() != (d, d) {
        return invalid("lyapunov_solve needs square M and Q of equal size");
    }
    if d > 64 {
        return invalid("lyapunov_solve supports d <= 64");
    }
    if m.iter().chain(q.iter()).any(|v| !v.is_finite()) {
        return invalid("lyapunov_solve inputs must be finite");
    }
    let eye = DMatrix::<f64>::identity(d, d);
    // column-major vec: vec(MΣ) = (I ⊗ M) vec Σ, vec(ΣM^T) = (M ⊗ I) vec Σ
    let k = eye.kronecker(m) + m.kronecker(&eye);
    let rhs = DVector::from_iterator(d * d, q.iter().map(|v| -v));
    let sol = k
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NotStable("Lyapunov system is singular".into()))?;
    let s = DMatrix::from_column_slice(d, d, sol.as_slice());
    let s = (&s + s.transpose()) * 0.5;
    let resid = (m * &s + &s * m.transpose() + q).norm();
    let qn = q.norm();
    if !(resid <= 1e-8 * qn.max(f64::MIN_POSITIVE)) && !(qn == 0.0 && resid == 0.0) {
        return Err(Error::NotStable(format!(
            "Lyapunov residual {resid:e} too large"
        )));
    }
    // A solvable system with an indefinite solution means M is not Hurwitz.
    if qn > 0.0 {
        let min = s.clone().symmetric_eigen().eigenvalues.min();
        if min < -1e-10 * s.norm() {
            return Err(Error::NotStable(
                "Lyapunov solution is not positive semidefinite".into(),
            ));
        }
    }
    Ok(s)
}

/// A factor `L` with `L L^T = s` for symmetric PSD `s` (negative round-off eigenvalues clipped).
pub(crate) fn psd_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    let e = s.clone().symmetric_eigen();
    let sq = e.eigenvalues.map(|v| v.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&sq)
}

/// `n` i.i.d. draws from the stationary law `N(mean, Σ)` of `dX = M(X - mean) dt + D dB`,
/// with `Q = D D^T`.
pub fn ou_exact_sample(
    m: &DMatrix<f64>,
    mean: &[f64],
    q: &DMatrix<f64>,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if mean.len() != m.nrows() {
        return invalid("mean length must match M");
    }
    let sigma = lyapunov_solve(m, q)?;
    gaussian_sample(mean, &sigma, n, seed)
}

pub(crate) fn gaussian_sample(
    mean: &[f64],
    cov: &DMatrix<f64>,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let d = mean.len();
    let l = psd_factor(cov);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = DVector::<f64>::zeros(d);
    let mut values = Vec::with_capacity(n * d);
    for _ in 0..n {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let x = &l * &z;
        values.extend(x.iter().zip(mean).map(|(a, b)| a + b));
    }
    Dataset::new(n, d, values)
}
