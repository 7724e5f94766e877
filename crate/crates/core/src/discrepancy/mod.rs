//! SKDS and KDS losses: pairwise closed forms, empirical estimators,
//! parameter gradients, the representer function and the quadratic form of
//! the linear parametrization.

mod kds;
mod quadratic;
mod skds;
mod timing;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::kernels::KernelSpec;
use crate::models::{Intervention, ParamGrad, SdeModel};

pub use kds::{kds_empirical, kds_grad, kds_pair};
pub use quadratic::{build_r_hat, build_r_hat_kds, min_eig_sym, skds_quadratic, QuadraticForm};
pub use skds::{representer_eval, representer_jacobian, skds_empirical, skds_grad, skds_pair};
pub use timing::{timing_bench, TimingReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Average over disjoint consecutive pairs `(x_1, x_2), (x_3, x_4), ...`.
    #[default]
    LinearPairs,
    /// Average over all ordered pairs `i != j`.
    UStatistic,
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" | "linear_pairs" => Ok(Estimator::LinearPairs),
            "ustat" | "u_statistic" => Ok(Estimator::UStatistic),
            other => invalid(format!("unknown estimator {other:?}")),
        }
    }
}

/// How pairs are formed and reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossOptions {
    pub estimator: Estimator,
    /// Permute samples with this seed before pairing.
    pub shuffle: Option<u64>,
    /// Chunked parallel reduction (deterministic chunk order).
    pub parallel: bool,
}

impl From<Estimator> for LossOptions {
    fn from(estimator: Estimator) -> Self {
        Self {
            estimator,
            ..Default::default()
        }
    }
}

/// One pairwise term together with its cotangents w.r.t. the drift and
/// diffusion values at both points.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTerm {
    pub value: f64,
    pub d_bx: DVector<f64>,
    pub d_by: DVector<f64>,
    pub d_ax: DMatrix<f64>,
    pub d_ay: DMatrix<f64>,
}

/// Loss value with gradients w.r.t. model and intervention parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: ParamGrad,
}

/// Drift and diffusion values at one sample.
pub(crate) struct Coeffs {
    pub b: DVector<f64>,
    pub a: DMatrix<f64>,
}

pub(crate) fn coefficients(model: &SdeModel, phi: &Intervention, data: &Dataset) -> Vec<Coeffs> {
    data.rows()
        .map(|x| Coeffs {
            b: model.drift_unchecked(x, phi),
            a: model.diffusion_unchecked(x, phi),
        })
        .collect()
}

pub(crate) fn check_inputs(
    model: &SdeModel,
    phi: &Intervention,
    kernel: &KernelSpec,
    data: &Dataset,
) -> Result<()> {
    model.validate()?;
    phi.validate(model.d)?;
    if data.d() != model.d || kernel.dim != model.d {
        return invalid(format!(
            "dimension mismatch: model {}, kernel {}, data {}",
            model.d,
            kernel.dim,
            data.d()
        ));
    }
    Ok(())
}

/// The sample order used for pairing.
pub(crate) fn ordering(n: usize, shuffle: Option<u64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    idx
}

/// The pairs `(i, j)` (indices into the sample order) an estimator averages
/// over, enumerated lazily in fixed blocks.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairSet {
    n: usize,
    estimator: Estimator,
}

/// Pairs per linear-pairs block; fixed so results do not depend on the thread count.
pub(crate) const PAR_CHUNK: usize = 512;

impl PairSet {
    pub fn new(n: usize, estimator: Estimator) -> Result<Self> {
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "need at least 2 samples, got {n}"
            )));
        }
        Ok(Self { n, estimator })
    }

    pub fn len(&self) -> usize {
        match self.estimator {
            Estimator::LinearPairs => self.n / 2,
            Estimator::UStatistic => self.n * (self.n - 1) / 2,
        }
    }

    /// Weight of each listed pair in the average. For the U-statistic each
    /// unordered pair stands for two ordered pairs.
    pub fn weight(&self) -> f64 {
        match self.estimator {
            Estimator::LinearPairs => 1.0 / (self.n / 2) as f64,
            Estimator::UStatistic => 2.0 / (self.n as f64 * (self.n as f64 - 1.0)),
        }
    }

    /// Linear pairs come in chunks of `PAR_CHUNK`; U-statistic blocks are the rows `i`.
    pub fn n_blocks(&self) -> usize {
        match self.estimator {
            Estimator::LinearPairs => (self.n / 2).div_ceil(PAR_CHUNK),
            Estimator::UStatistic => self.n - 1,
        }
    }

    pub fn for_each_in_block(&self, b: usize, mut f: impl FnMut(usize, usize)) {
        match self.estimator {
            Estimator::LinearPairs => {
                let end = ((b + 1) * PAR_CHUNK).min(self.n / 2);
                for p in b * PAR_CHUNK..end {
                    f(2 * p, 2 * p + 1);
                }
            }
            Estimator::UStatistic => {
                for j in (b + 1)..self.n {
                    f(b, j);
                }
            }
        }
    }

    pub fn for_each(&self, mut f: impl FnMut(usize, usize)) {
        for b in 0..self.n_blocks() {
            self.for_each_in_block(b, &mut f);
        }
    }

    /// Fold every pair into an accumulator, either in one pass or one
    /// accumulator per block merged in block order.
    pub fn fold<A, I, F, M>(&self, parallel: bool, init: I, add: F, merge: M) -> A
    where
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, usize, usize) + Sync,
        M: Fn(&mut A, A),
    {
        if parallel {
            // blocks are processed in bounded waves to cap memory
            const WAVE: usize = 64;
            let nb = self.n_blocks();
            let mut total = init();
            for start in (0..nb).step_by(WAVE) {
                let parts: Vec<A> = (start..(start + WAVE).min(nb))
                    .into_par_iter()
                    .map(|b| {
                        let mut acc = init();
                        self.for_each_in_block(b, |i, j| add(&mut acc, i, j));
                        acc
                    })
                    .collect();
                for p in parts {
                    merge(&mut total, p);
                }
            }
            total
        } else {
            let mut acc = init();
            self.for_each(|i, j| add(&mut acc, i, j));
            acc
        }
    }
}

/// Weighted sum of `f` over the pairs.
pub(crate) fn reduce_values<F>(pairs: &PairSet, parallel: bool, f: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    pairs.fold(
        parallel,
        || 0.0,
        |acc, i, j| *acc += f(i, j),
        |a, b| *a += b,
    ) * pairs.weight()
}

/// Per-sample cotangent accumulators.
pub(crate) struct Accum {
    pub value: f64,
    pub cb: Vec<DVector<f64>>,
    pub ca: Vec<DMatrix<f64>>,
}

impl Accum {
    fn new(n: usize, d: usize) -> Self {
        Self {
            value: 0.0,
            cb: vec![DVector::zeros(d); n],
            ca: vec![DMatrix::zeros(d, d); n],
        }
    }

    fn add(&mut self, i: usize, j: usize, t: &PairTerm) {
        self.value += t.value;
        self.cb[i] += &t.d_bx;
        self.cb[j] += &t.d_by;
        self.ca[i] += &t.d_ax;
        self.ca[j] += &t.d_ay;
    }

    fn merge(&mut self, other: Accum) {
        self.value += other.value;
        for (a, b) in self.cb.iter_mut().zip(other.cb) {
            *a += b;
        }
        for (a, b) in self.ca.iter_mut().zip(other.ca) {
            *a += b;
        }
    }
}

/// Accumulate pair terms and chain them through the model to parameter gradients.
pub(crate) fn reduce_grad<F>(
    model: &SdeModel,
    phi: &Intervention,
    data: &Dataset,
    order: &[usize],
    pairs: &PairSet,
    parallel: bool,
    f: F,
) -> LossGrad
where
    F: Fn(usize, usize) -> PairTerm + Sync,
{
    let n = order.len();
    let d = model.d;
    let weight = pairs.weight();
    let acc = pairs.fold(
        parallel,
        || Accum::new(n, d),
        |a, i, j| a.add(i, j, &f(i, j)),
        |a, b| a.merge(b),
    );
    let mut grad = ParamGrad::zeros(model, phi);
    for (slot, &row) in order.iter().enumerate() {
        let x = data.row(row);
        if acc.cb[slot].iter().any(|v| *v != 0.0) {
            model.accumulate_drift_vjp(x, phi, acc.cb[slot].as_slice(), weight, &mut grad);
        }
        if acc.ca[slot].iter().any(|v| *v != 0.0) {
            model.accumulate_diffusion_vjp(x, phi, &acc.ca[slot], weight, &mut grad);
        }
    }
    LossGrad {
        loss: acc.value * weight,
        grad,
    }
}
