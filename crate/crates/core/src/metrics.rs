//! Evaluation metrics: sample Wasserstein distance, mean MSE and the paired
//! Wilcoxon signed-rank margin test.
//!
//! `wasserstein` is the optimal-coupling mean of the (unsquared) Euclidean
//! distance, `inf E||X - Z||_2`, computed between two empirical samples.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WassersteinMethod {
    ExactAssignment,
    Sorted1d,
    Sliced { n_proj: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WassersteinOptions {
    /// Largest sample size solved by exact assignment when `d > 1`.
    pub exact_max_n: usize,
    pub n_proj: usize,
    /// Seeds the resampling of the smaller set and the sliced projections.
    pub seed: u64,
}

impl Default for WassersteinOptions {
    fn default() -> Self {
        Self {
            exact_max_n: 1024,
            n_proj: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub w2: f64,
    pub mean_mse: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub method: WassersteinMethod,
    /// The smaller sample was resampled with replacement to equal size.
    pub resampled: bool,
}

fn check_pair(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData(
            "metric needs nonempty samples".into(),
        ));
    }
    if a.d() != b.d() {
        return invalid("samples have different dimensions");
    }
    Ok(())
}

pub fn wasserstein(a: &Dataset, b: &Dataset) -> Result<f64> {
    Ok(wasserstein_with(a, b, &WassersteinOptions::default())?.0)
}

/// Distance, method used and whether resampling happened.
pub fn wasserstein_with(
    a: &Dataset,
    b: &Dataset,
    opts: &WassersteinOptions,
) -> Result<(f64, WassersteinMethod, bool)> {
    check_pair(a, b)?;
    // order the pair so the result does not depend on argument order
    let (a, b) = if (b.n(), b.values()) < (a.n(), a.values()) {
        (b, a)
    } else {
        (a, b)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let resampled = a.n() != b.n();
    let (a, b) = if a.n() < b.n() {
        (resample(a, b.n(), &mut rng), b.clone())
    } else if b.n() < a.n() {
        (a.clone(), resample(b, a.n(), &mut rng))
    } else {
        (a.clone(), b.clone())
    };
    let d = a.d();
    if d == 1 {
        Ok((
            sorted_1d(a.values(), b.values()),
            WassersteinMethod::Sorted1d,
            resampled,
        ))
    } else if a.n() <= opts.exact_max_n {
        Ok((
            exact_assignment(&a, &b),
            WassersteinMethod::ExactAssignment,
            resampled,
        ))
    } else {
        if opts.n_proj == 0 {
            return invalid("sliced Wasserstein needs at least one projection");
        }
        let w = sliced(&a, &b, opts.n_proj, &mut rng);
        Ok((
            w,
            WassersteinMethod::Sliced {
                n_proj: opts.n_proj,
            },
            resampled,
        ))
    }
}

fn resample(x: &Dataset, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..x.n())).collect();
    x.select(&idx)
}

fn sorted_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn euclid(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn exact_assignment(a: &Dataset, b: &Dataset) -> f64 {
    let n = a.n();
    let cost: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| euclid(a.row(i), b.row(j))).collect())
        .collect();
    let assign = solve_assignment(&cost);
    assign
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum::<f64>()
        / n as f64
}

/// Minimum-cost perfect matching of a square cost matrix by shortest
/// augmenting paths with dual potentials. Returns the column of each row.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual source column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        out[row_of[j] - 1] = j - 1;
    }
    out
}

/// Average of sorted 1-D matchings over random unit directions, divided by
/// `E|<θ, e>|` so a pure translation by `v` gives `||v||` in expectation.
fn sliced(a: &Dataset, b: &Dataset, n_proj: usize, rng: &mut ChaCha8Rng) -> f64 {
    let d = a.d();
    let dirs: Vec<DVector<f64>> = (0..n_proj)
        .map(|_| {
            let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = v.norm();
            v / n
        })
        .collect();
    let project = |x: &Dataset, t: &DVector<f64>| -> Vec<f64> {
        x.rows()
            .map(|r| r.iter().zip(t.iter()).map(|(p, q)| p * q).sum())
            .collect()
    };
    let total: f64 = dirs
        .par_iter()
        .map(|t| sorted_1d(&project(a, t), &project(b, t)))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let df = d as f64;
    let c = (ln_gamma(df / 2.0) - ln_gamma((df + 1.0) / 2.0)).exp() / std::f64::consts::PI.sqrt();
    total / n_proj as f64 / c
}

/// `||mean(A) - mean(B)||^2 / d`.
pub fn mean_mse(a: &Dataset, b: &Dataset) -> Result<f64> {
    check_pair(a, b)?;
    let (ma, mb) = (a.mean(), b.mean());
    Ok(ma
        .iter()
        .zip(&mb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.d() as f64)
}

pub fn metric_report(a: &Dataset, b: &Dataset, opts: &WassersteinOptions) -> Result<MetricReport> {
    let (w2, method, resampled) = wasserstein_with(a, b, opts)?;
    Ok(MetricReport {
        w2,
        mean_mse: mean_mse(a, b)?,
        n_a: a.n(),
        n_b: b.n(),
        method,
        resampled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    OursBetter,
    BaselineBetter,
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours_better" => Ok(Self::OursBetter),
            "baseline_better" => Ok(Self::BaselineBetter),
            _ => invalid(format!("unknown direction {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub p_value: f64,
    pub n_effective: usize,
    /// Sum of the ranks of the positive differences.
    pub w_plus: f64,
    pub method: WilcoxonMethod,
    pub direction: Direction,
}

/// Largest sample size using the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// One-sided paired signed-rank test of `median(log(ours/baseline)) < log(1 - margin)`
/// (roles swapped for `BaselineBetter`).
pub fn wilcoxon_margin_test(
    ours: &[f64],
    baseline: &[f64],
    margin: f64,
    direction: Direction,
) -> Result<WilcoxonResult> {
    if ours.len() != baseline.len() {
        return invalid("paired samples must have equal length");
    }
    if ours.len() < 5 {
        return Err(Error::InsufficientData(
            "Wilcoxon test needs at least 5 pairs".into(),
        ));
    }
    if !(margin.is_finite() && margin < 1.0) {
        return invalid("margin must be finite and below 1");
    }
    for (index, &value) in ours.iter().chain(baseline).enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositiveValue { index, value });
        }
    }
    let (num, den) = match direction {
        Direction::OursBetter => (ours, baseline),
        Direction::BaselineBetter => (baseline, ours),
    };
    let shift = (1.0 - margin).ln();
    let diffs: Vec<f64> = num
        .iter()
        .zip(den)
        .filter_map(|(a, b)| {
            let (la, lb) = (a.ln(), b.ln());
            let d = la - lb - shift;
            // differences at round-off level count as ties with zero
            (d.abs() > 1e-12 * (1.0 + la.abs() + lb.abs() + shift.abs())).then_some(d)
        })
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Err(Error::InsufficientData(
            "all paired differences are zero".into(),
        ));
    }
    let ranks2 = doubled_midranks(&diffs);
    let t2: u64 = diffs
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let w_plus = t2 as f64 / 2.0;
    let (p_value, method) = if n <= WILCOXON_EXACT_MAX_N {
        (exact_lower_tail(&ranks2, t2), WilcoxonMethod::Exact)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let ties = tie_sizes(&diffs);
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0
            - ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let z = (w_plus - mean + 0.5) / var.sqrt();
        (Normal::standard().cdf(z), WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult {
        p_value: p_value.min(1.0),
        n_effective: n,
        w_plus,
        method,
        direction,
    })
}

/// Twice the average rank of `|d|` (integers even with ties).
fn doubled_midranks(d: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut out = vec![0u64; d.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && d[idx[end]].abs() == d[idx[start]].abs() {
            end += 1;
        }
        // ranks start+1..=end, doubled average = start + 1 + end
        for &i in &idx[start..end] {
            out[i] = (start + 1 + end) as u64;
        }
        start = end;
    }
    out
}

fn tie_sizes(d: &[f64]) -> Vec<usize> {
    let mut a: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    a.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut i = 0;
    while i < a.len() {
        let mut j = i + 1;
        while j < a.len() && a[j] == a[i] {
            j += 1;
        }
        if j - i > 1 {
            out.push(j - i);
        }
        i = j;
    }
    out
}

/// `P(T <= t)` where `T` sums each doubled rank with an independent fair sign.
fn exact_lower_tail(ranks2: &[u64], t: u64) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut hi = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=hi).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        hi += r;
    }
    let below: f64 = counts[..=t as usize].iter().sum();
    below / 2f64.powi(ranks2.len() as i32)
}
