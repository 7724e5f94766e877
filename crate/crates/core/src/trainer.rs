//! Stochastic-gradient fitting of a model and per-environment interventions
//! to several datasets, plus calibration of test-time shift interventions.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::discrepancy::{skds_grad, Estimator, LossOptions};
use crate::error::{invalid, Error, Result};
use crate::kernels::{Bandwidth, BandwidthRule, KernelFamily, KernelSpec};
use crate::models::{
    Diffusion, DiffusionKind, Drift, DriftKind, Feature, FeatureBasis, Intervention, SdeModel,
};
use crate::simulator::{euler_maruyama_sample, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Rbf,
            bandwidth: Bandwidth::Named(BandwidthRule::Median),
        }
    }
}

impl KernelConfig {
    /// Resolves the bandwidth rule against `data`.
    pub fn build(&self, data: &Dataset) -> Result<KernelSpec> {
        KernelSpec::new(self.family, self.bandwidth.resolve(data)?, data.d())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: DriftKind,
    pub hidden: usize,
    pub diffusion: DiffusionKind,
    /// Seeds the MLP initialization.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: DriftKind::Linear,
            hidden: 8,
            diffusion: DiffusionKind::DiagExp,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, d: usize) -> Result<SdeModel> {
        if d == 0 {
            return invalid("model dimension must be positive");
        }
        Ok(match self.kind {
            DriftKind::Linear => SdeModel::linear(d, self.diffusion),
            DriftKind::Mlp => {
                if self.hidden == 0 {
                    return invalid("MLP needs at least one hidden unit");
                }
                SdeModel::mlp(d, self.hidden, self.diffusion, self.init_seed)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lambda_sparsity: f64,
    pub estimator: Estimator,
    pub kernel: KernelConfig,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    /// Parallel pair reduction inside each step.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 256,
            lr: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lambda_sparsity: 0.001,
            estimator: Estimator::LinearPairs,
            kernel: KernelConfig::default(),
            seed: 0,
            grad_clip: Some(10.0),
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return invalid("batch_size must be at least 2");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return invalid("lr must be finite and positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return invalid("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return invalid("adam_eps must be positive");
        }
        if !(self.lambda_sparsity.is_finite() && self.lambda_sparsity >= 0.0) {
            return invalid("lambda_sparsity must be finite and nonnegative");
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return invalid("grad_clip must be finite and positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: SdeModel,
    pub theta: Vec<f64>,
    /// One per environment; entry 0 is the observational identity.
    pub phis: Vec<Intervention>,
    /// Batch objective (SKDS plus weighted penalty) before each update.
    pub loss_trace: Vec<f64>,
    pub kernel: KernelSpec,
    pub config: TrainConfig,
    pub wall_time: f64,
}

/// What happened in one step, handed to the observer of [`train_observed`].
#[derive(Debug)]
pub struct StepRecord<'a> {
    pub step: usize,
    pub env: usize,
    pub batch: &'a Dataset,
    pub model: &'a SdeModel,
    pub phis: &'a [Intervention],
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Penalty {
    pub value: f64,
    pub theta: Vec<f64>,
    pub phis: Vec<Vec<f64>>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Sparsity penalty: L1 on cross-variable linear drift weights (group L2 over
/// each cross-variable input column for MLPs) plus L1 on all shifts.
pub fn regularizer(model: &SdeModel, phis: &[Intervention]) -> Penalty {
    let mut theta = vec![0.0; model.num_params()];
    let mut value = 0.0;
    let d = model.d;
    match &model.drift {
        Drift::Linear(lin) => {
            let l = lin.basis.len();
            for j in 0..d {
                for (p, f) in lin.basis.entries.iter().enumerate() {
                    if matches!(f, Feature::Coord(i) if *i != j) && !lin.frozen[j][p] {
                        let w = lin.weights[j][p];
                        value += w.abs();
                        theta[j * l + p] = sign(w);
                    }
                }
            }
        }
        Drift::Mlp(mlp) => {
            let h = mlp.hidden;
            let stride = 1 + 2 * h + h * d;
            for (j, u) in mlp.units.iter().enumerate() {
                for i in (0..d).filter(|&i| i != j) {
                    let norm = u.u.iter().map(|row| row[i] * row[i]).sum::<f64>().sqrt();
                    value += norm;
                    if norm > 0.0 {
                        for k in 0..h {
                            theta[j * stride + 1 + h + k * d + i] = u.u[k][i] / norm;
                        }
                    }
                }
            }
        }
    }
    let phis = phis
        .iter()
        .map(|phi| {
            value += phi.shift.iter().map(|s| s.abs()).sum::<f64>();
            let mut g: Vec<f64> = phi.shift.iter().map(|s| sign(*s)).collect();
            g.extend(std::iter::repeat_n(0.0, phi.log_scale.len()));
            g
        })
        .collect();
    Penalty { value, theta, phis }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= cfg.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.adam_eps);
        }
    }
}

/// Epoch-wise sampling without replacement from one environment.
struct Batcher {
    order: Vec<usize>,
    cursor: usize,
}

impl Batcher {
    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = self.order.len();
        if size >= n {
            return self.order.clone();
        }
        if self.cursor + size > n {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + size].to_vec();
        self.cursor += size;
        out
    }
}

/// Fits `init` to `envs = [(data, targets)]`. Environment 0 must be
/// observational; its intervention stays the identity.
pub fn train(
    envs: &[(Dataset, Vec<usize>)],
    init: &SdeModel,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    train_observed(envs, init, cfg, |_| {})
}

pub fn train_observed(
    envs: &[(Dataset, Vec<usize>)],
    init: &SdeModel,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&StepRecord),
) -> Result<FitResult> {
    let started = Instant::now();
    cfg.validate()?;
    init.validate()?;
    if envs.is_empty() {
        return Err(Error::InsufficientData(
            "training needs at least one environment".into(),
        ));
    }
    if !envs[0].1.is_empty() {
        return invalid("environment 0 must be observational");
    }
    let d = init.d;
    for (k, (data, targets)) in envs.iter().enumerate() {
        if data.d() != d {
            return invalid(format!(
                "environment {k} has dimension {}, model has {d}",
                data.d()
            ));
        }
        if data.n() < 2 {
            return Err(Error::InsufficientData(format!(
                "environment {k} has fewer than 2 samples"
            )));
        }
        Intervention::neutral(targets).validate(d)?;
    }
    let kernel = cfg.kernel.build(&envs[0].0)?;
    let mut model = init.clone();
    let mut phis: Vec<Intervention> = envs.iter().map(|(_, t)| Intervention::neutral(t)).collect();
    let mask = model.trainable_mask();
    let mut theta = model.params();
    let mut adam_theta = Adam::new(theta.len());
    let mut adam_phi: Vec<Adam> = phis.iter().map(|p| Adam::new(p.num_params())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batchers: Vec<Batcher> = envs
        .iter()
        .map(|(data, _)| {
            let mut order: Vec<usize> = (0..data.n()).collect();
            order.shuffle(&mut rng);
            Batcher { order, cursor: 0 }
        })
        .collect();
    let opts = LossOptions {
        estimator: cfg.estimator,
        shuffle: None,
        parallel: cfg.parallel,
    };
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let env = rng.random_range(0..envs.len());
        let idx = batchers[env].next(cfg.batch_size, &mut rng);
        let batch = envs[env].0.select(&idx);
        let lg = skds_grad(&model, &phis[env], &kernel, &batch, opts)?;
        let mut g_theta = lg.grad.theta;
        let mut g_phi = lg.grad.phi;
        let mut loss = lg.loss;
        if cfg.lambda_sparsity > 0.0 {
            let pen = regularizer(&model, &phis);
            loss += cfg.lambda_sparsity * pen.value;
            g_theta
                .iter_mut()
                .zip(&pen.theta)
                .for_each(|(g, r)| *g += cfg.lambda_sparsity * r);
            g_phi
                .iter_mut()
                .zip(&pen.phis[env])
                .for_each(|(g, r)| *g += cfg.lambda_sparsity * r);
        }
        g_theta.iter_mut().zip(&mask).for_each(|(g, m)| {
            if !m {
                *g = 0.0
            }
        });
        if !loss.is_finite() || g_theta.iter().chain(&g_phi).any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        observe(&StepRecord {
            step,
            env,
            batch: &batch,
            model: &model,
            phis: &phis,
            loss,
        });
        loss_trace.push(loss);
        if let Some(clip) = cfg.grad_clip {
            let norm = g_theta
                .iter()
                .chain(&g_phi)
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                let s = clip / norm;
                g_theta
                    .iter_mut()
                    .chain(g_phi.iter_mut())
                    .for_each(|g| *g *= s);
            }
        }
        adam_theta.step(&mut theta, &g_theta, cfg);
        model.set_params(&theta)?;
        // keep the optimizer iterate on the feasible set
        theta = model.params();
        if env != 0 && !g_phi.is_empty() {
            let mut p = phis[env].params();
            adam_phi[env].step(&mut p, &g_phi, cfg);
            phis[env].set_params(&p)?;
        }
    }
    Ok(FitResult {
        theta: model.params(),
        model,
        phis,
        loss_trace,
        kernel,
        config: cfg.clone(),
        wall_time: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    ClosedForm,
    Secant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub intervention: Intervention,
    pub method: CalibrationMethod,
    pub iterations: usize,
    /// `|stationary mean - desired|` at the returned shift (0 for the closed form).
    pub residual: f64,
}

pub const CALIBRATION_TOL: f64 = 0.02;
pub const CALIBRATION_MAX_ITER: usize = 12;

/// `(c, W)` when the drift is `c + W x` over the affine basis.
fn affine_parts(model: &SdeModel) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let Drift::Linear(lin) = &model.drift else {
        return None;
    };
    if lin.basis != FeatureBasis::affine(model.d) {
        return None;
    }
    let d = model.d;
    let c = DVector::from_fn(d, |j, _| lin.weights[j][0]);
    let w = DMatrix::from_fn(d, d, |j, i| lin.weights[j][1 + i]);
    Some((c, w))
}

/// Finds a shift `δ` on `target` so the stationary mean of that coordinate
/// equals `desired_mean`. Affine models use `mean = -W^{-1}(c + δ e_j)`;
/// otherwise a secant iteration on simulated means with common random numbers.
pub fn calibrate_test_intervention(
    model: &SdeModel,
    target: usize,
    desired_mean: f64,
    sim: &SimConfig,
) -> Result<Calibration> {
    model.validate()?;
    if target >= model.d {
        return invalid(format!("target {target} out of range"));
    }
    if !desired_mean.is_finite() {
        return invalid("desired mean must be finite");
    }
    if let Some((c, w)) = affine_parts(model) {
        let lu = w.lu();
        let base = lu
            .solve(&c)
            .ok_or_else(|| Error::NotStable("drift matrix is singular".into()))?;
        let mut e = DVector::zeros(model.d);
        e[target] = 1.0;
        let col = lu
            .solve(&e)
            .ok_or_else(|| Error::NotStable("drift matrix is singular".into()))?;
        let gain = -col[target];
        let current = -base[target];
        if gain == 0.0 || !gain.is_finite() {
            return Err(Error::NoConvergence {
                iterations: 1,
                best_delta: 0.0,
                residual: (current - desired_mean).abs(),
            });
        }
        let delta = if current == desired_mean {
            0.0
        } else {
            (desired_mean - current) / gain
        };
        return Ok(Calibration {
            intervention: Intervention::shift_only(target, delta),
            method: CalibrationMethod::ClosedForm,
            iterations: 1,
            residual: 0.0,
        });
    }
    let f = |delta: f64| -> Result<f64> {
        let phi = Intervention::shift_only(target, delta);
        let ds = euler_maruyama_sample(model, &phi, sim)?;
        Ok(ds.mean()[target] - desired_mean)
    };
    let mut x0 = 0.0;
    let mut f0 = f(x0)?;
    let mut best = (x0, f0.abs());
    if f0.abs() <= CALIBRATION_TOL {
        return Ok(Calibration {
            intervention: Intervention::shift_only(target, 0.0),
            method: CalibrationMethod::Secant,
            iterations: 1,
            residual: f0.abs(),
        });
    }
    // the drift of every coordinate contains -x_j, so the response is roughly unit slope
    let mut x1 = -f0;
    for it in 2..=CALIBRATION_MAX_ITER {
        let f1 = f(x1)?;
        if f1.abs() < best.1 {
            best = (x1, f1.abs());
        }
        if f1.abs() <= CALIBRATION_TOL {
            return Ok(Calibration {
                intervention: Intervention::shift_only(target, x1),
                method: CalibrationMethod::Secant,
                iterations: it,
                residual: f1.abs(),
            });
        }
        let slope = (f1 - f0) / (x1 - x0);
        let next = if slope.is_finite() && slope != 0.0 {
            x1 - f1 / slope
        } else {
            x1 - f1
        };
        (x0, f0) = (x1, f1);
        x1 = next;
    }
    Err(Error::NoConvergence {
        iterations: CALIBRATION_MAX_ITER,
        best_delta: best.0,
        residual: best.1,
    })
}

/// Diffusion parameters as `(log_std or cone weights)`, for reports.
pub fn diffusion_params(model: &SdeModel) -> Vec<f64> {
    match &model.diffusion {
        Diffusion::DiagExp { log_std } => log_std.clone(),
        Diffusion::BasisCone { weights, .. } => weights.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::gaussian_sample;

    fn gaussian_1d(mean: f64, var: f64, n: usize, seed: u64) -> Dataset {
        gaussian_sample(&[mean], &DMatrix::from_element(1, 1, var), n, seed).unwrap()
    }

    fn ou_affine(alpha: f64) -> SdeModel {
        SdeModel::linear_with_basis(
            1,
            FeatureBasis::affine(1),
            vec![vec![4.0 * alpha, -4.0]],
            Diffusion::DiagExp {
                log_std: vec![2f64.ln()],
            },
        )
        .unwrap()
    }

    #[test]
    fn zero_steps_returns_init() {
        let data = gaussian_1d(1.0, 0.5, 100, 1);
        let m = SdeModel::linear(1, DiffusionKind::DiagExp);
        let cfg = TrainConfig {
            steps: 0,
            ..Default::default()
        };
        let fit = train(&[(data, vec![])], &m, &cfg).unwrap();
        assert_eq!(fit.model, m);
        assert!(fit.loss_trace.is_empty());
        assert_eq!(fit.phis, vec![Intervention::identity()]);
    }

    #[test]
    fn regularizer_examples() {
        let m = SdeModel::linear(3, DiffusionKind::DiagExp);
        let pen = regularizer(&m, &[Intervention::identity()]);
        assert_eq!(pen.value, 0.0);
        assert!(pen.theta.iter().all(|g| *g == 0.0));

        let mut m = SdeModel::linear(2, DiffusionKind::DiagExp);
        if let Drift::Linear(lin) = &mut m.drift {
            lin.weights[0][2] = -2.0; // x_2 -> b_1
        }
        let phi = Intervention::shift_only(1, 0.5);
        let pen = regularizer(&m, &[Intervention::identity(), phi]);
        assert_eq!(pen.value, 2.5);
        assert_eq!(pen.theta[2], -1.0);
        assert_eq!(pen.phis[1], vec![1.0, 0.0]);
        // bias and frozen self weights are not penalized
        assert_eq!(pen.theta.iter().filter(|g| **g != 0.0).count(), 1);

        let mut mlp = SdeModel::mlp(3, 4, DiffusionKind::DiagExp, 2);
        let pen = regularizer(&mlp, &[]);
        let Drift::Mlp(net) = &mlp.drift else {
            unreachable!()
        };
        let direct: f64 = (0..3)
            .map(|j| {
                (0..3)
                    .filter(|&i| i != j)
                    .map(|i| {
                        net.units[j]
                            .u
                            .iter()
                            .map(|r| r[i] * r[i])
                            .sum::<f64>()
                            .sqrt()
                    })
                    .sum::<f64>()
            })
            .sum();
        assert!((pen.value - direct).abs() < 1e-12);
        if let Drift::Mlp(net) = &mut mlp.drift {
            net.units
                .iter_mut()
                .for_each(|u| u.u.iter_mut().flatten().for_each(|w| *w = 0.0));
        }
        assert_eq!(regularizer(&mlp, &[]).value, 0.0);
    }

    #[test]
    fn regularizer_gradient_matches_finite_differences() {
        let mlp = SdeModel::mlp(3, 2, DiffusionKind::DiagExp, 7);
        let pen = regularizer(&mlp, &[]);
        let p0 = mlp.params();
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += 1e-7;
            let mut m1 = mlp.clone();
            m1.set_params(&p).unwrap();
            p[i] -= 2e-7;
            let mut m2 = mlp.clone();
            m2.set_params(&p).unwrap();
            let fd = (regularizer(&m1, &[]).value - regularizer(&m2, &[]).value) / 2e-7;
            if mlp.trainable_mask()[i] {
                assert!(
                    (fd - pen.theta[i]).abs() < 1e-6,
                    "{i}: {fd} vs {}",
                    pen.theta[i]
                );
            }
        }
    }

    #[test]
    fn bad_inputs() {
        let data = gaussian_1d(0.0, 1.0, 10, 1);
        let m = SdeModel::linear(1, DiffusionKind::DiagExp);
        assert!(matches!(
            train(&[], &m, &TrainConfig::default()),
            Err(Error::InsufficientData(_))
        ));
        assert!(train(&[(data.clone(), vec![0])], &m, &TrainConfig::default()).is_err());
        assert!(train(
            &[(data.clone(), vec![])],
            &m,
            &TrainConfig {
                batch_size: 1,
                ..Default::default()
            }
        )
        .is_err());
        let one = gaussian_1d(0.0, 1.0, 1, 1);
        assert!(matches!(
            train(
                &[(data, vec![]), (one, vec![0])],
                &m,
                &TrainConfig::default()
            ),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn only_sampled_env_changes_and_observational_stays_identity() {
        let d = 2;
        let envs: Vec<(Dataset, Vec<usize>)> = vec![
            (
                gaussian_sample(&[0.0, 0.0], &DMatrix::identity(2, 2), 300, 1).unwrap(),
                vec![],
            ),
            (
                gaussian_sample(&[1.0, 0.0], &DMatrix::identity(2, 2), 300, 2).unwrap(),
                vec![0],
            ),
            (
                gaussian_sample(&[0.0, -1.0], &DMatrix::identity(2, 2), 300, 3).unwrap(),
                vec![1],
            ),
        ];
        let m = SdeModel::linear(d, DiffusionKind::BasisCone);
        let cfg = TrainConfig {
            steps: 60,
            batch_size: 64,
            lr: 0.05,
            ..Default::default()
        };
        let mut prev: Option<Vec<Intervention>> = None;
        let mut prev_env = 0;
        let fit = train_observed(&envs, &m, &cfg, |rec| {
            if let Some(p) = &prev {
                for k in 0..p.len() {
                    if k != prev_env {
                        assert_eq!(p[k], rec.phis[k]);
                    }
                }
            }
            assert!(rec.phis[0].is_identity());
            if let Diffusion::BasisCone { weights, .. } = &rec.model.diffusion {
                assert!(weights.iter().all(|a| *a >= 0.0));
            }
            prev = Some(rec.phis.to_vec());
            prev_env = rec.env;
        })
        .unwrap();
        assert_eq!(fit.phis.len(), 3);
        assert_eq!(fit.loss_trace.len(), 60);
        let again = train(&envs, &m, &cfg).unwrap();
        assert_eq!(again.loss_trace, fit.loss_trace);
        // frozen self weights stay at -1
        let Drift::Linear(lin) = &fit.model.drift else {
            unreachable!()
        };
        assert_eq!(lin.weights[0][1], -1.0);
        assert_eq!(lin.weights[1][2], -1.0);
    }

    #[test]
    fn calibration_closed_form() {
        let m = ou_affine(1.0);
        let c = calibrate_test_intervention(&m, 0, 1.5, &SimConfig::default()).unwrap();
        assert_eq!(c.method, CalibrationMethod::ClosedForm);
        assert!((c.intervention.shift[0] - 4.0 * 0.5).abs() < 1e-12);
        let c = calibrate_test_intervention(&m, 0, 1.0, &SimConfig::default()).unwrap();
        assert_eq!(c.intervention.shift[0], 0.0);
    }

    #[test]
    fn calibration_secant_on_mlp() {
        let m = SdeModel::mlp(2, 3, DiffusionKind::DiagExp, 1);
        let sim = SimConfig {
            burn_in_steps: 500,
            n_samples: 400,
            seed: 2,
            ..Default::default()
        };
        let c = calibrate_test_intervention(&m, 1, 0.8, &sim).unwrap();
        assert_eq!(c.method, CalibrationMethod::Secant);
        let ds = euler_maruyama_sample(&m, &c.intervention, &sim).unwrap();
        assert!((ds.mean()[1] - 0.8).abs() <= CALIBRATION_TOL);
        assert!(c.iterations <= CALIBRATION_MAX_ITER);
    }
}
