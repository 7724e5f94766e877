//! Property tests for the invariants of each module.

mod common;

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use stadion::datagen::{make_benchmark, BenchmarkConfig, GraphKind, SystemKind};
use stadion::discrepancy::{build_r_hat, skds_empirical, skds_pair, skds_quadratic, Estimator};
use stadion::kernels::{KernelFamily, KernelSpec};
use stadion::metrics::{wasserstein, wasserstein_with, WassersteinOptions};
use stadion::models::{
    Diffusion, DiffusionBasis, DiffusionKind, FeatureBasis, Intervention, SdeModel,
};
use stadion::simulator::{euler_maruyama_sample, lyapunov_solve, SimConfig};
use stadion::trainer::{train, train_observed, KernelConfig, TrainConfig};
use stadion::{Bandwidth, Dataset};

use common::*;

fn family() -> impl Strategy<Value = KernelFamily> {
    prop_oneof![
        Just(KernelFamily::Rbf),
        Just(KernelFamily::TiltedRbf),
        Just(KernelFamily::ImqPlus)
    ]
}

fn point(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, d)
}

fn points(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(point(d), n)
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn close(a: f64, b: f64, rel: f64, abs: f64) -> Result<(), TestCaseError> {
    let err = (a - b).abs();
    prop_assert!(
        err <= abs || err <= rel * a.abs().max(b.abs()),
        "{a} vs {b}"
    );
    Ok(())
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn kernel_is_symmetric(fam in family(), d in 1usize..=5, seed in any::<u64>(), bw in 0.3..3.0f64) {
        let mut r = rng(seed);
        let (x, y) = (uniform_vec(&mut r, d, -2.0, 2.0), uniform_vec(&mut r, d, -2.0, 2.0));
        let k = KernelSpec::new(fam, bw, d).unwrap();
        let (a, b) = (k.value(&x, &y).unwrap(), k.value(&y, &x).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn kernel_derivatives_match_differences(fam in family(), d in prop::sample::select(vec![1usize, 2, 5]), seed in any::<u64>()) {
        let mut r = rng(seed);
        let (x, y) = (uniform_vec(&mut r, d, -1.5, 1.5), uniform_vec(&mut r, d, -1.5, 1.5));
        let k = KernelSpec::new(fam, 1.0, d).unwrap();
        let h = 1e-5;
        let gx = k.grad_x(&x, &y).unwrap();
        let fd = fd_grad(&|z: &[f64]| k.value(z, &y).unwrap(), &x, h);
        for i in 0..d {
            close(gx[i], fd[i], 1e-6, 1e-9)?;
        }
        let hxy = k.cross_hessian(&x, &y).unwrap();
        let fd = fd_jacobian(&|z: &[f64]| k.grad_x(&x, z).unwrap(), &y, h);
        for i in 0..d {
            for j in 0..d {
                close(hxy[(i, j)], fd[(i, j)], 1e-6, 1e-9)?;
            }
        }
    }

    #[test]
    fn gram_matrices_are_psd(fam in family(), rows in points(50, 3), bw in 0.3..3.0f64) {
        let k = KernelSpec::new(fam, bw, 3).unwrap();
        let e = SymmetricEigen::new(k.gram(&Dataset::from_rows(&rows).unwrap()).unwrap()).eigenvalues;
        prop_assert!(e.min() >= -1e-8 * e.max());
    }

    #[test]
    fn vjps_match_differences(d in prop::sample::select(vec![1usize, 3, 5]), hidden in prop::sample::select(vec![4usize, 8]), seed in any::<u64>(), mlp in any::<bool>()) {
        let mut r = rng(seed);
        let (model, phi) = if mlp { random_mlp(&mut r, d, hidden) } else { random_linear(&mut r, d) };
        let x = uniform_vec(&mut r, d, -1.0, 1.0);
        let cb = uniform_vec(&mut r, d, -1.0, 1.0);
        let ca = DMatrix::from_fn(d, d, |_, _| rand::Rng::random_range(&mut r, -1.0..1.0));
        let gb = model.drift_vjp(&x, &phi, &cb).unwrap();
        let ga = model.diffusion_vjp(&x, &phi, &ca).unwrap();
        let pair_b = |m: &SdeModel, p: &Intervention| m.drift_eval(&x, p).unwrap().iter().zip(&cb).map(|(a, b)| a * b).sum::<f64>();
        let pair_a = |m: &SdeModel, p: &Intervention| m.diffusion_a_eval(&x, p).unwrap().component_mul(&ca).sum();
        let theta = model.params();
        let mask = model.trainable_mask();
        let h = 1e-6;
        for i in (0..theta.len()).filter(|&i| mask[i]) {
            let (mut mp, mut mm) = (model.clone(), model.clone());
            let mut p = theta.clone();
            p[i] += h;
            mp.set_params(&p).unwrap();
            p[i] -= 2.0 * h;
            mm.set_params(&p).unwrap();
            close(gb.theta[i], (pair_b(&mp, &phi) - pair_b(&mm, &phi)) / (2.0 * h), 1e-5, 1e-8)?;
            close(ga.theta[i], (pair_a(&mp, &phi) - pair_a(&mm, &phi)) / (2.0 * h), 1e-5, 1e-8)?;
        }
        let pv = phi.params();
        for i in 0..pv.len() {
            let (mut pp, mut pm) = (phi.clone(), phi.clone());
            let mut p = pv.clone();
            p[i] += h;
            pp.set_params(&p).unwrap();
            p[i] -= 2.0 * h;
            pm.set_params(&p).unwrap();
            close(gb.phi[i], (pair_b(&model, &pp) - pair_b(&model, &pm)) / (2.0 * h), 1e-5, 1e-8)?;
            close(ga.phi[i], (pair_a(&model, &pp) - pair_a(&model, &pm)) / (2.0 * h), 1e-5, 1e-8)?;
        }
    }

    #[test]
    fn frozen_entries_survive_updates(d in 1usize..=4, seed in any::<u64>(), mlp in any::<bool>()) {
        let mut r = rng(seed);
        let (mut model, _) = if mlp { random_mlp(&mut r, d, 4) } else { random_linear(&mut r, d) };
        let mask = model.trainable_mask();
        let frozen: Vec<f64> = model.params().iter().zip(&mask).filter(|(_, m)| !**m).map(|(v, _)| *v).collect();
        for _ in 0..5 {
            let p: Vec<f64> = model.params().iter().map(|v| v + rand::Rng::random_range(&mut r, -1.0..1.0)).collect();
            model.set_params(&p).unwrap();
        }
        let after: Vec<f64> = model.params().iter().zip(&mask).filter(|(_, m)| !**m).map(|(v, _)| *v).collect();
        prop_assert_eq!(frozen, after);
    }

    #[test]
    fn empty_intervention_is_identity(d in 1usize..=4, seed in any::<u64>(), mlp in any::<bool>()) {
        let mut r = rng(seed);
        let (model, _) = if mlp { random_mlp(&mut r, d, 4) } else { random_linear(&mut r, d) };
        let x = uniform_vec(&mut r, d, -2.0, 2.0);
        let none = Intervention::identity();
        let empty = Intervention { targets: vec![], shift: vec![], log_scale: vec![] };
        prop_assert_eq!(model.drift_eval(&x, &none).unwrap(), model.drift_eval(&x, &empty).unwrap());
        prop_assert_eq!(model.diffusion_a_eval(&x, &none).unwrap(), model.diffusion_a_eval(&x, &empty).unwrap());
    }

    #[test]
    fn cone_diffusion_stays_psd(d in 1usize..=4, weights in prop::collection::vec(-3.0..3.0f64, 4)) {
        let mut model = SdeModel::linear(d, DiffusionKind::BasisCone);
        let mut p = model.params();
        let nd = model.num_drift_params();
        for (i, v) in p[nd..].iter_mut().enumerate() {
            *v = weights[i % weights.len()];
        }
        model.set_params(&p).unwrap();
        let a = model.diffusion_a_eval(&vec![0.0; d], &Intervention::identity()).unwrap();
        prop_assert!(SymmetricEigen::new(a).eigenvalues.min() >= -1e-10);
    }

    #[test]
    fn skds_pair_is_symmetric(d in 1usize..=3, seed in any::<u64>(), fam in family(), mlp in any::<bool>()) {
        let mut r = rng(seed);
        let (model, phi) = if mlp { random_mlp(&mut r, d, 4) } else { random_linear(&mut r, d) };
        let k = KernelSpec::new(fam, 1.0, d).unwrap();
        let (x, y) = (uniform_vec(&mut r, d, -2.0, 2.0), uniform_vec(&mut r, d, -2.0, 2.0));
        let a = skds_pair(&model, &phi, &k, &x, &y).unwrap().value;
        let b = skds_pair(&model, &phi, &k, &y, &x).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300));
    }

    #[test]
    fn skds_scales_quadratically(d in 1usize..=3, seed in any::<u64>(), s in 0.1..5.0f64) {
        let mut r = rng(seed);
        let data = Dataset::from_rows(&(0..16).map(|_| uniform_vec(&mut r, d, -2.0, 2.0)).collect::<Vec<_>>()).unwrap();
        let features = FeatureBasis::affine(d);
        let cone = DiffusionBasis::unit_coordinates(d);
        let theta = uniform_vec(&mut r, d * (d + 1) + d, 0.1, 1.0);
        let scaled: Vec<f64> = theta.iter().map(|v| v * s).collect();
        let k = KernelSpec::rbf(1.0, d).unwrap();
        for est in [Estimator::LinearPairs, Estimator::UStatistic] {
            let base = skds_empirical(&cone_model(d, features.clone(), cone.clone(), &theta), &Intervention::identity(), &k, &data, est).unwrap();
            let sc = skds_empirical(&cone_model(d, features.clone(), cone.clone(), &scaled), &Intervention::identity(), &k, &data, est).unwrap();
            prop_assert!((sc - s * s * base).abs() <= 1e-12 * sc.abs().max(1e-300));
        }
    }

    #[test]
    fn r_hat_is_symmetric_and_bounds_the_form(d in 1usize..=3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let data = Dataset::from_rows(&(0..20).map(|_| uniform_vec(&mut r, d, -2.0, 2.0)).collect::<Vec<_>>()).unwrap();
        let k = KernelSpec::rbf(1.0, d).unwrap();
        let q = build_r_hat(&FeatureBasis::affine(d), &DiffusionBasis::unit_coordinates(d), &k, &data, Estimator::LinearPairs).unwrap();
        prop_assert!((&q.r_hat - q.r_hat.transpose()).amax() <= 1e-12 * q.r_hat.amax());
        let (lo, _) = q.eigen_range();
        let theta = uniform_vec(&mut r, q.dim(), -1.0, 1.0);
        let norm2: f64 = theta.iter().map(|v| v * v).sum();
        prop_assert!(skds_quadratic(&q, &theta).unwrap() >= lo.min(0.0) * norm2 - 1e-10 * q.r_hat.amax() * norm2);
    }

    #[test]
    fn wasserstein_is_symmetric(a in points(12, 2), b in points(9, 2)) {
        let (a, b) = (Dataset::from_rows(&a).unwrap(), Dataset::from_rows(&b).unwrap());
        prop_assert!((wasserstein(&a, &b).unwrap() - wasserstein(&b, &a).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn wasserstein_triangle_inequality(a in points(16, 3), b in points(16, 3), c in points(16, 3)) {
        let (a, b, c) = (Dataset::from_rows(&a).unwrap(), Dataset::from_rows(&b).unwrap(), Dataset::from_rows(&c).unwrap());
        let w = |x: &Dataset, y: &Dataset| wasserstein(x, y).unwrap();
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn lyapunov_residual_is_small(d in 1usize..=6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = DMatrix::from_fn(d, d, |i, j| if i == j { -rand::Rng::random_range(&mut r, 1.0..2.0) } else { rand::Rng::random_range(&mut r, -0.4..0.4) });
        let q = DMatrix::identity(d, d);
        let s = lyapunov_solve(&m, &q).unwrap();
        prop_assert!((&m * &s + &s * m.transpose() + &q).norm() <= 1e-8);
    }

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), chains in 1usize..=3) {
        let model = SdeModel::linear(2, DiffusionKind::DiagExp);
        let cfg = SimConfig { n_samples: 60, burn_in_steps: 200, seed, chains, ..Default::default() };
        let a = euler_maruyama_sample(&model, &Intervention::identity(), &cfg).unwrap();
        let b = euler_maruyama_sample(&model, &Intervention::identity(), &cfg).unwrap();
        prop_assert_eq!(a.values(), b.values());
    }

    #[test]
    fn bundles_are_disjoint_and_reproducible(seed in 0u64..1000, sf in any::<bool>(), scm in any::<bool>()) {
        let cfg = BenchmarkConfig {
            kind: if scm { SystemKind::Scm } else { SystemKind::Sde },
            graph: if sf { GraphKind::Sf } else { GraphKind::Er },
            d: 6,
            n_per_env: 50,
            seed,
            ..Default::default()
        };
        let a = make_benchmark(&cfg).unwrap();
        let train_t: Vec<usize> = a.train_envs.iter().flat_map(|e| e.intervention.targets.clone()).collect();
        prop_assert!(a.test_envs.iter().flat_map(|e| &e.intervention.targets).all(|t| !train_t.contains(t)));
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        a.save(dir1.path()).unwrap();
        make_benchmark(&cfg).unwrap().save(dir2.path()).unwrap();
        for f in std::fs::read_dir(dir1.path()).unwrap() {
            let name = f.unwrap().file_name();
            prop_assert_eq!(std::fs::read(dir1.path().join(&name)).unwrap(), std::fs::read(dir2.path().join(&name)).unwrap());
        }
        if let stadion::datagen::System::LinearSde(sys) = &a.system {
            prop_assert!(sys.stationary_cov().is_ok());
        }
        // standardizing standardized data again changes nothing
        let obs = &a.observational;
        let st = stadion::datagen::Standardization::fit(obs);
        let twice = st.apply(obs).unwrap();
        for (x, y) in obs.values().iter().zip(twice.values()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn training_is_deterministic_and_steps_touch_one_environment(seed in 0u64..1000) {
        let bundle = make_benchmark(&BenchmarkConfig { d: 3, expected_degree: 2.0, n_per_env: 40, n_train_env: 2, n_test_env: 1, seed, ..Default::default() }).unwrap();
        let init = SdeModel::linear(3, DiffusionKind::BasisCone);
        let cfg = TrainConfig { steps: 30, batch_size: 16, seed, ..Default::default() };
        let mut snaps: Vec<(usize, Vec<Intervention>, Vec<f64>)> = Vec::new();
        let fit = train_observed(&bundle.training_data(), &init, &cfg, |s| {
            snaps.push((s.env, s.phis.to_vec(), s.model.params()));
        }).unwrap();
        for w in snaps.windows(2) {
            let (env, before, _) = &w[0];
            let (_, after, params) = &w[1];
            for (k, (b, a)) in before.iter().zip(after).enumerate() {
                if k != *env {
                    prop_assert_eq!(b, a);
                }
            }
            let nd = init.num_drift_params();
            prop_assert!(params[nd..].iter().all(|v| *v >= 0.0));
        }
        prop_assert!(fit.model.params()[init.num_drift_params()..].iter().all(|v| *v >= 0.0));
        let again = train(&bundle.training_data(), &init, &cfg).unwrap();
        prop_assert_eq!(fit.loss_trace, again.loss_trace);
    }
}

#[test]
fn training_loss_is_the_batch_quadratic_form() {
    let d = 2;
    let data = stadion::simulator::ou_exact_sample(
        &(-DMatrix::<f64>::identity(d, d)),
        &[0.5, -0.5],
        &DMatrix::identity(d, d),
        200,
        1,
    )
    .unwrap();
    let init = SdeModel::linear(d, DiffusionKind::BasisCone);
    let cfg = TrainConfig {
        steps: 40,
        batch_size: 32,
        lambda_sparsity: 0.0,
        kernel: KernelConfig {
            family: KernelFamily::Rbf,
            bandwidth: Bandwidth::Fixed(1.0),
        },
        ..Default::default()
    };
    let k = KernelSpec::rbf(1.0, d).unwrap();
    let mut worst = 0.0f64;
    train_observed(&[(data, vec![])], &init, &cfg, |s| {
        let Diffusion::BasisCone { basis, .. } = &s.model.diffusion else {
            unreachable!()
        };
        let q = build_r_hat(&FeatureBasis::affine(d), basis, &k, s.batch, cfg.estimator).unwrap();
        let quad = skds_quadratic(&q, &s.model.params()).unwrap();
        worst = worst.max((quad - s.loss).abs() / quad.abs().max(1e-300));
    })
    .unwrap();
    assert!(worst <= 1e-10, "relative gap {worst:e}");
}

#[test]
fn linear_pairs_is_unbiased_for_the_u_statistic() {
    // fixed generator: drift 1 - 2x, unit diffusion, against N(0.3, 0.36) data
    let d = 1;
    let features = FeatureBasis::affine(d);
    let cone = DiffusionBasis::unit_coordinates(d);
    let theta = [1.0, -2.0, 1.0];
    let k = KernelSpec::rbf(0.8, d).unwrap();
    let big = stadion::simulator::ou_exact_sample(
        &DMatrix::from_element(1, 1, -1.0),
        &[0.3],
        &DMatrix::from_element(1, 1, 0.72),
        20_000,
        7,
    )
    .unwrap();
    let reference = skds_quadratic(
        &build_r_hat(&features, &cone, &k, &big, Estimator::UStatistic).unwrap(),
        &theta,
    )
    .unwrap();
    let model = cone_model(d, features, cone, &theta);
    let est: Vec<f64> = (0..200u64)
        .map(|s| {
            let sample = stadion::simulator::ou_exact_sample(
                &DMatrix::from_element(1, 1, -1.0),
                &[0.3],
                &DMatrix::from_element(1, 1, 0.72),
                200,
                1000 + s,
            )
            .unwrap();
            skds_empirical(
                &model,
                &Intervention::identity(),
                &k,
                &sample,
                Estimator::LinearPairs,
            )
            .unwrap()
        })
        .collect();
    let mean = est.iter().sum::<f64>() / est.len() as f64;
    let se = (est.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt()
        / (est.len() as f64).sqrt();
    assert!(
        (mean - reference).abs() <= 3.0 * se,
        "mean {mean}, reference {reference}, se {se}"
    );
}

#[test]
fn euler_maruyama_matches_exact_ou_moments() {
    let m = DMatrix::from_row_slice(3, 3, &[-1.5, 0.3, 0.0, -0.2, -1.2, 0.4, 0.1, 0.0, -1.0]);
    let mean = [0.5, -1.0, 0.2];
    let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.5, 1.5]));
    let sys = stadion::datagen::LinearSde {
        m: m.clone(),
        diffusion: q.diagonal().iter().map(|v: &f64| v.sqrt()).collect(),
        mean: mean.to_vec(),
    };
    let model = sys.to_model().unwrap();
    let cfg = SimConfig {
        dt: 0.005,
        burn_in_steps: 20_000,
        n_samples: 20_000,
        thinning: 20,
        seed: 3,
        ..Default::default()
    };
    let em = euler_maruyama_sample(&model, &Intervention::identity(), &cfg).unwrap();
    let exact = stadion::simulator::ou_exact_sample(&m, &mean, &q, 20_000, 4).unwrap();
    let mean_err = em
        .mean()
        .iter()
        .zip(exact.mean())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / 3.0;
    assert!(mean_err <= 0.05, "mean abs error {mean_err}");
    let cov_err = (em.covariance() - exact.covariance()).norm() / exact.covariance().norm();
    assert!(cov_err <= 0.1, "covariance rel error {cov_err}");
}

#[test]
fn chains_with_disjoint_seeds_agree_in_mean() {
    let model = SdeModel::linear(2, DiffusionKind::DiagExp);
    let cfg = |seed| SimConfig {
        n_samples: 4000,
        thinning: 200,
        seed,
        ..Default::default()
    };
    let a = euler_maruyama_sample(&model, &Intervention::identity(), &cfg(1)).unwrap();
    let b = euler_maruyama_sample(&model, &Intervention::identity(), &cfg(2)).unwrap();
    for j in 0..2 {
        let se = ((a.std()[j].powi(2) + b.std()[j].powi(2)) / 4000.0).sqrt();
        assert!((a.mean()[j] - b.mean()[j]).abs() <= 4.0 * se);
    }
}

#[test]
fn sliced_estimate_is_close_to_exact() {
    let mut r = rng(11);
    let a = Dataset::from_rows(
        &(0..300)
            .map(|_| uniform_vec(&mut r, 3, -1.0, 1.0))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let b = Dataset::from_rows(
        &(0..300)
            .map(|_| uniform_vec(&mut r, 3, -0.5, 1.5))
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let exact = wasserstein(&a, &b).unwrap();
    let opts = WassersteinOptions {
        exact_max_n: 10,
        ..Default::default()
    };
    let (sliced, _, _) = wasserstein_with(&a, &b, &opts).unwrap();
    assert!(
        (sliced - exact).abs() <= 0.3 * exact,
        "sliced {sliced}, exact {exact}"
    );
}
