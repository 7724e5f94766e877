//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stadion::kernels::KernelSpec;
use stadion::models::{
    Diffusion, DiffusionBasis, DiffusionKind, FeatureBasis, Intervention, SdeModel,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(r: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Random affine drift plus random diagonal or cone diffusion, with a random
/// shift-scale intervention on one coordinate.
pub fn random_linear(r: &mut impl Rng, d: usize) -> (SdeModel, Intervention) {
    let kind = if r.random_bool(0.5) {
        DiffusionKind::DiagExp
    } else {
        DiffusionKind::BasisCone
    };
    let mut model = SdeModel::linear(d, kind);
    let mut p = model.params();
    let mask = model.trainable_mask();
    for (v, m) in p.iter_mut().zip(&mask) {
        if *m {
            *v = r.random_range(-1.0..1.0);
        }
    }
    if kind == DiffusionKind::BasisCone {
        let nd = model.num_drift_params();
        for v in &mut p[nd..] {
            *v = r.random_range(0.2..1.5);
        }
    }
    model.set_params(&p).unwrap();
    let phi = if r.random_bool(0.5) {
        Intervention {
            targets: vec![r.random_range(0..d)],
            shift: vec![r.random_range(-1.0..1.0)],
            log_scale: vec![r.random_range(-0.3..0.3)],
        }
    } else {
        Intervention::identity()
    };
    (model, phi)
}

pub fn random_mlp(r: &mut impl Rng, d: usize, hidden: usize) -> (SdeModel, Intervention) {
    let mut model = SdeModel::mlp(d, hidden, DiffusionKind::DiagExp, r.random());
    let mut p = model.params();
    let mask = model.trainable_mask();
    for (v, m) in p.iter_mut().zip(&mask) {
        if *m {
            *v += r.random_range(-0.3..0.3);
        }
    }
    model.set_params(&p).unwrap();
    let phi = Intervention {
        targets: vec![r.random_range(0..d)],
        shift: vec![r.random_range(-1.0..1.0)],
        log_scale: vec![r.random_range(-0.3..0.3)],
    };
    (model, phi)
}

/// Linear drift over an arbitrary basis and a cone diffusion, for the quadratic form tests.
pub fn cone_model(
    d: usize,
    features: FeatureBasis,
    diffusion: DiffusionBasis,
    theta: &[f64],
) -> SdeModel {
    let l = features.len();
    let weights = theta[..d * l].chunks(l).map(|c| c.to_vec()).collect();
    SdeModel::linear_with_basis(
        d,
        features,
        weights,
        Diffusion::BasisCone {
            basis: diffusion,
            weights: theta[d * l..].to_vec(),
        },
    )
    .unwrap()
}

fn shifted(x: &[f64], i: usize, h: f64) -> Vec<f64> {
    let mut z = x.to_vec();
    z[i] += h;
    z
}

/// Central-difference gradient of a scalar function.
pub fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        (f(&shifted(x, i, h)) - f(&shifted(x, i, -h))) / (2.0 * h)
    })
}

/// Central-difference Jacobian `J[i][j] = ∂ g_i / ∂ x_j`.
pub fn fd_jacobian(g: &dyn Fn(&[f64]) -> DVector<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = g(x).len();
    let mut j = DMatrix::zeros(n, x.len());
    for c in 0..x.len() {
        let col = (g(&shifted(x, c, h)) - g(&shifted(x, c, -h))) / (2.0 * h);
        j.set_column(c, &col);
    }
    j
}

/// Central-difference Hessian from function values only.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    DMatrix::from_fn(d, d, |i, j| {
        let pp = f(&shifted(&shifted(x, i, h), j, h));
        let pm = f(&shifted(&shifted(x, i, h), j, -h));
        let mp = f(&shifted(&shifted(x, i, -h), j, h));
        let mm = f(&shifted(&shifted(x, i, -h), j, -h));
        (pp - pm - mp + mm) / (4.0 * h * h)
    })
}

/// The Stein operator `S g = 2 <b, g> + tr(a ∇g)` applied to the matrix kernel
/// `k(x, y) I` in both arguments, with every derivative taken by finite differences
/// of `k` itself.
pub fn skds_pair_oracle(
    model: &SdeModel,
    phi: &Intervention,
    kernel: &KernelSpec,
    x: &[f64],
    y: &[f64],
) -> f64 {
    let h = 1e-4;
    let b = |z: &[f64]| model.drift_eval(z, phi).unwrap();
    let a = |z: &[f64]| model.diffusion_a_eval(z, phi).unwrap();
    let (bx, ax) = (b(x), a(x));
    // S applied in x to column c of k I, as a vector field of y indexed by c.
    let inner = |yy: &[f64]| -> DVector<f64> {
        let k = kernel.value(x, yy).unwrap();
        let gx = fd_grad(&|xx: &[f64]| kernel.value(xx, yy).unwrap(), x, h);
        &bx * (2.0 * k) + &ax * gx
    };
    let r = inner(y);
    let jac = fd_jacobian(&inner, y, h);
    2.0 * b(y).dot(&r) + (a(y) * jac).trace()
}

/// The generator `L f = <b, ∇f> + ½ tr(a ∇²f)` applied to `k` in `y`, then in `x`,
/// all by nested finite differences of kernel values. The outer differences are
/// Richardson-extrapolated over steps `h` and `h / 2`.
pub fn kds_pair_oracle(
    model: &SdeModel,
    phi: &Intervention,
    kernel: &KernelSpec,
    x: &[f64],
    y: &[f64],
) -> f64 {
    let coarse = kds_pair_oracle_steps(model, phi, kernel, x, y, 1e-3, 1e-2);
    let fine = kds_pair_oracle_steps(model, phi, kernel, x, y, 1e-3, 5e-3);
    (4.0 * fine - coarse) / 3.0
}

pub fn kds_pair_oracle_steps(
    model: &SdeModel,
    phi: &Intervention,
    kernel: &KernelSpec,
    x: &[f64],
    y: &[f64],
    h_in: f64,
    h_out: f64,
) -> f64 {
    let b = |z: &[f64]| model.drift_eval(z, phi).unwrap();
    let a = |z: &[f64]| model.diffusion_a_eval(z, phi).unwrap();
    let (by, ay) = (b(y), a(y));
    let ly = |xx: &[f64]| -> f64 {
        let f = |yy: &[f64]| kernel.value(xx, yy).unwrap();
        by.dot(&fd_grad(&f, y, h_in)) + 0.5 * (&ay * fd_hessian(&f, y, h_in)).trace()
    };
    b(x).dot(&fd_grad(&ly, x, h_out)) + 0.5 * (a(x) * fd_hessian(&ly, x, h_out)).trace()
}

/// Minimum over all permutations (Heap's algorithm) of the mean Euclidean
/// distance between matched points.
pub fn brute_force_w2(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|x| {
            b.iter()
                .map(|y| {
                    x.iter()
                        .zip(y)
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
    let mut best = total(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(total(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

/// Lower-tail p-value of the signed-rank statistic by listing all `2^n` sign
/// patterns of the (mid)ranks of `|diffs|`. Zero differences must already be removed.
pub fn signed_rank_enumeration(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let ranks: Vec<f64> = diffs
        .iter()
        .map(|d| {
            let less = diffs.iter().filter(|e| e.abs() < d.abs()).count() as f64;
            let equal = diffs.iter().filter(|e| e.abs() == d.abs()).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let mut below = 0u64;
    for mask in 0u64..(1 << n) {
        let t: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        if t <= observed + 1e-9 {
            below += 1;
        }
    }
    below as f64 / (1u64 << n) as f64
}

/// Kolmogorov-Smirnov distance of a sample to the uniform law on [0, 1].
pub fn ks_uniform(p: &[f64]) -> f64 {
    let mut v = p.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

/// Spectral radius by Gelfand's formula `lim ‖W^k‖^{1/k}`.
pub fn gelfand_radius(w: &DMatrix<f64>) -> f64 {
    // repeated squaring with the scale kept in log space
    let mut p = w.clone();
    let mut log_norm = 0.0;
    let mut k = 1.0;
    for _ in 0..12 {
        p = &p * &p;
        log_norm *= 2.0;
        k *= 2.0;
        let s = p.norm();
        if s == 0.0 {
            return 0.0;
        }
        log_norm += s.ln();
        p /= s;
    }
    (log_norm / k).exp()
}
