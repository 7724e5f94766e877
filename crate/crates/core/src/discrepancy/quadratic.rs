use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{ordering, LossOptions, PairSet};
use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::kernels::{DerivBuf, KernelSpec};
use crate::models::{Diffusion, DiffusionBasis, FeatureBasis, SdeModel};

/// Empirical loss of the linear parametrization written as `θ^T R̂ θ`.
///
/// `θ` stacks the drift matrix row by row (`θ[j * l + p] = B[j][p]`) followed
/// by the `m` cone weights `A_i`. The factor 2 of the drift term is carried
/// by the drift block of `R̂`, so `θ` holds raw parameters.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub r_hat: DMatrix<f64>,
    pub d: usize,
    pub features: FeatureBasis,
    pub diffusion: DiffusionBasis,
    pub n_pairs: usize,
}

impl QuadraticForm {
    pub fn dim(&self) -> usize {
        self.d * self.features.len() + self.diffusion.len()
    }

    pub fn drift_index(&self, coord: usize, feature: usize) -> usize {
        coord * self.features.len() + feature
    }

    pub fn diffusion_index(&self, i: usize) -> usize {
        self.d * self.features.len() + i
    }

    /// The model whose empirical loss this form represents.
    pub fn linear_model(&self, theta: &[f64]) -> Result<SdeModel> {
        if theta.len() != self.dim() {
            return invalid(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.dim()
            ));
        }
        let l = self.features.len();
        let weights = theta[..self.d * l].chunks(l).map(|r| r.to_vec()).collect();
        SdeModel::linear_with_basis(
            self.d,
            self.features.clone(),
            weights,
            Diffusion::BasisCone {
                basis: self.diffusion.clone(),
                weights: theta[self.d * l..].to_vec(),
            },
        )
    }

    /// Smallest and largest eigenvalue of `R̂`.
    pub fn eigen_range(&self) -> (f64, f64) {
        let e = SymmetricEigen::new(self.r_hat.clone()).eigenvalues;
        (e.min(), e.max())
    }
}

fn check(
    features: &FeatureBasis,
    diffusion: &DiffusionBasis,
    kernel: &KernelSpec,
    data: &Dataset,
) -> Result<()> {
    let d = kernel.dim;
    features.validate(d)?;
    diffusion.validate(d)?;
    if data.d() != d {
        return invalid("dataset dimension does not match kernel");
    }
    Ok(())
}

/// Sum of per-pair contributions, sequentially or per block added in order.
fn accumulate<F>(dim: usize, pairs: &PairSet, parallel: bool, add: F) -> DMatrix<f64>
where
    F: Fn(&mut DMatrix<f64>, usize, usize) + Sync,
{
    pairs.fold(parallel, || DMatrix::zeros(dim, dim), add, |a, b| *a += b)
}

fn finish(
    mut acc: DMatrix<f64>,
    weight: f64,
    d: usize,
    features: &FeatureBasis,
    diffusion: &DiffusionBasis,
    n_pairs: usize,
) -> QuadraticForm {
    acc = (&acc + acc.transpose()) * (0.5 * weight);
    QuadraticForm {
        r_hat: acc,
        d,
        features: features.clone(),
        diffusion: diffusion.clone(),
        n_pairs,
    }
}

/// Assemble `R̂` for the SKDS, averaging `½(M + M^T)` over the estimator's pairs.
pub fn build_r_hat(
    features: &FeatureBasis,
    diffusion: &DiffusionBasis,
    kernel: &KernelSpec,
    data: &Dataset,
    opts: impl Into<LossOptions>,
) -> Result<QuadraticForm> {
    let opts = opts.into();
    check(features, diffusion, kernel, data)?;
    let pairs = PairSet::new(data.n(), opts.estimator)?;
    let order = ordering(data.n(), opts.shuffle);
    let d = kernel.dim;
    let l = features.len();
    let m = diffusion.len();
    let off = d * l;
    let feats: Vec<Vec<f64>> = order.iter().map(|&r| features.eval(data.row(r))).collect();
    // cone directions do not depend on the state
    let vs = diffusion.eval(data.row(0), d);
    let add = |acc: &mut SkdsStats, i: usize, j: usize| {
        let buf = &mut acc.buf;
        kernel.derivs_into(data.row(order[i]), data.row(order[j]), buf);
        let (jx, jy) = (&feats[i], &feats[j]);
        for p in 0..l {
            let s = buf.value * jx[p];
            for q in 0..l {
                acc.kk[p * l + q] += s * jy[q];
            }
            for e in 0..d {
                acc.jx_gy[p * d + e] += jx[p] * buf.gy[e];
                acc.jy_gx[p * d + e] += jy[p] * buf.gx[e];
            }
        }
        for (h, v) in acc.h.iter_mut().zip(&buf.hxy) {
            *h += v;
        }
    };
    let st = pairs.fold(
        opts.parallel,
        || SkdsStats::new(l, d),
        add,
        |a, b| a.merge(&b),
    );
    let mut acc = DMatrix::zeros(off + m, off + m);
    for c in 0..d {
        for p in 0..l {
            for q in 0..l {
                acc[(c * l + p, c * l + q)] = 4.0 * st.kk[p * l + q];
            }
        }
    }
    let h = DMatrix::from_row_slice(d, d, &st.h);
    for (i, v) in vs.iter().enumerate() {
        for p in 0..l {
            // Σ j(x)_p <v, ∇_y k> and Σ j(y)_p <v, ∇_x k>
            let vy: f64 = (0..d).map(|e| v[e] * st.jx_gy[p * d + e]).sum();
            let vx: f64 = (0..d).map(|e| v[e] * st.jy_gx[p * d + e]).sum();
            for c in 0..d {
                acc[(c * l + p, off + i)] = 2.0 * v[c] * vy;
                acc[(off + i, c * l + p)] = 2.0 * v[c] * vx;
            }
        }
        // tr(v v^T H w w^T) = (v^T H w)(w^T v)
        for (i2, w) in vs.iter().enumerate() {
            acc[(off + i, off + i2)] = v.dot(&(&h * w)) * w.dot(v);
        }
    }
    Ok(finish(
        acc,
        pairs.weight(),
        d,
        features,
        diffusion,
        pairs.len(),
    ))
}

/// Pair sums that determine the SKDS matrix when the cone directions are constant.
struct SkdsStats {
    /// `Σ k j(x) j(y)^T`, l x l
    kk: Vec<f64>,
    /// `Σ j(x) ∇_y k^T`, l x d
    jx_gy: Vec<f64>,
    /// `Σ j(y) ∇_x k^T`, l x d
    jy_gx: Vec<f64>,
    /// `Σ ∇_x∇_y k`, d x d
    h: Vec<f64>,
    buf: DerivBuf,
}

impl SkdsStats {
    fn new(l: usize, d: usize) -> Self {
        Self {
            kk: vec![0.0; l * l],
            jx_gy: vec![0.0; l * d],
            jy_gx: vec![0.0; l * d],
            h: vec![0.0; d * d],
            buf: DerivBuf::default(),
        }
    }

    fn merge(&mut self, o: &Self) {
        for (a, b) in [
            (&mut self.kk, &o.kk),
            (&mut self.jx_gy, &o.jx_gy),
            (&mut self.jy_gx, &o.jy_gx),
            (&mut self.h, &o.h),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Assemble the analogous matrix for the KDS, using the kernel's high-order
/// contractions with the rank-one basis matrices.
pub fn build_r_hat_kds(
    features: &FeatureBasis,
    diffusion: &DiffusionBasis,
    kernel: &KernelSpec,
    data: &Dataset,
    opts: impl Into<LossOptions>,
) -> Result<QuadraticForm> {
    let opts = opts.into();
    check(features, diffusion, kernel, data)?;
    let pairs = PairSet::new(data.n(), opts.estimator)?;
    let order = ordering(data.n(), opts.shuffle);
    let d = kernel.dim;
    let l = features.len();
    let m = diffusion.len();
    let off = d * l;
    let add = |acc: &mut DMatrix<f64>, i: usize, j: usize| {
        let x = data.row(order[i]);
        let y = data.row(order[j]);
        let kd = kernel.derivs_unchecked(x, y);
        let jx = features.eval(x);
        let jy = features.eval(y);
        let vx: Vec<DMatrix<f64>> = diffusion
            .eval(x, d)
            .iter()
            .map(|v| v * v.transpose())
            .collect();
        let vy: Vec<DMatrix<f64>> = diffusion
            .eval(y, d)
            .iter()
            .map(|v| v * v.transpose())
            .collect();
        let h = &kd.cross_hessian;
        for c1 in 0..d {
            for c2 in 0..d {
                let hc = h[(c1, c2)];
                for p in 0..l {
                    let s = hc * jx[p];
                    for q in 0..l {
                        acc[(c1 * l + p, c2 * l + q)] += s * jy[q];
                    }
                }
            }
        }
        for i1 in 0..m {
            for i2 in 0..m {
                let ho = kernel.high_order_unchecked(x, y, &vx[i1], &vy[i2]);
                acc[(off + i1, off + i2)] += 0.25 * ho.tt;
                if i1 == i2 {
                    for c in 0..d {
                        for p in 0..l {
                            acc[(c * l + p, off + i1)] += 0.5 * jx[p] * ho.grad_x_t_y[c];
                            acc[(off + i1, c * l + p)] += 0.5 * jy[p] * ho.grad_y_t_x[c];
                        }
                    }
                }
            }
        }
    };
    let acc = accumulate(off + m, &pairs, opts.parallel, add);
    Ok(finish(
        acc,
        pairs.weight(),
        d,
        features,
        diffusion,
        pairs.len(),
    ))
}

/// `θ^T R̂ θ`.
pub fn skds_quadratic(q: &QuadraticForm, theta: &[f64]) -> Result<f64> {
    if theta.len() != q.dim() {
        return invalid(format!(
            "theta has length {}, expected {}",
            theta.len(),
            q.dim()
        ));
    }
    let t = DVector::from_column_slice(theta);
    Ok(t.dot(&(&q.r_hat * &t)))
}

/// Most negative eigenvalue of `R̂`, the empirical quasiconvexity witness.
pub fn min_eig_sym(q: &QuadraticForm) -> f64 {
    q.eigen_range().0
}
