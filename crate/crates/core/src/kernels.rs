//! Scalar positive-definite kernels and the derivative contractions used by
//! the discrepancy losses.
//!
//! Three families are provided:
//!
//! * `rbf`:        `exp(-|x-y|^2 / (2 s^2))`
//! * `tilted_rbf`: `rbf(x, y) / (w(x) w(y))`
//! * `imq_plus`:   `(1 / w(x-y) + 1 + <x, y>) / (w(x) w(y))`
//!
//! with `w(z) = (1 + |z|^2)^{1/2}`. The tilted families are written as
//! `u(x) u(y) h(x, y)` with `u = 1 / w`, and all first and second derivatives
//! follow from the product rule applied to that factorization.
//!
//! Derivative conventions: `cross_hessian(x, y)[(l, i)] = d^2 k / dx_l dy_i`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Rbf,
    TiltedRbf,
    ImqPlus,
}

impl KernelFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelFamily::Rbf => "rbf",
            KernelFamily::TiltedRbf => "tilted_rbf",
            KernelFamily::ImqPlus => "imq_plus",
        }
    }

    pub fn uses_bandwidth(&self) -> bool {
        !matches!(self, KernelFamily::ImqPlus)
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(KernelFamily::Rbf),
            "tilted_rbf" => Ok(KernelFamily::TiltedRbf),
            "imq_plus" => Ok(KernelFamily::ImqPlus),
            other => invalid(format!("unknown kernel family {other:?}")),
        }
    }
}

/// Bandwidth selection as it appears in configuration: a fixed length-scale
/// or the string `"median"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    Named(BandwidthRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Median,
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Named(BandwidthRule::Median)
    }
}

impl FromStr for Bandwidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "median" {
            return Ok(Bandwidth::Named(BandwidthRule::Median));
        }
        s.parse::<f64>().map(Bandwidth::Fixed).map_err(|_| {
            Error::InvalidInput(format!(
                "bandwidth must be a number or \"median\", got {s:?}"
            ))
        })
    }
}

impl Bandwidth {
    /// Resolve to a length-scale, computing the median heuristic on `data` if requested.
    pub fn resolve(&self, data: &Dataset) -> Result<f64> {
        match self {
            Bandwidth::Fixed(v) => Ok(*v),
            Bandwidth::Named(BandwidthRule::Median) => median_bandwidth(data),
        }
    }
}

/// Median pairwise Euclidean distance over (at most the first 1000) samples.
pub fn median_bandwidth(data: &Dataset) -> Result<f64> {
    let n = data.n().min(1000);
    if n < 2 {
        return Err(Error::InsufficientData(
            "median heuristic needs at least two samples".into(),
        ));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(data.row(i), data.row(j)).sqrt());
        }
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let med = dists[dists.len() / 2];
    if med > 0.0 && med.is_finite() {
        Ok(med)
    } else {
        Ok(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Length-scale of the Gaussian factor; ignored by `imq_plus`.
    pub bandwidth: f64,
    pub dim: usize,
}

/// First and second derivatives of `k` at one pair, computed together.
#[derive(Debug, Clone)]
pub struct KernelDerivs {
    pub value: f64,
    pub grad_x: DVector<f64>,
    pub grad_y: DVector<f64>,
    pub cross_hessian: DMatrix<f64>,
}

/// Reusable storage for [`KernelSpec::derivs_into`]; `hxy` is row-major,
/// `hxy[l * d + i] = ∂²k / ∂x_l ∂y_i`.
#[derive(Debug, Clone, Default)]
pub(crate) struct DerivBuf {
    pub value: f64,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub hxy: Vec<f64>,
    r: Vec<f64>,
}

impl DerivBuf {
    fn resize(&mut self, d: usize) {
        if self.r.len() != d {
            self.gx = vec![0.0; d];
            self.gy = vec![0.0; d];
            self.hxy = vec![0.0; d * d];
            self.r = vec![0.0; d];
        }
    }
}

/// The four contractions of kernel derivatives needed by the KDS closed form.
#[derive(Debug, Clone)]
pub struct HighOrder {
    /// `tr(a_y ∇_y∇_y k)`
    pub t_y: f64,
    /// `∇_x tr(a_y ∇_y∇_y k)`
    pub grad_x_t_y: DVector<f64>,
    /// `∇_y tr(a_x ∇_x∇_x k)`
    pub grad_y_t_x: DVector<f64>,
    /// `tr(a_x ∇_x∇_x tr(a_y ∇_y∇_y k))`
    pub tt: f64,
    /// False when the nested finite-difference fallback produced the result.
    pub analytic: bool,
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// `u(z) = (1 + |z|^2)^{-1/2}` with its gradient and Hessian.
struct Weight {
    u: f64,
    grad: DVector<f64>,
    hess: Option<DMatrix<f64>>,
}

fn weight(z: &[f64], with_hessian: bool) -> Weight {
    let d = z.len();
    let u = (1.0 + dot(z, z)).powf(-0.5);
    let u3 = u * u * u;
    let grad = DVector::from_iterator(d, z.iter().map(|zi| -zi * u3));
    let hess = with_hessian.then(|| {
        let u5 = u3 * u * u;
        DMatrix::from_fn(d, d, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            -u3 * delta + 3.0 * u5 * z[i] * z[j]
        })
    });
    Weight { u, grad, hess }
}

/// Derivatives of the unweighted base factor `h(x, y)`.
struct Base {
    h: f64,
    gx: DVector<f64>,
    gy: DVector<f64>,
    hxy: DMatrix<f64>,
    hyy: Option<DMatrix<f64>>,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return invalid("kernel dimension must be positive");
        }
        if family.uses_bandwidth() && !(bandwidth.is_finite() && bandwidth > 0.0) {
            return invalid(format!("bandwidth must be finite and > 0, got {bandwidth}"));
        }
        let bandwidth = if family.uses_bandwidth() {
            bandwidth
        } else {
            1.0
        };
        Ok(Self {
            family,
            bandwidth,
            dim,
        })
    }

    pub fn rbf(bandwidth: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Rbf, bandwidth, dim)
    }

    pub(crate) fn check(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != self.dim || y.len() != self.dim {
            return invalid(format!(
                "kernel expects dimension {}, got {} and {}",
                self.dim,
                x.len(),
                y.len()
            ));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return invalid("kernel arguments must be finite");
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check(x, y)?;
        Ok(self.value_unchecked(x, y))
    }

    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        self.check(x, y)?;
        Ok(self.derivs_unchecked(x, y).grad_x)
    }

    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<DVector<f64>> {
        self.check(x, y)?;
        Ok(self.derivs_unchecked(x, y).grad_y)
    }

    /// `∇_x ∇_y k(x, y)`, entry `(l, i)` = `d^2 k / dx_l dy_i`.
    pub fn cross_hessian(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x, y)?;
        Ok(self.derivs_unchecked(x, y).cross_hessian)
    }

    /// `∇_y ∇_y k(x, y)`.
    pub fn hessian_yy(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x, y)?;
        Ok(self.hessian_yy_unchecked(x, y))
    }

    pub fn derivs(&self, x: &[f64], y: &[f64]) -> Result<KernelDerivs> {
        self.check(x, y)?;
        Ok(self.derivs_unchecked(x, y))
    }

    pub(crate) fn value_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let s = self.bandwidth * self.bandwidth;
        match self.family {
            KernelFamily::Rbf => (-sq_dist(x, y) / (2.0 * s)).exp(),
            KernelFamily::TiltedRbf => {
                let ux = (1.0 + dot(x, x)).powf(-0.5);
                let uy = (1.0 + dot(y, y)).powf(-0.5);
                ux * uy * (-sq_dist(x, y) / (2.0 * s)).exp()
            }
            KernelFamily::ImqPlus => {
                let ux = (1.0 + dot(x, x)).powf(-0.5);
                let uy = (1.0 + dot(y, y)).powf(-0.5);
                let m = (1.0 + sq_dist(x, y)).powf(-0.5);
                ux * uy * (m + 1.0 + dot(x, y))
            }
        }
    }

    fn base(&self, x: &[f64], y: &[f64], with_hyy: bool) -> Base {
        let d = x.len();
        let r: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        match self.family {
            KernelFamily::Rbf | KernelFamily::TiltedRbf => {
                let s = self.bandwidth * self.bandwidth;
                let g = (-dot(&r, &r) / (2.0 * s)).exp();
                let gx = DVector::from_iterator(d, r.iter().map(|ri| -ri / s * g));
                let gy = -&gx;
                let hxy = DMatrix::from_fn(d, d, |l, i| {
                    let delta = if l == i { 1.0 } else { 0.0 };
                    (delta / s - r[l] * r[i] / (s * s)) * g
                });
                let hyy = with_hyy.then(|| -&hxy);
                Base {
                    h: g,
                    gx,
                    gy,
                    hxy,
                    hyy,
                }
            }
            KernelFamily::ImqPlus => {
                let m = (1.0 + dot(&r, &r)).powf(-0.5);
                let m3 = m * m * m;
                let m5 = m3 * m * m;
                let h = m + 1.0 + dot(x, y);
                let gx = DVector::from_fn(d, |i, _| -r[i] * m3 + y[i]);
                let gy = DVector::from_fn(d, |i, _| r[i] * m3 + x[i]);
                // d^2 m / dr dr
                let mrr = DMatrix::from_fn(d, d, |l, i| {
                    let delta = if l == i { 1.0 } else { 0.0 };
                    -m3 * delta + 3.0 * m5 * r[l] * r[i]
                });
                let hxy = DMatrix::identity(d, d) - &mrr;
                let hyy = with_hyy.then_some(mrr);
                Base {
                    h,
                    gx,
                    gy,
                    hxy,
                    hyy,
                }
            }
        }
    }

    pub(crate) fn derivs_unchecked(&self, x: &[f64], y: &[f64]) -> KernelDerivs {
        let b = self.base(x, y, false);
        if self.family == KernelFamily::Rbf {
            return KernelDerivs {
                value: b.h,
                grad_x: b.gx,
                grad_y: b.gy,
                cross_hessian: b.hxy,
            };
        }
        let wx = weight(x, false);
        let wy = weight(y, false);
        let value = wx.u * wy.u * b.h;
        let grad_x = (&wx.grad * b.h + &b.gx * wx.u) * wy.u;
        let grad_y = (&wy.grad * b.h + &b.gy * wy.u) * wx.u;
        let cross_hessian = &wx.grad * wy.grad.transpose() * b.h
            + &wx.grad * b.gy.transpose() * wy.u
            + &b.gx * wy.grad.transpose() * wx.u
            + &b.hxy * (wx.u * wy.u);
        KernelDerivs {
            value,
            grad_x,
            grad_y,
            cross_hessian,
        }
    }

    /// Same quantities as [`KernelSpec::derivs`] written into reusable buffers.
    pub(crate) fn derivs_into(&self, x: &[f64], y: &[f64], out: &mut DerivBuf) {
        let d = x.len();
        out.resize(d);
        for i in 0..d {
            out.r[i] = x[i] - y[i];
        }
        let r = &out.r;
        let rr = dot(r, r);
        let h = match self.family {
            KernelFamily::Rbf | KernelFamily::TiltedRbf => {
                let inv_s = 1.0 / (self.bandwidth * self.bandwidth);
                let g = (-0.5 * rr * inv_s).exp();
                let gs = g * inv_s;
                for l in 0..d {
                    out.gx[l] = -r[l] * gs;
                    out.gy[l] = r[l] * gs;
                    let rl = r[l] * inv_s * gs;
                    for i in 0..d {
                        out.hxy[l * d + i] = -rl * r[i];
                    }
                    out.hxy[l * d + l] += gs;
                }
                g
            }
            KernelFamily::ImqPlus => {
                let m = (1.0 + rr).powf(-0.5);
                let m3 = m * m * m;
                let m5 = m3 * m * m;
                for l in 0..d {
                    out.gx[l] = -r[l] * m3 + y[l];
                    out.gy[l] = r[l] * m3 + x[l];
                    for i in 0..d {
                        let delta = if l == i { 1.0 } else { 0.0 };
                        out.hxy[l * d + i] = delta + m3 * delta - 3.0 * m5 * r[l] * r[i];
                    }
                }
                m + 1.0 + dot(x, y)
            }
        };
        if self.family == KernelFamily::Rbf {
            out.value = h;
            return;
        }
        let ux = (1.0 + dot(x, x)).powf(-0.5);
        let uy = (1.0 + dot(y, y)).powf(-0.5);
        let (ux3, uy3) = (ux * ux * ux, uy * uy * uy);
        for l in 0..d {
            let wxl = -x[l] * ux3;
            for i in 0..d {
                let wyi = -y[i] * uy3;
                out.hxy[l * d + i] = wxl * wyi * h
                    + wxl * out.gy[i] * uy
                    + out.gx[l] * wyi * ux
                    + out.hxy[l * d + i] * ux * uy;
            }
        }
        for l in 0..d {
            out.gx[l] = (-x[l] * ux3 * h + out.gx[l] * ux) * uy;
            out.gy[l] = (-y[l] * uy3 * h + out.gy[l] * uy) * ux;
        }
        out.value = ux * uy * h;
    }

    pub(crate) fn hessian_yy_unchecked(&self, x: &[f64], y: &[f64]) -> DMatrix<f64> {
        let b = self.base(x, y, true);
        let hyy = b.hyy.expect("requested");
        if self.family == KernelFamily::Rbf {
            return hyy;
        }
        let wx = weight(x, false);
        let wy = weight(y, true);
        let outer = &wy.grad * b.gy.transpose();
        (wy.hess.expect("requested") * b.h + &outer + outer.transpose() + hyy * wy.u) * wx.u
    }

    /// Contractions of third- and fourth-order derivatives with `a_x`, `a_y`.
    ///
    /// Analytic for `rbf`; other families use central differences of the
    /// analytic second-order contraction (step `1e-3 (1 + |x|_inf)`).
    pub fn high_order(
        &self,
        x: &[f64],
        y: &[f64],
        a_x: &DMatrix<f64>,
        a_y: &DMatrix<f64>,
    ) -> Result<HighOrder> {
        self.check(x, y)?;
        for a in [a_x, a_y] {
            check_symmetric(a, self.dim)?;
        }
        Ok(self.high_order_unchecked(x, y, a_x, a_y))
    }

    /// Like [`high_order`](Self::high_order) but refuses the finite-difference fallback.
    pub fn high_order_analytic(
        &self,
        x: &[f64],
        y: &[f64],
        a_x: &DMatrix<f64>,
        a_y: &DMatrix<f64>,
    ) -> Result<HighOrder> {
        if self.family != KernelFamily::Rbf {
            return Err(Error::UnsupportedKernel(self.family.to_string()));
        }
        self.high_order(x, y, a_x, a_y)
    }

    pub(crate) fn high_order_unchecked(
        &self,
        x: &[f64],
        y: &[f64],
        a_x: &DMatrix<f64>,
        a_y: &DMatrix<f64>,
    ) -> HighOrder {
        match self.family {
            KernelFamily::Rbf => self.rbf_high_order(x, y, a_x, a_y),
            _ => self.fd_high_order(x, y, a_x, a_y),
        }
    }

    fn rbf_high_order(
        &self,
        x: &[f64],
        y: &[f64],
        a_x: &DMatrix<f64>,
        a_y: &DMatrix<f64>,
    ) -> HighOrder {
        let s = self.bandwidth * self.bandwidth;
        let s2 = s * s;
        let r = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(a, b)| a - b));
        let k = (-r.norm_squared() / (2.0 * s)).exp();
        let ax_r = a_x * &r;
        let ay_r = a_y * &r;
        let q_x = r.dot(&ax_r) / s2 - a_x.trace() / s;
        let q_y = r.dot(&ay_r) / s2 - a_y.trace() / s;
        let grad_x_t_y = (&ay_r * (2.0 / s2) - &r * (q_y / s)) * k;
        let grad_y_t_x = (&r * (q_x / s) - &ax_r * (2.0 / s2)) * k;
        let tr_axay = a_x.component_mul(a_y).sum();
        let tt = k * (2.0 * tr_axay / s2 - 4.0 * ax_r.dot(&ay_r) / (s2 * s) + q_x * q_y);
        HighOrder {
            t_y: q_y * k,
            grad_x_t_y,
            grad_y_t_x,
            tt,
            analytic: true,
        }
    }

    fn fd_high_order(
        &self,
        x: &[f64],
        y: &[f64],
        a_x: &DMatrix<f64>,
        a_y: &DMatrix<f64>,
    ) -> HighOrder {
        let d = x.len();
        // t_y as a function of x, and t_x as a function of y (via symmetry of k).
        let t_y = |xx: &[f64]| self.hessian_yy_unchecked(xx, y).component_mul(a_y).sum();
        let t_x = |yy: &[f64]| self.hessian_yy_unchecked(yy, x).component_mul(a_x).sum();
        let inf = |v: &[f64]| v.iter().fold(0.0_f64, |m, z| m.max(z.abs()));
        let hx = 1e-3 * (1.0 + inf(x));
        let hy = 1e-3 * (1.0 + inf(y));

        let t0 = t_y(x);
        let mut xp = x.to_vec();
        let mut grad_x_t_y = DVector::zeros(d);
        let mut f_plus = vec![0.0; d];
        let mut f_minus = vec![0.0; d];
        for i in 0..d {
            xp[i] = x[i] + hx;
            f_plus[i] = t_y(&xp);
            xp[i] = x[i] - hx;
            f_minus[i] = t_y(&xp);
            xp[i] = x[i];
            grad_x_t_y[i] = (f_plus[i] - f_minus[i]) / (2.0 * hx);
        }
        let mut grad_y_t_x = DVector::zeros(d);
        let mut yp = y.to_vec();
        for i in 0..d {
            yp[i] = y[i] + hy;
            let fp = t_x(&yp);
            yp[i] = y[i] - hy;
            let fm = t_x(&yp);
            yp[i] = y[i];
            grad_y_t_x[i] = (fp - fm) / (2.0 * hy);
        }
        // tr(a_x ∇_x∇_x t_y) from a central-difference Hessian.
        let mut tt = 0.0;
        for i in 0..d {
            let hii = (f_plus[i] - 2.0 * t0 + f_minus[i]) / (hx * hx);
            tt += a_x[(i, i)] * hii;
            for j in (i + 1)..d {
                if a_x[(i, j)] == 0.0 {
                    continue;
                }
                let mut eval = |si: f64, sj: f64| {
                    xp[i] = x[i] + si * hx;
                    xp[j] = x[j] + sj * hx;
                    let v = t_y(&xp);
                    xp[i] = x[i];
                    xp[j] = x[j];
                    v
                };
                let hij = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                    / (4.0 * hx * hx);
                tt += 2.0 * a_x[(i, j)] * hij;
            }
        }
        HighOrder {
            t_y: t0,
            grad_x_t_y,
            grad_y_t_x,
            tt,
            analytic: false,
        }
    }

    /// Gram matrix over the rows of `data`.
    pub fn gram(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        if data.d() != self.dim {
            return invalid("dataset dimension does not match kernel");
        }
        let n = data.n();
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.value_unchecked(data.row(i), data.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        Ok(g)
    }
}

pub(crate) fn check_symmetric(a: &DMatrix<f64>, d: usize) -> Result<()> {
    if a.nrows() != d || a.ncols() != d {
        return invalid(format!(
            "expected a {d}x{d} matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        ));
    }
    let scale = a.amax().max(1.0);
    for i in 0..d {
        for j in (i + 1)..d {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 * scale {
                return invalid("contraction matrix must be symmetric");
            }
        }
    }
    Ok(())
}
