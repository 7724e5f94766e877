use nalgebra::{DMatrix, DVector};

use super::{
    check_inputs, coefficients, ordering, reduce_grad, reduce_values, LossGrad, LossOptions,
    PairSet, PairTerm,
};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::kernels::{KernelDerivs, KernelSpec};
use crate::models::{Intervention, SdeModel};

/// `S_1 S_2 K(x, y)` for `K = k I_d`:
///
/// ```text
/// 4 <b(x), b(y)> k + 2 <b(x), a(y) ∇_y k> + 2 <b(y), a(x) ∇_x k> + tr(a(x) ∇_x∇_y k a(y))
/// ```
pub(crate) fn pair_value(
    kd: &KernelDerivs,
    bx: &DVector<f64>,
    by: &DVector<f64>,
    ax: &DMatrix<f64>,
    ay: &DMatrix<f64>,
) -> f64 {
    let h_ay = &kd.cross_hessian * ay;
    4.0 * bx.dot(by) * kd.value
        + 2.0 * bx.dot(&(ay * &kd.grad_y))
        + 2.0 * by.dot(&(ax * &kd.grad_x))
        + ax.component_mul(&h_ay.transpose()).sum()
}

pub(crate) fn pair_term(
    kd: &KernelDerivs,
    bx: &DVector<f64>,
    by: &DVector<f64>,
    ax: &DMatrix<f64>,
    ay: &DMatrix<f64>,
) -> PairTerm {
    let k = kd.value;
    let ay_gy = ay * &kd.grad_y;
    let ax_gx = ax * &kd.grad_x;
    let h_ay = &kd.cross_hessian * ay;
    let ax_h = ax * &kd.cross_hessian;
    let value = 4.0 * bx.dot(by) * k
        + 2.0 * bx.dot(&ay_gy)
        + 2.0 * by.dot(&ax_gx)
        + ax.component_mul(&h_ay.transpose()).sum();
    PairTerm {
        value,
        d_bx: by * (4.0 * k) + ay_gy * 2.0,
        d_by: bx * (4.0 * k) + ax_gx * 2.0,
        d_ax: by * kd.grad_x.transpose() * 2.0 + h_ay.transpose(),
        d_ay: bx * kd.grad_y.transpose() * 2.0 + ax_h.transpose(),
    }
}

pub fn skds_pair(
    model: &SdeModel,
    phi: &Intervention,
    kernel: &KernelSpec,
    x: &[f64],
    y: &[f64],
) -> Result<PairTerm> {
    model.validate()?;
    let bx = model.drift_eval(x, phi)?;
    let by = model.drift_eval(y, phi)?;
    let ax = model.diffusion_a_eval(x, phi)?;
    let ay = model.diffusion_a_eval(y, phi)?;
    let kd = kernel.derivs(x, y)?;
    Ok(pair_term(&kd, &bx, &by, &ax, &ay))
}

/// Empirical SKDS of `model` against the samples in `data`.
pub fn skds_empirical(
    model: &SdeModel,
    phi: &Intervention,
    kernel: &KernelSpec,
    data: &Dataset,
    opts: impl Into<LossOptions>,
) -> Result<f64> {
    let opts = opts.into();
    check_inputs(model, phi, kernel, data)?;
    let pairs = PairSet::new(data.n(), opts.estimator)?;
    let order = ordering(data.n(), opts.shuffle);
    let co = coefficients(model, phi, &data.select(&order));
    Ok(reduce_values(&pairs, opts.parallel, |i, j| {
        let kd = kernel.derivs_unchecked(data.row(order[i]), data.row(order[j]));
        pair_value(&kd, &co[i].b, &co[j].b, &co[i].a, &co[j].a)
    }))
}

/// Empirical SKDS and its gradient w.r.t. model and intervention parameters.
pub fn skds_grad(
    model: &SdeModel,
    phi: &Intervention,
    kernel: &KernelSpec,
    data: &Dataset,
    opts: impl Into<LossOptions>,
) -> Result<LossGrad> {
    let opts = opts.into();
    check_inputs(model, phi, kernel, data)?;
    let pairs = PairSet::new(data.n(), opts.estimator)?;
    let order = ordering(data.n(), opts.shuffle);
    let co = coefficients(model, phi, &data.select(&order));
    Ok(reduce_grad(
        model,
        phi,
        data,
        &order,
        &pairs,
        opts.parallel,
        |i, j| {
            let kd = kernel.derivs_unchecked(data.row(order[i]), data.row(order[j]));
            pair_term(&kd, &co[i].b, &co[j].b, &co[i].a, &co[j].a)
        },
    ))
}

fn check_representer(
    model: &SdeModel,
    phi: &Intervention,
    kernel: &KernelSpec,
    data: &Dataset,
    y: &[f64],
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InsufficientData(
            "representer needs at least one sample".into(),
        ));
    }
    check_inputs(model, phi, kernel, data)?;
    kernel.check(y, y)?;
    if y.len() != model.d {
        return invalid("query point has the wrong dimension");
    }
    Ok(())
}

/// Empirical representer `ĝ(y) = mean_i [2 b(x_i) k(x_i, y) + a(x_i) ∇_x k(x_i, y)]`.
pub fn representer_eval(
    model: &SdeModel,
    phi: &Intervention,
    kernel: &KernelSpec,
    data: &Dataset,
    y: &[f64],
) -> Result<DVector<f64>> {
    check_representer(model, phi, kernel, data, y)?;
    let mut g = DVector::zeros(model.d);
    for x in data.rows() {
        let kd = kernel.derivs_unchecked(x, y);
        let b = model.drift_unchecked(x, phi);
        let a = model.diffusion_unchecked(x, phi);
        g += b * (2.0 * kd.value) + a * kd.grad_x;
    }
    Ok(g / data.n() as f64)
}

/// Jacobian of the representer at `y`, entry `(i, j) = ∂ĝ_j / ∂y_i`.
pub fn representer_jacobian(
    model: &SdeModel,
    phi: &Intervention,
    kernel: &KernelSpec,
    data: &Dataset,
    y: &[f64],
) -> Result<DMatrix<f64>> {
    check_representer(model, phi, kernel, data, y)?;
    let d = model.d;
    let mut jac = DMatrix::zeros(d, d);
    for x in data.rows() {
        let kd = kernel.derivs_unchecked(x, y);
        let b = model.drift_unchecked(x, phi);
        let a = model.diffusion_unchecked(x, phi);
        jac += &kd.grad_y * b.transpose() * 2.0 + (a * &kd.cross_hessian).transpose();
    }
    Ok(jac / data.n() as f64)
}
