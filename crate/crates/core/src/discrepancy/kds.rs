use nalgebra::{DMatrix, DVector};

use super::{
    check_inputs, coefficients, ordering, reduce_grad, reduce_values, LossGrad, LossOptions,
    PairSet, PairTerm,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::models::{Intervention, SdeModel};

/// `L_1 L_2 k(x, y)` with the generator `L f = <b, ∇f> + ½ tr(a ∇²f)` applied
/// to both kernel arguments.
pub(crate) fn pair_value(
    kernel: &KernelSpec,
    x: &[f64],
    y: &[f64],
    bx: &DVector<f64>,
    by: &DVector<f64>,
    ax: &DMatrix<f64>,
    ay: &DMatrix<f64>,
) -> f64 {
    let kd = kernel.derivs_unchecked(x, y);
    let ho = kernel.high_order_unchecked(x, y, ax, ay);
    bx.dot(&(&kd.cross_hessian * by))
        + 0.5 * bx.dot(&ho.grad_x_t_y)
        + 0.5 * by.dot(&ho.grad_y_t_x)
        + 0.25 * ho.tt
}

/// Pair term with cotangents. The value is linear in each of `a(x)`, `a(y)`,
/// so their cotangents are read off by contracting with the symmetric
/// elementary matrices through the same high-order kernel contract.
pub(crate) fn pair_term(
    kernel: &KernelSpec,
    x: &[f64],
    y: &[f64],
    bx: &DVector<f64>,
    by: &DVector<f64>,
    ax: &DMatrix<f64>,
    ay: &DMatrix<f64>,
) -> PairTerm {
    let d = bx.len();
    let kd = kernel.derivs_unchecked(x, y);
    let ho = kernel.high_order_unchecked(x, y, ax, ay);
    let h = &kd.cross_hessian;
    let value = bx.dot(&(h * by))
        + 0.5 * bx.dot(&ho.grad_x_t_y)
        + 0.5 * by.dot(&ho.grad_y_t_x)
        + 0.25 * ho.tt;
    let mut d_ax = DMatrix::zeros(d, d);
    let mut d_ay = DMatrix::zeros(d, d);
    let mut e = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            // x side: ½ b(y)·∇_y t_x(E) + ¼ tt(E, a_y)
            let px = kernel.high_order_unchecked(x, y, &e, ay);
            let gx = 0.5 * by.dot(&px.grad_y_t_x) + 0.25 * px.tt;
            let py = kernel.high_order_unchecked(x, y, ax, &e);
            let gy = 0.5 * bx.dot(&py.grad_x_t_y) + 0.25 * py.tt;
            e[(i, j)] = 0.0;
            e[(j, i)] = 0.0;
            if i == j {
                d_ax[(i, i)] = gx;
                d_ay[(i, i)] = gy;
            } else {
                d_ax[(i, j)] = 0.5 * gx;
                d_ax[(j, i)] = 0.5 * gx;
                d_ay[(i, j)] = 0.5 * gy;
                d_ay[(j, i)] = 0.5 * gy;
            }
        }
    }
    PairTerm {
        value,
        d_bx: h * by + &ho.grad_x_t_y * 0.5,
        d_by: h.transpose() * bx + &ho.grad_y_t_x * 0.5,
        d_ax,
        d_ay,
    }
}

fn check_fallback(kernel: &KernelSpec, allow_fallback: bool) -> Result<()> {
    if !allow_fallback && kernel.family != KernelFamily::Rbf {
        return Err(Error::UnsupportedKernel(kernel.family.to_string()));
    }
    Ok(())
}

/// `L_1 L_2 k(x, y)`. Non-`rbf` kernels go through the finite-difference
/// high-order path unless `allow_fallback` is false.
pub fn kds_pair(
    model: &SdeModel,
    phi: &Intervention,
    kernel: &KernelSpec,
    x: &[f64],
    y: &[f64],
    allow_fallback: bool,
) -> Result<f64> {
    check_fallback(kernel, allow_fallback)?;
    model.validate()?;
    let bx = model.drift_eval(x, phi)?;
    let by = model.drift_eval(y, phi)?;
    let ax = model.diffusion_a_eval(x, phi)?;
    let ay = model.diffusion_a_eval(y, phi)?;
    kernel.check(x, y)?;
    Ok(pair_value(kernel, x, y, &bx, &by, &ax, &ay))
}

pub fn kds_empirical(
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
        pair_value(
            kernel,
            data.row(order[i]),
            data.row(order[j]),
            &co[i].b,
            &co[j].b,
            &co[i].a,
            &co[j].a,
        )
    }))
}

pub fn kds_grad(
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
            pair_term(
                kernel,
                data.row(order[i]),
                data.row(order[j]),
                &co[i].b,
                &co[j].b,
                &co[i].a,
                &co[j].a,
            )
        },
    ))
}
