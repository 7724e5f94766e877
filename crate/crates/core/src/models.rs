//! Parametrized drift and diffusion families with shift-scale interventions.
//!
//! Parameters are exposed as a flat vector (`theta`) so that optimizers and
//! finite-difference checks can treat every model the same way. The layout is
//! drift parameters followed by diffusion parameters:
//!
//! * linear drift: `B` row-major (`j * l + p`), i.e. `vec(B^T)`
//! * MLP drift: per coordinate `j`: `[bias, w (h), U row-major (h x d), v (h)]`
//! * `diag_exp` diffusion: log-standard deviations `s` (d)
//! * `basis_cone` diffusion: cone weights `A` (m)
//!
//! Intervention parameters are `[shift (t), log_scale (t)]` over its targets.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Constant,
    Coord(usize),
    Monomial(usize, usize),
    Tanh { w: Vec<f64>, c: f64 },
}

impl Feature {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Feature::Constant => 1.0,
            Feature::Coord(i) => x[*i],
            Feature::Monomial(i, j) => x[*i] * x[*j],
            Feature::Tanh { w, c } => (w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + c).tanh(),
        }
    }

    fn check(&self, d: usize) -> Result<()> {
        let ok = match self {
            Feature::Constant => true,
            Feature::Coord(i) => *i < d,
            Feature::Monomial(i, j) => *i < d && *j < d,
            Feature::Tanh { w, c } => {
                w.len() == d && c.is_finite() && w.iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("feature {self:?} is invalid for dimension {d}"))
        }
    }
}

/// Ordered scalar features `j(x) ∈ R^l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBasis {
    pub entries: Vec<Feature>,
}

impl FeatureBasis {
    /// `{1, x_1, ..., x_d}`.
    pub fn affine(d: usize) -> Self {
        let mut entries = vec![Feature::Constant];
        entries.extend((0..d).map(Feature::Coord));
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.entries.iter().map(|f| f.eval(x)).collect()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.entries.is_empty() {
            return invalid("feature basis must be non-empty");
        }
        self.entries.iter().try_for_each(|f| f.check(d))
    }

    /// Index of the `Coord(i)` feature, if present.
    pub fn coord_index(&self, i: usize) -> Option<usize> {
        self.entries.iter().position(|f| *f == Feature::Coord(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionField {
    Unit(usize),
    Constant(Vec<f64>),
}

impl DiffusionField {
    fn eval(&self, d: usize) -> DVector<f64> {
        match self {
            DiffusionField::Unit(j) => {
                let mut v = DVector::zeros(d);
                v[*j] = 1.0;
                v
            }
            DiffusionField::Constant(c) => DVector::from_column_slice(c),
        }
    }
}

/// Vector fields `v_i` spanning the diffusion cone `a = Σ A_i v_i v_i^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionBasis {
    pub entries: Vec<DiffusionField>,
}

impl DiffusionBasis {
    pub fn unit_coordinates(d: usize) -> Self {
        Self {
            entries: (0..d).map(DiffusionField::Unit).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn eval(&self, _x: &[f64], d: usize) -> Vec<DVector<f64>> {
        self.entries.iter().map(|v| v.eval(d)).collect()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        for e in &self.entries {
            match e {
                DiffusionField::Unit(j) if *j >= d => {
                    return invalid("unit field index out of range")
                }
                DiffusionField::Constant(c) if c.len() != d || c.iter().any(|v| !v.is_finite()) => {
                    return invalid(
                        "constant diffusion field has wrong length or non-finite entries",
                    )
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDrift {
    pub basis: FeatureBasis,
    /// `B`, d rows of length l.
    pub weights: Vec<Vec<f64>>,
    /// Entries that never change; their value is whatever `weights` holds.
    pub frozen: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpUnit {
    pub bias: f64,
    pub w: Vec<f64>,
    /// Hidden weights, h rows of length d; column `j` of unit `j` is pinned to zero.
    pub u: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpDrift {
    pub hidden: usize,
    pub units: Vec<MlpUnit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    Linear(LinearDrift),
    Mlp(MlpDrift),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Diffusion {
    DiagExp {
        log_std: Vec<f64>,
    },
    BasisCone {
        basis: DiffusionBasis,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionKind {
    DiagExp,
    BasisCone,
}

/// Shift-scale intervention `φ = (δ, β)` on a set of target coordinates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Intervention {
    pub targets: Vec<usize>,
    pub shift: Vec<f64>,
    /// `ln β`; the scale is `exp(log_scale)` so it is always positive.
    pub log_scale: Vec<f64>,
}

impl Intervention {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Neutral intervention (δ = 0, β = 1) on the given targets.
    pub fn neutral(targets: &[usize]) -> Self {
        Self {
            targets: targets.to_vec(),
            shift: vec![0.0; targets.len()],
            log_scale: vec![0.0; targets.len()],
        }
    }

    pub fn shift_only(target: usize, delta: f64) -> Self {
        Self {
            targets: vec![target],
            shift: vec![delta],
            log_scale: vec![0.0],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn num_params(&self) -> usize {
        2 * self.targets.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.shift.clone();
        p.extend_from_slice(&self.log_scale);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        let t = self.targets.len();
        if p.len() != 2 * t {
            return invalid("intervention parameter vector has wrong length");
        }
        self.shift.copy_from_slice(&p[..t]);
        self.log_scale.copy_from_slice(&p[t..]);
        Ok(())
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let t = self.targets.len();
        if self.shift.len() != t || self.log_scale.len() != t {
            return invalid("intervention shift/scale lengths must match targets");
        }
        let mut seen = vec![false; d];
        for &j in &self.targets {
            if j >= d {
                return invalid(format!("intervention target {j} out of range for d={d}"));
            }
            if std::mem::replace(&mut seen[j], true) {
                return invalid(format!("duplicate intervention target {j}"));
            }
        }
        if self
            .shift
            .iter()
            .chain(&self.log_scale)
            .any(|v| !v.is_finite())
        {
            return invalid("intervention parameters must be finite");
        }
        Ok(())
    }

    /// Per-coordinate `(δ, β)` with `(0, 1)` off target.
    fn expand(&self, d: usize) -> (Vec<f64>, Vec<f64>) {
        let mut delta = vec![0.0; d];
        let mut beta = vec![1.0; d];
        for (k, &j) in self.targets.iter().enumerate() {
            delta[j] = self.shift[k];
            beta[j] = self.log_scale[k].exp();
        }
        (delta, beta)
    }
}

/// Gradient with respect to model parameters `theta` and intervention parameters `phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrad {
    pub theta: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(model: &SdeModel, phi: &Intervention) -> Self {
        Self {
            theta: vec![0.0; model.num_params()],
            phi: vec![0.0; phi.num_params()],
        }
    }

    pub fn norm(&self) -> f64 {
        self.theta
            .iter()
            .chain(&self.phi)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeModel {
    pub d: usize,
    pub drift: Drift,
    pub diffusion: Diffusion,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl SdeModel {
    /// Affine drift `b(x) = c + W x` with `W_jj` frozen at -1.
    pub fn linear(d: usize, diffusion: DiffusionKind) -> Self {
        let basis = FeatureBasis::affine(d);
        let l = basis.len();
        let mut weights = vec![vec![0.0; l]; d];
        let mut frozen = vec![vec![false; l]; d];
        for j in 0..d {
            weights[j][1 + j] = -1.0;
            frozen[j][1 + j] = true;
        }
        Self {
            d,
            drift: Drift::Linear(LinearDrift {
                basis,
                weights,
                frozen,
            }),
            diffusion: Self::default_diffusion(d, diffusion),
        }
    }

    /// Linear drift over an arbitrary basis with no frozen entries.
    pub fn linear_with_basis(
        d: usize,
        basis: FeatureBasis,
        weights: Vec<Vec<f64>>,
        diffusion: Diffusion,
    ) -> Result<Self> {
        let l = basis.len();
        let m = Self {
            d,
            drift: Drift::Linear(LinearDrift {
                basis,
                weights,
                frozen: vec![vec![false; l]; d],
            }),
            diffusion,
        };
        m.validate()?;
        Ok(m)
    }

    /// Per-coordinate MLP drift `b_j = bias_j + w_j·sigmoid(U_j x + v_j) - x_j`.
    pub fn mlp(d: usize, hidden: usize, diffusion: DiffusionKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nu = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let nw = Normal::new(0.0, 1.0 / (hidden.max(1) as f64).sqrt()).expect("valid std");
        let units = (0..d)
            .map(|j| MlpUnit {
                bias: 0.0,
                w: (0..hidden).map(|_| nw.sample(&mut rng)).collect(),
                u: (0..hidden)
                    .map(|_| {
                        (0..d)
                            .map(|i| if i == j { 0.0 } else { nu.sample(&mut rng) })
                            .collect()
                    })
                    .collect(),
                v: vec![0.0; hidden],
            })
            .collect();
        Self {
            d,
            drift: Drift::Mlp(MlpDrift { hidden, units }),
            diffusion: Self::default_diffusion(d, diffusion),
        }
    }

    fn default_diffusion(d: usize, kind: DiffusionKind) -> Diffusion {
        match kind {
            DiffusionKind::DiagExp => Diffusion::DiagExp {
                log_std: vec![0.0; d],
            },
            DiffusionKind::BasisCone => Diffusion::BasisCone {
                basis: DiffusionBasis::unit_coordinates(d),
                weights: vec![1.0; d],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if d == 0 {
            return invalid("model dimension must be positive");
        }
        match &self.drift {
            Drift::Linear(lin) => {
                lin.basis.validate(d)?;
                let l = lin.basis.len();
                if lin.weights.len() != d || lin.weights.iter().any(|r| r.len() != l) {
                    return invalid("linear drift weights must be d x l");
                }
                if lin.frozen.len() != d || lin.frozen.iter().any(|r| r.len() != l) {
                    return invalid("linear drift frozen mask must be d x l");
                }
            }
            Drift::Mlp(mlp) => {
                let h = mlp.hidden;
                if mlp.units.len() != d {
                    return invalid("MLP drift needs one unit per coordinate");
                }
                for (j, u) in mlp.units.iter().enumerate() {
                    if u.w.len() != h
                        || u.v.len() != h
                        || u.u.len() != h
                        || u.u.iter().any(|r| r.len() != d)
                    {
                        return invalid(format!("MLP unit {j} has inconsistent shapes"));
                    }
                }
            }
        }
        match &self.diffusion {
            Diffusion::DiagExp { log_std } => {
                if log_std.len() != d {
                    return invalid("diag_exp log_std must have length d");
                }
            }
            Diffusion::BasisCone { basis, weights } => {
                basis.validate(d)?;
                if weights.len() != basis.len() {
                    return invalid("basis_cone weights must match the basis length");
                }
                if weights.iter().any(|a| *a < 0.0) {
                    return invalid("basis_cone weights must be non-negative");
                }
            }
        }
        if self.params().iter().any(|v| !v.is_finite()) {
            return invalid("model parameters must be finite");
        }
        Ok(())
    }

    pub fn drift_kind(&self) -> DriftKind {
        match self.drift {
            Drift::Linear(_) => DriftKind::Linear,
            Drift::Mlp(_) => DriftKind::Mlp,
        }
    }

    pub fn num_drift_params(&self) -> usize {
        match &self.drift {
            Drift::Linear(lin) => self.d * lin.basis.len(),
            Drift::Mlp(mlp) => self.d * (1 + 2 * mlp.hidden + mlp.hidden * self.d),
        }
    }

    pub fn num_params(&self) -> usize {
        self.num_drift_params()
            + match &self.diffusion {
                Diffusion::DiagExp { log_std } => log_std.len(),
                Diffusion::BasisCone { weights, .. } => weights.len(),
            }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        match &self.drift {
            Drift::Linear(lin) => lin.weights.iter().for_each(|r| p.extend_from_slice(r)),
            Drift::Mlp(mlp) => {
                for u in &mlp.units {
                    p.push(u.bias);
                    p.extend_from_slice(&u.w);
                    u.u.iter().for_each(|r| p.extend_from_slice(r));
                    p.extend_from_slice(&u.v);
                }
            }
        }
        match &self.diffusion {
            Diffusion::DiagExp { log_std } => p.extend_from_slice(log_std),
            Diffusion::BasisCone { weights, .. } => p.extend_from_slice(weights),
        }
        p
    }

    /// Overwrite all parameters; frozen entries are then restored and constraints projected.
    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                p.len()
            ));
        }
        let mut it = p.iter().copied();
        let mut next = || it.next().expect("length checked");
        match &mut self.drift {
            Drift::Linear(lin) => {
                for (row, fr) in lin.weights.iter_mut().zip(&lin.frozen) {
                    for (w, f) in row.iter_mut().zip(fr) {
                        let v = next();
                        if !f {
                            *w = v;
                        }
                    }
                }
            }
            Drift::Mlp(mlp) => {
                for u in &mut mlp.units {
                    u.bias = next();
                    u.w.iter_mut().for_each(|w| *w = next());
                    u.u.iter_mut().flatten().for_each(|w| *w = next());
                    u.v.iter_mut().for_each(|w| *w = next());
                }
            }
        }
        match &mut self.diffusion {
            Diffusion::DiagExp { log_std } => log_std.iter_mut().for_each(|s| *s = next()),
            Diffusion::BasisCone { weights, .. } => weights.iter_mut().for_each(|a| *a = next()),
        }
        self.project();
        Ok(())
    }

    /// Which entries of the flat parameter vector may be optimized.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.num_params());
        match &self.drift {
            Drift::Linear(lin) => lin
                .frozen
                .iter()
                .for_each(|r| mask.extend(r.iter().map(|f| !f))),
            Drift::Mlp(mlp) => {
                for (j, u) in mlp.units.iter().enumerate() {
                    mask.push(true);
                    mask.extend(std::iter::repeat_n(true, u.w.len()));
                    for _ in 0..mlp.hidden {
                        mask.extend((0..self.d).map(|i| i != j));
                    }
                    mask.extend(std::iter::repeat_n(true, u.v.len()));
                }
            }
        }
        let nd = self.num_params() - mask.len();
        mask.extend(std::iter::repeat_n(true, nd));
        mask
    }

    /// Re-impose `A_i >= 0` and `U_j[:, j] = 0`.
    pub fn project(&mut self) {
        if let Drift::Mlp(mlp) = &mut self.drift {
            for (j, u) in mlp.units.iter_mut().enumerate() {
                u.u.iter_mut().for_each(|row| row[j] = 0.0);
            }
        }
        if let Diffusion::BasisCone { weights, .. } = &mut self.diffusion {
            weights.iter_mut().for_each(|a| *a = a.max(0.0));
        }
    }

    fn check_x(&self, x: &[f64], phi: &Intervention) -> Result<()> {
        if x.len() != self.d {
            return invalid(format!(
                "expected a point of dimension {}, got {}",
                self.d,
                x.len()
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return invalid("evaluation point must be finite");
        }
        phi.validate(self.d)
    }

    pub fn drift_eval(&self, x: &[f64], phi: &Intervention) -> Result<DVector<f64>> {
        self.check_x(x, phi)?;
        Ok(self.drift_unchecked(x, phi))
    }

    pub(crate) fn drift_unchecked(&self, x: &[f64], phi: &Intervention) -> DVector<f64> {
        let d = self.d;
        let mut b = match &self.drift {
            Drift::Linear(lin) => {
                let jx = lin.basis.eval(x);
                DVector::from_iterator(
                    d,
                    lin.weights
                        .iter()
                        .map(|row| row.iter().zip(&jx).map(|(w, f)| w * f).sum()),
                )
            }
            Drift::Mlp(mlp) => DVector::from_iterator(
                d,
                mlp.units.iter().enumerate().map(|(j, u)| {
                    let hidden: f64 = (0..mlp.hidden)
                        .map(|k| {
                            let z = u.u[k].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + u.v[k];
                            u.w[k] * sigmoid(z)
                        })
                        .sum();
                    u.bias + hidden - x[j]
                }),
            ),
        };
        for (k, &j) in phi.targets.iter().enumerate() {
            b[j] += phi.shift[k];
        }
        b
    }

    pub fn diffusion_a_eval(&self, x: &[f64], phi: &Intervention) -> Result<DMatrix<f64>> {
        self.check_x(x, phi)?;
        Ok(self.diffusion_unchecked(x, phi))
    }

    pub(crate) fn diffusion_unchecked(&self, x: &[f64], phi: &Intervention) -> DMatrix<f64> {
        let d = self.d;
        let (_, beta) = phi.expand(d);
        match &self.diffusion {
            Diffusion::DiagExp { log_std } => {
                DMatrix::from_diagonal(&DVector::from_fn(d, |j, _| {
                    (2.0 * log_std[j]).exp() * beta[j] * beta[j]
                }))
            }
            Diffusion::BasisCone { basis, weights } => {
                let mut a = DMatrix::zeros(d, d);
                for (v, &w) in basis.eval(x, d).iter().zip(weights) {
                    let bv = v.component_mul(&DVector::from_column_slice(&beta));
                    a += &bv * bv.transpose() * w;
                }
                a
            }
        }
    }

    /// A factor `σ` with `σ σ^T = a(x)`; `d x d` for `diag_exp`, `d x m` for `basis_cone`.
    pub fn sigma_eval(&self, x: &[f64], phi: &Intervention) -> Result<DMatrix<f64>> {
        self.check_x(x, phi)?;
        Ok(self.sigma_unchecked(x, phi))
    }

    pub(crate) fn sigma_unchecked(&self, x: &[f64], phi: &Intervention) -> DMatrix<f64> {
        let d = self.d;
        let (_, beta) = phi.expand(d);
        match &self.diffusion {
            Diffusion::DiagExp { log_std } => {
                DMatrix::from_diagonal(&DVector::from_fn(d, |j, _| log_std[j].exp() * beta[j]))
            }
            Diffusion::BasisCone { basis, weights } => {
                let fields = basis.eval(x, d);
                let mut s = DMatrix::zeros(d, fields.len());
                for (i, (v, &w)) in fields.iter().zip(weights).enumerate() {
                    let r = w.max(0.0).sqrt();
                    for j in 0..d {
                        s[(j, i)] = r * beta[j] * v[j];
                    }
                }
                s
            }
        }
    }

    /// `∂<cotangent, b(x)>/∂(theta, phi)`; frozen entries receive zero.
    pub fn drift_vjp(&self, x: &[f64], phi: &Intervention, cotangent: &[f64]) -> Result<ParamGrad> {
        self.check_x(x, phi)?;
        if cotangent.len() != self.d || cotangent.iter().any(|c| !c.is_finite()) {
            return invalid("drift cotangent must be finite with length d");
        }
        let mut g = ParamGrad::zeros(self, phi);
        self.accumulate_drift_vjp(x, phi, cotangent, 1.0, &mut g);
        Ok(g)
    }

    pub(crate) fn accumulate_drift_vjp(
        &self,
        x: &[f64],
        phi: &Intervention,
        cot: &[f64],
        scale: f64,
        out: &mut ParamGrad,
    ) {
        let d = self.d;
        match &self.drift {
            Drift::Linear(lin) => {
                let jx = lin.basis.eval(x);
                let l = jx.len();
                for j in 0..d {
                    let c = cot[j] * scale;
                    for p in 0..l {
                        if !lin.frozen[j][p] {
                            out.theta[j * l + p] += c * jx[p];
                        }
                    }
                }
            }
            Drift::Mlp(mlp) => {
                let h = mlp.hidden;
                let stride = 1 + 2 * h + h * d;
                for (j, u) in mlp.units.iter().enumerate() {
                    let c = cot[j] * scale;
                    if c == 0.0 {
                        continue;
                    }
                    let base = j * stride;
                    out.theta[base] += c;
                    for k in 0..h {
                        let z = u.u[k].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + u.v[k];
                        let s = sigmoid(z);
                        out.theta[base + 1 + k] += c * s;
                        let dz = c * u.w[k] * s * (1.0 - s);
                        for i in 0..d {
                            if i != j {
                                out.theta[base + 1 + h + k * d + i] += dz * x[i];
                            }
                        }
                        out.theta[base + 1 + h + h * d + k] += dz;
                    }
                }
            }
        }
        for (k, &j) in phi.targets.iter().enumerate() {
            out.phi[k] += cot[j] * scale;
        }
    }

    /// `∂<cotangent, a(x)>_F/∂(theta, phi)`; the phi part is w.r.t. `ln β`.
    pub fn diffusion_vjp(
        &self,
        x: &[f64],
        phi: &Intervention,
        cotangent: &DMatrix<f64>,
    ) -> Result<ParamGrad> {
        self.check_x(x, phi)?;
        if cotangent.nrows() != self.d
            || cotangent.ncols() != self.d
            || cotangent.iter().any(|c| !c.is_finite())
        {
            return invalid("diffusion cotangent must be a finite d x d matrix");
        }
        let mut g = ParamGrad::zeros(self, phi);
        self.accumulate_diffusion_vjp(x, phi, cotangent, 1.0, &mut g);
        Ok(g)
    }

    pub(crate) fn accumulate_diffusion_vjp(
        &self,
        x: &[f64],
        phi: &Intervention,
        cot: &DMatrix<f64>,
        scale: f64,
        out: &mut ParamGrad,
    ) {
        let d = self.d;
        let off = self.num_drift_params();
        let (_, beta) = phi.expand(d);
        let t = phi.targets.len();
        match &self.diffusion {
            Diffusion::DiagExp { log_std } => {
                for j in 0..d {
                    let g =
                        2.0 * cot[(j, j)] * (2.0 * log_std[j]).exp() * beta[j] * beta[j] * scale;
                    out.theta[off + j] += g;
                }
                for (k, &j) in phi.targets.iter().enumerate() {
                    out.phi[t + k] +=
                        2.0 * cot[(j, j)] * (2.0 * log_std[j]).exp() * beta[j] * beta[j] * scale;
                }
            }
            Diffusion::BasisCone { basis, weights } => {
                let bvec = DVector::from_column_slice(&beta);
                let mut a = DMatrix::zeros(d, d);
                for (i, (v, &w)) in basis.eval(x, d).iter().zip(weights).enumerate() {
                    let bv = v.component_mul(&bvec);
                    out.theta[off + i] += (bv.transpose() * cot * &bv)[(0, 0)] * scale;
                    if t > 0 {
                        a += &bv * bv.transpose() * w;
                    }
                }
                // a'_{ij} = β_i a_ij β_j, so ∂/∂ln β_t = Σ_j (C_tj + C_jt) a'_tj.
                for (k, &j) in phi.targets.iter().enumerate() {
                    let mut g = 0.0;
                    for i in 0..d {
                        g += (cot[(j, i)] + cot[(i, j)]) * a[(j, i)];
                    }
                    out.phi[t + k] += g * scale;
                }
            }
        }
    }
}
