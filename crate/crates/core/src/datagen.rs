//! Synthetic benchmarks: random causal graphs, sparse cyclic linear SDE and
//! SCM ground truths, shifted environments and standardization.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::models::{Diffusion, FeatureBasis, Intervention, SdeModel};
use crate::simulator::{lyapunov_solve, ou_exact_sample};

/// Serde adapter storing a matrix as a list of rows.
pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nr = rows.len();
        let nc = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != nc) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(
            nr,
            nc,
            rows.into_iter().flatten(),
        ))
    }
}

/// Directed graph; `adj[i][j] == 1` is the edge `i -> j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    pub d: usize,
    pub adj: Vec<Vec<u8>>,
}

impl Graph {
    pub fn empty(d: usize) -> Self {
        Self {
            d,
            adj: vec![vec![0; d]; d],
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i][j] != 0
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.d {
            for j in 0..self.d {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn n_edges(&self) -> usize {
        self.adj.iter().flatten().filter(|v| **v != 0).count()
    }

    /// Number of neighbours ignoring direction.
    pub fn undirected_degrees(&self) -> Vec<usize> {
        (0..self.d)
            .map(|i| {
                (0..self.d)
                    .filter(|&j| j != i && (self.has_edge(i, j) || self.has_edge(j, i)))
                    .count()
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.adj.len() != self.d || self.adj.iter().any(|r| r.len() != self.d) {
            return invalid("adjacency matrix must be d x d");
        }
        for i in 0..self.d {
            if self.adj[i][i] != 0 {
                return invalid("graph has a self-loop");
            }
            if self.adj[i].iter().any(|v| *v > 1) {
                return invalid("adjacency entries must be 0 or 1");
            }
        }
        Ok(())
    }
}

/// Each ordered pair gets an edge with probability `expected_degree / (2 (d - 1))`,
/// so the expected in+out degree of a node is `expected_degree`.
pub fn sample_er_graph(d: usize, expected_degree: f64, seed: u64) -> Result<Graph> {
    if d < 2 {
        return invalid("ER graph needs d >= 2");
    }
    if !(expected_degree >= 0.0 && expected_degree < d as f64) {
        return invalid(format!("expected degree must lie in [0, {d})"));
    }
    let p = expected_degree / (2.0 * (d - 1) as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::empty(d);
    for i in 0..d {
        for j in 0..d {
            if i != j && rng.random_bool(p) {
                g.adj[i][j] = 1;
            }
        }
    }
    Ok(g)
}

/// Preferential attachment: every new node draws two existing nodes with
/// probability proportional to degree (with replacement, duplicates merged)
/// and each undirected link is oriented by a fair coin.
pub fn sample_sf_graph(d: usize, seed: u64) -> Result<Graph> {
    if d < 3 {
        return invalid("scale-free graph needs d >= 3");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::empty(d);
    let mut deg = vec![0usize; d];
    for new in 1..d {
        let total: usize = deg[..new].iter().sum();
        let mut picks = Vec::with_capacity(2);
        for _ in 0..2 {
            let t = if total == 0 {
                rng.random_range(0..new)
            } else {
                let mut r = rng.random_range(0..total);
                let mut t = 0;
                while r >= deg[t] {
                    r -= deg[t];
                    t += 1;
                }
                t
            };
            if !picks.contains(&t) {
                picks.push(t);
            }
        }
        for t in picks {
            deg[t] += 1;
            deg[new] += 1;
            if rng.random_bool(0.5) {
                g.adj[t][new] = 1;
            } else {
                g.adj[new][t] = 1;
            }
        }
    }
    Ok(g)
}

/// `±U[0.25, 1.0]`.
fn edge_weight(rng: &mut ChaCha8Rng) -> f64 {
    let w = rng.random_range(0.25..=1.0);
    if rng.random_bool(0.5) {
        w
    } else {
        -w
    }
}

/// Stationary linear SDE `dX = M (X - mean) dt + diag(D) dB`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSde {
    #[serde(with = "matrix_rows")]
    pub m: DMatrix<f64>,
    pub diffusion: Vec<f64>,
    pub mean: Vec<f64>,
}

impl LinearSde {
    pub fn d(&self) -> usize {
        self.mean.len()
    }

    pub fn noise_cov(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.d(),
            self.diffusion.iter().map(|v| v * v),
        ))
    }

    /// Stationary mean when `shift` is added to the drift.
    pub fn shifted_mean(&self, shift: &[f64]) -> Result<Vec<f64>> {
        let delta = DVector::from_column_slice(shift);
        let r = self
            .m
            .clone()
            .lu()
            .solve(&delta)
            .ok_or_else(|| Error::NotStable("drift matrix is singular".into()))?;
        Ok(self.mean.iter().zip(r.iter()).map(|(a, b)| a - b).collect())
    }

    pub fn stationary_cov(&self) -> Result<DMatrix<f64>> {
        lyapunov_solve(&self.m, &self.noise_cov())
    }

    /// The same process as an affine-drift model with diagonal diffusion.
    pub fn to_model(&self) -> Result<SdeModel> {
        let d = self.d();
        let offset = -(&self.m * DVector::from_column_slice(&self.mean));
        let weights = (0..d)
            .map(|j| {
                std::iter::once(offset[j])
                    .chain(self.m.row(j).iter().copied())
                    .collect()
            })
            .collect();
        SdeModel::linear_with_basis(
            d,
            FeatureBasis::affine(d),
            weights,
            Diffusion::DiagExp {
                log_std: self.diffusion.iter().map(|v| v.ln()).collect(),
            },
        )
    }
}

/// Random sparse cyclic SDE on `graph`; strict row diagonal dominance with a
/// negative diagonal makes `M` Hurwitz.
pub fn gen_linear_sde_system(graph: &Graph, seed: u64) -> Result<LinearSde> {
    graph.validate()?;
    let d = graph.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::zeros(d, d);
    for (i, j) in graph.edges() {
        m[(j, i)] = edge_weight(&mut rng);
    }
    for j in 0..d {
        let off: f64 = (0..d).filter(|&i| i != j).map(|i| m[(j, i)].abs()).sum();
        m[(j, j)] = -(1.0 + off);
    }
    let diffusion = (0..d).map(|_| rng.random_range(0.5..=1.5)).collect();
    let mean = (0..d).map(|_| rng.random_range(-2.0..=2.0)).collect();
    Ok(LinearSde { m, diffusion, mean })
}

/// Linear SCM `x = W x + ε + shift`, `ε ~ N(0, diag(noise_scale^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScm {
    #[serde(with = "matrix_rows")]
    pub w: DMatrix<f64>,
    pub noise_scale: Vec<f64>,
}

pub fn spectral_radius(w: &DMatrix<f64>) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    w.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

const SCM_RADIUS_CAP: f64 = 0.8;

/// Random sparse cyclic SCM on `graph`, rescaled so its spectral radius is at most 0.8.
pub fn gen_linear_scm_system(graph: &Graph, seed: u64) -> Result<LinearScm> {
    graph.validate()?;
    let d = graph.d;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::zeros(d, d);
    for (i, j) in graph.edges() {
        w[(j, i)] = edge_weight(&mut rng);
    }
    let rho = spectral_radius(&w);
    if rho > SCM_RADIUS_CAP {
        w *= SCM_RADIUS_CAP / rho;
    }
    let noise_scale = (0..d).map(|_| rng.random_range(0.5..=1.5)).collect();
    Ok(LinearScm { w, noise_scale })
}

/// Rows `x = (I - W)^{-1} (ε + shift)`.
pub fn scm_sample(
    w: &DMatrix<f64>,
    noise_scale: &[f64],
    shift: &[f64],
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    let d = noise_scale.len();
    if w.shape() != (d, d) || shift.len() != d || d == 0 {
        return invalid("scm_sample dimensions disagree");
    }
    if spectral_radius(w) >= 1.0 {
        return invalid("scm_sample needs spectral radius of W below 1");
    }
    let a = DMatrix::identity(d, d) - w;
    let lu = a.clone().lu();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * d);
    let mut rhs = DVector::zeros(d);
    for _ in 0..n {
        for j in 0..d {
            rhs[j] = noise_scale[j] * rng.sample::<f64, _>(StandardNormal) + shift[j];
        }
        let x = lu.solve(&rhs).ok_or(Error::NearSingular {
            residual: f64::INFINITY,
        })?;
        let residual = (&a * &x - &rhs).amax();
        if residual > 1e-8 * rhs.amax().max(1.0) {
            return Err(Error::NearSingular { residual });
        }
        values.extend(x.iter());
    }
    Dataset::new(n, d, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum System {
    LinearSde(LinearSde),
    LinearScm(LinearScm),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    #[default]
    Sde,
    Scm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    #[default]
    Er,
    Sf,
}

impl std::str::FromStr for SystemKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sde" => Ok(Self::Sde),
            "scm" => Ok(Self::Scm),
            _ => invalid(format!("unknown system kind {s:?}")),
        }
    }
}

impl std::str::FromStr for GraphKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "er" => Ok(Self::Er),
            "sf" => Ok(Self::Sf),
            _ => invalid(format!("unknown graph kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub kind: SystemKind,
    pub graph: GraphKind,
    pub d: usize,
    pub n_per_env: usize,
    pub n_train_env: usize,
    pub n_test_env: usize,
    pub shift_magnitude: f64,
    pub expected_degree: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            kind: SystemKind::Sde,
            graph: GraphKind::Er,
            d: 5,
            n_per_env: 1000,
            n_train_env: 3,
            n_test_env: 2,
            shift_magnitude: 2.0,
            expected_degree: 3.0,
            seed: 0,
        }
    }
}

/// Column mean and population std of the observational data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(data: &Dataset) -> Self {
        let std = data
            .std()
            .into_iter()
            .map(|s| if s > 0.0 { s } else { 1.0 })
            .collect();
        Self {
            mean: data.mean(),
            std,
        }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        data.standardized(&self.mean, &self.std)
    }
}

/// One shifted environment. `intervention` holds the ground-truth shift in
/// the original (unstandardized) units.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub intervention: Intervention,
    pub data: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkBundle {
    pub config: BenchmarkConfig,
    pub system: System,
    pub graph: Graph,
    pub observational: Dataset,
    pub train_envs: Vec<Environment>,
    pub test_envs: Vec<Environment>,
    pub standardization: Standardization,
}

pub fn make_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkBundle> {
    let d = cfg.d;
    if cfg.n_train_env + cfg.n_test_env > d {
        return invalid("more intervention targets requested than variables");
    }
    if cfg.n_per_env < 2 {
        return invalid("n_per_env must be at least 2");
    }
    if !(cfg.shift_magnitude.is_finite()) {
        return invalid("shift magnitude must be finite");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let graph = match cfg.graph {
        GraphKind::Er => sample_er_graph(d, cfg.expected_degree, rng.random())?,
        GraphKind::Sf => sample_sf_graph(d, rng.random())?,
    };
    let system = match cfg.kind {
        SystemKind::Sde => System::LinearSde(gen_linear_sde_system(&graph, rng.random())?),
        SystemKind::Scm => System::LinearScm(gen_linear_scm_system(&graph, rng.random())?),
    };
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(&mut rng);

    let draw = |shift: &[f64], seed: u64| -> Result<Dataset> {
        match &system {
            System::LinearSde(s) => {
                let mean = s.shifted_mean(shift)?;
                ou_exact_sample(&s.m, &mean, &s.noise_cov(), cfg.n_per_env, seed)
            }
            System::LinearScm(s) => scm_sample(&s.w, &s.noise_scale, shift, cfg.n_per_env, seed),
        }
    };

    let raw_obs = draw(&vec![0.0; d], rng.random())?;
    let standardization = Standardization::fit(&raw_obs);
    let observational = standardization.apply(&raw_obs)?.with_provenance(0, vec![]);

    let mut envs = Vec::with_capacity(cfg.n_train_env + cfg.n_test_env);
    for (k, &target) in order[..cfg.n_train_env + cfg.n_test_env].iter().enumerate() {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let delta = sign * cfg.shift_magnitude;
        let mut shift = vec![0.0; d];
        shift[target] = delta;
        let raw = draw(&shift, rng.random())?;
        let env_index = if k < cfg.n_train_env {
            k + 1
        } else {
            k - cfg.n_train_env
        };
        envs.push(Environment {
            intervention: Intervention::shift_only(target, delta),
            data: standardization
                .apply(&raw)?
                .with_provenance(env_index, vec![target]),
        });
    }
    let test_envs = envs.split_off(cfg.n_train_env);
    Ok(BenchmarkBundle {
        config: cfg.clone(),
        system,
        graph,
        observational,
        train_envs: envs,
        test_envs,
        standardization,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvMeta {
    file: String,
    n: usize,
    intervention: Intervention,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleMeta {
    config: BenchmarkConfig,
    system: System,
    graph: Graph,
    standardization: Standardization,
    observational: EnvMeta,
    train_envs: Vec<EnvMeta>,
    test_envs: Vec<EnvMeta>,
}

impl BenchmarkBundle {
    pub fn d(&self) -> usize {
        self.config.d
    }

    /// Observational data followed by the training environments, in environment order.
    pub fn training_data(&self) -> Vec<(Dataset, Vec<usize>)> {
        std::iter::once((self.observational.clone(), vec![]))
            .chain(
                self.train_envs
                    .iter()
                    .map(|e| (e.data.clone(), e.intervention.targets.clone())),
            )
            .collect()
    }

    /// Writes `bundle.json`, `obs.csv`, `train_<i>.csv` and `test_<i>.csv` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let meta_of = |file: String, e: &Environment| EnvMeta {
            file,
            n: e.data.n(),
            intervention: e.intervention.clone(),
        };
        let meta = BundleMeta {
            config: self.config.clone(),
            system: self.system.clone(),
            graph: self.graph.clone(),
            standardization: self.standardization.clone(),
            observational: EnvMeta {
                file: "obs.csv".into(),
                n: self.observational.n(),
                intervention: Intervention::identity(),
            },
            train_envs: self
                .train_envs
                .iter()
                .enumerate()
                .map(|(i, e)| meta_of(format!("train_{i}.csv"), e))
                .collect(),
            test_envs: self
                .test_envs
                .iter()
                .enumerate()
                .map(|(i, e)| meta_of(format!("test_{i}.csv"), e))
                .collect(),
        };
        self.observational
            .save_csv(dir.join(&meta.observational.file))?;
        for (m, e) in meta.train_envs.iter().zip(&self.train_envs) {
            e.data.save_csv(dir.join(&m.file))?;
        }
        for (m, e) in meta.test_envs.iter().zip(&self.test_envs) {
            e.data.save_csv(dir.join(&m.file))?;
        }
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(dir.join("bundle.json"), text)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: BundleMeta = serde_json::from_str(&fs::read_to_string(dir.join("bundle.json"))?)?;
        let read = |m: &EnvMeta, env: usize| -> Result<Dataset> {
            let ds = Dataset::load_csv(dir.join(&m.file))?;
            if ds.n() != m.n || ds.d() != meta.config.d {
                return invalid(format!("{} does not match bundle metadata", m.file));
            }
            Ok(ds.with_provenance(env, m.intervention.targets.clone()))
        };
        let observational = read(&meta.observational, 0)?;
        let train_envs = meta
            .train_envs
            .iter()
            .enumerate()
            .map(|(i, m)| {
                Ok(Environment {
                    intervention: m.intervention.clone(),
                    data: read(m, i + 1)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let test_envs = meta
            .test_envs
            .iter()
            .enumerate()
            .map(|(i, m)| {
                Ok(Environment {
                    intervention: m.intervention.clone(),
                    data: read(m, i)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: meta.config,
            system: meta.system,
            graph: meta.graph,
            observational,
            train_envs,
            test_envs,
            standardization: meta.standardization,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn er_trivial_cases() {
        let g = sample_er_graph(6, 0.0, 1).unwrap();
        assert_eq!(g.n_edges(), 0);
        for s in 0..20 {
            let g = sample_er_graph(8, 3.0, s).unwrap();
            g.validate().unwrap();
        }
        assert!(sample_er_graph(1, 0.5, 0).is_err());
        assert!(sample_er_graph(4, 4.0, 0).is_err());
    }

    #[test]
    fn er_edge_count_moments() {
        let (d, k) = (20usize, 3.0);
        let draws = 1000;
        let total: usize = (0..draws)
            .map(|s| sample_er_graph(d, k, s).unwrap().n_edges())
            .sum();
        let mean = total as f64 / draws as f64;
        let pairs = (d * (d - 1)) as f64;
        let p = k / (2.0 * (d - 1) as f64);
        let se = (pairs * p * (1.0 - p) / draws as f64).sqrt();
        assert!((mean - 30.0).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn sf_small_and_orientation() {
        let mut seen = [false; 2];
        for s in 0..100 {
            let g = sample_sf_graph(3, s).unwrap();
            g.validate().unwrap();
            let e = g.n_edges();
            assert!(e == 2 || e == 3);
            seen[e - 2] = true;
        }
        assert!(seen[0] && seen[1]);
        assert!(sample_sf_graph(2, 0).is_err());
        // older-to-newer orientation should be a fair coin
        let (mut fwd, mut tot) = (0usize, 0usize);
        for s in 0..200 {
            for (i, j) in sample_sf_graph(10, s).unwrap().edges() {
                tot += 1;
                fwd += usize::from(i < j);
            }
        }
        let sd = (tot as f64 * 0.25).sqrt();
        assert!((fwd as f64 - tot as f64 / 2.0).abs() < 3.0 * sd);
    }

    #[test]
    fn sf_heavy_tail() {
        let hits = (0..500)
            .filter(|&s| {
                let deg = sample_sf_graph(50, s).unwrap().undirected_degrees();
                let mean = deg.iter().sum::<usize>() as f64 / 50.0;
                *deg.iter().max().unwrap() as f64 > 3.0 * mean
            })
            .count();
        assert!(hits >= 250, "{hits}");
    }

    #[test]
    fn sde_system_structure() {
        let sys = gen_linear_sde_system(&Graph::empty(4), 1).unwrap();
        assert_eq!(sys.m, -DMatrix::<f64>::identity(4, 4));
        for s in 0..100 {
            let g = sample_er_graph(6, 3.0, s).unwrap();
            let sys = gen_linear_sde_system(&g, s).unwrap();
            for j in 0..6 {
                let off: f64 = (0..6)
                    .filter(|&i| i != j)
                    .map(|i| sys.m[(j, i)].abs())
                    .sum();
                assert!(sys.m[(j, j)] + off < 0.0);
                for i in 0..6 {
                    if i != j && !g.has_edge(i, j) {
                        assert_eq!(sys.m[(j, i)], 0.0);
                    }
                }
            }
            let sigma = sys.stationary_cov().unwrap();
            let resid = (&sys.m * &sigma + &sigma * sys.m.transpose() + sys.noise_cov()).norm();
            assert!(resid <= 1e-8 * sys.noise_cov().norm());
        }
    }

    #[test]
    fn scm_radius_and_sampling() {
        assert_eq!(
            gen_linear_scm_system(&Graph::empty(3), 0).unwrap().w,
            DMatrix::zeros(3, 3)
        );
        for s in 0..50 {
            let g = sample_er_graph(8, 4.0, s).unwrap();
            let scm = gen_linear_scm_system(&g, s).unwrap();
            assert!(spectral_radius(&scm.w) <= 0.8 + 1e-6);
        }
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let ds = scm_sample(&w, &[1e-12, 1e-12], &[1.0, 2.0], 5, 0).unwrap();
        // (I - W)^{-1} = [[4/3, 2/3], [2/3, 4/3]]
        for r in ds.rows() {
            assert!((r[0] - (4.0 / 3.0 + 4.0 / 3.0)).abs() < 1e-9);
            assert!((r[1] - (2.0 / 3.0 + 8.0 / 3.0)).abs() < 1e-9);
        }
        assert!(scm_sample(
            &(DMatrix::identity(2, 2) * 1.5),
            &[1.0, 1.0],
            &[0.0, 0.0],
            5,
            0
        )
        .is_err());
    }

    #[test]
    fn benchmark_basics() {
        let cfg = BenchmarkConfig {
            n_train_env: 0,
            n_test_env: 0,
            n_per_env: 200,
            ..Default::default()
        };
        let b = make_benchmark(&cfg).unwrap();
        assert!(b.train_envs.is_empty() && b.test_envs.is_empty());
        let mean = b.observational.mean();
        let std = b.observational.std();
        assert!(mean.iter().all(|m| m.abs() <= 1e-10));
        assert!(std.iter().all(|s| (s - 1.0).abs() <= 1e-10));
        let again = Standardization::fit(&b.observational)
            .apply(&b.observational)
            .unwrap();
        for (a, c) in again.values().iter().zip(b.observational.values()) {
            assert!((a - c).abs() <= 1e-12);
        }
        assert!(make_benchmark(&BenchmarkConfig {
            n_train_env: 4,
            n_test_env: 2,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn benchmark_targets_disjoint_and_roundtrip() {
        for (kind, graph) in [
            (SystemKind::Sde, GraphKind::Er),
            (SystemKind::Scm, GraphKind::Sf),
        ] {
            let cfg = BenchmarkConfig {
                kind,
                graph,
                d: 6,
                n_per_env: 50,
                n_train_env: 3,
                n_test_env: 3,
                seed: 4,
                ..Default::default()
            };
            let b = make_benchmark(&cfg).unwrap();
            let mut targets: Vec<usize> = b
                .train_envs
                .iter()
                .chain(&b.test_envs)
                .map(|e| e.intervention.targets[0])
                .collect();
            targets.sort();
            targets.dedup();
            assert_eq!(targets.len(), 6);
            assert!(b
                .train_envs
                .iter()
                .chain(&b.test_envs)
                .all(|e| e.data.n() == 50));
            let dir = tempfile::tempdir().unwrap();
            b.save(dir.path()).unwrap();
            let loaded = BenchmarkBundle::load(dir.path()).unwrap();
            assert_eq!(loaded, b);
            let dir2 = tempfile::tempdir().unwrap();
            make_benchmark(&cfg).unwrap().save(dir2.path()).unwrap();
            for f in ["bundle.json", "obs.csv", "train_0.csv", "test_2.csv"] {
                assert_eq!(
                    fs::read(dir.path().join(f)).unwrap(),
                    fs::read(dir2.path().join(f)).unwrap()
                );
            }
        }
    }

    #[test]
    fn model_conversion_matches_system() {
        let g = sample_er_graph(4, 2.0, 3).unwrap();
        let sys = gen_linear_sde_system(&g, 3).unwrap();
        let model = sys.to_model().unwrap();
        let x = [0.3, -1.0, 2.0, 0.5];
        let b = model.drift_eval(&x, &Intervention::identity()).unwrap();
        let expect =
            &sys.m * (DVector::from_column_slice(&x) - DVector::from_column_slice(&sys.mean));
        assert!((b - expect).amax() < 1e-12);
    }
}
