//! Synthetic clustered-data generator for the evaluation campaigns.
//!
//! Each dataset has K clusters of `n_per_cluster` rows. Cluster effects
//! gamma (q x K) are drawn first; a latent q-vector c then couples the
//! feature distribution to the effects: rows of cluster k are
//! N_p(m_k 1_p, I_p) with m_k = c . gamma_k, which is what gives a feature
//! tree something to find when it routes unseen rows to clusters. The
//! response is
//!
//!   y = X beta + A gamma_1 + z (A gamma_2) + sigma_eps * eps
//!
//! with the z term present only for q = 2. Roles are assigned within each
//! cluster by index so every cluster appears in train, validation, and test.
//!
//! Draw order is frozen (beta, gamma, c, X row-major cluster by cluster,
//! z, eps) and streams are ChaCha with `set_stream(replicate)`, so any
//! (config, seed, replicate) triple reproduces bit-identical data on every
//! platform and thread count.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusteredDataset, Role};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Preset {
    /// K = 4 clusters, p = 10 covariates, intercepts only.
    Low,
    /// K = 10 clusters, p = 25 covariates, intercepts only.
    Medium,
    /// K = 14 clusters, p = 35 covariates, intercepts only.
    High,
    Custom { p: usize, k: usize, q: usize },
}

impl Preset {
    /// (p, K, q).
    pub fn dims(&self) -> (usize, usize, usize) {
        match *self {
            Preset::Low => (10, 4, 1),
            Preset::Medium => (25, 10, 1),
            Preset::High => (35, 14, 1),
            Preset::Custom { p, k, q } => (p, k, q),
        }
    }

    fn name(&self) -> String {
        match self {
            Preset::Low => "low".into(),
            Preset::Medium => "medium".into(),
            Preset::High => "high".into(),
            Preset::Custom { p, k, q } => format!("custom-p{p}-k{k}-q{q}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EffectType {
    /// gamma entries iid N(0, variance).
    Gaussian { variance: f64 },
    /// Exactly round(K * (1 - zero_fraction)) entries per effect row are
    /// set to +/-1, the rest to zero.
    Sparse { zero_fraction: f64 },
    /// Gaussian effects with variance icc / (1 - icc) * sigma_eps^2, so the
    /// population intraclass correlation hits the target.
    IccTarget { icc: f64 },
}

impl EffectType {
    fn name(&self) -> String {
        match *self {
            EffectType::Gaussian { variance } => format!("gauss-{:03}", variance.round() as i64),
            EffectType::Sparse { zero_fraction } => {
                format!("sparse-{:03}", (zero_fraction * 100.0).round() as i64)
            }
            EffectType::IccTarget { icc } => format!("icc-{:03}", (icc * 100.0).round() as i64),
        }
    }
}

fn default_n_per_cluster() -> usize {
    50
}
fn default_sigma_eps() -> f64 {
    1.0
}
fn default_splits() -> (f64, f64, f64) {
    (0.6, 0.2, 0.2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub effect: EffectType,
    #[serde(default = "default_n_per_cluster")]
    pub n_per_cluster: usize,
    #[serde(default = "default_sigma_eps")]
    pub sigma_eps: f64,
    /// Train/validation/test fractions, applied within each cluster.
    #[serde(default = "default_splits")]
    pub split_fractions: (f64, f64, f64),
}

impl ScenarioConfig {
    pub fn new(preset: Preset, effect: EffectType) -> Self {
        Self {
            preset,
            effect,
            n_per_cluster: default_n_per_cluster(),
            sigma_eps: default_sigma_eps(),
            split_fractions: default_splits(),
        }
    }

    /// Stable identifier used in result tables and file names.
    pub fn name(&self) -> String {
        format!("{}-{}", self.preset.name(), self.effect.name())
    }

    fn validate(&self) -> Result<()> {
        let (p, k, q) = self.preset.dims();
        if p == 0 || k == 0 || !(q == 1 || q == 2) {
            return Err(Error::InvalidInput(format!(
                "preset dims p = {p}, K = {k}, q = {q} out of range"
            )));
        }
        if self.n_per_cluster == 0 {
            return Err(Error::InvalidInput("n_per_cluster must be positive".into()));
        }
        if !(self.sigma_eps > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma_eps = {}, need a positive noise scale",
                self.sigma_eps
            )));
        }
        let (a, b, c) = self.split_fractions;
        if !(a > 0.0 && b > 0.0 && c > 0.0) || (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!(
                "fractions ({a}, {b}, {c}) must be positive and sum to 1"
            )));
        }
        match self.effect {
            EffectType::Gaussian { variance } => {
                if !(variance >= 0.0) {
                    return Err(Error::InvalidInput(format!("variance = {variance}")));
                }
            }
            EffectType::Sparse { zero_fraction } => {
                if !(0.0..=1.0).contains(&zero_fraction) {
                    return Err(Error::InvalidInput(format!("zero_fraction = {zero_fraction}")));
                }
            }
            EffectType::IccTarget { icc } => {
                if !(0.0..1.0).contains(&icc) {
                    return Err(Error::InvalidInput(format!("icc target = {icc}")));
                }
            }
        }
        Ok(())
    }
}

/// Ground truth behind one generated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub beta: DVector<f64>,
    /// Row 0: intercept effects; row 1 (q = 2): slope effects.
    pub gamma: DMatrix<f64>,
    /// Latent vector coupling features to effects.
    pub c: DVector<f64>,
    pub sigma_eps: f64,
    /// Variance used for the effect draw (0 for sparse effects).
    pub effect_variance: f64,
    /// Realized noise term sigma_eps * eps, one entry per row.
    pub noise: DVector<f64>,
}

fn draw_gamma(rng: &mut ChaCha8Rng, k: usize, q: usize, effect: EffectType, sigma_eps: f64) -> (DMatrix<f64>, f64) {
    match effect {
        EffectType::Gaussian { variance } => {
            let sd = variance.sqrt();
            let g = DMatrix::from_fn(q, k, |_, _| rng.sample::<f64, _>(StandardNormal) * sd);
            (g, variance)
        }
        EffectType::IccTarget { icc } => {
            let variance = icc / (1.0 - icc) * sigma_eps * sigma_eps;
            let sd = variance.sqrt();
            let g = DMatrix::from_fn(q, k, |_, _| rng.sample::<f64, _>(StandardNormal) * sd);
            (g, variance)
        }
        EffectType::Sparse { zero_fraction } => {
            let m = ((k as f64) * (1.0 - zero_fraction)).round() as usize;
            let m = m.min(k);
            let mut g = DMatrix::zeros(q, k);
            for row in 0..q {
                let mut pos = rand::seq::index::sample(rng, k, m).into_vec();
                pos.sort_unstable();
                for j in pos {
                    g[(row, j)] = if rng.random::<f64>() < 0.5 { 1.0 } else { -1.0 };
                }
            }
            (g, 0.0)
        }
    }
}

/// Generate one replicate of a scenario. `seed` selects the experiment,
/// `replicate` the stream within it.
pub fn gen_dataset(
    config: &ScenarioConfig,
    seed: u64,
    replicate: u64,
) -> Result<(ClusteredDataset, ScenarioTruth)> {
    config.validate()?;
    let (p, k, q) = config.preset.dims();
    let nk = config.n_per_cluster;
    let n = k * nk;

    // Per-cluster split sizes, identical across clusters.
    let (ftr, fva, _) = config.split_fractions;
    let n_tr = (ftr * nk as f64).round() as usize;
    let n_va = (fva * nk as f64).round() as usize;
    if n_tr == 0 || n_va == 0 || n_tr + n_va >= nk {
        return Err(Error::InvalidSplit(format!(
            "cluster size {nk} splits into {n_tr}/{n_va}/{} rows",
            nk as i64 - n_tr as i64 - n_va as i64
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);

    let beta = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (gamma, effect_variance) = draw_gamma(&mut rng, k, q, config.effect, config.sigma_eps);
    let c = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));

    let mut x = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    let mut roles = Vec::with_capacity(n);
    for kk in 0..k {
        let m_k: f64 = (0..q).map(|r| c[r] * gamma[(r, kk)]).sum();
        for i in 0..nk {
            let row = kk * nk + i;
            for j in 0..p {
                x[(row, j)] = m_k + rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(kk);
            roles.push(if i < n_tr {
                Role::Train
            } else if i < n_tr + n_va {
                Role::Validation
            } else {
                Role::Test
            });
        }
    }

    let z = if q == 2 {
        Some(DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)))
    } else {
        None
    };
    let noise =
        DVector::from_fn(n, |_, _| config.sigma_eps * rng.sample::<f64, _>(StandardNormal));

    let mut y = &x * &beta + &noise;
    for (i, &kk) in labels.iter().enumerate() {
        y[i] += gamma[(0, kk)];
        if q == 2 {
            y[i] += z.as_ref().unwrap()[i] * gamma[(1, kk)];
        }
    }

    let width = (k.max(2) - 1).to_string().len().max(2);
    let cluster_order: Vec<String> = (0..k).map(|kk| format!("c{kk:0width$}")).collect();
    let dataset = ClusteredDataset::new(x, z, y, labels, cluster_order, roles)?;
    let truth = ScenarioTruth { beta, gamma, c, sigma_eps: config.sigma_eps, effect_variance, noise };
    Ok((dataset, truth))
}

/// The full scenario grid: per preset, ten Gaussian effect variances
/// (10, 20, ..., 100) and twelve sparsity levels.
pub fn scenario_grid() -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for preset in [Preset::Low, Preset::Medium, Preset::High] {
        for v in (1..=10).map(|i| (i * 10) as f64) {
            out.push(ScenarioConfig::new(preset, EffectType::Gaussian { variance: v }));
        }
        for zf in [0.90, 0.80, 0.75, 0.66, 0.60, 0.50, 0.40, 0.33, 0.25, 0.20, 0.10, 0.0] {
            out.push(ScenarioConfig::new(preset, EffectType::Sparse { zero_fraction: zf }));
        }
    }
    out
}
