//! End-to-end orchestration: sparsity tuning on a validation split, refit on
//! the augmented training set, tree training, prediction, and the recovery
//! metrics reported by the evaluation campaigns.
//!
//! Tuning exploits that validation rows carry known cluster labels, so no
//! tree is needed until test time. The tree only matters for observations
//! whose cluster is unknown (or was never seen), which is exactly the test
//! path in every experiment here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    self, fit_lmem_random_intercept, fit_ols, fit_ridge, LmemFit, LmemOptions, OlsFit, RidgeFit,
};
use crate::error::{Error, Result};
use crate::model::{build_extended_design, ClusteredDataset, Role};
use crate::simulator::{ScenarioConfig, ScenarioTruth};
use crate::solver::{solve_outer_approximation, MioFit, SolveOptions, SolveStatus};
use crate::tree::{fit_classification_tree, ClassTree, TreeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignMode {
    /// Route to the single most probable cluster (probability ties break to
    /// the lowest cluster index).
    Hard,
    /// Probability-weighted average of all cluster effects.
    Soft,
}

impl Default for AssignMode {
    fn default() -> Self {
        AssignMode::Soft
    }
}

impl AssignMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(AssignMode::Hard),
            "soft" => Ok(AssignMode::Soft),
            other => Err(Error::InvalidInput(format!("unknown assignment mode '{other}'"))),
        }
    }
}

fn extended_design_of(data: &ClusteredDataset) -> Result<crate::model::ExtendedDesign> {
    let q = if data.z.is_some() { 2 } else { 1 };
    build_extended_design(&data.x, &data.assignment(), data.z.as_ref(), q)
}

/// Fit the sparse cluster model on `data` at one per-block budget.
fn fit_mio(data: &ClusteredDataset, budget: usize, mu: f64) -> Result<MioFit> {
    fit_mio_with(data, budget, mu, &SolveOptions::default())
}

fn fit_mio_with(
    data: &ClusteredDataset,
    budget: usize,
    mu: f64,
    solve: &SolveOptions,
) -> Result<MioFit> {
    let design = extended_design_of(data)?;
    let budgets = vec![budget; design.q()];
    solve_outer_approximation(&design, &data.y, &budgets, mu, solve)
}

/// Offset each row receives from cluster `label`: the fitted intercept plus,
/// when slopes are present, z times the fitted slope.
fn effect_offset(gamma: &DMatrix<f64>, label: usize, z: Option<f64>) -> f64 {
    let mut off = gamma[(0, label)];
    if gamma.nrows() == 2 {
        off += z.unwrap_or(0.0) * gamma[(1, label)];
    }
    off
}

/// Validation MSE of a fit whose cluster labels are known.
fn labeled_mse(fit: &MioFit, data: &ClusteredDataset) -> f64 {
    let pred = predict_with_labels(
        &fit.coefficients.beta,
        &fit.coefficients.gamma,
        &data.x,
        data.z.as_ref(),
        &data.labels,
    );
    (&pred - &data.y).norm_squared() / data.n() as f64
}

fn predict_with_labels(
    beta: &DVector<f64>,
    gamma: &DMatrix<f64>,
    x: &DMatrix<f64>,
    z: Option<&DVector<f64>>,
    labels: &[usize],
) -> DVector<f64> {
    let mut pred = x * beta;
    for (i, &l) in labels.iter().enumerate() {
        pred[i] += effect_offset(gamma, l, z.map(|z| z[i]));
    }
    pred
}

/// Sweep per-block budgets over `grid`, fitting on `train` and scoring MSE on
/// `val` with true cluster labels. Returns the winning budget and the full
/// trace; a grid point whose solve fails is recorded as `None` and skipped.
/// Ties go to the smaller budget.
pub fn tune_sparsity(
    train: &ClusteredDataset,
    val: &ClusteredDataset,
    grid: &[usize],
    mu: f64,
) -> Result<(usize, Vec<(usize, Option<f64>)>)> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty budget grid".into()));
    }
    if train.cluster_order != val.cluster_order {
        return Err(Error::InvalidInput(
            "train and validation sets disagree on cluster order".into(),
        ));
    }
    let mut trace = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, usize)> = None;
    for &budget in grid {
        let mse = fit_mio(train, budget, mu).ok().map(|fit| labeled_mse(&fit, val));
        trace.push((budget, mse));
        if let Some(mse) = mse {
            let better = match best {
                None => true,
                Some((bm, bb)) => mse < bm || (mse == bm && budget < bb),
            };
            if better {
                best = Some((mse, budget));
            }
        }
    }
    let (_, budget) = best.ok_or_else(|| {
        Error::NonConvergence("every grid point failed during sparsity tuning".into())
    })?;
    Ok((budget, trace))
}

/// The deployable predictor: sparse coefficients plus a feature tree that
/// routes unlabeled observations to cluster effects.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRegressor {
    pub fit: MioFit,
    pub tree: ClassTree,
    pub mode: AssignMode,
    pub cluster_order: Vec<String>,
    /// Per-block activation budgets used for the final fit.
    pub chosen_budgets: Vec<usize>,
    /// (budget, validation MSE) pairs from tuning; empty when the budget was
    /// caller-supplied.
    pub tuning_trace: Vec<(usize, Option<f64>)>,
    pub mu: f64,
    /// Covariates were trained with a leading ones column; rows fed to
    /// predict must get the same column prepended.
    #[serde(default)]
    pub intercept: bool,
}

/// Fit the final model on the augmented training set (train plus validation)
/// at a fixed per-block budget, and train the assignment tree on the same
/// rows.
pub fn fit_full(
    data: &ClusteredDataset,
    budget: usize,
    mu: f64,
    tree_opts: &TreeOptions,
    mode: AssignMode,
) -> Result<ClusterRegressor> {
    fit_full_with(data, budget, mu, &SolveOptions::default(), tree_opts, mode)
}

/// [`fit_full`] with explicit solver termination settings; the returned
/// status records whether the solve certified optimality before a limit hit.
pub fn fit_full_with(
    data: &ClusteredDataset,
    budget: usize,
    mu: f64,
    solve: &SolveOptions,
    tree_opts: &TreeOptions,
    mode: AssignMode,
) -> Result<ClusterRegressor> {
    let fit = fit_mio_with(data, budget, mu, solve)?;
    let tree = fit_classification_tree(&data.x, &data.labels, data.k(), tree_opts)?;
    Ok(ClusterRegressor {
        chosen_budgets: vec![budget; fit.coefficients.q()],
        fit,
        tree,
        mode,
        cluster_order: data.cluster_order.clone(),
        tuning_trace: Vec::new(),
        mu,
        intercept: false,
    })
}

impl ClusterRegressor {
    pub fn beta(&self) -> &DVector<f64> {
        &self.fit.coefficients.beta
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.fit.coefficients.gamma
    }

    fn check_predict_inputs(&self, x: &DMatrix<f64>, z: Option<&DVector<f64>>) -> Result<()> {
        if x.ncols() != self.beta().len() {
            return Err(Error::LengthMismatch(format!(
                "{} covariates, model has {}",
                x.ncols(),
                self.beta().len()
            )));
        }
        let needs_z = self.gamma().nrows() == 2;
        match (needs_z, z) {
            (true, None) => Err(Error::InvalidInput(
                "model has cluster slopes; a z column is required".into(),
            )),
            (false, Some(_)) => Err(Error::InvalidInput(
                "model has no cluster slopes; z column not accepted".into(),
            )),
            (_, Some(z)) if z.len() != x.nrows() => Err(Error::LengthMismatch(format!(
                "{} z entries for {} rows",
                z.len(),
                x.nrows()
            ))),
            _ => Ok(()),
        }
    }

    /// Predict with known per-row cluster labels: offset is exactly the
    /// fitted effect of the named cluster.
    pub fn predict_labeled(
        &self,
        x: &DMatrix<f64>,
        z: Option<&DVector<f64>>,
        labels: &[String],
    ) -> Result<DVector<f64>> {
        self.check_predict_inputs(x, z)?;
        if labels.len() != x.nrows() {
            return Err(Error::LengthMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                x.nrows()
            )));
        }
        let indices: Vec<usize> = labels
            .iter()
            .map(|l| {
                self.cluster_order
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| Error::UnknownLabel(format!("cluster '{l}' not in model")))
            })
            .collect::<Result<_>>()?;
        Ok(predict_with_labels(self.beta(), self.gamma(), x, z, &indices))
    }

    /// Predict rows whose cluster is unknown: the tree produces a cluster
    /// distribution per row, and the configured assignment mode turns it into
    /// an effect offset.
    pub fn predict(&self, x: &DMatrix<f64>, z: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        self.check_predict_inputs(x, z)?;
        let gamma = self.gamma();
        let mut pred = x * self.beta();
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let zi = z.map(|z| z[i]);
            pred[i] += match self.mode {
                AssignMode::Hard => {
                    let label = self.tree.predict_row(&row)?;
                    effect_offset(gamma, label, zi)
                }
                AssignMode::Soft => {
                    let probs = self.tree.predict_proba_row(&row)?;
                    probs
                        .iter()
                        .enumerate()
                        .map(|(k, &p)| p * effect_offset(gamma, k, zi))
                        .sum()
                }
            };
        }
        Ok(pred)
    }
}

/// Variance-ratio estimate from a sparse fit with intercept effects only:
/// sample variance of the K fitted intercepts (zeros included) over that
/// variance plus the degrees-of-freedom-corrected residual variance.
pub fn estimate_icc_mio(fit: &MioFit, data: &ClusteredDataset) -> Result<f64> {
    let gamma = &fit.coefficients.gamma;
    if gamma.nrows() != 1 {
        return Err(Error::InvalidInput(
            "ICC estimation requires an intercepts-only effect block".into(),
        ));
    }
    let (n, p, k) = (data.n(), data.p(), data.k());
    let support_size = gamma.iter().filter(|&&g| g != 0.0).count();
    let df = n as i64 - p as i64 - support_size as i64;
    if df <= 0 {
        return Err(Error::DegenerateVariance(format!(
            "no residual degrees of freedom (n = {n}, p = {p}, support = {support_size})"
        )));
    }
    let resid = predict_with_labels(
        &fit.coefficients.beta,
        gamma,
        &data.x,
        data.z.as_ref(),
        &data.labels,
    ) - &data.y;
    let sigma2_eps = resid.norm_squared() / df as f64;
    if k < 2 {
        return Err(Error::DegenerateVariance("need at least two clusters".into()));
    }
    let mean = gamma.row(0).sum() / k as f64;
    let var_gamma =
        gamma.row(0).iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / (k - 1) as f64;
    let denom = var_gamma + sigma2_eps;
    if denom <= 0.0 {
        return Err(Error::DegenerateVariance("zero total variance".into()));
    }
    Ok(var_gamma / denom)
}

/// Recovery and prediction metrics for one method on one replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodMetrics {
    /// Squared coefficient error ||beta_true - beta_hat||^2.
    pub beta_err: f64,
    /// Per-entry effect error ||gamma_true - gamma_hat||^2 / (qK).
    pub gamma_err: f64,
    /// Raw squared effect error, for comparing normalization conventions.
    pub gamma_err_raw: f64,
    /// Fraction of truly-zero effect entries estimated as exactly zero;
    /// 0 when the truth has no zero entries.
    pub sparsity_recovery: f64,
    pub icc_est: Option<f64>,
    /// Held-out MSE with test rows scored by their true cluster labels.
    pub test_mse: f64,
    /// Held-out MSE with offsets routed through the assignment tree instead,
    /// as an out-of-cluster deployment would; only the cluster-aware fit has
    /// a tree, so it is absent for the baselines.
    pub test_mse_tree: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    pub replicate: u64,
    pub icc_true: f64,
    pub chosen_budget: Option<usize>,
    pub solver_status: Option<SolveStatus>,
    pub mio: Option<MethodMetrics>,
    pub ols: Option<MethodMetrics>,
    pub ridge: Option<MethodMetrics>,
    pub lmem: Option<MethodMetrics>,
    /// Structured note when the mixed model failed (it is reported, never a
    /// crash).
    pub lmem_note: Option<String>,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        match name {
            "mio" => self.mio.as_ref(),
            "ols" => self.ols.as_ref(),
            "ridge" => self.ridge.as_ref(),
            "lmem" => self.lmem.as_ref(),
            _ => None,
        }
    }
}

pub const METHOD_ORDER: [&str; 4] = ["mio", "ols", "ridge", "lmem"];

fn beta_err(truth: &ScenarioTruth, beta_hat: &DVector<f64>) -> f64 {
    (&truth.beta - beta_hat).norm_squared()
}

fn gamma_errs(truth: &ScenarioTruth, gamma_hat: &DMatrix<f64>) -> (f64, f64, f64) {
    let diff = &truth.gamma - gamma_hat;
    let raw = diff.norm_squared();
    let per_entry = raw / (truth.gamma.nrows() * truth.gamma.ncols()) as f64;
    let true_zeros: Vec<(usize, usize)> = (0..truth.gamma.nrows())
        .flat_map(|r| (0..truth.gamma.ncols()).map(move |c| (r, c)))
        .filter(|&(r, c)| truth.gamma[(r, c)] == 0.0)
        .collect();
    let recovery = if true_zeros.is_empty() {
        0.0
    } else {
        true_zeros.iter().filter(|&&(r, c)| gamma_hat[(r, c)] == 0.0).count() as f64
            / true_zeros.len() as f64
    };
    (per_entry, raw, recovery)
}

fn mse(pred: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (pred - y).norm_squared() / y.len() as f64
}

/// True intraclass correlation of a scenario: nominal effect variance for
/// Gaussian draws, the realized population variance for sparse ones.
pub fn icc_true_of(truth: &ScenarioTruth) -> f64 {
    let var = if truth.effect_variance > 0.0 {
        truth.effect_variance
    } else {
        let row = truth.gamma.row(0);
        let mean = row.sum() / row.len() as f64;
        row.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / row.len() as f64
    };
    var / (var + truth.sigma_eps * truth.sigma_eps)
}

/// Per-method fits feeding one evaluation. Absent entries mean the method
/// failed on this replicate; the failure note is carried separately.
pub struct MethodFits {
    pub mio: Option<ClusterRegressor>,
    pub ols: Option<OlsFit>,
    pub ridge: Option<RidgeFit>,
    pub lmem: Option<LmemFit>,
    pub lmem_note: Option<String>,
}

/// Score every fitted method on the held-out test rows against ground truth.
/// `fit_data` is the augmented training set the models were fit on (needed
/// for the residual variance inside the ICC estimate).
pub fn evaluate_scenario(
    scenario: &str,
    replicate: u64,
    truth: &ScenarioTruth,
    fits: &MethodFits,
    fit_data: &ClusteredDataset,
    test: &ClusteredDataset,
) -> Result<EvalReport> {
    let q = truth.gamma.nrows();
    let k = truth.gamma.ncols();
    let zero_gamma = DMatrix::zeros(q, k);

    let mio = match &fits.mio {
        None => None,
        Some(reg) => {
            // Synthetic test rows keep their cluster identity (the split is
            // within-cluster), so the headline test error scores them with
            // known labels; the tree-routed error is reported alongside.
            let names: Vec<String> =
                test.labels.iter().map(|&l| test.cluster_order[l].clone()).collect();
            let pred = reg.predict_labeled(&test.x, test.z.as_ref(), &names)?;
            let pred_tree = reg.predict(&test.x, test.z.as_ref())?;
            let (gamma_err, gamma_err_raw, recovery) = gamma_errs(truth, reg.gamma());
            let icc_est = if q == 1 { estimate_icc_mio(&reg.fit, fit_data).ok() } else { None };
            Some(MethodMetrics {
                beta_err: beta_err(truth, reg.beta()),
                gamma_err,
                gamma_err_raw,
                sparsity_recovery: recovery,
                icc_est,
                test_mse: mse(&pred, &test.y),
                test_mse_tree: Some(mse(&pred_tree, &test.y)),
            })
        }
    };

    let population_metrics = |beta_hat: &DVector<f64>, gamma_hat: &DMatrix<f64>, icc_est: Option<f64>| -> Result<MethodMetrics> {
        let pred = baselines::predict_population(beta_hat, &test.x)?;
        let (gamma_err, gamma_err_raw, recovery) = gamma_errs(truth, gamma_hat);
        Ok(MethodMetrics {
            beta_err: beta_err(truth, beta_hat),
            gamma_err,
            gamma_err_raw,
            sparsity_recovery: recovery,
            icc_est,
            test_mse: mse(&pred, &test.y),
            test_mse_tree: None,
        })
    };

    let ols = match &fits.ols {
        None => None,
        Some(f) => Some(population_metrics(&f.beta, &zero_gamma, None)?),
    };
    let ridge = match &fits.ridge {
        None => None,
        Some(f) => Some(population_metrics(&f.beta, &zero_gamma, None)?),
    };
    let lmem = match &fits.lmem {
        None => None,
        Some(f) => {
            // BLUPs fill the intercept row; slope effects are outside the
            // random-intercept model and count as zero.
            let mut gamma_hat = DMatrix::zeros(q, k);
            for kk in 0..k.min(f.gamma.len()) {
                gamma_hat[(0, kk)] = f.gamma[kk];
            }
            let icc = crate::baselines::icc_of(f.sigma2_gamma, f.sigma2_eps).ok();
            Some(population_metrics(&f.beta, &gamma_hat, icc)?)
        }
    };

    Ok(EvalReport {
        scenario: scenario.to_string(),
        replicate,
        icc_true: icc_true_of(truth),
        chosen_budget: fits.mio.as_ref().and_then(|r| r.chosen_budgets.first().copied()),
        solver_status: fits.mio.as_ref().map(|r| r.fit.status),
        mio,
        ols,
        ridge,
        lmem,
        lmem_note: fits.lmem_note.clone(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mu: f64,
    /// Budget grid for tuning; `None` means {0, 1, ..., K}.
    pub grid: Option<Vec<usize>>,
    pub tree: TreeOptions,
    pub mode: AssignMode,
    /// Restricted likelihood for the mixed-model baseline.
    pub reml: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mu: 1e-3,
            grid: None,
            tree: TreeOptions::default(),
            mode: AssignMode::Soft,
            reml: false,
        }
    }
}

/// One full replicate: generate, tune on train/validation, refit everything
/// on train plus validation, evaluate on test.
pub fn run_replicate(
    cfg: &ScenarioConfig,
    seed: u64,
    replicate: u64,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (data, truth) = crate::simulator::gen_dataset(cfg, seed, replicate)?;
    let train = data.subset(&data.rows_with_role(&[Role::Train]));
    let val = data.subset(&data.rows_with_role(&[Role::Validation]));
    let trainval = data.subset(&data.rows_with_role(&[Role::Train, Role::Validation]));
    let test = data.subset(&data.rows_with_role(&[Role::Test]));

    let grid: Vec<usize> = match &opts.grid {
        Some(g) => g.clone(),
        None => (0..=data.k()).collect(),
    };
    let (budget, trace) = tune_sparsity(&train, &val, &grid, opts.mu)?;
    let mut reg = fit_full(&trainval, budget, opts.mu, &opts.tree, opts.mode)?;
    reg.tuning_trace = trace;

    let ols = fit_ols(&trainval.x, &trainval.y).ok();
    let ridge = fit_ridge(&trainval.x, &trainval.y, opts.mu).ok();
    let (lmem, lmem_note) = match fit_lmem_random_intercept(
        &trainval.x,
        &trainval.y,
        &trainval.labels,
        trainval.k(),
        &LmemOptions { reml: opts.reml, ..Default::default() },
    ) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let fits = MethodFits { mio: Some(reg), ols, ridge, lmem, lmem_note };
    evaluate_scenario(&cfg.name(), replicate, &truth, &fits, &trainval, &test)
}
