//! Mouse cortex protein expression experiment: loading the canonical UCI
//! export, holding out whole mice, and comparing the sparse cluster model
//! against the baselines on each configured outcome protein.
//!
//! The canonical file has a MouseID column (measurement ids like `309_1`,
//! mouse id is the prefix before the last underscore), 77 protein columns,
//! and four metadata columns. A structurally identical synthetic fixture
//! generator is included so the full pipeline can run without the original
//! export; point the loader at the real file to reproduce the experiment.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_lmem_random_intercept, fit_ols, fit_ridge, LmemOptions};
use crate::error::{Error, Result};
use crate::model::{ClusteredDataset, Role};
use crate::pipeline::{fit_full, tune_sparsity, AssignMode};
use crate::solver::SolveStatus;
use crate::tree::TreeOptions;

/// Metadata columns of the canonical export; every other column is a protein.
pub const META_COLUMNS: [&str; 5] = ["MouseID", "Genotype", "Treatment", "Behavior", "class"];

pub const EXPECTED_PROTEIN_COLUMNS: usize = 77;

/// Default outcome panel. This list is configuration data, not structure:
/// the experiment runs on any protein names present in the file.
pub const DEFAULT_OUTCOMES: [&str; 11] = [
    "DYRK1A_N",
    "ITSN1_N",
    "BDNF_N",
    "NR1_N",
    "NR2A_N",
    "pCAMKII_N",
    "pERK_N",
    "SOD1_N",
    "pNUMB_N",
    "pGSK3B_N",
    "pP70S6_N",
];

/// Which proteins serve as covariates for a given outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CovariatePolicy {
    /// Every protein column except the outcome.
    AllOthers,
    /// An explicit subset (must not contain the outcome).
    Subset(Vec<String>),
}

fn mouse_of(measurement_id: &str) -> String {
    match measurement_id.rfind('_') {
        Some(pos) => measurement_id[..pos].to_string(),
        None => measurement_id.to_string(),
    }
}

/// Loads one regression problem from the protein export: outcome = the named
/// protein, covariates per policy, clusters = mice, complete cases only
/// (rows missing any used value are dropped).
pub fn load_mouse_protein(
    path: &Path,
    outcome: &str,
    policy: &CovariatePolicy,
) -> Result<ClusteredDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(File::open(path)?));
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();

    let mouse_idx = headers
        .iter()
        .position(|h| h == "MouseID")
        .ok_or_else(|| Error::Schema("no MouseID column".into()))?;
    let protein_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !META_COLUMNS.contains(h))
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    if protein_cols.len() != EXPECTED_PROTEIN_COLUMNS {
        return Err(Error::Schema(format!(
            "{} protein columns, expected {EXPECTED_PROTEIN_COLUMNS}",
            protein_cols.len()
        )));
    }

    let outcome_idx = protein_cols
        .iter()
        .find(|(_, name)| name == outcome)
        .map(|&(i, _)| i)
        .ok_or_else(|| Error::UnknownProtein(outcome.to_string()))?;
    let covariates: Vec<(usize, String)> = match policy {
        CovariatePolicy::AllOthers => {
            protein_cols.iter().filter(|(i, _)| *i != outcome_idx).cloned().collect()
        }
        CovariatePolicy::Subset(names) => {
            if names.iter().any(|n| n == outcome) {
                return Err(Error::InvalidInput(format!(
                    "outcome '{outcome}' listed among covariates"
                )));
            }
            names
                .iter()
                .map(|n| {
                    protein_cols
                        .iter()
                        .find(|(_, name)| name == n)
                        .map(|(i, _)| (*i, n.clone()))
                        .ok_or_else(|| Error::UnknownProtein(n.clone()))
                })
                .collect::<Result<_>>()?
        }
    };

    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut y = Vec::new();
    let mut labels = Vec::new();
    let mut cluster_order: Vec<String> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row: row_no,
            col: "<record>".into(),
            msg: e.to_string(),
        })?;
        let cell = |idx: usize| record.get(idx).unwrap_or("").trim();
        let missing = |idx: usize| {
            let c = cell(idx);
            c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
        };
        if missing(outcome_idx) || covariates.iter().any(|&(idx, _)| missing(idx)) {
            continue;
        }
        let parse = |idx: usize, name: &str| -> Result<f64> {
            cell(idx).parse::<f64>().map_err(|e| Error::Parse {
                row: row_no,
                col: name.to_string(),
                msg: format!("'{}' {e}", cell(idx)),
            })
        };
        y.push(parse(outcome_idx, outcome)?);
        let mut xr = Vec::with_capacity(covariates.len());
        for (idx, name) in &covariates {
            xr.push(parse(*idx, name)?);
        }
        x_rows.push(xr);
        let mouse = mouse_of(cell(mouse_idx));
        let li = match cluster_order.iter().position(|c| *c == mouse) {
            Some(li) => li,
            None => {
                cluster_order.push(mouse);
                cluster_order.len() - 1
            }
        };
        labels.push(li);
    }
    if x_rows.is_empty() {
        return Err(Error::EmptyAfterFiltering(format!(
            "no complete cases for outcome '{outcome}'"
        )));
    }
    let n = x_rows.len();
    let p = covariates.len();
    let x = DMatrix::from_fn(n, p, |i, j| x_rows[i][j]);
    let roles = vec![Role::Train; n];
    ClusteredDataset::new(x, None, DVector::from_vec(y), labels, cluster_order, roles)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProteinConfig {
    pub outcomes: Vec<String>,
    /// Fraction of mice held out whole as the test set.
    pub test_fraction: f64,
    /// Fraction of each training mouse's rows used for budget tuning.
    pub val_fraction: f64,
    pub seed: u64,
    /// Budget grid; `None` uses the coarse default {0, K}.
    pub grid: Option<Vec<usize>>,
    pub mu: f64,
    pub mode: AssignMode,
    /// Split rows within every mouse instead of holding out whole mice; the
    /// test rows then come from known clusters.
    pub within_mouse_split: bool,
    pub tree: TreeOptions,
}

impl Default for ProteinConfig {
    fn default() -> Self {
        Self {
            outcomes: DEFAULT_OUTCOMES.iter().map(|s| s.to_string()).collect(),
            test_fraction: 0.2,
            val_fraction: 0.25,
            seed: 7,
            grid: None,
            mu: 1e-3,
            mode: AssignMode::Soft,
            within_mouse_split: false,
            tree: TreeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProteinOutcomeReport {
    pub outcome: String,
    pub n_complete: usize,
    pub k_mice: usize,
    pub k_test_mice: usize,
    pub chosen_budget: usize,
    pub solver_status: SolveStatus,
    pub mio_test_mse: f64,
    pub ols_test_mse: Option<f64>,
    pub ridge_test_mse: Option<f64>,
    pub lmem_test_mse: Option<f64>,
    pub lmem_note: Option<String>,
}

/// Assigns roles in place. Whole-mouse holdout: a seeded draw of mice whose
/// every row becomes test; remaining mice have val_fraction of their rows
/// (seeded, per mouse) set aside for tuning. Within-mouse: 60/20/20 row
/// split inside every mouse.
pub fn assign_protein_roles(data: &mut ClusteredDataset, cfg: &ProteinConfig) -> Result<Vec<usize>> {
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0)
        || !(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)
    {
        return Err(Error::InvalidInput(
            "test and validation fractions must lie in (0, 1)".into(),
        ));
    }
    let k = data.k();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows_of = |kk: usize, data: &ClusteredDataset| -> Vec<usize> {
        (0..data.n()).filter(|&i| data.labels[i] == kk).collect()
    };

    if cfg.within_mouse_split {
        for kk in 0..k {
            let mut rows = rows_of(kk, data);
            rows.shuffle(&mut rng);
            let n_m = rows.len();
            let n_tr = ((n_m as f64) * 0.6).round() as usize;
            let n_va = ((n_m as f64) * 0.2).round() as usize;
            if n_tr == 0 || n_va == 0 || n_tr + n_va >= n_m {
                return Err(Error::InvalidSplit(format!(
                    "mouse {} has {n_m} rows, too few for a 60/20/20 split",
                    data.cluster_order[kk]
                )));
            }
            for (pos, &i) in rows.iter().enumerate() {
                data.roles[i] = if pos < n_tr {
                    Role::Train
                } else if pos < n_tr + n_va {
                    Role::Validation
                } else {
                    Role::Test
                };
            }
        }
        return Ok(Vec::new());
    }

    let n_test_mice = (((k as f64) * cfg.test_fraction).round() as usize).clamp(1, k - 1);
    let mut mice: Vec<usize> = (0..k).collect();
    mice.shuffle(&mut rng);
    let test_mice: Vec<usize> = {
        let mut t = mice[..n_test_mice].to_vec();
        t.sort_unstable();
        t
    };
    for kk in 0..k {
        let mut rows = rows_of(kk, data);
        if test_mice.contains(&kk) {
            for &i in &rows {
                data.roles[i] = Role::Test;
            }
            continue;
        }
        rows.shuffle(&mut rng);
        let n_m = rows.len();
        let n_va = (((n_m as f64) * cfg.val_fraction).round() as usize).clamp(1, n_m - 1);
        for (pos, &i) in rows.iter().enumerate() {
            data.roles[i] = if pos < n_va { Role::Validation } else { Role::Train };
        }
    }
    Ok(test_mice)
}

/// Coarse default for protein-scale K. Exact certification of mid-range
/// budgets needs a branch-and-bound pass whose bound is weak when dozens of
/// cluster columns have near-tied gradients, so the default compares no
/// effects against all effects; pass an explicit grid to search between.
fn default_grid(k: usize) -> Vec<usize> {
    let mut g = vec![0, k];
    g.dedup();
    g
}

/// Runs the full comparison for one outcome protein on data whose roles are
/// already assigned.
pub fn run_protein_outcome(
    data: &ClusteredDataset,
    outcome: &str,
    k_test_mice: usize,
    cfg: &ProteinConfig,
) -> Result<ProteinOutcomeReport> {
    let train = data.subset(&data.rows_with_role(&[Role::Train]));
    let val = data.subset(&data.rows_with_role(&[Role::Validation]));
    let trainval = data.subset(&data.rows_with_role(&[Role::Train, Role::Validation]));
    let test = data.subset(&data.rows_with_role(&[Role::Test]));
    if test.n() == 0 {
        return Err(Error::EmptyAfterFiltering(format!(
            "outcome '{outcome}' has no test rows"
        )));
    }

    let grid = cfg.grid.clone().unwrap_or_else(|| default_grid(data.k()));
    let (budget, trace) = tune_sparsity(&train, &val, &grid, cfg.mu)?;
    let mut reg = fit_full(&trainval, budget, cfg.mu, &cfg.tree, cfg.mode)?;
    reg.tuning_trace = trace;

    let mio_pred = if cfg.within_mouse_split {
        let labels: Vec<String> =
            test.labels.iter().map(|&l| test.cluster_order[l].clone()).collect();
        reg.predict_labeled(&test.x, None, &labels)?
    } else {
        reg.predict(&test.x, None)?
    };
    let mse = |pred: &DVector<f64>| (pred - &test.y).norm_squared() / test.n() as f64;

    let ols_test_mse = fit_ols(&trainval.x, &trainval.y)
        .ok()
        .map(|f| mse(&(&test.x * &f.beta)));
    let ridge_test_mse = fit_ridge(&trainval.x, &trainval.y, cfg.mu)
        .ok()
        .map(|f| mse(&(&test.x * &f.beta)));
    let (lmem_test_mse, lmem_note) = match fit_lmem_random_intercept(
        &trainval.x,
        &trainval.y,
        &trainval.labels,
        trainval.k(),
        &LmemOptions::default(),
    ) {
        Ok(f) => (Some(mse(&(&test.x * &f.beta))), None),
        Err(e) => (None, Some(e.to_string())),
    };

    Ok(ProteinOutcomeReport {
        outcome: outcome.to_string(),
        n_complete: data.n(),
        k_mice: data.k(),
        k_test_mice,
        chosen_budget: budget,
        solver_status: reg.fit.status,
        mio_test_mse: mse(&mio_pred),
        ols_test_mse,
        ridge_test_mse,
        lmem_test_mse,
        lmem_note,
    })
}

/// Full experiment: one report per configured outcome. Per-outcome failures
/// abort only that outcome; the error text is folded into its report slot.
pub fn run_protein_experiment(
    path: &Path,
    cfg: &ProteinConfig,
) -> Result<Vec<std::result::Result<ProteinOutcomeReport, (String, String)>>> {
    if cfg.outcomes.is_empty() {
        return Err(Error::InvalidInput("no outcome proteins configured".into()));
    }
    let mut out = Vec::with_capacity(cfg.outcomes.len());
    for outcome in &cfg.outcomes {
        let one = (|| -> Result<ProteinOutcomeReport> {
            let mut data = load_mouse_protein(path, outcome, &CovariatePolicy::AllOthers)?;
            let test_mice = assign_protein_roles(&mut data, cfg)?;
            run_protein_outcome(&data, outcome, test_mice.len(), cfg)
        })();
        out.push(one.map_err(|e| (outcome.clone(), e.to_string())));
    }
    Ok(out)
}

pub const PROTEIN_REPORT_COLUMNS: [&str; 11] = [
    "outcome",
    "n_complete",
    "k_mice",
    "k_test_mice",
    "chosen_budget",
    "solver_status",
    "mio_test_mse",
    "ols_test_mse",
    "ridge_test_mse",
    "lmem_test_mse",
    "note",
];

pub fn write_protein_csv(
    path: &Path,
    reports: &[std::result::Result<ProteinOutcomeReport, (String, String)>],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(PROTEIN_REPORT_COLUMNS)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    for r in reports {
        let rec: Vec<String> = match r {
            Ok(r) => vec![
                r.outcome.clone(),
                r.n_complete.to_string(),
                r.k_mice.to_string(),
                r.k_test_mice.to_string(),
                r.chosen_budget.to_string(),
                match r.solver_status {
                    SolveStatus::Optimal => "optimal".into(),
                    SolveStatus::IterationLimit => "iteration_limit".into(),
                    SolveStatus::TimeLimit => "time_limit".into(),
                },
                format!("{}", r.mio_test_mse),
                opt(r.ols_test_mse),
                opt(r.ridge_test_mse),
                opt(r.lmem_test_mse),
                r.lmem_note.clone().unwrap_or_default(),
            ],
            Err((outcome, msg)) => {
                let mut rec = vec![outcome.clone()];
                rec.extend(std::iter::repeat_n(String::new(), 9));
                rec.push(msg.clone());
                rec
            }
        };
        w.write_record(&rec).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Canonical protein column names, used by the synthetic fixture so default
/// outcome panels apply to both real and synthetic files.
pub const PROTEIN_NAMES: [&str; 77] = [
    "DYRK1A_N",
    "ITSN1_N",
    "BDNF_N",
    "NR1_N",
    "NR2A_N",
    "pAKT_N",
    "pBRAF_N",
    "pCAMKII_N",
    "pCREB_N",
    "pELK_N",
    "pERK_N",
    "pJNK_N",
    "PKCA_N",
    "pMEK_N",
    "pNR1_N",
    "pNR2A_N",
    "pNR2B_N",
    "pPKCAB_N",
    "pRSK_N",
    "AKT_N",
    "BRAF_N",
    "CAMKII_N",
    "CREB_N",
    "ELK_N",
    "ERK_N",
    "GSK3B_N",
    "JNK_N",
    "MEK_N",
    "TRKA_N",
    "RSK_N",
    "APP_N",
    "Bcatenin_N",
    "SOD1_N",
    "MTOR_N",
    "P38_N",
    "pMTOR_N",
    "DSCR1_N",
    "AMPKA_N",
    "NR2B_N",
    "pNUMB_N",
    "RAPTOR_N",
    "TIAM1_N",
    "pP70S6_N",
    "NUMB_N",
    "P70S6_N",
    "pGSK3B_N",
    "pPKCG_N",
    "CDK5_N",
    "S6_N",
    "ADARB1_N",
    "AcetylH3K9_N",
    "RRP1_N",
    "BAX_N",
    "ARC_N",
    "ERBB4_N",
    "nNOS_N",
    "Tau_N",
    "GFAP_N",
    "GluR3_N",
    "GluR4_N",
    "IL1B_N",
    "P3525_N",
    "pCASP9_N",
    "PSD95_N",
    "SNCA_N",
    "Ubiquitin_N",
    "pGSK3B_Tyr216_N",
    "SHH_N",
    "BAD_N",
    "BCL2_N",
    "pS6_N",
    "pCFOS_N",
    "SYP_N",
    "H3AcK18_N",
    "EGR1_N",
    "H3MeK4_N",
    "CaNA_N",
];

const FIXTURE_MICE: usize = 72;
const FIXTURE_ROWS_PER_MOUSE: usize = 15;
const FIXTURE_FACTORS: usize = 6;

/// Writes a synthetic export with the canonical shape: 72 mice, 15 rows
/// each, 77 protein columns, missing cells trimming complete cases to 552.
/// Values follow a factor model with per-mouse effects, strong on the
/// default outcome panel, so cluster-aware fits have something to find.
pub fn write_synthetic_protein_fixture(path: &Path, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_prot = PROTEIN_NAMES.len();
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let base: Vec<f64> = (0..n_prot).map(|_| 0.5 + 2.5 * rng.random::<f64>()).collect();
    let sigma: Vec<f64> = (0..n_prot).map(|_| 0.3 + 0.3 * rng.random::<f64>()).collect();
    let loadings: Vec<Vec<f64>> = (0..n_prot)
        .map(|_| (0..FIXTURE_FACTORS).map(|_| 0.4 * normal(&mut rng)).collect())
        .collect();
    // Shared mouse factor: mild and transferable, damped on the outcome
    // panel so its cluster effects are dominated by the own per-mouse term
    // below, which no covariate carries.
    let shared: Vec<f64> = PROTEIN_NAMES
        .iter()
        .map(|n| {
            let scale = if DEFAULT_OUTCOMES.contains(n) { 0.05 } else { 0.3 };
            scale * normal(&mut rng)
        })
        .collect();
    let own_sd: Vec<f64> = PROTEIN_NAMES
        .iter()
        .map(|n| if DEFAULT_OUTCOMES.contains(n) { 1.0 } else { 0.25 })
        .collect();

    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["MouseID".to_string()];
    header.extend(PROTEIN_NAMES.iter().map(|s| s.to_string()));
    header.extend(["Genotype", "Treatment", "Behavior", "class"].map(String::from));
    writeln!(w, "{}", header.join(","))?;

    for m in 0..FIXTURE_MICE {
        let mouse_id = format!("{}", 3101 + m);
        let a_m = normal(&mut rng);
        let own: Vec<f64> = (0..n_prot).map(|j| own_sd[j] * normal(&mut rng)).collect();
        // 48 mice keep 8 complete rows, 24 keep 7: 48*8 + 24*7 = 552.
        let n_complete = if m % 3 == 2 { 7 } else { 8 };
        let genotype = if m < FIXTURE_MICE / 2 { "Control" } else { "Ts65Dn" };
        let treatment = if m % 2 == 0 { "Memantine" } else { "Saline" };
        let behavior = if (m / 2) % 2 == 0 { "C/S" } else { "S/C" };
        let class = format!(
            "{}-{}-{}",
            if genotype == "Control" { "c" } else { "t" },
            if behavior == "C/S" { "CS" } else { "SC" },
            if treatment == "Memantine" { "m" } else { "s" },
        );

        for r in 0..FIXTURE_ROWS_PER_MOUSE {
            let f: Vec<f64> = (0..FIXTURE_FACTORS).map(|_| normal(&mut rng)).collect();
            let mut values: Vec<f64> = (0..n_prot)
                .map(|j| {
                    let factor: f64 =
                        (0..FIXTURE_FACTORS).map(|t| loadings[j][t] * f[t]).sum();
                    base[j] + factor + shared[j] * a_m + own[j] + sigma[j] * normal(&mut rng)
                })
                .collect();
            // Rows beyond the complete quota lose one to three protein cells.
            let complete = (r + m) % FIXTURE_ROWS_PER_MOUSE < n_complete;
            let mut blank = [usize::MAX; 3];
            if !complete {
                let n_blank = 1 + (rng.random::<u32>() % 3) as usize;
                for slot in blank.iter_mut().take(n_blank) {
                    *slot = (rng.random::<u32>() as usize) % n_prot;
                }
            }
            let mut rec = vec![format!("{mouse_id}_{}", r + 1)];
            for (j, v) in values.iter_mut().enumerate() {
                if blank.contains(&j) {
                    rec.push(String::new());
                } else {
                    rec.push(format!("{v:.9}"));
                }
            }
            rec.extend([genotype.into(), treatment.into(), behavior.into(), class.clone()]);
            writeln!(w, "{}", rec.join(","))?;
        }
    }
    w.flush()?;
    Ok(())
}
