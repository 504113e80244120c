//! Cardinality-constrained ridge regression by outer approximation.
//!
//! The combinatorial part of the estimator lives here: pick which cluster
//! columns of the extended design are active, subject to a per-block budget,
//! so that the ridge objective is minimized. The search alternates between a
//! master problem over binary supports (minimize the pointwise max of the
//! accumulated cutting planes) and exact inner ridge solves that generate a
//! new cut at each proposed support. Fixed-effect columns are pinned active
//! and never count against a budget.

mod inner;
mod master;
mod oracle;

pub use inner::{cut_at, inner_solve};
pub use oracle::{brute_force_best_subset, brute_force_best_subset_seq, OracleSolution};

use std::collections::HashSet;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{split_coefficients, CoefficientSplit, ExtendedDesign};

use inner::GramCache;

/// Binary activation pattern over the extended design's columns. The p
/// fixed-effect columns are pinned active; only the q*K cluster columns are
/// free.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportVector {
    active: Vec<bool>,
    p: usize,
    k: usize,
    q: usize,
}

impl SupportVector {
    /// Fixed-effect columns only; every cluster column off.
    pub fn all_fixed(p: usize, k: usize, q: usize) -> Self {
        let mut active = vec![false; p + q * k];
        active[..p].fill(true);
        Self { active, p, k, q }
    }

    /// Every column active.
    pub fn full(p: usize, k: usize, q: usize) -> Self {
        Self { active: vec![true; p + q * k], p, k, q }
    }

    /// Builds from the free-coordinate bits (length q*K).
    pub fn from_free_bits(bits: &[bool], p: usize, k: usize, q: usize) -> Result<Self> {
        if bits.len() != q * k {
            return Err(Error::LengthMismatch(format!(
                "{} free bits, expected q*k = {}",
                bits.len(),
                q * k
            )));
        }
        let mut s = Self::all_fixed(p, k, q);
        s.active[p..].copy_from_slice(bits);
        Ok(s)
    }

    /// Validates a caller-supplied full activation vector (pinned prefix must
    /// be all true).
    pub fn from_active(active: Vec<bool>, p: usize, k: usize, q: usize) -> Result<Self> {
        if active.len() != p + q * k {
            return Err(Error::LengthMismatch(format!(
                "{} entries, expected p + q*k = {}",
                active.len(),
                p + q * k
            )));
        }
        if active[..p].iter().any(|&b| !b) {
            return Err(Error::InvalidInput(
                "fixed-effect columns must stay active".into(),
            ));
        }
        Ok(Self { active, p, k, q })
    }

    pub fn d(&self) -> usize {
        self.active.len()
    }

    /// Count of pinned (fixed-effect) columns.
    pub fn pinned(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn is_active(&self, col: usize) -> bool {
        self.active[col]
    }

    pub fn free_bits(&self) -> &[bool] {
        &self.active[self.p..]
    }

    pub fn set_free(&mut self, free_idx: usize, on: bool) {
        self.active[self.p + free_idx] = on;
    }

    /// Indices of all active columns, ascending.
    pub fn active_cols(&self) -> Vec<usize> {
        (0..self.d()).filter(|&j| self.active[j]).collect()
    }

    /// Active counts per block (length q).
    pub fn block_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.q];
        for (f, &on) in self.free_bits().iter().enumerate() {
            if on {
                counts[f / self.k] += 1;
            }
        }
        counts
    }

    pub fn within_budgets(&self, budgets: &[usize]) -> bool {
        self.block_counts()
            .iter()
            .zip(budgets)
            .all(|(&c, &b)| c <= b)
    }

    pub(crate) fn check_dims(&self, design: &ExtendedDesign) -> Result<()> {
        if self.p != design.p() || self.k != design.k() || self.q != design.q() {
            return Err(Error::LengthMismatch(format!(
                "support shaped (p={}, k={}, q={}) against design (p={}, k={}, q={})",
                self.p,
                self.k,
                self.q,
                design.p(),
                design.k(),
                design.q()
            )));
        }
        Ok(())
    }

    /// Active-first lexicographic order on the free bits: at the first index
    /// where two supports differ, the one that is active there is smaller.
    /// This is the tie-break used everywhere an objective tie must resolve
    /// deterministically.
    pub fn lex_cmp(&self, other: &SupportVector) -> std::cmp::Ordering {
        for (a, b) in self.free_bits().iter().zip(other.free_bits()) {
            match (a, b) {
                (true, false) => return std::cmp::Ordering::Less,
                (false, true) => return std::cmp::Ordering::Greater,
                _ => {}
            }
        }
        std::cmp::Ordering::Equal
    }
}

/// Result of an inner ridge solve on a fixed support.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    /// Full-length coefficients, zero off the support.
    pub beta_tilde: DVector<f64>,
    /// Residual y - Xt beta.
    pub alpha: DVector<f64>,
    /// Objective value y' alpha.
    pub c: f64,
}

/// A supporting hyperplane of the convex support-function extension:
/// c(s) >= value + gradient' (s - anchor) for every binary support s.
#[derive(Debug, Clone)]
pub struct Cut {
    pub value: f64,
    /// Length-d gradient; identically zero on pinned coordinates.
    pub gradient: DVector<f64>,
    pub anchor: SupportVector,
}

impl Cut {
    /// Cut prediction at support `s`.
    pub fn eval(&self, s: &SupportVector) -> f64 {
        let mut v = self.value;
        let p = self.anchor.pinned();
        for (f, (&sb, &ab)) in s.free_bits().iter().zip(self.anchor.free_bits()).enumerate() {
            if sb != ab {
                let g = self.gradient[p + f];
                v += if sb { g } else { -g };
            }
        }
        v
    }
}

/// How the outer-approximation loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// Incumbent proven within tolerance of the master lower bound.
    Optimal,
    IterationLimit,
    TimeLimit,
}

/// Options for [`solve_outer_approximation`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    pub time_limit: Option<Duration>,
    /// Initial anchor; defaults to greedy forward selection on c.
    pub warm_start: Option<SupportVector>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            eps_abs: 1e-9,
            eps_rel: 1e-6,
            max_iters: 500,
            time_limit: None,
            warm_start: None,
        }
    }
}

/// A solved cardinality-constrained ridge fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MioFit {
    pub support: SupportVector,
    pub coefficients: CoefficientSplit,
    /// Penalized RSS at the returned support.
    pub objective: f64,
    /// Best proven lower bound on the optimal objective.
    pub lower_bound: f64,
    pub iterations: usize,
    pub cuts: usize,
    pub status: SolveStatus,
    /// (incumbent, lower bound) after each iteration.
    pub trace: Vec<(f64, f64)>,
}

fn validate_budgets(budgets: &[usize], k: usize, q: usize) -> Result<()> {
    if budgets.len() != q {
        return Err(Error::LengthMismatch(format!(
            "{} budgets for q = {q} blocks",
            budgets.len()
        )));
    }
    for (i, &b) in budgets.iter().enumerate() {
        if b > k {
            return Err(Error::BudgetOutOfRange(format!(
                "budget {b} for block {i} exceeds K = {k}"
            )));
        }
    }
    Ok(())
}

/// Greedy forward selection on c: activate, one at a time, the free column
/// whose activation lowers the objective the most, until the budgets are
/// exhausted. Ties break toward the lowest column index.
fn greedy_warm_start(
    cache: &GramCache,
    p: usize,
    k: usize,
    q: usize,
    budgets: &[usize],
    mu: f64,
) -> Result<SupportVector> {
    let mut s = SupportVector::all_fixed(p, k, q);
    let total: usize = budgets.iter().sum();
    for _ in 0..total {
        let counts = s.block_counts();
        let mut best: Option<(f64, usize)> = None;
        for f in 0..q * k {
            if s.free_bits()[f] || counts[f / k] >= budgets[f / k] {
                continue;
            }
            s.set_free(f, true);
            let c = cache.objective(&s.active_cols(), mu)?;
            s.set_free(f, false);
            let better = match best {
                None => true,
                Some((bc, _)) => c < bc,
            };
            if better {
                best = Some((c, f));
            }
        }
        match best {
            Some((_, f)) => s.set_free(f, true),
            None => break,
        }
    }
    Ok(s)
}

/// Outer-approximation solve of the cardinality-constrained ridge problem.
///
/// `budgets[i]` bounds the number of active columns in cluster block i; the
/// p fixed-effect columns are always active. The master problem (minimize the
/// max of all cuts over budget-feasible supports) is solved exactly by
/// Gray-code enumeration when the free space is small and by depth-first
/// branch and bound otherwise; each master proposal is priced by an exact
/// inner ridge solve that also yields the next cut. Terminates when the
/// incumbent is within max(eps_abs, eps_rel * |incumbent|) of the master
/// bound.
pub fn solve_outer_approximation(
    design: &ExtendedDesign,
    y: &DVector<f64>,
    budgets: &[usize],
    mu: f64,
    opts: &SolveOptions,
) -> Result<MioFit> {
    let (p, k, q) = (design.p(), design.k(), design.q());
    validate_budgets(budgets, k, q)?;
    let cache = GramCache::new(design, y)?;
    let start = Instant::now();

    let s0 = match &opts.warm_start {
        Some(w) => {
            w.check_dims(design)?;
            if !w.within_budgets(budgets) {
                return Err(Error::BudgetOutOfRange(
                    "warm start violates the cardinality budgets".into(),
                ));
            }
            w.clone()
        }
        None => greedy_warm_start(&cache, p, k, q, budgets, mu)?,
    };

    let mut master = master::Master::new(budgets, p, k, q);
    let mut ncuts = 0usize;
    let mut visited: HashSet<Vec<bool>> = HashSet::new();
    let first = cache.cut(&s0, mu)?;
    let mut best_support = s0.clone();
    let mut best_c = first.value;
    visited.insert(s0.free_bits().to_vec());
    master.add_cut(&first);
    ncuts += 1;

    let mut lower = f64::NEG_INFINITY;
    let mut trace: Vec<(f64, f64)> = Vec::new();
    let mut status = SolveStatus::IterationLimit;
    let mut iterations = 0usize;

    for _ in 0..opts.max_iters {
        iterations += 1;
        if let Some(limit) = opts.time_limit {
            if start.elapsed() > limit {
                status = SolveStatus::TimeLimit;
                break;
            }
        }
        let sol = master.solve();
        if sol.certified {
            lower = lower.max(sol.eta);
        }
        trace.push((best_c, lower));
        let tol = opts.eps_abs.max(opts.eps_rel * best_c.abs());
        if best_c - lower <= tol {
            status = SolveStatus::Optimal;
            break;
        }
        if visited.contains(&sol.bits) {
            // Every visited support carries an exact cut, so the master value
            // there equals the true objective and cannot undercut the
            // incumbent; reaching this point means the gap is numerically
            // closed.
            status = SolveStatus::Optimal;
            break;
        }
        let s = SupportVector::from_free_bits(&sol.bits, p, k, q)?;
        let cut = cache.cut(&s, mu)?;
        let c = cut.value;
        if c < best_c || (c == best_c && s.lex_cmp(&best_support) == std::cmp::Ordering::Less) {
            best_c = c;
            best_support = s.clone();
        }
        visited.insert(sol.bits);
        master.add_cut(&cut);
        ncuts += 1;
    }

    let final_sol = inner_solve(design, y, &best_support, mu)?;
    let coefficients = split_coefficients(&final_sol.beta_tilde, p, k, q)?;
    Ok(MioFit {
        support: best_support,
        coefficients,
        objective: final_sol.c,
        lower_bound: lower.min(final_sol.c),
        iterations,
        cuts: ncuts,
        status,
        trace,
    })
}
