//! Data model for cluster-structured regression.
//!
//! A dataset is n rows of covariates with a cluster label and a role tag per
//! row. Cluster effects enter the regression through an extended design
//! matrix: `[X : A]` for cluster intercepts (q = 1), or `[X : A : (z 1') ∘ A]`
//! when a scalar exposure z also gets a cluster-specific slope (q = 2). The
//! corresponding coefficient vector splits into p fixed effects and a q×K
//! cluster-effect matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which partition a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Validation => "val",
            Role::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Role> {
        match s {
            "train" => Ok(Role::Train),
            "val" | "validation" => Ok(Role::Validation),
            "test" => Ok(Role::Test),
            other => Err(Error::InvalidInput(format!(
                "unknown role '{other}' (expected train|val|test)"
            ))),
        }
    }
}

/// What to do when a declared cluster receives no rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyClusters {
    Allow,
    Reject,
}

/// Rows of covariates with cluster labels, roles, and an optional exposure z.
///
/// Invariants: `x.nrows() == y.len() == labels.len() == roles.len()`, every
/// label indexes into `cluster_order`, and `z` (when present) has length n.
#[derive(Debug, Clone)]
pub struct ClusteredDataset {
    pub x: DMatrix<f64>,
    pub z: Option<DVector<f64>>,
    pub y: DVector<f64>,
    /// Per-row cluster index into `cluster_order`.
    pub labels: Vec<usize>,
    /// Cluster ids in first-appearance order; defines column order of A.
    pub cluster_order: Vec<String>,
    pub roles: Vec<Role>,
}

impl ClusteredDataset {
    pub fn new(
        x: DMatrix<f64>,
        z: Option<DVector<f64>>,
        y: DVector<f64>,
        labels: Vec<usize>,
        cluster_order: Vec<String>,
        roles: Vec<Role>,
    ) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n || labels.len() != n || roles.len() != n {
            return Err(Error::LengthMismatch(format!(
                "x has {n} rows but y/labels/roles have {}/{}/{}",
                y.len(),
                labels.len(),
                roles.len()
            )));
        }
        if let Some(z) = &z {
            if z.len() != n {
                return Err(Error::LengthMismatch(format!(
                    "z has {} entries, expected {n}",
                    z.len()
                )));
            }
        }
        if cluster_order.is_empty() {
            return Err(Error::InvalidInput("cluster_order is empty".into()));
        }
        let k = cluster_order.len();
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::UnknownLabel(format!(
                "label index {bad} with only {k} clusters declared"
            )));
        }
        Ok(Self { x, z, y, labels, cluster_order, roles })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn k(&self) -> usize {
        self.cluster_order.len()
    }

    /// Row indices carrying any of the given roles, in original order.
    pub fn rows_with_role(&self, roles: &[Role]) -> Vec<usize> {
        (0..self.n()).filter(|&i| roles.contains(&self.roles[i])).collect()
    }

    /// New dataset restricted to `rows` (cluster_order is kept whole so the
    /// effect matrix keeps its width).
    pub fn subset(&self, rows: &[usize]) -> ClusteredDataset {
        let x = DMatrix::from_fn(rows.len(), self.p(), |i, j| self.x[(rows[i], j)]);
        let y = DVector::from_fn(rows.len(), |i, _| self.y[rows[i]]);
        let z = self
            .z
            .as_ref()
            .map(|z| DVector::from_fn(rows.len(), |i, _| z[rows[i]]));
        ClusteredDataset {
            x,
            y,
            z,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            cluster_order: self.cluster_order.clone(),
            roles: rows.iter().map(|&i| self.roles[i]).collect(),
        }
    }

    /// Per-cluster row counts (length K).
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut c = vec![0usize; self.k()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn assignment(&self) -> AssignmentMatrix {
        AssignmentMatrix::from_indices(self.labels.clone(), self.k(), EmptyClusters::Allow)
            .expect("labels validated at construction")
    }
}

/// One-hot cluster membership: n×K binary matrix, one 1 per row.
#[derive(Debug, Clone)]
pub struct AssignmentMatrix {
    matrix: DMatrix<f64>,
    labels: Vec<usize>,
}

impl AssignmentMatrix {
    /// Builds from per-row cluster indices in `0..k`.
    pub fn from_indices(labels: Vec<usize>, k: usize, on_empty: EmptyClusters) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("k = 0 clusters".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::UnknownLabel(format!("index {bad} >= k = {k}")));
        }
        if on_empty == EmptyClusters::Reject {
            let mut seen = vec![false; k];
            for &l in &labels {
                seen[l] = true;
            }
            if let Some(j) = seen.iter().position(|s| !s) {
                return Err(Error::EmptyCluster(format!("cluster {j} has no rows")));
            }
        }
        let mut m = DMatrix::zeros(labels.len(), k);
        for (i, &l) in labels.iter().enumerate() {
            m[(i, l)] = 1.0;
        }
        Ok(Self { matrix: m, labels })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn k(&self) -> usize {
        self.matrix.ncols()
    }

    /// Indices of clusters that received no rows.
    pub fn empty_clusters(&self) -> Vec<usize> {
        let mut seen = vec![false; self.k()];
        for &l in &self.labels {
            seen[l] = true;
        }
        (0..self.k()).filter(|&j| !seen[j]).collect()
    }
}

/// Maps string cluster ids onto the membership matrix, with column order
/// fixed by `cluster_order`.
pub fn one_hot_assignment<S: AsRef<str>>(
    labels: &[S],
    cluster_order: &[String],
    on_empty: EmptyClusters,
) -> Result<AssignmentMatrix> {
    let idx: std::collections::HashMap<&str, usize> = cluster_order
        .iter()
        .enumerate()
        .map(|(j, s)| (s.as_str(), j))
        .collect();
    if idx.len() != cluster_order.len() {
        return Err(Error::InvalidInput("duplicate ids in cluster_order".into()));
    }
    let mapped = labels
        .iter()
        .map(|l| {
            idx.get(l.as_ref())
                .copied()
                .ok_or_else(|| Error::UnknownLabel(l.as_ref().to_string()))
        })
        .collect::<Result<Vec<usize>>>()?;
    AssignmentMatrix::from_indices(mapped, cluster_order.len(), on_empty)
}

/// Which part of the extended design a column belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Fixed,
    Intercepts,
    Slopes,
}

/// The extended design `[X : A]` (q = 1) or `[X : A : (z 1') ∘ A]` (q = 2),
/// with the column bookkeeping needed to pin fixed effects and to apply
/// per-block cardinality budgets.
#[derive(Debug, Clone)]
pub struct ExtendedDesign {
    xt: DMatrix<f64>,
    p: usize,
    k: usize,
    q: usize,
}

impl ExtendedDesign {
    /// Wraps an already-built matrix; `xt.ncols()` must equal `p + q*k`.
    pub fn from_parts(xt: DMatrix<f64>, p: usize, k: usize, q: usize) -> Result<Self> {
        if q != 1 && q != 2 {
            return Err(Error::InvalidInput(format!("q = {q}, expected 1 or 2")));
        }
        if k == 0 {
            return Err(Error::InvalidInput("k = 0 clusters".into()));
        }
        if xt.ncols() != p + q * k {
            return Err(Error::LengthMismatch(format!(
                "design has {} columns, expected p + q*k = {}",
                xt.ncols(),
                p + q * k
            )));
        }
        Ok(Self { xt, p, k, q })
    }

    pub fn xt(&self) -> &DMatrix<f64> {
        &self.xt
    }

    pub fn n(&self) -> usize {
        self.xt.nrows()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Total column count p + q*K.
    pub fn d(&self) -> usize {
        self.p + self.q * self.k
    }

    pub fn block_of(&self, col: usize) -> Block {
        if col < self.p {
            Block::Fixed
        } else if col < self.p + self.k {
            Block::Intercepts
        } else {
            Block::Slopes
        }
    }
}

/// Assembles the extended design. `z` is required exactly when q = 2.
pub fn build_extended_design(
    x: &DMatrix<f64>,
    a: &AssignmentMatrix,
    z: Option<&DVector<f64>>,
    q: usize,
) -> Result<ExtendedDesign> {
    if q != 1 && q != 2 {
        return Err(Error::InvalidInput(format!("q = {q}, expected 1 or 2")));
    }
    let n = x.nrows();
    if a.n() != n {
        return Err(Error::LengthMismatch(format!(
            "assignment has {} rows, design has {n}",
            a.n()
        )));
    }
    match (q, z) {
        (2, None) => {
            return Err(Error::InvalidInput("q = 2 requires the exposure z".into()))
        }
        (1, Some(_)) => {
            return Err(Error::InvalidInput("z given but q = 1 uses no exposure".into()))
        }
        _ => {}
    }
    if let Some(z) = z {
        if z.len() != n {
            return Err(Error::LengthMismatch(format!(
                "z has {} entries, expected {n}",
                z.len()
            )));
        }
    }
    let (p, k) = (x.ncols(), a.k());
    let mut xt = DMatrix::zeros(n, p + q * k);
    xt.view_mut((0, 0), (n, p)).copy_from(x);
    for (i, &l) in a.labels().iter().enumerate() {
        xt[(i, p + l)] = 1.0;
        if q == 2 {
            xt[(i, p + k + l)] = z.unwrap()[i];
        }
    }
    ExtendedDesign::from_parts(xt, p, k, q)
}

/// Fixed effects and the q×K cluster-effect matrix, as split from a stacked
/// coefficient vector `[beta' : gamma_1' : gamma_2']'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSplit {
    pub beta: DVector<f64>,
    /// Row 0: cluster intercepts; row 1 (q = 2 only): cluster slopes on z.
    pub gamma: DMatrix<f64>,
}

impl CoefficientSplit {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn q(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn k(&self) -> usize {
        self.gamma.ncols()
    }

    /// Stacks back into `[beta' : gamma_1' : gamma_2']'`.
    pub fn concatenate(&self) -> DVector<f64> {
        let (p, q, k) = (self.p(), self.q(), self.k());
        let mut v = DVector::zeros(p + q * k);
        v.rows_mut(0, p).copy_from(&self.beta);
        for r in 0..q {
            for j in 0..k {
                v[p + r * k + j] = self.gamma[(r, j)];
            }
        }
        v
    }

    /// Cluster contribution for a row in cluster `label` with exposure `z`
    /// (z is ignored when q = 1).
    pub fn cluster_offset(&self, label: usize, z: f64) -> f64 {
        let mut o = self.gamma[(0, label)];
        if self.q() == 2 {
            o += z * self.gamma[(1, label)];
        }
        o
    }
}

/// Splits a stacked coefficient vector into fixed and cluster parts.
pub fn split_coefficients(v: &DVector<f64>, p: usize, k: usize, q: usize) -> Result<CoefficientSplit> {
    if q != 1 && q != 2 {
        return Err(Error::InvalidInput(format!("q = {q}, expected 1 or 2")));
    }
    if v.len() != p + q * k {
        return Err(Error::LengthMismatch(format!(
            "coefficient vector has {} entries, expected p + q*k = {}",
            v.len(),
            p + q * k
        )));
    }
    let beta = DVector::from_fn(p, |i, _| v[i]);
    let gamma = DMatrix::from_fn(q, k, |r, j| v[p + r * k + j]);
    Ok(CoefficientSplit { beta, gamma })
}
