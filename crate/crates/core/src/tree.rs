//! Axis-aligned classification tree for routing new observations to cluster
//! effects.
//!
//! Standard greedy CART: at each node pick the (feature, threshold) pair with
//! the largest impurity decrease, thresholds taken as midpoints between
//! consecutive distinct sorted feature values. Rows with x_j <= threshold go
//! left. Ties break toward the lower feature index, then the lower threshold.
//! Class counts are integers throughout, so identical inputs produce an
//! identical tree regardless of row order or thread count.

use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Gini,
    Entropy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeOptions {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// A split must decrease impurity by strictly more than this (and more
    /// than zero) to be accepted.
    pub min_impurity_decrease: f64,
    pub criterion: Criterion,
}

impl Default for TreeOptions {
    fn default() -> Self {
        Self {
            max_depth: 5,
            min_samples_leaf: 5,
            min_impurity_decrease: 0.0,
            criterion: Criterion::Gini,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        /// Training-class counts in this leaf.
        counts: Vec<usize>,
        /// Majority class; count ties break toward the lower class index.
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTree {
    nodes: Vec<Node>,
    pub n_classes: usize,
    pub n_features: usize,
    /// Root stayed a leaf although its labels are mixed: no feature offered a
    /// usable split. The tree is still valid and predicts the majority class.
    pub degenerate: bool,
}

fn impurity(counts: &[usize], total: usize, criterion: Criterion) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    match criterion {
        Criterion::Gini => {
            let mut acc = 0.0;
            for &c in counts {
                let p = c as f64 / n;
                acc += p * p;
            }
            1.0 - acc
        }
        Criterion::Entropy => {
            let mut acc = 0.0;
            for &c in counts {
                if c > 0 {
                    let p = c as f64 / n;
                    acc -= p * p.log2();
                }
            }
            acc
        }
    }
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt > counts[best] {
            best = c;
        }
    }
    best
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Scan one feature for the best threshold among midpoints of consecutive
/// distinct values. `order` indexes rows sorted by this feature.
fn scan_feature(
    x: &DMatrix<f64>,
    labels: &[usize],
    rows: &[usize],
    feature: usize,
    n_classes: usize,
    parent_impurity: f64,
    opts: &TreeOptions,
) -> Option<(f64, f64)> {
    let n = rows.len();
    let mut order: Vec<usize> = rows.to_vec();
    order.sort_by(|&a, &b| x[(a, feature)].partial_cmp(&x[(b, feature)]).unwrap());

    let mut left = vec![0usize; n_classes];
    let mut right = vec![0usize; n_classes];
    for &r in &order {
        right[labels[r]] += 1;
    }
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n - 1 {
        let r = order[i];
        left[labels[r]] += 1;
        right[labels[r]] -= 1;
        let v = x[(r, feature)];
        let v_next = x[(order[i + 1], feature)];
        if v == v_next {
            continue;
        }
        let nl = i + 1;
        let nr = n - nl;
        if nl < opts.min_samples_leaf || nr < opts.min_samples_leaf {
            continue;
        }
        let gain = parent_impurity
            - (nl as f64 / n as f64) * impurity(&left, nl, opts.criterion)
            - (nr as f64 / n as f64) * impurity(&right, nr, opts.criterion);
        if gain > opts.min_impurity_decrease.max(0.0) && best.map_or(true, |(g, _)| gain > g) {
            best = Some((gain, (v + v_next) / 2.0));
        }
    }
    best
}

fn best_split(
    x: &DMatrix<f64>,
    labels: &[usize],
    rows: &[usize],
    n_classes: usize,
    counts: &[usize],
    opts: &TreeOptions,
) -> Option<BestSplit> {
    let parent_impurity = impurity(counts, rows.len(), opts.criterion);
    if parent_impurity == 0.0 {
        return None;
    }
    let mut best: Option<BestSplit> = None;
    for feature in 0..x.ncols() {
        if let Some((gain, threshold)) =
            scan_feature(x, labels, rows, feature, n_classes, parent_impurity, opts)
        {
            if best.as_ref().map_or(true, |b| gain > b.gain) {
                best = Some(BestSplit { feature, threshold, gain });
            }
        }
    }
    best
}

/// Fit a classification tree on rows of `x` labeled by `labels` (values in
/// `0..n_classes`).
pub fn fit_classification_tree(
    x: &DMatrix<f64>,
    labels: &[usize],
    n_classes: usize,
    opts: &TreeOptions,
) -> Result<ClassTree> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::InvalidInput("empty feature matrix".into()));
    }
    if labels.len() != x.nrows() {
        return Err(Error::LengthMismatch(format!(
            "{} labels for {} rows",
            labels.len(),
            x.nrows()
        )));
    }
    if n_classes == 0 {
        return Err(Error::InvalidInput("n_classes must be positive".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::UnknownLabel(format!("class {bad} >= n_classes = {n_classes}")));
    }
    if opts.min_samples_leaf == 0 {
        return Err(Error::InvalidInput("min_samples_leaf must be at least 1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("features must be finite".into()));
    }

    let mut nodes = Vec::new();
    let rows: Vec<usize> = (0..x.nrows()).collect();
    build(x, labels, rows, n_classes, opts, 0, &mut nodes);
    let degenerate = match &nodes[0] {
        Node::Leaf { counts, .. } => counts.iter().filter(|&&c| c > 0).count() > 1,
        Node::Split { .. } => false,
    };
    Ok(ClassTree { nodes, n_classes, n_features: x.ncols(), degenerate })
}

fn build(
    x: &DMatrix<f64>,
    labels: &[usize],
    rows: Vec<usize>,
    n_classes: usize,
    opts: &TreeOptions,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let mut counts = vec![0usize; n_classes];
    for &r in &rows {
        counts[labels[r]] += 1;
    }
    let id = nodes.len();
    let split = if depth < opts.max_depth && rows.len() >= 2 * opts.min_samples_leaf {
        best_split(x, labels, &rows, n_classes, &counts, opts)
    } else {
        None
    };
    match split {
        None => {
            let class = majority(&counts);
            nodes.push(Node::Leaf { counts, class });
            id
        }
        Some(s) => {
            nodes.push(Node::Split {
                feature: s.feature,
                threshold: s.threshold,
                left: usize::MAX,
                right: usize::MAX,
            });
            let (lrows, rrows): (Vec<usize>, Vec<usize>) =
                rows.into_iter().partition(|&r| x[(r, s.feature)] <= s.threshold);
            let left = build(x, labels, lrows, n_classes, opts, depth + 1, nodes);
            let right = build(x, labels, rrows, n_classes, opts, depth + 1, nodes);
            if let Node::Split { left: l, right: r, .. } = &mut nodes[id] {
                *l = left;
                *r = right;
            }
            id
        }
    }
}

impl ClassTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn leaf_of(&self, row: &[f64]) -> &Node {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                leaf @ Node::Leaf { .. } => return leaf,
                Node::Split { feature, threshold, left, right } => {
                    id = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Majority class of the leaf the row lands in.
    pub fn predict_row(&self, row: &[f64]) -> Result<usize> {
        self.check_row(row)?;
        match self.leaf_of(row) {
            Node::Leaf { class, .. } => Ok(*class),
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Training-class proportions of the leaf the row lands in.
    pub fn predict_proba_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_row(row)?;
        match self.leaf_of(row) {
            Node::Leaf { counts, .. } => {
                let total: usize = counts.iter().sum();
                Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
            }
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        (0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.predict_row(&row)
            })
            .collect()
    }

    /// Class-probability matrix, one row per observation.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(x.nrows(), self.n_classes);
        for i in 0..x.nrows() {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let probs = self.predict_proba_row(&row)?;
            for (c, p) in probs.into_iter().enumerate() {
                out[(i, c)] = p;
            }
        }
        Ok(out)
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_features {
            return Err(Error::LengthMismatch(format!(
                "{} features, tree expects {}",
                row.len(),
                self.n_features
            )));
        }
        Ok(())
    }

    /// Indented rule listing, one line per node.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_node(0, 0, &mut out);
        out
    }

    fn write_node(&self, id: usize, depth: usize, out: &mut String) {
        let pad = "|   ".repeat(depth);
        match &self.nodes[id] {
            Node::Leaf { counts, class } => {
                out.push_str(&format!("{pad}|--- class {class} (counts {counts:?})\n"));
            }
            Node::Split { feature, threshold, left, right } => {
                out.push_str(&format!("{pad}|--- x{feature} <= {threshold}\n"));
                self.write_node(*left, depth + 1, out);
                out.push_str(&format!("{pad}|--- x{feature} > {threshold}\n"));
                self.write_node(*right, depth + 1, out);
            }
        }
    }
}
