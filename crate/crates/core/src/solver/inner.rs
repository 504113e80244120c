//! Inner ridge solves on a fixed support, and the cutting planes they induce.
//!
//! For support S (always containing the p pinned fixed-effect columns) the
//! inner problem is min ||y - Xt beta||^2 + mu ||beta||^2 over beta supported
//! on S. It is solved through the restricted |S|x|S| SPD system
//! (mu I + Xt_S' Xt_S) beta_S = Xt_S' y, never a pseudo-inverse. The optimal
//! value c(S) = y' alpha with alpha = y - Xt beta, and the support function
//! s -> c(s) extends to a convex function of s in [0,1]^d whose derivative at
//! a binary point is -(x_j' alpha)^2 / mu in each free coordinate, giving the
//! supporting hyperplanes used by the outer-approximation master.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::ExtendedDesign;

use super::{Cut, InnerSolution, SupportVector};

/// Precomputed Gram quantities: every per-support solve afterwards is
/// independent of n.
pub(crate) struct GramCache {
    g: DMatrix<f64>,
    b: DVector<f64>,
    yty: f64,
    d: usize,
}

impl GramCache {
    pub(crate) fn new(design: &ExtendedDesign, y: &DVector<f64>) -> Result<Self> {
        if y.len() != design.n() {
            return Err(Error::LengthMismatch(format!(
                "y has {} entries, design has {} rows",
                y.len(),
                design.n()
            )));
        }
        let xt = design.xt();
        let g = xt.transpose() * xt;
        let b = xt.transpose() * y;
        Ok(Self { g, b, yty: y.dot(y), d: design.d() })
    }

    /// Restricted ridge solve on the given active columns. Returns the
    /// coefficients (in `cols` order) and the objective value c.
    pub(crate) fn solve_support(&self, cols: &[usize], mu: f64) -> Result<(DVector<f64>, f64)> {
        if !(mu > 0.0) {
            return Err(Error::SingularSystem(format!("mu = {mu}, need mu > 0")));
        }
        if cols.is_empty() {
            return Ok((DVector::zeros(0), self.yty));
        }
        let m = cols.len();
        let mut a = DMatrix::zeros(m, m);
        for (ii, &i) in cols.iter().enumerate() {
            for (jj, &j) in cols.iter().enumerate() {
                a[(ii, jj)] = self.g[(i, j)];
            }
            a[(ii, ii)] += mu;
        }
        let rhs = DVector::from_fn(m, |r, _| self.b[cols[r]]);
        let chol = Cholesky::new(a).ok_or_else(|| {
            Error::SingularSystem(format!("restricted system of size {m} is not SPD"))
        })?;
        let beta = chol.solve(&rhs);
        let c = self.yty - rhs.dot(&beta);
        Ok((beta, c))
    }

    /// Objective value only (the oracle's hot path).
    pub(crate) fn objective(&self, cols: &[usize], mu: f64) -> Result<f64> {
        Ok(self.solve_support(cols, mu)?.1)
    }

    /// Cut at `anchor`: value c(anchor) plus the gradient
    /// -(x_j' alpha)^2 / mu on free coordinates. Works entirely on Gram
    /// quantities: x_j' alpha = b_j - G[j, S] beta_S.
    pub(crate) fn cut(&self, anchor: &SupportVector, mu: f64) -> Result<Cut> {
        let cols = anchor.active_cols();
        let (beta_s, c) = self.solve_support(&cols, mu)?;
        let mut gradient = DVector::zeros(self.d);
        for j in anchor.pinned()..self.d {
            let mut r = self.b[j];
            for (s, &col) in cols.iter().enumerate() {
                r -= self.g[(j, col)] * beta_s[s];
            }
            gradient[j] = -(r * r) / mu;
        }
        Ok(Cut { value: c, gradient, anchor: anchor.clone() })
    }
}

/// Exact minimizer of the penalized RSS restricted to `support`.
///
/// Returns the full-length coefficient vector (zeros off support), the
/// residual alpha = y - Xt beta, and the objective c = y' alpha.
pub fn inner_solve(
    design: &ExtendedDesign,
    y: &DVector<f64>,
    support: &SupportVector,
    mu: f64,
) -> Result<InnerSolution> {
    support.check_dims(design)?;
    if !(mu > 0.0) {
        return Err(Error::SingularSystem(format!("mu = {mu}, need mu > 0")));
    }
    if y.len() != design.n() {
        return Err(Error::LengthMismatch(format!(
            "y has {} entries, design has {} rows",
            y.len(),
            design.n()
        )));
    }
    let cols = support.active_cols();
    let xt = design.xt();
    let n = design.n();
    let m = cols.len();
    let mut a = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for (ii, &i) in cols.iter().enumerate() {
        let ci = xt.column(i);
        rhs[ii] = ci.dot(y);
        for (jj, &j) in cols.iter().enumerate() {
            a[(ii, jj)] = ci.dot(&xt.column(j));
        }
        a[(ii, ii)] += mu;
    }
    let beta_s = if m == 0 {
        DVector::zeros(0)
    } else {
        let chol = Cholesky::new(a).ok_or_else(|| {
            Error::SingularSystem(format!("restricted system of size {m} is not SPD"))
        })?;
        chol.solve(&rhs)
    };
    let mut beta_tilde = DVector::zeros(design.d());
    for (s, &col) in cols.iter().enumerate() {
        beta_tilde[col] = beta_s[s];
    }
    let mut alpha = y.clone();
    for (s, &col) in cols.iter().enumerate() {
        for i in 0..n {
            alpha[i] -= xt[(i, col)] * beta_s[s];
        }
    }
    Ok(InnerSolution { c: y.dot(&alpha), beta_tilde, alpha })
}

/// Supporting hyperplane of the convex support-function extension at `anchor`.
pub fn cut_at(
    design: &ExtendedDesign,
    y: &DVector<f64>,
    anchor: &SupportVector,
    mu: f64,
) -> Result<Cut> {
    let sol = inner_solve(design, y, anchor, mu)?;
    let mut gradient = DVector::zeros(design.d());
    for j in anchor.pinned()..design.d() {
        let r = design.xt().column(j).dot(&sol.alpha);
        gradient[j] = -(r * r) / mu;
    }
    Ok(Cut { value: sol.c, gradient, anchor: anchor.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ExtendedDesign;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn identity_design() -> ExtendedDesign {
        // Two free columns, no pinned ones: Xt = I2 with p = 0, q = 1, K = 2.
        ExtendedDesign::from_parts(DMatrix::<f64>::identity(2, 2), 0, 2, 1).unwrap()
    }

    #[test]
    fn inner_solve_identity_design() {
        let d = identity_design();
        let y = DVector::from_row_slice(&[1.0, 0.0]);
        let s = SupportVector::from_free_bits(&[true, false], 0, 2, 1).unwrap();
        let sol = inner_solve(&d, &y, &s, 1.0).unwrap();
        assert!((sol.beta_tilde[0] - 0.5).abs() < 1e-15);
        assert_eq!(sol.beta_tilde[1], 0.0);
        assert!((sol.alpha[0] - 0.5).abs() < 1e-15);
        assert_eq!(sol.alpha[1], 0.0);
        assert!((sol.c - 0.5).abs() < 1e-15);
    }

    #[test]
    fn inner_solve_empty_support() {
        let d = identity_design();
        let y = DVector::from_row_slice(&[3.0, 4.0]);
        let s = SupportVector::all_fixed(0, 2, 1);
        let sol = inner_solve(&d, &y, &s, 1.0).unwrap();
        assert_eq!(sol.alpha, y);
        assert!((sol.c - 25.0).abs() < 1e-12);
        assert_eq!(sol.beta_tilde, DVector::zeros(2));
    }

    #[test]
    fn inner_solve_rejects_nonpositive_mu() {
        let d = identity_design();
        let y = DVector::from_row_slice(&[1.0, 0.0]);
        let s = SupportVector::all_fixed(0, 2, 1);
        for mu in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                inner_solve(&d, &y, &s, mu),
                Err(Error::SingularSystem(_))
            ));
        }
    }

    #[test]
    fn penalized_rss_identity() {
        // c == ||y - Xt beta||^2 + mu ||beta||^2, evaluated independently.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (n, p, k) = (30, 4, 4);
        let xt = DMatrix::from_fn(n, p + k, |_, _| rng.random::<f64>() - 0.5);
        let d = ExtendedDesign::from_parts(xt.clone(), p, k, 1).unwrap();
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mu = 1e-3;
        let s = SupportVector::from_free_bits(&[true, false, true, true], p, k, 1).unwrap();
        let sol = inner_solve(&d, &y, &s, mu).unwrap();
        let resid = &y - &xt * &sol.beta_tilde;
        let direct = resid.dot(&resid) + mu * sol.beta_tilde.dot(&sol.beta_tilde);
        assert!(
            (sol.c - direct).abs() <= 1e-10 * direct.abs().max(1.0),
            "c = {}, direct = {}",
            sol.c,
            direct
        );
        // And alpha really is the residual.
        assert!((&sol.alpha - &resid).norm() < 1e-10);
    }

    #[test]
    fn gram_cache_agrees_with_inner_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, p, k) = (25, 3, 5);
        let xt = DMatrix::from_fn(n, p + k, |_, _| rng.random::<f64>() - 0.5);
        let d = ExtendedDesign::from_parts(xt, p, k, 1).unwrap();
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let cache = GramCache::new(&d, &y).unwrap();
        for mask in 0..(1u64 << k) {
            let bits: Vec<bool> = (0..k).map(|j| mask >> j & 1 == 1).collect();
            let s = SupportVector::from_free_bits(&bits, p, k, 1).unwrap();
            let sol = inner_solve(&d, &y, &s, 1e-3).unwrap();
            let c = cache.objective(&s.active_cols(), 1e-3).unwrap();
            assert!((sol.c - c).abs() <= 1e-9 * sol.c.abs().max(1.0));
        }
    }

    #[test]
    fn cut_matches_hand_computed_example() {
        // Anchor = empty support on Xt = I2, y = (1, 0), mu = 1:
        // value 1, gradient (-1, 0).
        let d = identity_design();
        let y = DVector::from_row_slice(&[1.0, 0.0]);
        let anchor = SupportVector::all_fixed(0, 2, 1);
        let cut = cut_at(&d, &y, &anchor, 1.0).unwrap();
        assert!((cut.value - 1.0).abs() < 1e-15);
        assert!((cut.gradient[0] + 1.0).abs() < 1e-15);
        assert!(cut.gradient[1].abs() < 1e-15);
        // The cut is exact at its anchor and a valid under-estimate at {0}.
        assert!((cut.eval(&anchor) - cut.value).abs() < 1e-15);
        let s = SupportVector::from_free_bits(&[true, false], 0, 2, 1).unwrap();
        let predicted = cut.eval(&s);
        let actual = inner_solve(&d, &y, &s, 1.0).unwrap().c;
        assert!(predicted <= actual + 1e-12);
    }

    #[test]
    fn cut_gradients_nonpositive_and_zero_on_pinned() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (n, p, k) = (20, 3, 4);
        let xt = DMatrix::from_fn(n, p + k, |_, _| rng.random::<f64>() - 0.5);
        let d = ExtendedDesign::from_parts(xt, p, k, 1).unwrap();
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let anchor = SupportVector::from_free_bits(&[true, false, false, true], p, k, 1).unwrap();
        let cut = cut_at(&d, &y, &anchor, 1e-2).unwrap();
        for j in 0..p {
            assert_eq!(cut.gradient[j], 0.0);
        }
        for j in p..p + k {
            assert!(cut.gradient[j] <= 0.0);
        }
    }

    #[test]
    fn cuts_underestimate_everywhere_small_exhaustive() {
        // K = 8 free columns: every cut from every anchor under-estimates the
        // true objective at every one of the 2^8 supports.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (n, p, k) = (40, 2, 8);
        let xt = DMatrix::from_fn(n, p + k, |_, _| rng.random::<f64>() - 0.5);
        let d = ExtendedDesign::from_parts(xt, p, k, 1).unwrap();
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mu = 1e-2;
        let cache = GramCache::new(&d, &y).unwrap();
        let all: Vec<SupportVector> = (0..(1u64 << k))
            .map(|mask| {
                let bits: Vec<bool> = (0..k).map(|j| mask >> j & 1 == 1).collect();
                SupportVector::from_free_bits(&bits, p, k, 1).unwrap()
            })
            .collect();
        let cs: Vec<f64> = all
            .iter()
            .map(|s| cache.objective(&s.active_cols(), mu).unwrap())
            .collect();
        for anchor_idx in [0usize, 3, 17, 255, 128, 64] {
            let cut = cache.cut(&all[anchor_idx], mu).unwrap();
            for (s, &c) in all.iter().zip(&cs) {
                let tol = 1e-9 * c.abs().max(1.0);
                assert!(
                    cut.eval(s) <= c + tol,
                    "cut at {anchor_idx} over-estimates: {} > {c}",
                    cut.eval(s)
                );
            }
            let exact = cut.eval(&all[anchor_idx]);
            assert!((exact - cs[anchor_idx]).abs() <= 1e-10 * cs[anchor_idx].abs().max(1.0));
        }
    }

    #[test]
    fn activation_never_increases_objective() {
        // Monotonicity: flipping any free coordinate on can only lower c.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (n, p, k) = (30, 2, 6);
        let xt = DMatrix::from_fn(n, p + k, |_, _| rng.random::<f64>() - 0.5);
        let d = ExtendedDesign::from_parts(xt, p, k, 1).unwrap();
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let cache = GramCache::new(&d, &y).unwrap();
        let mu = 1e-3;
        for mask in 0..(1u64 << k) {
            let bits: Vec<bool> = (0..k).map(|j| mask >> j & 1 == 1).collect();
            let s = SupportVector::from_free_bits(&bits, p, k, 1).unwrap();
            let c = cache.objective(&s.active_cols(), mu).unwrap();
            for j in 0..k {
                if !bits[j] {
                    let mut up = bits.clone();
                    up[j] = true;
                    let su = SupportVector::from_free_bits(&up, p, k, 1).unwrap();
                    let cu = cache.objective(&su.active_cols(), mu).unwrap();
                    assert!(cu <= c + 1e-9 * c.abs().max(1.0));
                }
            }
        }
    }
}
