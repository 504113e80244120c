//! Reference estimators the cluster-aware fit is compared against: OLS,
//! ridge, and a random-intercept linear mixed model.
//!
//! The mixed model is fit by profiled likelihood. With V = I + rho A A' the
//! GLS coefficients and the noise scale have closed forms given the variance
//! ratio rho = sigma_gamma^2 / sigma_eps^2, so the whole fit reduces to a 1-D
//! search over rho >= 0 on a log grid refined by golden section. Cluster
//! structure keeps every evaluation at O(K p^2 + p^3) through per-cluster
//! sufficient statistics; nothing n-sized is touched after the initial pass.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub beta: DVector<f64>,
}

/// Column-rank check through pivoted QR. Pivoting sorts |R_ii|
/// non-increasing, so a small trailing entry flags a dependent column.
fn check_full_column_rank(x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() < x.ncols() {
        return Err(Error::RankDeficient(format!(
            "{} rows for {} columns",
            x.nrows(),
            x.ncols()
        )));
    }
    let diag = x.clone().col_piv_qr().r().diagonal();
    let scale = diag.amax();
    let tol = scale * x.nrows().max(x.ncols()) as f64 * f64::EPSILON;
    if scale == 0.0 || diag.iter().any(|d| d.abs() <= tol) {
        return Err(Error::RankDeficient("design has numerically dependent columns".into()));
    }
    Ok(())
}

/// Ordinary least squares: rank check, then normal equations.
pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    check_xy(x, y)?;
    check_full_column_rank(x)?;
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let chol = Cholesky::new(xtx)
        .ok_or_else(|| Error::RankDeficient("X'X is not positive definite".into()))?;
    Ok(OlsFit { beta: chol.solve(&xty) })
}

/// Ridge regression: (mu I + X'X) beta = X'y.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, mu: f64) -> Result<RidgeFit> {
    check_xy(x, y)?;
    if !(mu > 0.0) {
        return Err(Error::InvalidInput(format!("ridge weight mu = {mu}, need mu > 0")));
    }
    let mut xtx = x.transpose() * x;
    for j in 0..x.ncols() {
        xtx[(j, j)] += mu;
    }
    let xty = x.transpose() * y;
    let chol = Cholesky::new(xtx)
        .ok_or_else(|| Error::SingularSystem("ridge system is not SPD".into()))?;
    Ok(RidgeFit { beta: chol.solve(&xty) })
}

/// Population-level prediction X beta (cluster effects deliberately ignored).
pub fn predict_population(beta: &DVector<f64>, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != beta.len() {
        return Err(Error::LengthMismatch(format!(
            "{} columns against {} coefficients",
            x.ncols(),
            beta.len()
        )));
    }
    Ok(x * beta)
}

/// Intraclass correlation sigma_gamma^2 / (sigma_gamma^2 + sigma_eps^2).
pub fn icc_of(sigma2_gamma: f64, sigma2_eps: f64) -> Result<f64> {
    if !(sigma2_gamma >= 0.0) || !(sigma2_eps >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "variance components must be nonnegative (got {sigma2_gamma}, {sigma2_eps})"
        )));
    }
    let total = sigma2_gamma + sigma2_eps;
    if total <= 0.0 {
        return Err(Error::InvalidInput("both variance components are zero".into()));
    }
    Ok(sigma2_gamma / total)
}

#[derive(Debug, Clone)]
pub struct LmemOptions {
    /// Restricted maximum likelihood instead of plain ML.
    pub reml: bool,
    /// Cap on profile-likelihood evaluations.
    pub max_evals: usize,
}

impl Default for LmemOptions {
    fn default() -> Self {
        Self { reml: false, max_evals: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct LmemFit {
    pub beta: DVector<f64>,
    /// BLUPs of the cluster intercepts (length K).
    pub gamma: DVector<f64>,
    pub sigma2_gamma: f64,
    pub sigma2_eps: f64,
    /// Fitted variance ratio sigma_gamma^2 / sigma_eps^2.
    pub rho: f64,
    /// Profile log-likelihood at the optimum (REML likelihood when `reml`).
    pub loglik: f64,
    pub reml: bool,
    /// True when the variance-ratio estimate sits at the rho = 0 boundary;
    /// the fit is valid with sigma2_gamma = 0.
    pub at_boundary: bool,
    pub evals: usize,
}

/// Per-cluster sufficient statistics for the random-intercept likelihood.
struct ClusterStats {
    counts: Vec<usize>,
    sx: Vec<DVector<f64>>,
    sy: Vec<f64>,
    sxx: DMatrix<f64>,
    sxy: DVector<f64>,
    syy: f64,
    n: usize,
    p: usize,
}

impl ClusterStats {
    fn build(x: &DMatrix<f64>, y: &DVector<f64>, labels: &[usize], k: usize) -> Result<Self> {
        check_xy(x, y)?;
        let (n, p) = (x.nrows(), x.ncols());
        if labels.len() != n {
            return Err(Error::LengthMismatch(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::UnknownLabel(format!("index {bad} >= k = {k}")));
        }
        check_full_column_rank(x)?;
        let mut counts = vec![0usize; k];
        let mut sx = vec![DVector::zeros(p); k];
        let mut sy = vec![0.0; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            sy[l] += y[i];
            for j in 0..p {
                sx[l][j] += x[(i, j)];
            }
        }
        Ok(Self {
            counts,
            sx,
            sy,
            sxx: x.transpose() * x,
            sxy: x.transpose() * y,
            syy: y.dot(y),
            n,
            p,
        })
    }

    /// Profile log-likelihood at fixed variance ratio `rho`, together with the
    /// GLS coefficients and the profiled noise variance.
    fn profile(&self, rho: f64, reml: bool) -> Result<(f64, DVector<f64>, f64)> {
        let (n, p) = (self.n, self.p);
        let mut xtvx = self.sxx.clone();
        let mut xtvy = self.sxy.clone();
        let mut ytvy = self.syy;
        let mut logdet_v = 0.0;
        for kk in 0..self.counts.len() {
            let nk = self.counts[kk] as f64;
            if nk == 0.0 {
                continue;
            }
            let w = rho / (1.0 + nk * rho);
            logdet_v += (nk * rho).ln_1p();
            if w != 0.0 {
                xtvx.syger(-w, &self.sx[kk], &self.sx[kk], 1.0);
                xtvy.axpy(-w * self.sy[kk], &self.sx[kk], 1.0);
                ytvy -= w * self.sy[kk] * self.sy[kk];
            }
        }
        let chol = Cholesky::new(xtvx)
            .ok_or_else(|| Error::SingularSystem("X'V^-1X is not SPD".into()))?;
        let ldiag = chol.l().diagonal();
        // Diagonal of L squares to the matrix scale, so 1e-7 here is a
        // condition threshold of roughly 1e-14 on X'V^-1X.
        if ldiag.min() <= 1e-7 * ldiag.max() {
            return Err(Error::SingularSystem("X'V^-1X is numerically singular".into()));
        }
        let beta = chol.solve(&xtvy);
        let quad = (ytvy - beta.dot(&xtvy)).max(f64::MIN_POSITIVE);
        let two_pi = std::f64::consts::TAU;
        let ll = if reml {
            let df = (n - p) as f64;
            let sigma2 = quad / df;
            let logdet_xtvx = chol.ln_determinant();
            -0.5 * (df * (two_pi * sigma2).ln() + df + logdet_v + logdet_xtvx)
        } else {
            let sigma2 = quad / n as f64;
            -0.5 * (n as f64 * (two_pi * sigma2).ln() + n as f64 + logdet_v)
        };
        Ok((ll, beta, quad))
    }
}

/// Profile log-likelihood of the random-intercept model at a given variance
/// ratio rho (diagnostic; the fit maximizes this over rho).
pub fn lmem_profile_loglik(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    labels: &[usize],
    k: usize,
    rho: f64,
    reml: bool,
) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidInput(format!("rho = {rho}, need rho >= 0")));
    }
    let stats = ClusterStats::build(x, y, labels, k)?;
    if stats.n <= stats.p {
        return Err(Error::InvalidInput(format!(
            "n = {} rows cannot identify p = {} coefficients plus noise",
            stats.n, stats.p
        )));
    }
    Ok(stats.profile(rho, reml)?.0)
}

/// Random-intercept linear mixed model via profiled (RE)ML.
///
/// Search: rho = 0 plus a log-spaced grid on [1e-8, 1e6], refined by golden
/// section around the best grid point. A boundary optimum (rho = 0) is a
/// valid fit flagged `at_boundary`; `NonConvergence` is returned only when no
/// candidate evaluates to a finite likelihood within the evaluation cap.
pub fn fit_lmem_random_intercept(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    labels: &[usize],
    k: usize,
    opts: &LmemOptions,
) -> Result<LmemFit> {
    let stats = ClusterStats::build(x, y, labels, k)?;
    if stats.n <= stats.p {
        return Err(Error::InvalidInput(format!(
            "n = {} rows cannot identify p = {} coefficients plus noise",
            stats.n, stats.p
        )));
    }
    let mut evals = 0usize;
    let try_rho = |rho: f64, evals: &mut usize| -> Option<f64> {
        if *evals >= opts.max_evals {
            return None;
        }
        *evals += 1;
        stats.profile(rho, opts.reml).ok().map(|(ll, _, _)| ll).filter(|ll| ll.is_finite())
    };

    // Grid pass: rho = 0 and four points per decade over [1e-8, 1e6].
    let mut grid: Vec<f64> = vec![0.0];
    let mut e = -8.0f64;
    while e <= 6.0 + 1e-9 {
        grid.push(10f64.powf(e));
        e += 0.25;
    }
    let mut best: Option<(f64, usize)> = None;
    let mut lls: Vec<Option<f64>> = Vec::with_capacity(grid.len());
    for (i, &rho) in grid.iter().enumerate() {
        let ll = try_rho(rho, &mut evals);
        lls.push(ll);
        if let Some(ll) = ll {
            if best.map_or(true, |(b, _)| ll > b) {
                best = Some((ll, i));
            }
        }
    }
    let (_, best_idx) = best.ok_or_else(|| {
        Error::NonConvergence("no variance ratio produced a finite likelihood".into())
    })?;

    // Golden-section refinement between the neighbors of the best grid point.
    let mut best_rho = grid[best_idx];
    let mut best_ll = lls[best_idx].unwrap();
    if best_idx + 1 < grid.len() {
        let lo = if best_idx == 0 { 0.0 } else { grid[best_idx - 1] };
        let hi = grid[best_idx + 1];
        // Work on a transformed axis: linear near zero, log elsewhere.
        let to_axis = |r: f64| if lo == 0.0 { r } else { r.ln() };
        let from_axis = |t: f64| if lo == 0.0 { t } else { t.exp() };
        let (mut a, mut b) = (to_axis(lo.max(0.0)), to_axis(hi));
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - phi * (b - a);
        let mut d = a + phi * (b - a);
        let mut fc = try_rho(from_axis(c), &mut evals);
        let mut fd = try_rho(from_axis(d), &mut evals);
        for _ in 0..60 {
            if evals >= opts.max_evals {
                break;
            }
            match (fc, fd) {
                (Some(vc), Some(vd)) => {
                    if vc > vd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - phi * (b - a);
                        fc = try_rho(from_axis(c), &mut evals);
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + phi * (b - a);
                        fd = try_rho(from_axis(d), &mut evals);
                    }
                }
                _ => break,
            }
            if (b - a).abs() < 1e-12 {
                break;
            }
        }
        for (t, f) in [(c, fc), (d, fd)] {
            if let Some(ll) = f {
                if ll > best_ll {
                    best_ll = ll;
                    best_rho = from_axis(t);
                }
            }
        }
    }

    let (loglik, beta, quad) = stats.profile(best_rho, opts.reml)?;
    let denom = if opts.reml { (stats.n - stats.p) as f64 } else { stats.n as f64 };
    let sigma2_eps = quad / denom;
    let sigma2_gamma = best_rho * sigma2_eps;
    let mut gamma = DVector::zeros(k);
    for kk in 0..k {
        let nk = stats.counts[kk] as f64;
        if nk > 0.0 {
            let resid_sum = stats.sy[kk] - stats.sx[kk].dot(&beta);
            gamma[kk] = best_rho * resid_sum / (1.0 + nk * best_rho);
        }
    }
    Ok(LmemFit {
        beta,
        gamma,
        sigma2_gamma,
        sigma2_eps,
        rho: best_rho,
        loglik,
        reml: opts.reml,
        at_boundary: best_rho == 0.0,
        evals,
    })
}

fn check_xy(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch(format!(
            "X has {} rows, y has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    if x.ncols() == 0 || x.nrows() == 0 {
        return Err(Error::InvalidInput("empty design matrix".into()));
    }
    Ok(())
}
