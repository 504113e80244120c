//! Thin parallelism layer. With the `parallel` feature (default) the helpers
//! fan work out over rayon; without it they run the identical closures
//! sequentially. Every caller is required to produce results that do not
//! depend on execution order, so worker count only ever changes wall time.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, returning results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, returning results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sequential twin of [`map_indexed`], always available; benchmarks use it as
/// the baseline when comparing the two execution paths.
pub fn map_indexed_seq<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Runs `body` inside a rayon pool of `jobs` threads when the feature is on;
/// `jobs = None` uses the default pool. Sequential builds just run `body`.
#[cfg(feature = "parallel")]
pub fn with_jobs<T: Send>(jobs: Option<usize>, body: impl FnOnce() -> T + Send) -> T {
    match jobs {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(body))
            .unwrap_or_else(|_| panic!("failed to build rayon pool")),
        _ => body(),
    }
}

/// Runs `body` inside a rayon pool of `jobs` threads when the feature is on;
/// `jobs = None` uses the default pool. Sequential builds just run `body`.
#[cfg(not(feature = "parallel"))]
pub fn with_jobs<T: Send>(_jobs: Option<usize>, body: impl FnOnce() -> T + Send) -> T {
    body()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_indexed_preserves_order() {
        let v = map_indexed(100, |i| i * i);
        let s = map_indexed_seq(100, |i| i * i);
        assert_eq!(v, s);
    }

    #[test]
    fn with_jobs_runs_body() {
        assert_eq!(with_jobs(Some(2), || 7), 7);
        assert_eq!(with_jobs(None, || 7), 7);
    }
}
