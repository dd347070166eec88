//! Index-ordered parallel map; sequential when the `parallel` feature is off
//! or one thread is requested.

/// Threads from `DIFFKIT_THREADS`, if set to a positive integer.
pub fn env_threads() -> Option<usize> {
    std::env::var("DIFFKIT_THREADS").ok()?.parse().ok().filter(|&n| n > 0)
}

/// `f(0), …, f(n−1)` collected in index order. The result never depends on
/// the worker count.
pub fn map_indexed<T, F>(n: usize, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match threads {
            Some(1) => (0..n).map(f).collect(),
            Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
                Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
                Err(_) => (0..n).map(f).collect(),
            },
            None => (0..n).into_par_iter().map(f).collect(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered() {
        let a = map_indexed(1000, Some(1), |i| i * i);
        let b = map_indexed(1000, Some(4), |i| i * i);
        let c = map_indexed(1000, None, |i| i * i);
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a[999], 998001);
    }
}
