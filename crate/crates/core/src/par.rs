//! Data-parallel helpers. With the `parallel` feature disabled every helper
//! runs sequentially and `jobs` is ignored.

/// Degree of parallelism: `0` means all available cores, `1` forces the
/// sequential path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Jobs(pub usize);

impl Jobs {
    pub const SEQUENTIAL: Jobs = Jobs(1);
    pub const ALL: Jobs = Jobs(0);

    pub fn is_sequential(self) -> bool {
        !cfg!(feature = "parallel") || self.0 == 1
    }
}

/// Order-preserving map over a slice.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], jobs: Jobs, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    if jobs.is_sequential() {
        return items.iter().map(f).collect();
    }
    if jobs.0 == 0 {
        return items.par_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.0).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], _jobs: Jobs, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Order-preserving fallible map; returns the first error in input order.
pub fn try_map<T, R, E, F>(items: &[T], jobs: Jobs, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(items, jobs, f).into_iter().collect()
}
