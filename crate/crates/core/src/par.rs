//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) an [`Executor`] with more than one job
//! owns a rayon thread pool. Without the feature, or with `jobs == 1`, work runs
//! on the calling thread. Output order always matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub struct Executor {
    jobs: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    /// `jobs == 0` means one worker per available core.
    pub fn new(jobs: usize) -> Self {
        #[cfg(feature = "parallel")]
        {
            let pool = if jobs == 1 {
                None
            } else {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build()
                    .ok()
            };
            let jobs = pool.as_ref().map_or(1, |p| p.current_num_threads());
            Executor { jobs, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = jobs;
            Executor { jobs: 1 }
        }
    }

    pub fn sequential() -> Self {
        Self::new(1)
    }

    pub fn jobs(&self) -> usize {
        self.jobs
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
        items.iter().map(f).collect()
    }

    /// Like [`Executor::map`] but stops at the first error in input order.
    pub fn try_map<T, R, E, F>(&self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(&T) -> Result<R, E> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::new(0)
    }
}
