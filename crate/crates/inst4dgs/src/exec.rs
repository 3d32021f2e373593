use inst4dgs_core::optim::ViewExecutor;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};

/// Runs per-view work on a dedicated rayon pool. Results keep index
/// order, so outputs match [`inst4dgs_core::optim::Serial`] bit for bit.
pub struct Parallel {
    pool: ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::Config("threads: must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("threads: {e}")))?;
        Ok(Parallel { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl ViewExecutor for Parallel {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool
            .install(|| (0..n).into_par_iter().map(&f).collect())
    }
}
