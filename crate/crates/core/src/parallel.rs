use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs per-bin work inline or on a dedicated rayon pool.
pub(crate) struct BinPool {
    pool: Option<rayon::ThreadPool>,
}

impl BinPool {
    pub(crate) fn new(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Self { pool: None });
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    /// Applies `work` to every item; results keep item order.
    pub(crate) fn map<T, R, F>(&self, items: &mut [T], work: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(&mut T) -> R + Sync + Send,
    {
        match &self.pool {
            None => items.iter_mut().map(work).collect(),
            Some(pool) => pool.install(|| items.par_iter_mut().map(work).collect()),
        }
    }
}
