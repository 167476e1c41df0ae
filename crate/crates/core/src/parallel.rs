//! Data-parallel helpers with a sequential fallback.
//!
//! All randomness inside a parallel region comes from streams derived from
//! fixed keys, so both modes produce identical results.

use crate::error::Result;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled.
    #[default]
    Parallel,
}

impl Execution {
    /// The mode actually used, given the compiled features.
    pub fn effective(self) -> Execution {
        if cfg!(feature = "parallel") {
            self
        } else {
            Execution::Sequential
        }
    }

    /// Runs `f(i, &mut items[i])` for every item, stopping at the first error
    /// in sequential mode.
    pub fn try_for_each_mut<T, F>(self, items: &mut [T], f: F) -> Result<()>
    where
        T: Send,
        F: Fn(usize, &mut T) -> Result<()> + Sync + Send,
    {
        match self.effective() {
            Execution::Sequential => items.iter_mut().enumerate().try_for_each(|(i, t)| f(i, t)),
            Execution::Parallel => par::try_for_each_mut(items, f),
        }
    }

    /// `(0..n).map(f)` collected in order.
    pub fn map_range<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        match self.effective() {
            Execution::Sequential => (0..n).map(f).collect(),
            Execution::Parallel => par::map_range(n, f),
        }
    }
}

#[cfg(feature = "parallel")]
mod par {
    use super::Result;
    use rayon::prelude::*;

    pub fn try_for_each_mut<T, F>(items: &mut [T], f: F) -> Result<()>
    where
        T: Send,
        F: Fn(usize, &mut T) -> Result<()> + Sync + Send,
    {
        items.par_iter_mut().enumerate().try_for_each(|(i, t)| f(i, t))
    }

    pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
mod par {
    use super::Result;

    pub fn try_for_each_mut<T, F>(items: &mut [T], f: F) -> Result<()>
    where
        F: Fn(usize, &mut T) -> Result<()>,
    {
        items.iter_mut().enumerate().try_for_each(|(i, t)| f(i, t))
    }

    pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
    where
        F: Fn(usize) -> U,
    {
        (0..n).map(f).collect()
    }
}
