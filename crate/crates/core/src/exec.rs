//! Execution strategy for the data-parallel inner loops.
//!
//! Every batch-level computation in the crate (per-sequence ELBO gradients,
//! Monte Carlo sampling chunks, metric passes) is expressed as an
//! order-preserving map over independent work items followed by a
//! sequential reduction. Results are therefore bit-identical between
//! [`Exec::Sequential`] and [`Exec::Parallel`] and independent of the
//! thread count.
//!
//! [`Exec::Parallel`] is backed by rayon and requires the `parallel` cargo
//! feature (enabled by default). Without the feature it silently degrades
//! to sequential execution.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Maps `f` over an index range, preserving order.
    pub fn map_range<R, F>(&self, range: Range<usize>, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => range.into_par_iter().map(f).collect(),
            _ => range.map(f).collect(),
        }
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && *self == Exec::Parallel
    }
}
