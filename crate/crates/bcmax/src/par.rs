//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature (default) the work is spread across the rayon
//! pool; results always come back in input order, so downstream aggregation
//! is bitwise independent of scheduling. Without the feature the same entry
//! point degrades to a plain sequential map. `map_ordered_seq` is always the
//! sequential reference path, kept callable so the two can be compared.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

pub fn map_ordered_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}
