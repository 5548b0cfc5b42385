//! Data-parallel execution helpers.
//!
//! With the `parallel` feature (on by default) the batch entry points in this
//! crate fan out over rayon's pool. Without it, or with
//! [`ExecMode::Sequential`], the same code runs on the calling thread and
//! produces identical results: every parallel map is order-preserving and
//! each item is computed independently.

use ndarray::{ArrayViewMut, Dimension, Zip};

/// Selects how batch work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// `Parallel` when the crate was built with rayon, `Sequential` otherwise.
    pub fn preferred() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Order-preserving map over a slice.
pub fn map_slice<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Elements below this count are always updated on the calling thread.
pub const PAR_ELEMENT_THRESHOLD: usize = 1 << 14;

/// Elementwise in-place update driven by up to three read-only operands of the
/// same shape.
pub(crate) fn zip_update3<D, F>(
    mode: ExecMode,
    out: ArrayViewMut<'_, f64, D>,
    a: ndarray::ArrayView<'_, f64, D>,
    b: ndarray::ArrayView<'_, f64, D>,
    c: ndarray::ArrayView<'_, f64, D>,
    f: F,
) where
    D: Dimension,
    F: Fn(&mut f64, f64, f64, f64) + Sync + Send,
{
    let zip = Zip::from(out).and(a).and(b).and(c);
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && zip.size() >= PAR_ELEMENT_THRESHOLD {
        zip.par_for_each(|o, &a, &b, &c| f(o, a, b, c));
        return;
    }
    let _ = mode;
    zip.for_each(|o, &a, &b, &c| f(o, a, b, c));
}

/// Applies `f(row_index, row)` to consecutive `row`-length chunks of `data`.
pub(crate) fn rows_mut<T, F>(mode: ExecMode, data: &mut [T], row: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let row = row.max(1);
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && data.len() >= PAR_ELEMENT_THRESHOLD {
        use rayon::prelude::*;
        let per_task = (PAR_ELEMENT_THRESHOLD / row).max(1);
        data.par_chunks_mut(per_task * row)
            .enumerate()
            .for_each(|(t, block)| {
                for (i, r) in block.chunks_mut(row).enumerate() {
                    f(t * per_task + i, r);
                }
            });
        return;
    }
    let _ = mode;
    for (i, r) in data.chunks_mut(row).enumerate() {
        f(i, r);
    }
}
