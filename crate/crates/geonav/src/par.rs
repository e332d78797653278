//! Data-parallel helpers with a sequential twin.
//!
//! Output order always matches input order, and each item's computation is
//! independent, so the parallel and sequential paths produce bit-identical
//! results. The `parallel` feature chooses whether [`ExecMode::Parallel`]
//! actually fans out to rayon or silently degrades to the sequential path.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    /// Rayon when the `parallel` feature is on; sequential otherwise.
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        ExecMode::Parallel
    }
}

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(_mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Map over a slice preserving order.
pub fn map_slice<I, T, F>(mode: ExecMode, items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    map_indexed(mode, items.len(), |i| f(&items[i]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let seq = map_slice(ExecMode::Sequential, &xs, |x| x * x + 1);
        let par = map_slice(ExecMode::Parallel, &xs, |x| x * x + 1);
        assert_eq!(seq, par);
    }
}
