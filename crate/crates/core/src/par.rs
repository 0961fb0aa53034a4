//! Order-preserving map over independent work items, parallel when the
//! `parallel` feature is enabled. Experiment cells, fuzz batches, and
//! oracle sweeps all funnel through here, so results are byte-identical
//! regardless of how many threads run them.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving input order in the output. Runs on the
/// rayon pool when the `parallel` feature is on, sequentially otherwise.
#[cfg(feature = "parallel")]
pub fn map_cells<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_cells<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

/// Always-sequential variant, kept callable so benchmarks can compare the
/// two paths within one build.
pub fn map_cells_seq<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    F: Fn(T) -> R,
{
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let items: Vec<u64> = (0..256).collect();
        let f = |x: u64| x.wrapping_mul(0x9e3779b97f4a7c15).rotate_left(17);
        let par = map_cells(items.clone(), f);
        let seq = map_cells_seq(items, f);
        assert_eq!(par, seq);
    }
}
