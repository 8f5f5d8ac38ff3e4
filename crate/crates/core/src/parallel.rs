//! Deterministic replicate fan-out.
//!
//! Replicates are cut into fixed-size chunks whose boundaries do not depend on
//! the worker count. Each chunk is folded sequentially and the chunk results
//! are combined in chunk order, so the output is bit-identical for any thread
//! pool size.

use rayon::prelude::*;

/// Replicates per chunk.
pub const CHUNK: usize = 512;

/// Fold `n` replicates into an accumulator.
///
/// `init` builds an empty accumulator, `fold` adds replicate `k` to it and
/// `merge` appends a later chunk's accumulator to an earlier one.
pub fn fold_replicates<A, I, F, M>(n: usize, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, usize) + Sync,
    M: Fn(&mut A, A),
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let end = ((c + 1) * CHUNK).min(n);
            for k in c * CHUNK..end {
                fold(&mut acc, k);
            }
            acc
        })
        .collect();
    let mut out = init();
    for p in parts {
        merge(&mut out, p);
    }
    out
}

/// Evaluate `f` for every index and keep the results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    (0..n).into_par_iter().map(&f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_is_independent_of_pool_size() {
        let run = || {
            fold_replicates(
                5000,
                || 0.0f64,
                |acc, k| *acc += (k as f64).sqrt(),
                |a, b| *a += b,
            )
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(run);
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(run);
        assert_eq!(one.to_bits(), four.to_bits());
    }
}
