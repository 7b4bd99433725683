//! Data-parallel execution over fixed-size chunks.
//!
//! Work is always split into the same chunks and the per-chunk results are
//! returned in chunk order, so reductions performed by the caller are
//! bitwise identical whether the chunks ran serially or on the rayon pool.

/// How chunked work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    /// Run chunks one after another on the calling thread.
    Serial,
    /// Run chunks on the global rayon pool.
    #[cfg(feature = "parallel")]
    Rayon,
}

impl Default for Exec {
    /// Rayon when the `parallel` feature is enabled, serial otherwise.
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        return Exec::Rayon;
        #[cfg(not(feature = "parallel"))]
        return Exec::Serial;
    }
}

impl Exec {
    /// Map `f` over `items` split into chunks of `chunk` elements.
    /// `f` receives the chunk's starting index and the chunk itself.
    pub fn map_chunks<T, R, F>(self, items: &[T], chunk: usize, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &[T]) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        match self {
            Exec::Serial => items
                .chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i * chunk, c))
                .collect(),
            #[cfg(feature = "parallel")]
            Exec::Rayon => {
                use rayon::prelude::*;
                items
                    .par_chunks(chunk)
                    .enumerate()
                    .map(|(i, c)| f(i * chunk, c))
                    .collect()
            }
        }
    }

    /// Map `f` over the index range `0..n`, split into chunks of `chunk`
    /// indices. `f` receives a half-open index range.
    pub fn map_ranges<R, F>(self, n: usize, chunk: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(std::ops::Range<usize>) -> R + Sync + Send,
    {
        let chunk = chunk.max(1);
        let n_chunks = n.div_ceil(chunk);
        let range = move |i: usize| i * chunk..((i + 1) * chunk).min(n);
        match self {
            Exec::Serial => (0..n_chunks).map(|i| f(range(i))).collect(),
            #[cfg(feature = "parallel")]
            Exec::Rayon => {
                use rayon::prelude::*;
                (0..n_chunks).into_par_iter().map(|i| f(range(i))).collect()
            }
        }
    }
}

/// Pairwise (cascade) summation; result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 32;
    if xs.len() <= BASE {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
