//! Data-parallel map helpers.
//!
//! With the `parallel` feature the work is spread over rayon's global pool;
//! without it every helper degrades to a plain sequential loop. Results are
//! always returned in input order, so reductions performed by the caller over
//! the returned vector are independent of the thread count.

/// Execution strategy for the data-parallel kernels.
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
    /// Map `f` over `0..n`, preserving order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Map `f` over the items of a slice, preserving order.
    pub fn map_slice<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        self.map_range(items.len(), |i| f(&items[i]))
    }

    /// Map `f` over fixed-size chunks of a slice. Chunk boundaries depend only
    /// on `chunk`, never on the number of worker threads.
    pub fn map_chunks<I, T, F>(self, items: &[I], chunk: usize, f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&[I]) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        let n_chunks = items.len().div_ceil(chunk);
        self.map_range(n_chunks, |c| {
            let start = c * chunk;
            let end = (start + chunk).min(items.len());
            f(&items[start..end])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_strategies_agree_and_keep_order() {
        let items: Vec<u64> = (0..103).collect();
        let seq = Exec::Sequential.map_chunks(&items, 8, |c| c.iter().sum::<u64>());
        let par = Exec::Parallel.map_chunks(&items, 8, |c| c.iter().sum::<u64>());
        assert_eq!(seq, par);
        assert_eq!(seq.len(), 13);
        assert_eq!(seq.iter().sum::<u64>(), items.iter().sum::<u64>());
    }

    #[test]
    fn empty_input_maps_to_empty_output() {
        let items: Vec<u8> = Vec::new();
        assert!(Exec::default().map_chunks(&items, 4, |c| c.len()).is_empty());
    }
}
