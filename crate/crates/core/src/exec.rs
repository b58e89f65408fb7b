//! Order-preserving data-parallel map.
//!
//! With the `parallel` feature (default) work is spread over rayon; without
//! it, or with [`Exec::Sequential`], items are processed in order on the
//! calling thread. Results always come back in input order, so callers that
//! reduce them sequentially get bit-identical answers in either mode.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Global rayon pool.
    #[default]
    Parallel,
    /// Dedicated pool with this many workers.
    Pool(usize),
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && !matches!(self, Exec::Sequential | Exec::Pool(1))
    }
}

pub fn map_ordered<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match exec {
            Exec::Parallel => return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect(),
            Exec::Pool(n) if n > 1 => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .expect("thread pool");
                return pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect());
            }
            _ => {}
        }
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// `map_ordered` over the index range `0..n`.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map_ordered(exec, &idx, |_, &i| f(i))
}
