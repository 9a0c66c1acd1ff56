//! Data-parallel helpers. With the `parallel` feature (default) work items run
//! on the rayon pool; without it, or when `parallel` is false at the call
//! site, they run in order on the calling thread. Results are always returned
//! in input order, so both paths produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "M3TCM_THREADS";

pub fn map<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

pub fn try_map<T, R, F>(items: &[T], parallel: bool, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    map(items, parallel, f).into_iter().collect()
}

/// Sizes the global pool from `M3TCM_THREADS` when set. Returns the
/// configured count.
pub fn init_from_env() -> Option<usize> {
    let n = std::env::var(THREADS_ENV)
        .ok()?
        .parse::<usize>()
        .ok()?
        .max(1);
    #[cfg(feature = "parallel")]
    {
        // fails only if the pool was already built; keep the existing one
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Some(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_agree() {
        let items: Vec<u64> = (0..100).collect();
        let f = |x: &u64| x * x + 1;
        assert_eq!(map(&items, true, f), map(&items, false, f));
    }

    #[test]
    fn first_error_in_order_is_returned() {
        let items = [1, 2, 3];
        let r: Result<Vec<i32>> = try_map(&items, true, |&x| {
            if x >= 2 {
                Err(crate::Error::Config(format!("bad {x}")))
            } else {
                Ok(x)
            }
        });
        assert_eq!(r.unwrap_err().to_string(), "invalid config: bad 2");
    }
}
