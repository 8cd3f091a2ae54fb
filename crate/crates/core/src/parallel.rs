//! Trial fan-out. With the `parallel` feature the trials run on the rayon
//! pool; without it they run in a plain loop. Output order is the trial order
//! in both cases.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_trials<T, F>(trials: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..trials).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_trials_sequential(trials, f)
    }
}

pub fn map_trials_sequential<T, F>(trials: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..trials).map(f).collect()
}

/// Runs `f` on a dedicated pool with `workers` threads (ignored without the
/// `parallel` feature).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_trial_order() {
        let v = with_workers(4, || map_trials(100, |i| i * i));
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
