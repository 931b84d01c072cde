//! Execution policy for the data-parallel loops (per-image matching, per-class
//! NMS, per-channel convolution). Results are always collected in input
//! order, so both policies produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Environment variable capping the worker count (`0` or unset = automatic).
pub const THREADS_ENV: &str = "YOLOF_ASSIGN_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon-backed when the `parallel` feature is enabled, sequential otherwise.
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Reads [`THREADS_ENV`]. `None` means automatic.
pub fn thread_cap_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Installs the global worker pool according to [`THREADS_ENV`]. Only the
/// first call has an effect.
pub fn init_thread_pool() {
    #[cfg(feature = "parallel")]
    if let Some(n) = thread_cap_from_env() {
        // An already-initialized pool is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub(crate) fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

pub(crate) fn try_map<T, R, E, F>(exec: Execution, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync + Send,
{
    // Collect everything first so the reported error is always the one with
    // the lowest index, whatever the schedule.
    map(exec, items, f).into_iter().collect()
}

pub(crate) fn map_range<R, F>(exec: Execution, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}
