//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over the current
//! rayon pool; without it every helper runs on the calling thread. Results
//! are always returned in index order, so callers that reduce them in order
//! get bitwise-identical answers for any thread count.

/// Maps `f` over `0..n`, giving each worker its own scratch state built by `init`.
#[cfg(feature = "parallel")]
pub fn map_indexed<S, R, I, F>(n: usize, init: I, f: F) -> Vec<R>
where
    R: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> R + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map_init(init, |s, i| f(s, i)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<S, R, I, F>(n: usize, init: I, f: F) -> Vec<R>
where
    R: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> R + Sync + Send,
{
    map_indexed_sequential(n, init, f)
}

/// Sequential reference for [`map_indexed`]; also used by the benches.
pub fn map_indexed_sequential<S, R, I, F>(n: usize, init: I, f: F) -> Vec<R>
where
    I: Fn() -> S,
    F: Fn(&mut S, usize) -> R,
{
    let mut state = init();
    (0..n).map(|i| f(&mut state, i)).collect()
}

/// Runs `f` with at most `threads` workers. `threads == 0` uses the default pool.
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    if threads == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R: Send>(_threads: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Number of workers the current context would use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
