//! Deterministic replica fan-out.
//!
//! Each replica is a pure function of its index, results come back in replica
//! order, and every reduction downstream folds that ordered vector serially.
//! Thread count therefore never changes a single bit of the output.

use rayon::prelude::*;

pub fn run_replicas<T, F>(threads: Option<usize>, replicas: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match threads {
        Some(1) => (0..replicas as u64).map(&f).collect(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("failed to build replica thread pool")
            .install(|| (0..replicas as u64).into_par_iter().map(&f).collect()),
        None => (0..replicas as u64).into_par_iter().map(&f).collect(),
    }
}
