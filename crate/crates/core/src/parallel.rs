//! Deterministic fan-out over path indices.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{MtemError, Result};

// Paths are processed in fixed blocks and results are consumed in block
// order, so output never depends on the worker count.
pub(crate) const BLOCK_PATHS: usize = 64;
const WAVE_BLOCKS: usize = 32;

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(MtemError::input("number of workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| MtemError::Estimation(format!("cannot start worker pool: {e}")))
}

/// Runs `work` on consecutive blocks of `0..paths` across `workers` threads
/// and hands each block result to `consume` in index order.
pub(crate) fn for_each_block<T, E, F, C>(paths: usize, workers: usize, work: F, mut consume: C) -> Result<(), E>
where
    T: Send,
    E: From<MtemError>,
    F: Fn(Range<usize>) -> T + Sync,
    C: FnMut(T) -> Result<(), E>,
{
    let pool = thread_pool(workers)?;
    let blocks: Vec<Range<usize>> = (0..paths)
        .step_by(BLOCK_PATHS)
        .map(|start| start..(start + BLOCK_PATHS).min(paths))
        .collect();
    for wave in blocks.chunks(WAVE_BLOCKS) {
        let results: Vec<T> = pool.install(|| wave.par_iter().cloned().map(&work).collect());
        for r in results {
            consume(r)?;
        }
    }
    Ok(())
}
