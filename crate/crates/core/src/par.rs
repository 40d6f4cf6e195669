//! Row-parallel helpers.
//!
//! Every pixel-parallel loop in the crate is a pure gather writing a disjoint
//! output row, so the execution mode only affects speed. Reductions are done
//! per row and then summed sequentially in row order, which keeps results
//! bit-identical across modes and thread counts.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

const UNSET: u8 = 0;
const SEQ: u8 = 1;
const PAR: u8 = 2;

static MODE: AtomicU8 = AtomicU8::new(UNSET);

/// Selects the process-wide execution mode.
pub fn set_execution(exec: Execution) {
    let v = match exec {
        Execution::Sequential => SEQ,
        #[cfg(feature = "parallel")]
        Execution::Parallel => PAR,
    };
    MODE.store(v, Ordering::Relaxed);
}

pub fn execution() -> Execution {
    match MODE.load(Ordering::Relaxed) {
        SEQ => Execution::Sequential,
        #[cfg(feature = "parallel")]
        PAR => Execution::Parallel,
        _ => Execution::default(),
    }
}

/// Fills `out` row by row; `width` is the row length.
pub(crate) fn for_each_row<T, F>(out: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    match execution() {
        Execution::Sequential => {
            for (r, row) in out.chunks_mut(width).enumerate() {
                f(r, row);
            }
        }
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            out.par_chunks_mut(width).enumerate().for_each(|(r, row)| f(r, row));
        }
    }
}

/// Maps each index in `0..n` to a value, preserving order.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match execution() {
        Execution::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
    }
}
