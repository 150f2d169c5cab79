//! Dense `f64` tensors, a counter-based RNG and a fixed-size worker pool.
//!
//! Every kernel here partitions work so that each output element is produced
//! by exactly one worker with a fixed summation order. Results are therefore
//! bit-identical for any worker count.

pub(crate) mod csv;
mod pool;
mod rng;
pub(crate) mod tensor;

pub use self::csv::{read_tensor_csv, write_tensor_csv};
pub use self::pool::{workers_from_env, WorkerPool, WORKERS_ENV};
pub use self::rng::{Rng, RngStream};
pub use self::tensor::{Axes, BinaryOp, Operand, Reduction, Tensor};

/// Element count above which kernels hand work to rayon.
pub(crate) const PAR_THRESHOLD: usize = 1 << 14;
/// Chunk length for partitioned kernels.
pub(crate) const PAR_CHUNK: usize = 1 << 12;

/// Fills `out[i] = f(i)`, partitioned across the current rayon pool for large
/// outputs. Each index is written by one closure call, so the result does not
/// depend on scheduling.
pub(crate) fn fill_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    use rayon::prelude::*;
    if out.len() < PAR_THRESHOLD {
        for (i, x) in out.iter_mut().enumerate() {
            *x = f(i);
        }
    } else {
        out.par_chunks_mut(PAR_CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let base = c * PAR_CHUNK;
                for (k, x) in chunk.iter_mut().enumerate() {
                    *x = f(base + k);
                }
            });
    }
}
