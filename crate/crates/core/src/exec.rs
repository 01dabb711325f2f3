//! Output-row scheduling for the kernels.
//!
//! Kernels hand the executor an output buffer split into rows of fixed length
//! and a closure that fills one row. Each output element is computed entirely
//! inside one closure call with a fixed accumulation order, so any scheduling
//! of rows yields bit-identical results.

pub trait RowExecutor: Sync {
    fn for_each_row<T, F>(&self, out: &mut [T], row_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send;
}

/// Runs rows in order on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl RowExecutor for Sequential {
    fn for_each_row<T, F>(&self, out: &mut [T], row_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if row_len == 0 {
            return;
        }
        for (i, row) in out.chunks_mut(row_len).enumerate() {
            f(i, row);
        }
    }
}
