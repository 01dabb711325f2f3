//! Latency and throughput measurement.

use std::time::Instant;

use rayon::prelude::*;
use scenedet_core::metrics::BenchReport;
use scenedet_core::model::forward_with;
use scenedet_core::model::NoObserver;
use scenedet_core::{Model, RowExecutor, Sequential, Tensor};

use crate::error::Result;
use crate::evaluate::pool;

/// Spreads kernel output rows over a dedicated rayon pool. Row results do not
/// depend on scheduling, so outputs stay bit-identical to [`Sequential`].
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(threads: usize) -> Result<Self> {
        Ok(RayonExecutor { pool: pool(threads)? })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl RowExecutor for RayonExecutor {
    fn for_each_row<T, F>(&self, out: &mut [T], row_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if row_len == 0 {
            return;
        }
        self.pool.install(|| out.par_chunks_mut(row_len).enumerate().for_each(|(i, row)| f(i, row)));
    }
}

/// Runs `f` `warmup` times untimed, then `iters` times, returning each timed
/// call's wall time in milliseconds on the monotonic clock.
pub fn time_iterations<F>(warmup: usize, iters: usize, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut() -> Result<()>,
{
    for _ in 0..warmup {
        f()?;
    }
    let mut out = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        f()?;
        out.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(out)
}

/// Single-image inference latency. One thread runs kernels in order; more
/// threads split each kernel's output rows across a pool.
pub fn benchmark(model: &Model, input: &Tensor, warmup: usize, iters: usize, threads: usize) -> Result<BenchReport> {
    let latencies = if threads <= 1 {
        time_iterations(warmup, iters, || {
            forward_with(model, input, &Sequential, &mut NoObserver)?;
            Ok(())
        })?
    } else {
        let exec = RayonExecutor::new(threads)?;
        time_iterations(warmup, iters, || {
            forward_with(model, input, &exec, &mut NoObserver)?;
            Ok(())
        })?
    };
    Ok(BenchReport::from_latencies(model.meta.name.clone(), model.meta.quantized, warmup, threads.max(1), latencies)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use scenedet_core::model::sample::{random_inputs, tiny_model};
    use std::time::Duration;

    #[test]
    fn warmup_is_not_timed() {
        let mut calls = 0;
        let slow_first = |calls: &mut usize| {
            *calls += 1;
            if *calls == 1 {
                std::thread::sleep(Duration::from_millis(60));
            }
            Ok(())
        };
        let lat = time_iterations(1, 5, || slow_first(&mut calls)).unwrap();
        assert_eq!(lat.len(), 5);
        assert!(lat.iter().all(|&l| l < 30.0), "{lat:?}");
        calls = 0;
        let lat = time_iterations(0, 5, || slow_first(&mut calls)).unwrap();
        assert!(lat[0] >= 60.0);
    }

    #[test]
    fn pooled_rows_match_sequential() {
        let m = tiny_model(2);
        let x = &random_inputs(&m, 1, 1)[0];
        let exec = RayonExecutor::new(4).unwrap();
        let a = forward_with(&m, x, &Sequential, &mut NoObserver).unwrap();
        let b = forward_with(&m, x, &exec, &mut NoObserver).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn report_shape() {
        let m = tiny_model(2);
        let x = &random_inputs(&m, 1, 1)[0];
        let r = benchmark(&m, x, 2, 10, 2).unwrap();
        assert_eq!(r.iterations(), 10);
        assert_eq!((r.warmup, r.threads), (2, 2));
        assert!(r.p50_ms <= r.p90_ms && r.p90_ms <= r.p99_ms);
    }
}
