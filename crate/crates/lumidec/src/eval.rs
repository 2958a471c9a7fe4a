//! Dataset evaluation spread over worker threads.

use lumidec_core::augment::ImagePair;
use lumidec_core::metrics::{evaluate_dataset, Enhancer, MetricReport, SsimMode};

/// Worker count: `LUMIDEC_THREADS` when set to a positive integer, else the
/// available parallelism.
pub fn thread_cap() -> usize {
    match std::env::var("LUMIDEC_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => {
                log::warn!("ignoring LUMIDEC_THREADS={v:?}; expected a positive integer");
                default_threads()
            }
        },
        Err(_) => default_threads(),
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Same rows, in the same order, as [`evaluate_dataset`]; images are split
/// into contiguous chunks, one per thread.
pub fn evaluate_parallel<E: Enhancer + Sync>(enhancer: &E, pairs: &[ImagePair], mode: SsimMode, threads: usize) -> MetricReport {
    if threads <= 1 || pairs.len() <= 1 {
        return evaluate_dataset(enhancer, pairs, mode);
    }
    let chunk = pairs.len().div_ceil(threads);
    let rows = std::thread::scope(|s| {
        let handles: Vec<_> = pairs.chunks(chunk).map(|c| s.spawn(move || evaluate_dataset(enhancer, c, mode).rows)).collect();
        handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    MetricReport { mode, rows }
}
