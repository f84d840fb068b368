//! Per-thread operation counters.
//!
//! The counters are thread-local so concurrently running pipelines (tests,
//! benchmark trials) never see each other's counts.

use std::cell::Cell;

thread_local! {
    static DB_SAMPLE_READS: Cell<u64> = const { Cell::new(0) };
    static FOLD_MULADDS: Cell<u64> = const { Cell::new(0) };
    static FFT_POINTS: Cell<u64> = const { Cell::new(0) };
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Raw database samples read while sketching.
    pub db_sample_reads: u64,
    /// Complex multiply-adds spent in folding.
    pub fold_muladds: u64,
    /// Total length of the short transforms computed.
    pub fft_points: u64,
}

pub fn reset() {
    DB_SAMPLE_READS.with(|c| c.set(0));
    FOLD_MULADDS.with(|c| c.set(0));
    FFT_POINTS.with(|c| c.set(0));
}

pub fn snapshot() -> Counters {
    Counters {
        db_sample_reads: DB_SAMPLE_READS.with(Cell::get),
        fold_muladds: FOLD_MULADDS.with(Cell::get),
        fft_points: FFT_POINTS.with(Cell::get),
    }
}

pub(crate) fn add_db_reads(n: u64) {
    DB_SAMPLE_READS.with(|c| c.set(c.get() + n));
}

pub(crate) fn add_fold_muladds(n: u64) {
    FOLD_MULADDS.with(|c| c.set(c.get() + n));
}

pub(crate) fn add_fft_points(n: u64) {
    FFT_POINTS.with(|c| c.set(c.get() + n));
}
