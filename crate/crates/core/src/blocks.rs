//! Splitting a database into overlapping blocks.
//!
//! Block `b` starts at `b * block_len` and carries `m_query - 1` extra
//! samples, so every length-`M` window lies entirely inside the block that
//! holds its first sample. The last block is zero-padded to the common span.
//! Each block gets its own plan and shift seed and is processed on its own.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::params::{plan_stages, PlanConfig, ProblemDims};
use crate::rsidft::{recover, DecoderConfig, MatchReport};
use crate::signal::Signal;
use crate::sketch::{sketch_signal, Sketch, SketchKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub n_db: usize,
    pub block_count: usize,
    pub block_len: usize,
    pub overlap: usize,
    pub offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(n_db: usize, m_query: usize, block_count: usize) -> Result<Self> {
        if block_count == 0 || m_query == 0 || n_db < m_query {
            return Err(Error::InvalidLayout(format!(
                "cannot split {n_db} samples into {block_count} blocks for queries of length {m_query}"
            )));
        }
        let block_len = n_db.div_ceil(block_count);
        if block_len < m_query {
            return Err(Error::InvalidLayout(format!(
                "block length {block_len} is shorter than the query length {m_query}"
            )));
        }
        let offsets: Vec<usize> = (0..block_count).map(|b| b * block_len).collect();
        if offsets.last().is_some_and(|&o| o >= n_db) {
            return Err(Error::InvalidLayout(format!(
                "{block_count} blocks of {block_len} leave the last block empty"
            )));
        }
        Ok(Self { n_db, block_count, block_len, overlap: m_query - 1, offsets })
    }

    /// Samples per block including the overlap.
    pub fn span(&self) -> usize {
        self.block_len + self.overlap
    }

    /// Problem dimensions of one block.
    pub fn block_dims(&self, dims: &ProblemDims) -> Result<ProblemDims> {
        dims.with_n_db(self.span())
    }
}

/// Shift seed of block `b`; block 0 keeps the master seed.
pub fn block_seed(master: u64, b: usize) -> u64 {
    master.wrapping_add((b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn split(db: &Signal, layout: &BlockLayout) -> Result<Vec<Signal>> {
    if db.len() != layout.n_db {
        return Err(Error::InvalidLayout(format!(
            "layout covers {} samples, database has {}",
            layout.n_db,
            db.len()
        )));
    }
    Ok(layout.offsets.iter().map(|&o| db.window(o, layout.span())).collect())
}

/// Shifts block-local positions to global ones, dropping duplicates and
/// windows that run past the end of the database.
pub fn merge(reports: &[MatchReport], layout: &BlockLayout) -> Result<MatchReport> {
    if reports.len() != layout.block_count {
        return Err(Error::InvalidLayout(format!(
            "expected {} block reports, got {}",
            layout.block_count,
            reports.len()
        )));
    }
    let last = layout.n_db - (layout.overlap + 1);
    let mut out = MatchReport::default();
    for (report, &offset) in reports.iter().zip(&layout.offsets) {
        for (&p, &v) in report.positions.iter().zip(&report.values) {
            let global = offset + p;
            if global <= last {
                out.positions.push(global);
                out.values.push(v);
            } else {
                out.diagnostics.filtered += 1;
            }
        }
        out.iterations += report.iterations;
        out.unresolved_bins += report.unresolved_bins;
        let d = &report.diagnostics;
        out.diagnostics.classifications += d.classifications;
        out.diagnostics.peels += d.peels;
        out.diagnostics.duplicates += d.duplicates;
        out.diagnostics.filtered += d.filtered;
        out.diagnostics.iteration_cap_hit |= d.iteration_cap_hit;
    }
    let before = out.positions.len();
    out.normalize();
    out.diagnostics.duplicates += (before - out.positions.len()) as u64;
    Ok(out)
}

/// One sketch per block, all planned for the block span.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockedSketch {
    pub layout: BlockLayout,
    pub sketches: Vec<Sketch>,
}

pub fn sketch_blocks(
    db: &Signal,
    dims: &ProblemDims,
    cfg: &PlanConfig,
    seed: u64,
    block_count: usize,
) -> Result<BlockedSketch> {
    let layout = BlockLayout::new(dims.n_db, dims.m_query, block_count)?;
    let block_dims = layout.block_dims(dims)?;
    let blocks = split(db, &layout)?;
    let sketches = blocks
        .par_iter()
        .enumerate()
        .map(|(b, block)| {
            let mut plan = plan_stages(&block_dims, cfg, block_seed(seed, b))?;
            plan.block_count = layout.block_count;
            plan.block_len = layout.block_len;
            sketch_signal(block, &plan, SketchKind::Database)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockedSketch { layout, sketches })
}

pub fn recover_blocks(
    sketch: &BlockedSketch,
    query: &Signal,
    dims: &ProblemDims,
    cfg: &DecoderConfig,
) -> Result<MatchReport> {
    let block_dims = sketch.layout.block_dims(dims)?;
    let reports = sketch
        .sketches
        .par_iter()
        .map(|s| recover(s, query, &block_dims, cfg))
        .collect::<Result<Vec<_>>>()?;
    merge(&reports, &sketch.layout)
}
