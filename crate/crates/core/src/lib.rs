//! Sub-linear time substring matching on ±1 databases.
//!
//! The database is sketched once: for every stage `i` and branch `j` the sketch
//! keeps the `f_i` DFT coefficients of the zero-padded database on the index
//! set `{s_j + k g_i}`. A query is sketched on the same index sets by folding
//! (`O(M)` work per branch plus an `f_i`-point FFT). Multiplying the two
//! sketches and taking short inverse transforms yields aliased views of the
//! cross-correlation, which is sparse: it is close to `M` at every match and
//! small elsewhere. A peeling decoder over those aliased bins recovers every
//! match position.
//!
//! Modules, bottom up:
//!
//! * [`params`]: stage planning (`d`, `f_i`, `g_i`, `B`, shifts).
//! * [`signal`]: signal containers, planting, the naive correlation oracle.
//! * [`sketch`]: folding and subsampled DFT sketches.
//! * [`rsidft`]: bin formation, classification, singleton decoding, peeling.
//! * [`blocks`]: split a database into overlapping blocks and merge reports.
//! * [`cli`]: command-line front end, sketch files and the benchmark harness.

pub mod blocks;
pub mod cli;
pub mod error;
pub mod params;
pub mod rsidft;
pub mod signal;
pub mod sketch;
pub mod stats;

pub use error::{Error, Result};
pub use params::{plan_stages, Mode, PlanConfig, ProblemDims, StagePlan};
pub use rsidft::{recover, DecoderConfig, MatchReport};
pub use signal::{MatchSpec, Signal};
pub use sketch::{sketch_signal, Sketch, SketchKind};
