//! Fill-in-the-blank video question answering, end to end: cloze dataset
//! generation from clip-level annotations, a batch-normalized LSTM model
//! family trained with reverse-mode differentiation built from scratch,
//! and the evaluation tooling around it.
//!
//! The pipeline is deliberately self-contained: no external ML runtime,
//! no pretrained components. Feature tracks (per-frame vectors extracted
//! elsewhere) are consumed from a small binary container format.

pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod fibgen;
pub mod model;
pub mod numerics;
pub mod textpipe;
pub mod trainer;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// The rendered blank marker used wherever a question is displayed.
pub const BLANK_SYMBOL: &str = "_____";

/// Builds the seeded RNG used everywhere randomness is needed.
///
/// Every consumer gets its own `stream` so that adding draws in one part
/// of the pipeline never shifts the values seen by another.
pub fn seeded_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// RNG stream labels, one per randomness consumer.
pub mod rng_streams {
    pub const SYNTH: u64 = 1;
    pub const PARAM_INIT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const FRAMES: u64 = 4;
    pub const SUBSET: u64 = 5;
    pub const EXPORT: u64 = 6;
    pub const JUDGE_TIEBREAK: u64 = 7;
}
