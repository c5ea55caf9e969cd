//! Seeded random streams.
//!
//! All randomness in the crate flows from a single `u64` seed through
//! ChaCha8 streams. Each consumer gets its own stream id, so adding draws
//! to one stage never perturbs another, and any stream can be checkpointed
//! by its `(seed, stream, word_pos)` triple and resumed bit-exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream ids, one per independent consumer of randomness.
///
/// Indexed streams (sampling entry `i`, generating image `i`) add the index
/// to a base offset so per-item draws are independent of processing order.
pub mod streams {
    /// Train/test split shuffling during dataset preparation.
    pub const SPLIT: u64 = 1;
    /// Generator weight initialization.
    pub const INIT_GEN: u64 = 2;
    /// Discriminator weight initialization.
    pub const INIT_DISC: u64 = 3;
    /// Epoch shuffling of the training set.
    pub const TRAIN_ORDER: u64 = 4;
    /// Latent draws during training.
    pub const TRAIN_LATENT: u64 = 5;
    /// Style-encoder reparameterization noise during training.
    pub const TRAIN_NOISE: u64 = 6;
    /// Procedural toy-field rendering.
    pub const TOYDATA: u64 = 7;
    /// Label-map sampling, one stream per sampled map: `SAMPLE_BASE + i`.
    pub const SAMPLE_BASE: u64 = 1 << 32;
    /// Synthetic generation latents, one per image: `GENERATE_BASE + i`.
    pub const GENERATE_BASE: u64 = 2 << 32;
}

/// A ChaCha8 generator for `stream` derived from the root `seed`.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Serializable position of a stream, enough to resume it bit-exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position; `u128` carried as a decimal string because JSON
    /// numbers cannot hold it losslessly.
    pub word_pos: String,
}

impl RngState {
    /// Captures the position of a generator created by [`seeded`].
    pub fn capture(seed: u64, stream: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            stream,
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    /// Rebuilds the generator at the captured position.
    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = seeded(self.seed, self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .expect("word_pos was written by capture and is a valid u128");
        rng.set_word_pos(pos);
        rng
    }
}
