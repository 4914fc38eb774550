//! Masked time-series autoencoders and latent-space analytics.
//!
//! The pipeline turns one long (multi)variate series into overlapping
//! windows, trains an InceptionTime-style masked autoencoder on them, pools
//! the last inception activation of every window into a 128-d embedding and
//! projects the embeddings to 2D. The `insights` module reads segments,
//! anomalies and motifs off the projected trajectory.

pub mod datastore;
pub mod error;
pub mod experiments;
pub mod insights;
pub mod masking;
pub mod model;
pub mod par;
pub mod projector;
pub mod runtime;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};

/// Seeded generator used across the crate (ChaCha with 8 rounds).
pub type Rng = rand_chacha::ChaCha8Rng;

/// Build the crate-wide generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
