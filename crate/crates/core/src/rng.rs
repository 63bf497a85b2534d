//! Named, keyed random streams.
//!
//! A stream is identified by the run's root seed, a stream name such as
//! `"split"` or `"mock-noise"`, and a key (usually a patient id). Two calls with
//! the same triple always yield the same generator, whatever thread runs them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Stream names used by the pipeline. Recorded in run manifests.
pub const STREAM_PARTITION: &str = "partition";
pub const STREAM_SPLIT: &str = "split";
pub const STREAM_SAMPLING: &str = "sampling";
pub const STREAM_MOCK_NOISE: &str = "mock-noise";
pub const STREAM_SIMULATION: &str = "simulation";

pub fn derive_seed(root: u64, stream: &str, key: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update((stream.len() as u64).to_le_bytes());
    hasher.update(stream.as_bytes());
    hasher.update(key.as_bytes());
    hasher.finalize().into()
}

pub fn stream(root: u64, stream: &str, key: &str) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(root, stream, key))
}

/// Folds a derived seed down to a `u64`, for APIs that take a plain integer seed.
pub fn derive_u64(root: u64, stream: &str, key: &str) -> u64 {
    let bytes = derive_seed(root, stream, key);
    u64::from_le_bytes(bytes[..8].try_into().expect("32-byte digest"))
}
