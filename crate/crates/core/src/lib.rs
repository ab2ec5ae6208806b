//! Simulation and validation toolkit for loop-based time-bin Gaussian boson samplers.

pub mod cert;
pub mod error;
pub mod gaussian;
pub mod hafnian;
pub mod orbits;
pub mod pipeline;
pub mod sampling;
pub mod tdm;
pub mod validation;

pub use error::{Error, Result};

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256.
pub fn hash_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
