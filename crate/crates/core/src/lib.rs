//! A desk-scale cache-timing laboratory.
//!
//! The crate wires four pieces together:
//!
//! * [`aes`] — AES-128 with interchangeable table-access strategies, every
//!   table read routed through an observer hook;
//! * [`cache`] — a deterministic set-associative cache simulator that charges
//!   hit/miss cycles for observed reads and serves as the timing oracle;
//! * [`dcf`] — the dynamic-cache-flushing countermeasure layer: randomized
//!   flush timer, proportional random delays, and data-independent table
//!   access, wrapped around the cipher as a stream pipeline;
//! * [`attack`] / [`analysis`] — the first-round timing attack and the
//!   experiment statistics (timing heatmaps, constancy reports).
//!
//! Everything runs on simulated cycles, so every experiment is deterministic
//! and reproducible from a seed. Nothing here is hardened for real-world use;
//! the point is to make the leak, the attack, and the countermeasures
//! observable on a desk.

pub mod aes;
pub mod analysis;
pub mod attack;
pub mod cache;
pub mod dcf;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("key must be exactly 16 bytes, got {0}")]
    InvalidKeyLength(usize),

    #[error("input buffer is empty")]
    EmptyInput,

    #[error("table index {index} out of range for a table of {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid cache config: {0}")]
    InvalidCacheConfig(String),

    #[error("invalid countermeasure config: {0}")]
    InvalidDcfConfig(String),

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error("sample count {got} is below the minimum of {min}")]
    SampleCountTooLow { got: usize, min: usize },

    #[error("no samples observed for position {position} with byte value {value:#04x}")]
    InsufficientSamples { position: usize, value: u8 },

    #[error("maximum is not unique; tied candidates: {0:?}")]
    AmbiguousMaximum(Vec<u8>),
}

pub type Result<T> = std::result::Result<T, Error>;
