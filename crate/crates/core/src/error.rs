use thiserror::Error;

use crate::party::PartyId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported key size {0} (allowed: 512, 1024, 2048)")]
    KeySize(u32),

    #[error("plaintext {0} bits exceeds the key's plaintext range")]
    PlaintextRange(u64),

    #[error("ciphertext encrypted under {found}'s key, expected {expected}'s")]
    KeyMismatch { expected: PartyId, found: PartyId },

    #[error("invalid ciphertext: {0}")]
    InvalidCiphertext(&'static str),

    #[error("value overflows fixed-point bound: {0}")]
    Overflow(String),

    #[error("scale mismatch: {0} vs {1}")]
    Scale(u32, u32),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bit budget of {needed} bits exceeds key capacity of {capacity} bits")]
    Capacity { needed: u32, capacity: u32 },

    #[error("decrypted share at step `{tag}` exceeds its mask bound")]
    MaskBound { tag: String },

    #[error("malformed wire data: {0}")]
    Malformed(String),

    #[error("protocol desync: expected step `{expected}`, got `{got}`")]
    Desync { expected: String, got: String },

    #[error("unexpected payload kind at step `{tag}`")]
    PayloadKind { tag: String },

    #[error("timed out waiting for step `{0}`")]
    Timeout(String),

    #[error("peer disconnected")]
    Disconnected,

    #[error("session config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("layer used out of order: {0}")]
    State(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("data error at line {line}: {msg}")]
    Data { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the two-party protocol itself, as opposed to
    /// local input or configuration problems.
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            Error::Desync { .. }
                | Error::PayloadKind { .. }
                | Error::Timeout(_)
                | Error::Disconnected
                | Error::ConfigMismatch(_)
                | Error::MaskBound { .. }
                | Error::KeyMismatch { .. }
                | Error::Malformed(_)
        )
    }

    /// Protocol step the failure is attributed to, when known.
    pub fn step_tag(&self) -> Option<&str> {
        match self {
            Error::Desync { expected, .. } => Some(expected),
            Error::PayloadKind { tag } | Error::MaskBound { tag } | Error::Timeout(tag) => Some(tag),
            _ => None,
        }
    }
}
