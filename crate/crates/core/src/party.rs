use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Party identity. `B` is the label holder; `A(i)` are feature-only parties,
/// numbered from 1. The two-party protocol uses `A(1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartyId(u8);

impl PartyId {
    pub const B: PartyId = PartyId(0);
    pub const A: PartyId = PartyId(1);

    pub fn a(index: u8) -> PartyId {
        assert!(index >= 1, "A-party indices start at 1");
        PartyId(index)
    }

    pub fn from_tag(tag: u8) -> PartyId {
        PartyId(tag)
    }

    pub fn tag(self) -> u8 {
        self.0
    }

    pub fn is_b(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            0 => write!(f, "B"),
            1 => write!(f, "A"),
            i => write!(f, "A{i}"),
        }
    }
}

impl std::str::FromStr for PartyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "B" | "b" => Ok(PartyId::B),
            "A" | "a" => Ok(PartyId::A),
            _ => s
                .strip_prefix(['A', 'a'])
                .and_then(|i| i.parse::<u8>().ok())
                .filter(|&i| i >= 1)
                .map(PartyId)
                .ok_or_else(|| format!("unknown party `{s}`")),
        }
    }
}

pub type PartyRng = ChaCha20Rng;

/// Deterministic RNG derived from a party seed and a purpose label, so that
/// independent streams (keys, masks, initializers) never interleave.
pub fn derive_rng(seed: u64, label: &str) -> PartyRng {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(label.as_bytes());
    PartyRng::from_seed(h.finalize().into())
}

/// Seed source for a party: fixed (reproducible runs) or OS entropy.
#[derive(Clone, Copy, Debug)]
pub enum SeedSource {
    Fixed(u64),
    Entropy,
}

impl SeedSource {
    pub fn rng(self, label: &str) -> PartyRng {
        match self {
            SeedSource::Fixed(seed) => derive_rng(seed, label),
            SeedSource::Entropy => PartyRng::from_entropy(),
        }
    }
}
