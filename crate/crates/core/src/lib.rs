pub mod bench;
pub mod data;
pub mod error;
pub mod fixed;
pub mod layers;
pub mod paillier;
pub mod party;
pub mod probes;
pub mod shares;
pub mod tensor;
pub mod train;
pub mod transport;

pub use error::{Error, Result};
