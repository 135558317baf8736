//! Framed, step-tagged messaging between parties, with transcripts and
//! privacy scanning.

mod channel;
mod policy;
mod session;
mod transcript;

pub use channel::{mem_pair, Channel, MemChannel, TcpChannel};
pub use policy::{scan_state, scan_transcript, PrivacyPolicy, Quantity, Violation};
pub use session::{connect, generate_keys, run_local, run_local_star, ProtocolSession, SessionConfig};
pub use transcript::{Direction, Transcript, TranscriptEntry};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PayloadKind {
    CipherTensor,
    BlindedPlainTensor,
    PublicKey,
    Control,
}

impl PayloadKind {
    pub fn code(self) -> u8 {
        match self {
            PayloadKind::CipherTensor => 0,
            PayloadKind::BlindedPlainTensor => 1,
            PayloadKind::PublicKey => 2,
            PayloadKind::Control => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<PayloadKind> {
        Ok(match code {
            0 => PayloadKind::CipherTensor,
            1 => PayloadKind::BlindedPlainTensor,
            2 => PayloadKind::PublicKey,
            3 => PayloadKind::Control,
            c => return Err(Error::Malformed(format!("unknown payload kind {c}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::CipherTensor => "cipher",
            PayloadKind::BlindedPlainTensor => "blinded",
            PayloadKind::PublicKey => "pubkey",
            PayloadKind::Control => "control",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub step_tag: String,
    pub kind: PayloadKind,
    pub payload: Vec<u8>,
}

impl Message {
    /// `len(4) || kind(1) || tag_len(2) || tag || payload`, where `len`
    /// counts everything after itself.
    pub fn to_frame(&self) -> Vec<u8> {
        let tag = self.step_tag.as_bytes();
        let body = 1 + 2 + tag.len() + self.payload.len();
        let mut out = Vec::with_capacity(4 + body);
        out.extend_from_slice(&(body as u32).to_be_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&(tag.len() as u16).to_be_bytes());
        out.extend_from_slice(tag);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_frame(frame: &[u8]) -> Result<Message> {
        if frame.len() < 7 {
            return Err(Error::Malformed("short frame".into()));
        }
        let len = u32::from_be_bytes(frame[0..4].try_into().unwrap()) as usize;
        if len != frame.len() - 4 {
            return Err(Error::Malformed("frame length mismatch".into()));
        }
        let kind = PayloadKind::from_code(frame[4])?;
        let tag_len = u16::from_be_bytes(frame[5..7].try_into().unwrap()) as usize;
        if 7 + tag_len > frame.len() {
            return Err(Error::Malformed("tag overruns frame".into()));
        }
        let step_tag = std::str::from_utf8(&frame[7..7 + tag_len])
            .map_err(|_| Error::Malformed("step tag is not UTF-8".into()))?
            .to_string();
        Ok(Message { step_tag, kind, payload: frame[7 + tag_len..].to_vec() })
    }
}
