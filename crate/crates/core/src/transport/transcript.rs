use std::fmt::Write as _;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::{Message, PayloadKind};
use crate::error::{Error, Result};
use crate::party::PartyId;

const FILE_MAGIC: &[u8] = b"VFLTR\x01";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

#[derive(Clone, Debug)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub message: Message,
    /// Time since the session started; excluded from digests.
    pub elapsed: Duration,
}

/// Every message one party sent or received on a session, in order.
#[derive(Clone, Debug)]
pub struct Transcript {
    pub party: PartyId,
    pub peer: PartyId,
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new(party: PartyId, peer: PartyId) -> Transcript {
        Transcript { party, peer, entries: Vec::new() }
    }

    pub fn received(&self) -> impl Iterator<Item = &Message> {
        self.entries.iter().filter(|e| e.direction == Direction::Received).map(|e| &e.message)
    }

    pub fn sent(&self) -> impl Iterator<Item = &Message> {
        self.entries.iter().filter(|e| e.direction == Direction::Sent).map(|e| &e.message)
    }

    pub fn count(&self, direction: Direction, kind: PayloadKind) -> usize {
        self.entries.iter().filter(|e| e.direction == direction && e.message.kind == kind).count()
    }

    pub fn with_prefix(&self, prefix: &str) -> impl Iterator<Item = &TranscriptEntry> {
        let prefix = prefix.to_string();
        self.entries.iter().filter(move |e| e.message.step_tag.starts_with(&prefix))
    }

    /// One line per message: direction, step tag, payload kind, payload
    /// length, SHA-256 of the payload.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let dir = match e.direction {
                Direction::Sent => "send",
                Direction::Received => "recv",
            };
            let m = &e.message;
            let _ = writeln!(
                out,
                "{dir}\t{}\t{}\t{}\t{}",
                m.step_tag,
                m.kind.name(),
                m.payload.len(),
                hex::encode(Sha256::digest(&m.payload))
            );
        }
        out
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.dump().as_bytes()))
    }

    /// Digest over directions, kinds and payload bytes only, ignoring step
    /// tag names.
    pub fn payload_digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update([matches!(e.direction, Direction::Sent) as u8, e.message.kind.code()]);
            h.update((e.message.payload.len() as u64).to_be_bytes());
            h.update(&e.message.payload);
        }
        hex::encode(h.finalize())
    }

    /// File form: magic, party and peer tags, then per entry a direction
    /// byte and the message frame. Timings are dropped.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = FILE_MAGIC.to_vec();
        out.extend([self.party.tag(), self.peer.tag()]);
        for e in &self.entries {
            out.push(u8::from(e.direction == Direction::Received));
            out.extend(e.message.to_frame());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Transcript> {
        let rest = bytes.strip_prefix(FILE_MAGIC).ok_or_else(|| Error::Malformed("not a transcript file".into()))?;
        let [party, peer, rest @ ..] = rest else { return Err(Error::Malformed("truncated transcript header".into())) };
        let mut t = Transcript::new(PartyId::from_tag(*party), PartyId::from_tag(*peer));
        let mut at = 0;
        while at < rest.len() {
            if at + 5 > rest.len() {
                return Err(Error::Malformed("truncated transcript entry".into()));
            }
            let direction = match rest[at] {
                0 => Direction::Sent,
                1 => Direction::Received,
                d => return Err(Error::Malformed(format!("bad direction byte {d}"))),
            };
            let len = u32::from_be_bytes(rest[at + 1..at + 5].try_into().expect("4 bytes")) as usize;
            let end = at + 5 + len;
            if end > rest.len() {
                return Err(Error::Malformed("truncated transcript entry".into()));
            }
            let message = Message::from_frame(&rest[at + 1..end])?;
            t.entries.push(TranscriptEntry { direction, message, elapsed: Duration::ZERO });
            at = end;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_keeps_digest() {
        let mut t = Transcript::new(PartyId::A, PartyId::B);
        for (d, tag) in [(Direction::Sent, "x.a"), (Direction::Received, "x.b")] {
            let message = Message { step_tag: tag.into(), kind: PayloadKind::Control, payload: vec![7; 3] };
            t.entries.push(TranscriptEntry { direction: d, message, elapsed: Duration::from_millis(5) });
        }
        let bytes = t.to_bytes();
        let back = Transcript::from_bytes(&bytes).unwrap();
        assert_eq!((back.digest(), back.party), (t.digest(), PartyId::A));
        assert!(Transcript::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Transcript::from_bytes(b"nope").is_err());
    }
}
