use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{Channel, Direction, Message, PayloadKind, Transcript, TranscriptEntry};
use crate::error::{Error, Result};
use crate::fixed::{FixedConfig, MaskMode};
use crate::paillier::{keygen, KeyPair, PublicKey};
use crate::party::{PartyId, PartyRng, SeedSource};
use crate::tensor::{CipherTensor, FxTensor};

/// Parameters both parties must agree on before any protocol step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SessionConfig {
    pub key_bits: u32,
    pub fixed: FixedConfig,
    pub recv_timeout: Duration,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            key_bits: crate::paillier::DEFAULT_KEY_BITS,
            fixed: FixedConfig::default(),
            recv_timeout: Duration::from_secs(600),
        }
    }
}

impl SessionConfig {
    pub fn with_key_bits(key_bits: u32) -> SessionConfig {
        SessionConfig { key_bits, ..Default::default() }
    }

    fn hello_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17);
        out.extend_from_slice(&self.key_bits.to_be_bytes());
        out.extend_from_slice(&self.fixed.frac_bits.to_be_bytes());
        out.extend_from_slice(&self.fixed.lambda.to_be_bytes());
        out.extend_from_slice(&self.fixed.vmax_bits.to_be_bytes());
        out.push(matches!(self.fixed.mask_mode, MaskMode::Disabled) as u8);
        out
    }
}

/// One party's end of an authenticated two-party link.
pub struct ProtocolSession {
    me: PartyId,
    peer: PartyId,
    config: SessionConfig,
    keys: Arc<KeyPair>,
    peer_pk: PublicKey,
    channel: Box<dyn Channel>,
    transcript: Transcript,
    rng: PartyRng,
    seed: SeedSource,
    started: Instant,
}

/// Exchanges configuration and public keys over `channel`. Both ends must
/// call this concurrently.
pub fn connect(
    channel: Box<dyn Channel>,
    me: PartyId,
    peer: PartyId,
    config: SessionConfig,
    keys: Arc<KeyPair>,
    seed: SeedSource,
) -> Result<ProtocolSession> {
    config.fixed.validate()?;
    if keys.owner() != me {
        return Err(Error::Config(format!("key pair belongs to {}, not {me}", keys.owner())));
    }
    let mut s = ProtocolSession {
        me,
        peer,
        config,
        keys: keys.clone(),
        // placeholder until the peer's key arrives
        peer_pk: keys.public.clone(),
        channel,
        transcript: Transcript::new(me, peer),
        rng: seed.rng(&format!("session/{me}-{peer}")),
        seed,
        started: Instant::now(),
    };
    s.send(Message { step_tag: "session.hello".into(), kind: PayloadKind::Control, payload: config.hello_bytes() })?;
    let hello = s.recv_kind("session.hello", PayloadKind::Control)?;
    if hello != config.hello_bytes() {
        return Err(Error::ConfigMismatch(format!("{me} and {peer} disagree on key size or fixed-point parameters")));
    }
    let own_pk = s.keys.public.to_bytes();
    s.send(Message { step_tag: "session.pubkey".into(), kind: PayloadKind::PublicKey, payload: own_pk })?;
    let pk = s.recv_kind("session.pubkey", PayloadKind::PublicKey)?;
    s.peer_pk = PublicKey::from_bytes(&pk, peer)?;
    if s.peer_pk.key_bits() != config.key_bits {
        return Err(Error::ConfigMismatch(format!("peer key has {} bits", s.peer_pk.key_bits())));
    }
    Ok(s)
}

/// Generates `me`'s key pair from its seed's key stream.
pub fn generate_keys(config: &SessionConfig, me: PartyId, seed: SeedSource) -> Result<Arc<KeyPair>> {
    let mut rng = seed.rng("keygen");
    Ok(Arc::new(keygen(config.key_bits, me, &mut rng)?))
}

/// Runs party A and party B concurrently over an in-process channel.
pub fn run_local<RA, RB, FA, FB>(
    config: SessionConfig,
    seed_a: SeedSource,
    seed_b: SeedSource,
    fa: FA,
    fb: FB,
) -> Result<(RA, RB)>
where
    RA: Send,
    RB: Send,
    FA: FnOnce(&mut ProtocolSession) -> Result<RA> + Send,
    FB: FnOnce(&mut ProtocolSession) -> Result<RB> + Send,
{
    let (ca, cb) = super::mem_pair();
    std::thread::scope(|scope| {
        let ha = scope.spawn(move || -> Result<RA> {
            let keys = generate_keys(&config, PartyId::A, seed_a)?;
            let mut s = connect(Box::new(ca), PartyId::A, PartyId::B, config, keys, seed_a)?;
            fa(&mut s)
        });
        let rb = (|| -> Result<RB> {
            let keys = generate_keys(&config, PartyId::B, seed_b)?;
            let mut s = connect(Box::new(cb), PartyId::B, PartyId::A, config, keys, seed_b)?;
            fb(&mut s)
        })();
        let ra = ha.join().expect("party A thread panicked");
        // Report the root cause: a failing side makes its peer see a disconnect.
        match (ra, rb) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            (Err(e), Err(Error::Disconnected)) | (Err(Error::Disconnected), Err(e)) => Err(e),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    })
}

/// Runs B as the hub of a star with one in-process channel per A-party.
/// `seeds_a[i - 1]` seeds `A(i)`; `fa` receives the party index. B's
/// sessions arrive in index order and share one key pair.
pub fn run_local_star<RA, RB, FA, FB>(
    config: SessionConfig,
    seed_b: SeedSource,
    seeds_a: &[SeedSource],
    fa: FA,
    fb: FB,
) -> Result<(Vec<RA>, RB)>
where
    RA: Send,
    FA: Fn(u8, &mut ProtocolSession) -> Result<RA> + Sync,
    FB: FnOnce(&mut [ProtocolSession]) -> Result<RB>,
{
    if seeds_a.is_empty() || seeds_a.len() > u8::MAX as usize {
        return Err(Error::Config(format!("{} A-parties", seeds_a.len())));
    }
    let pairs: Vec<_> = seeds_a.iter().map(|_| super::mem_pair()).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(seeds_a.len());
        let mut b_ends = Vec::with_capacity(seeds_a.len());
        for (i, ((ca, cb), &seed)) in pairs.into_iter().zip(seeds_a).enumerate() {
            let index = i as u8 + 1;
            let fa = &fa;
            b_ends.push(cb);
            handles.push(scope.spawn(move || -> Result<RA> {
                let me = PartyId::a(index);
                let keys = generate_keys(&config, me, seed)?;
                let mut s = connect(Box::new(ca), me, PartyId::B, config, keys, seed)?;
                fa(index, &mut s)
            }));
        }
        let rb = (|| -> Result<RB> {
            let keys = generate_keys(&config, PartyId::B, seed_b)?;
            let mut sessions = Vec::with_capacity(b_ends.len());
            for (i, cb) in b_ends.into_iter().enumerate() {
                let peer = PartyId::a(i as u8 + 1);
                sessions.push(connect(Box::new(cb), PartyId::B, peer, config, keys.clone(), seed_b)?);
            }
            fb(&mut sessions)
        })();
        let ras: Vec<Result<RA>> = handles.into_iter().map(|h| h.join().expect("A-party thread panicked")).collect();
        match rb {
            Ok(rb) => Ok((ras.into_iter().collect::<Result<Vec<RA>>>()?, rb)),
            // a failing A-party shows up at B as a disconnect
            Err(Error::Disconnected) => Err(ras
                .into_iter()
                .filter_map(|r| r.err())
                .find(|e| !matches!(e, Error::Disconnected))
                .unwrap_or(Error::Disconnected)),
            Err(e) => Err(e),
        }
    })
}

impl ProtocolSession {
    pub fn me(&self) -> PartyId {
        self.me
    }

    pub fn peer(&self) -> PartyId {
        self.peer
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn fixed(&self) -> &FixedConfig {
        &self.config.fixed
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn shared_keys(&self) -> Arc<KeyPair> {
        self.keys.clone()
    }

    pub fn own_pk(&self) -> &PublicKey {
        &self.keys.public
    }

    pub fn peer_pk(&self) -> &PublicKey {
        &self.peer_pk
    }

    pub fn rng(&mut self) -> &mut PartyRng {
        &mut self.rng
    }

    /// Independent stream from this party's seed, e.g. for initializers.
    pub fn derived_rng(&self, label: &str) -> PartyRng {
        self.seed.rng(label)
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn take_transcript(&mut self) -> Transcript {
        std::mem::replace(&mut self.transcript, Transcript::new(self.me, self.peer))
    }

    /// Key capacity shared by both parties' keys, in plaintext bits.
    pub fn capacity_bits(&self) -> u32 {
        self.keys.public.plaintext_bits().min(self.peer_pk.plaintext_bits())
    }

    pub fn send(&mut self, message: Message) -> Result<()> {
        self.channel.send_frame(message.to_frame())?;
        self.transcript.entries.push(TranscriptEntry {
            direction: Direction::Sent,
            message,
            elapsed: self.started.elapsed(),
        });
        Ok(())
    }

    /// Receives the next message, which must carry `expected_tag`.
    pub fn recv(&mut self, expected_tag: &str) -> Result<Message> {
        let frame = self.channel.recv_frame(self.config.recv_timeout).map_err(|e| match e {
            Error::Timeout(_) => Error::Timeout(expected_tag.to_string()),
            e => e,
        })?;
        let message = Message::from_frame(&frame)?;
        self.transcript.entries.push(TranscriptEntry {
            direction: Direction::Received,
            message: message.clone(),
            elapsed: self.started.elapsed(),
        });
        if message.step_tag != expected_tag {
            return Err(Error::Desync { expected: expected_tag.to_string(), got: message.step_tag });
        }
        Ok(message)
    }

    fn recv_kind(&mut self, tag: &str, kind: PayloadKind) -> Result<Vec<u8>> {
        let m = self.recv(tag)?;
        if m.kind != kind {
            return Err(Error::PayloadKind { tag: tag.to_string() });
        }
        Ok(m.payload)
    }

    pub fn send_cipher(&mut self, tag: &str, c: &CipherTensor) -> Result<()> {
        self.send(Message { step_tag: tag.to_string(), kind: PayloadKind::CipherTensor, payload: c.to_wire() })
    }

    pub fn recv_cipher(&mut self, tag: &str) -> Result<CipherTensor> {
        CipherTensor::from_wire(&self.recv_kind(tag, PayloadKind::CipherTensor)?)
    }

    pub fn send_blinded(&mut self, tag: &str, t: &FxTensor) -> Result<()> {
        self.send(Message { step_tag: tag.to_string(), kind: PayloadKind::BlindedPlainTensor, payload: t.to_wire() })
    }

    pub fn recv_blinded(&mut self, tag: &str) -> Result<FxTensor> {
        FxTensor::from_wire(&self.recv_kind(tag, PayloadKind::BlindedPlainTensor)?)
    }

    pub fn send_control(&mut self, tag: &str, payload: Vec<u8>) -> Result<()> {
        self.send(Message { step_tag: tag.to_string(), kind: PayloadKind::Control, payload })
    }

    pub fn recv_control(&mut self, tag: &str) -> Result<Vec<u8>> {
        self.recv_kind(tag, PayloadKind::Control)
    }
}
