//! Paillier cryptosystem with generator `g = n + 1`.
//!
//! Plaintexts are signed integers in the centered range `(-n/2, n/2)`;
//! decryption lifts residues above `n/2` back to negatives.

use std::cell::Cell;
use std::fmt;

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_prime::RandPrime;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};

use crate::error::{Error, Result};
use crate::party::PartyId;

pub const ALLOWED_KEY_BITS: [u32; 3] = [512, 1024, 2048];
pub const DEFAULT_KEY_BITS: u32 = 2048;

thread_local! {
    static SCALAR_MULS: Cell<u64> = const { Cell::new(0) };
}

/// Number of ciphertext-by-plaintext multiplications performed on this thread.
pub fn scalar_mul_count() -> u64 {
    SCALAR_MULS.with(|c| c.get())
}

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    owner: PartyId,
    n: BigUint,
    n2: BigUint,
    half_n: BigUint,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({}, {} bits)", self.owner, self.n.bits())
    }
}

#[derive(Clone)]
pub struct SecretKey {
    owner: PartyId,
    p: BigUint,
    q: BigUint,
    p2: BigUint,
    q2: BigUint,
    // CRT decryption constants
    hp: BigUint,
    hq: BigUint,
    q_inv_p: BigUint,
    // CRT encryption constants: exponent n reduced mod phi(p^2), phi(q^2)
    n_mod_phi_p2: BigUint,
    n_mod_phi_q2: BigUint,
    p2_inv_q2: BigUint,
    // definitional decryption
    lambda: BigUint,
    mu: BigUint,
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({})", self.owner)
    }
}

#[derive(Clone, Debug)]
pub struct KeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

#[derive(Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    owner: PartyId,
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ciphertext(under {})", self.owner)
    }
}

fn l_function(x: &BigUint, d: &BigUint) -> BigUint {
    (x - 1u32) / d
}

pub fn keygen<R: RngCore + CryptoRng>(bits: u32, owner: PartyId, rng: &mut R) -> Result<KeyPair> {
    if !ALLOWED_KEY_BITS.contains(&bits) {
        return Err(Error::KeySize(bits));
    }
    let half = (bits / 2) as usize;
    loop {
        let p: BigUint = rng.gen_prime_exact(half, None);
        let q: BigUint = rng.gen_prime_exact(half, None);
        if p == q {
            continue;
        }
        let n = &p * &q;
        if n.bits() != bits as u64 {
            continue;
        }
        let p1 = &p - 1u32;
        let q1 = &q - 1u32;
        // gcd(n, (p-1)(q-1)) = 1 always holds for equal-length primes, but check.
        if !n.gcd(&(&p1 * &q1)).is_one() {
            continue;
        }
        return Ok(KeyPair::from_primes(p, q, owner));
    }
}

impl KeyPair {
    pub fn from_primes(p: BigUint, q: BigUint, owner: PartyId) -> KeyPair {
        let n = &p * &q;
        let n2 = &n * &n;
        let g = &n + 1u32;
        let p2 = &p * &p;
        let q2 = &q * &q;
        let p1 = &p - 1u32;
        let q1 = &q - 1u32;

        let hp = l_function(&g.modpow(&p1, &p2), &p).modinv(&p).expect("p invertible");
        let hq = l_function(&g.modpow(&q1, &q2), &q).modinv(&q).expect("q invertible");
        let q_inv_p = q.modinv(&p).expect("coprime primes");
        let p2_inv_q2 = p2.modinv(&q2).expect("coprime prime squares");
        let n_mod_phi_p2 = &n % (&p * &p1);
        let n_mod_phi_q2 = &n % (&q * &q1);

        let lambda = p1.lcm(&q1);
        let mu = l_function(&g.modpow(&lambda, &n2), &n).modinv(&n).expect("mu exists");

        let public = PublicKey { owner, half_n: &n >> 1, n, n2 };
        let secret = SecretKey {
            owner,
            p,
            q,
            p2,
            q2,
            hp,
            hq,
            q_inv_p,
            n_mod_phi_p2,
            n_mod_phi_q2,
            p2_inv_q2,
            lambda,
            mu,
        };
        KeyPair { public, secret }
    }

    pub fn owner(&self) -> PartyId {
        self.public.owner
    }

    /// Same ciphertext distribution as [`PublicKey::encrypt`], but computes
    /// `r^n` through the factorization.
    pub fn encrypt<R: RngCore + CryptoRng>(&self, m: &BigInt, rng: &mut R) -> Result<Ciphertext> {
        let r = self.public.sample_unit(rng);
        let rn = self.secret.pow_n_crt(&r);
        self.public.encrypt_with_rn(m, &rn)
    }

    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigInt> {
        self.secret.decrypt(c)
    }
}

impl PublicKey {
    pub fn owner(&self) -> PartyId {
        self.owner
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n2
    }

    pub fn key_bits(&self) -> u32 {
        self.n.bits() as u32
    }

    /// Largest `b` such that every `|m| < 2^b` is representable.
    pub fn plaintext_bits(&self) -> u32 {
        self.key_bits() - 2
    }

    fn sample_unit<R: RngCore + CryptoRng>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    fn check_range(&self, m: &BigInt) -> Result<()> {
        if m.magnitude() > &self.half_n {
            return Err(Error::PlaintextRange(m.bits()));
        }
        Ok(())
    }

    fn residue(&self, m: &BigInt) -> BigUint {
        match m.sign() {
            Sign::Minus => &self.n - m.magnitude(),
            _ => m.magnitude().clone(),
        }
    }

    fn encrypt_with_rn(&self, m: &BigInt, rn: &BigUint) -> Result<Ciphertext> {
        self.check_range(m)?;
        let gm = (self.residue(m) * &self.n + 1u32) % &self.n2;
        Ok(Ciphertext { value: gm * rn % &self.n2, owner: self.owner })
    }

    pub fn encrypt<R: RngCore + CryptoRng>(&self, m: &BigInt, rng: &mut R) -> Result<Ciphertext> {
        let r = self.sample_unit(rng);
        let rn = r.modpow(&self.n, &self.n2);
        self.encrypt_with_rn(m, &rn)
    }

    /// Encryption with caller-supplied randomness `r`, for tests.
    pub fn encrypt_with_r(&self, m: &BigInt, r: &BigUint) -> Result<Ciphertext> {
        let rn = r.modpow(&self.n, &self.n2);
        self.encrypt_with_rn(m, &rn)
    }

    /// Encryption of zero with `r = 1`; only valid as an accumulator seed.
    pub fn trivial_zero(&self) -> Ciphertext {
        Ciphertext { value: BigUint::one(), owner: self.owner }
    }

    pub fn check(&self, c: &Ciphertext) -> Result<()> {
        if c.owner != self.owner {
            return Err(Error::KeyMismatch { expected: self.owner, found: c.owner });
        }
        Ok(())
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        self.check(a)?;
        self.check(b)?;
        Ok(Ciphertext { value: &a.value * &b.value % &self.n2, owner: self.owner })
    }

    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let nb = self.neg(b)?;
        self.add(a, &nb)
    }

    pub fn neg(&self, a: &Ciphertext) -> Result<Ciphertext> {
        self.check(a)?;
        let inv = a.value.modinv(&self.n2).ok_or(Error::InvalidCiphertext("not a unit mod n^2"))?;
        Ok(Ciphertext { value: inv, owner: self.owner })
    }

    /// `[[a]] -> [[a + k]]`. Does not re-randomize.
    pub fn add_plain(&self, a: &Ciphertext, k: &BigInt) -> Result<Ciphertext> {
        self.check(a)?;
        self.check_range(k)?;
        let gk = (self.residue(k) * &self.n + 1u32) % &self.n2;
        Ok(Ciphertext { value: &a.value * gk % &self.n2, owner: self.owner })
    }

    /// `[[a]] -> [[k * a]]` for signed `k`.
    pub fn mul_plain(&self, a: &Ciphertext, k: &BigInt) -> Result<Ciphertext> {
        self.check(a)?;
        SCALAR_MULS.with(|c| c.set(c.get() + 1));
        let value = match k.sign() {
            Sign::NoSign => BigUint::one(),
            Sign::Plus => a.value.modpow(k.magnitude(), &self.n2),
            Sign::Minus => {
                let inv =
                    a.value.modinv(&self.n2).ok_or(Error::InvalidCiphertext("not a unit mod n^2"))?;
                inv.modpow(k.magnitude(), &self.n2)
            }
        };
        Ok(Ciphertext { value, owner: self.owner })
    }

    /// Unsigned-exponent power without the counter, for accumulators that
    /// already split positive and negative coefficients.
    pub(crate) fn pow_raw(&self, a: &BigUint, e: &BigUint) -> BigUint {
        SCALAR_MULS.with(|c| c.set(c.get() + 1));
        a.modpow(e, &self.n2)
    }

    pub(crate) fn mul_raw(&self, a: &BigUint, b: &BigUint) -> BigUint {
        a * b % &self.n2
    }

    pub(crate) fn inv_raw(&self, a: &BigUint) -> Result<BigUint> {
        a.modinv(&self.n2).ok_or(Error::InvalidCiphertext("not a unit mod n^2"))
    }

    pub fn rerandomize<R: RngCore + CryptoRng>(&self, a: &Ciphertext, rng: &mut R) -> Result<Ciphertext> {
        self.check(a)?;
        let r = self.sample_unit(rng);
        let rn = r.modpow(&self.n, &self.n2);
        Ok(Ciphertext { value: &a.value * rn % &self.n2, owner: self.owner })
    }

    /// `len(4, BE) || n (BE magnitude)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let nb = self.n.to_bytes_be();
        let mut out = Vec::with_capacity(4 + nb.len());
        out.extend_from_slice(&(nb.len() as u32).to_be_bytes());
        out.extend_from_slice(&nb);
        out
    }

    pub fn from_bytes(bytes: &[u8], owner: PartyId) -> Result<PublicKey> {
        let (nb, rest) = read_len_prefixed(bytes)?;
        if !rest.is_empty() {
            return Err(Error::Malformed("trailing bytes after public key".into()));
        }
        let n = BigUint::from_bytes_be(nb);
        if n.bits() < 16 || n.is_even() {
            return Err(Error::Malformed("invalid modulus".into()));
        }
        Ok(PublicKey { owner, half_n: &n >> 1, n2: &n * &n, n })
    }
}

impl SecretKey {
    pub fn owner(&self) -> PartyId {
        self.owner
    }

    fn pow_n_crt(&self, r: &BigUint) -> BigUint {
        let xp = (r % &self.p2).modpow(&self.n_mod_phi_p2, &self.p2);
        let xq = (r % &self.q2).modpow(&self.n_mod_phi_q2, &self.q2);
        crt(&xp, &xq, &self.p2, &self.q2, &self.p2_inv_q2)
    }

    fn n(&self) -> BigUint {
        &self.p * &self.q
    }

    fn validate(&self, c: &Ciphertext) -> Result<()> {
        if c.owner != self.owner {
            return Err(Error::KeyMismatch { expected: self.owner, found: c.owner });
        }
        let n = self.n();
        if c.value.is_zero() || c.value >= &n * &n {
            return Err(Error::InvalidCiphertext("value out of range"));
        }
        if !c.value.gcd(&n).is_one() {
            return Err(Error::InvalidCiphertext("not a unit mod n"));
        }
        Ok(())
    }

    fn lift(&self, m: BigUint) -> BigInt {
        let n = self.n();
        if m > (&n >> 1) {
            BigInt::from_biguint(Sign::Minus, n - m)
        } else {
            BigInt::from_biguint(Sign::Plus, m)
        }
    }

    /// CRT decryption.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigInt> {
        self.validate(c)?;
        let p1 = &self.p - 1u32;
        let q1 = &self.q - 1u32;
        let mp = l_function(&(&c.value % &self.p2).modpow(&p1, &self.p2), &self.p) * &self.hp % &self.p;
        let mq = l_function(&(&c.value % &self.q2).modpow(&q1, &self.q2), &self.q) * &self.hq % &self.q;
        // Garner: m = mq + q * ((mp - mq) * q^-1 mod p)
        let m = crt(&mq, &mp, &self.q, &self.p, &self.q_inv_p);
        Ok(self.lift(m))
    }

    /// Decryption straight from the definition `L(c^lambda mod n^2) * mu mod n`.
    pub fn decrypt_definitional(&self, c: &Ciphertext) -> Result<BigInt> {
        self.validate(c)?;
        let n = self.n();
        let n2 = &n * &n;
        let m = l_function(&c.value.modpow(&self.lambda, &n2), &n) * &self.mu % &n;
        Ok(self.lift(m))
    }
}

/// Returns `x` with `x = a mod m1`, `x = b mod m2`, given `m1_inv_m2 = m1^-1 mod m2`.
fn crt(a: &BigUint, b: &BigUint, m1: &BigUint, m2: &BigUint, m1_inv_m2: &BigUint) -> BigUint {
    let a_mod = a % m2;
    let diff = if b >= &a_mod { b - &a_mod } else { m2 - (&a_mod - b) % m2 };
    a + m1 * (diff * m1_inv_m2 % m2)
}

impl Ciphertext {
    pub fn owner(&self) -> PartyId {
        self.owner
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub(crate) fn from_raw(value: BigUint, owner: PartyId) -> Ciphertext {
        Ciphertext { value, owner }
    }

    pub(crate) fn into_raw(self) -> BigUint {
        self.value
    }

    /// `owner(1) || len(4, BE) || value (BE magnitude)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let vb = self.value.to_bytes_be();
        let mut out = Vec::with_capacity(5 + vb.len());
        out.push(self.owner.tag());
        out.extend_from_slice(&(vb.len() as u32).to_be_bytes());
        out.extend_from_slice(&vb);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Ciphertext> {
        let (&tag, rest) = bytes.split_first().ok_or_else(|| Error::Malformed("empty ciphertext".into()))?;
        let (vb, rest) = read_len_prefixed(rest)?;
        if !rest.is_empty() {
            return Err(Error::Malformed("trailing bytes after ciphertext".into()));
        }
        Ok(Ciphertext { value: BigUint::from_bytes_be(vb), owner: PartyId::from_tag(tag) })
    }
}

pub(crate) fn read_len_prefixed(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Malformed("truncated length prefix".into()));
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
    let rest = &bytes[4..];
    if rest.len() < len {
        return Err(Error::Malformed("truncated field".into()));
    }
    Ok(rest.split_at(len))
}

/// Convenience for tests and callers holding signed machine integers.
pub fn bigint(v: i64) -> BigInt {
    BigInt::from(v)
}
