//! Fixed-point encoding and mask sampling.
//!
//! A real `x` at scale `s` is the integer `round(x * 2^s)`. Products add
//! scales; truncation by `k` bits floors. Masks live over the integers (no
//! modular ring), so share magnitudes are tracked as public bit budgets.

use num_bigint::{BigInt, RandBigInt};
use num_traits::{FromPrimitive, Signed, ToPrimitive, Zero};
use rand::RngCore;

use crate::error::{Error, Result};

pub const DEFAULT_FRAC_BITS: u32 = 20;
pub const DEFAULT_LAMBDA: u32 = 40;
pub const DEFAULT_VMAX_BITS: u32 = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Uniform masks `2^lambda` times wider than the hidden value's bound.
    Uniform,
    /// All masks are zero. Insecure; only for degenerate-configuration probes.
    Disabled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedConfig {
    /// `F`: fractional bits of features and gradients.
    pub frac_bits: u32,
    /// Statistical hiding parameter.
    pub lambda: u32,
    /// Bound on the raw magnitude of any logical (unmasked) value.
    pub vmax_bits: u32,
    pub mask_mode: MaskMode,
}

impl Default for FixedConfig {
    fn default() -> Self {
        FixedConfig {
            frac_bits: DEFAULT_FRAC_BITS,
            lambda: DEFAULT_LAMBDA,
            vmax_bits: DEFAULT_VMAX_BITS,
            mask_mode: MaskMode::Uniform,
        }
    }
}

impl FixedConfig {
    pub fn f(&self) -> u32 {
        self.frac_bits
    }

    pub fn validate(&self) -> Result<()> {
        if self.frac_bits == 0 || self.frac_bits > 48 {
            return Err(Error::Config(format!("frac_bits {} outside 1..=48", self.frac_bits)));
        }
        if self.lambda < 1 || self.vmax_bits < 4 * self.frac_bits {
            return Err(Error::Config("lambda must be positive and vmax_bits >= 4F".into()));
        }
        Ok(())
    }

    /// Bit width of a mask hiding a value bounded by `2^bound_bits`.
    pub fn mask_bits(&self, bound_bits: u32) -> u32 {
        bound_bits + self.lambda
    }

    /// Bound on `v - mask` for `|v| < 2^bound_bits`.
    pub fn masked_bits(&self, bound_bits: u32) -> u32 {
        self.mask_bits(bound_bits) + 1
    }

    /// Uniform sample from `[-2^(bound_bits + lambda), 2^(bound_bits + lambda)]`.
    pub fn sample_mask<R: RngCore>(&self, bound_bits: u32, rng: &mut R) -> BigInt {
        match self.mask_mode {
            MaskMode::Disabled => BigInt::zero(),
            MaskMode::Uniform => {
                let hi = BigInt::from(1) << self.mask_bits(bound_bits);
                rng.gen_bigint_range(&-&hi, &(hi + 1))
            }
        }
    }

    pub fn encode(&self, x: f64, scale: u32) -> Result<BigInt> {
        let raw = encode_unchecked(x, scale)?;
        if raw.bits() >= self.vmax_bits as u64 {
            return Err(Error::Overflow(format!("{x} at scale {scale}")));
        }
        Ok(raw)
    }
}

/// `round(x * 2^scale)`, ties away from zero.
pub fn encode_unchecked(x: f64, scale: u32) -> Result<BigInt> {
    if !x.is_finite() {
        return Err(Error::Overflow(format!("non-finite value {x}")));
    }
    let scaled = x * 2f64.powi(scale as i32);
    if !scaled.is_finite() {
        return Err(Error::Overflow(format!("{x} at scale {scale}")));
    }
    Ok(BigInt::from_f64(scaled.round()).expect("finite"))
}

pub fn decode(raw: &BigInt, scale: u32) -> f64 {
    let v = raw.to_f64().unwrap_or(if raw.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY });
    v * 2f64.powi(-(scale as i32))
}

/// Floor division by `2^k` (arithmetic shift).
pub fn truncate(raw: &BigInt, k: u32) -> BigInt {
    if raw.is_negative() {
        -((-raw - 1u32) >> k) - 1u32
    } else {
        raw >> k
    }
}

/// A single fixed-point value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FxScalar {
    pub raw: BigInt,
    pub scale: u32,
}

impl FxScalar {
    pub fn encode(x: f64, scale: u32, cfg: &FixedConfig) -> Result<FxScalar> {
        Ok(FxScalar { raw: cfg.encode(x, scale)?, scale })
    }

    pub fn decode(&self) -> f64 {
        decode(&self.raw, self.scale)
    }

    pub fn mul(&self, other: &FxScalar) -> FxScalar {
        FxScalar { raw: &self.raw * &other.raw, scale: self.scale + other.scale }
    }

    pub fn truncate(&self, k: u32) -> FxScalar {
        FxScalar { raw: truncate(&self.raw, k), scale: self.scale - k }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::party::derive_rng;

    #[test]
    fn encode_examples() {
        let cfg = FixedConfig::default();
        assert_eq!(cfg.encode(0.5, 20).unwrap(), BigInt::from(524288));
        assert_eq!(cfg.encode(-1.25, 20).unwrap(), BigInt::from(-1310720));
        assert!(cfg.encode(f64::NAN, 20).is_err());
        assert!(cfg.encode(1e30, 80).is_err());
    }

    #[test]
    fn product_then_truncate() {
        let cfg = FixedConfig::default();
        let a = FxScalar::encode(0.5, 20, &cfg).unwrap();
        let b = FxScalar::encode(-1.25, 20, &cfg).unwrap();
        let p = a.mul(&b);
        assert_eq!(p.scale, 40);
        assert_eq!(p.truncate(20).decode(), -0.625);
    }

    #[test]
    fn truncate_floors() {
        assert_eq!(truncate(&BigInt::from(-1), 1), BigInt::from(-1));
        assert_eq!(truncate(&BigInt::from(-4), 1), BigInt::from(-2));
        assert_eq!(truncate(&BigInt::from(-5), 1), BigInt::from(-3));
        assert_eq!(truncate(&BigInt::from(5), 1), BigInt::from(2));
    }

    #[test]
    fn mask_range() {
        let cfg = FixedConfig { lambda: 3, ..Default::default() };
        let mut rng = derive_rng(0, "m");
        for _ in 0..200 {
            let m = cfg.sample_mask(2, &mut rng);
            assert!(m.abs() <= BigInt::from(32));
        }
        let off = FixedConfig { mask_mode: MaskMode::Disabled, ..cfg };
        assert!(off.sample_mask(2, &mut rng).is_zero());
    }
}
