//! Perceptual hash functions and distances over fixed-length binary codes.
//!
//! Two hash families are provided: a DCT-based 256-bit hash compatible with
//! the widely deployed PDQ pipeline ([`pdq`]), and a seeded random-projection
//! hash with differentiable pre-sign scores for white-box attack experiments
//! ([`surrogate`]).

pub mod pdq;
pub mod surrogate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::img::LumaImage;
pub use surrogate::SurrogateHash;

#[derive(Debug, Error)]
pub enum HashError {
    #[error("image {width}x{height} is smaller than the required {min}x{min}")]
    ImageTooSmall { width: u32, height: u32, min: u32 },
    #[error("hash length mismatch: {left} bits vs {right} bits")]
    LengthMismatch { left: u16, right: u16 },
    #[error("invalid hash function spec: {0}")]
    InvalidSpec(String),
    #[error("invalid hex hash encoding: {0}")]
    InvalidHex(String),
}

/// A fixed-length binary perceptual hash plus the producing function's
/// image-domain quality score (0 = degenerate input, 100 = fully textured).
///
/// Equality and hashing consider only the bit pattern and length, not the
/// quality score, so hashes of the same bit pattern dedupe in set contexts.
#[derive(Debug, Clone)]
pub struct PerceptualHash {
    words: Vec<u64>,
    len_bits: u16,
    quality: f32,
}

impl PartialEq for PerceptualHash {
    fn eq(&self, other: &Self) -> bool {
        self.len_bits == other.len_bits && self.words == other.words
    }
}

impl Eq for PerceptualHash {}

impl std::hash::Hash for PerceptualHash {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.len_bits.hash(state);
        self.words.hash(state);
    }
}

impl PerceptualHash {
    /// Builds an all-zero hash of `len_bits` bits. Lengths must be a
    /// multiple of 8 so hex and binary serializations are exact.
    pub fn zero(len_bits: u16, quality: f32) -> Self {
        assert!(len_bits > 0 && len_bits % 8 == 0, "bit length must be a positive multiple of 8");
        let n_words = (len_bits as usize + 63) / 64;
        PerceptualHash { words: vec![0; n_words], len_bits, quality }
    }

    pub fn from_bits(bits: impl IntoIterator<Item = bool>, len_bits: u16, quality: f32) -> Self {
        let mut h = Self::zero(len_bits, quality);
        for (i, b) in bits.into_iter().enumerate() {
            assert!(i < len_bits as usize, "more bits than declared length");
            if b {
                h.set_bit(i);
            }
        }
        h
    }

    pub fn len_bits(&self) -> u16 {
        self.len_bits
    }

    pub fn quality(&self) -> f32 {
        self.quality
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn bit(&self, index: usize) -> bool {
        assert!(index < self.len_bits as usize);
        self.words[index >> 6] >> (index & 63) & 1 == 1
    }

    pub fn set_bit(&mut self, index: usize) {
        assert!(index < self.len_bits as usize);
        self.words[index >> 6] |= 1 << (index & 63);
    }

    pub fn flip_bit(&mut self, index: usize) {
        assert!(index < self.len_bits as usize);
        self.words[index >> 6] ^= 1 << (index & 63);
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Bitwise complement within the declared length.
    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        out.mask_tail();
        out
    }

    fn mask_tail(&mut self) {
        let tail = self.len_bits as usize & 63;
        if tail != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << tail) - 1;
        }
    }

    /// Big-endian byte serialization: bit `len-1` is the most significant
    /// bit of the first byte.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n_bytes = self.len_bits as usize / 8;
        let mut out = vec![0u8; n_bytes];
        for (k, byte) in out.iter_mut().enumerate() {
            let base = self.len_bits as usize - 8 * (k + 1);
            for p in 0..8 {
                if self.bit(base + p) {
                    *byte |= 1 << p;
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], len_bits: u16, quality: f32) -> Result<Self, HashError> {
        if bytes.len() != len_bits as usize / 8 || len_bits % 8 != 0 {
            return Err(HashError::LengthMismatch {
                left: (bytes.len() * 8) as u16,
                right: len_bits,
            });
        }
        let mut h = Self::zero(len_bits, quality);
        for (k, byte) in bytes.iter().enumerate() {
            let base = len_bits as usize - 8 * (k + 1);
            for p in 0..8 {
                if byte >> p & 1 == 1 {
                    h.set_bit(base + p);
                }
            }
        }
        Ok(h)
    }

    /// Lowercase hex, most-significant bit first: 64 chars for 256 bits.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(self.len_bits as usize / 4);
        for byte in self.to_bytes() {
            s.push_str(&format!("{byte:02x}"));
        }
        s
    }

    pub fn from_hex(hex: &str) -> Result<Self, HashError> {
        if hex.is_empty() || hex.len() % 2 != 0 {
            return Err(HashError::InvalidHex(format!(
                "expected an even number of hex chars, got {}",
                hex.len()
            )));
        }
        let mut bytes = Vec::with_capacity(hex.len() / 2);
        for i in (0..hex.len()).step_by(2) {
            let b = u8::from_str_radix(&hex[i..i + 2], 16)
                .map_err(|_| HashError::InvalidHex(hex.to_string()))?;
            bytes.push(b);
        }
        Self::from_bytes(&bytes, (bytes.len() * 8) as u16, 100.0)
    }

    /// Hamming distance to another hash of the same length.
    pub fn hamming(&self, other: &Self) -> Result<u32, HashError> {
        if self.len_bits != other.len_bits {
            return Err(HashError::LengthMismatch { left: self.len_bits, right: other.len_bits });
        }
        Ok(hamming_words(&self.words, &other.words))
    }
}

#[inline]
pub(crate) fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Which hash function produces a code, and with what parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashFunctionSpec {
    pub kind: HashKind,
    pub output_bits: u16,
    /// Projection seed; ignored by the DCT hash.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HashKind {
    Pdq,
    SurrogateProjection,
}

impl std::fmt::Display for HashKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HashKind::Pdq => write!(f, "pdq"),
            HashKind::SurrogateProjection => write!(f, "surrogate-projection"),
        }
    }
}

impl HashFunctionSpec {
    pub fn pdq() -> Self {
        HashFunctionSpec { kind: HashKind::Pdq, output_bits: pdq::PDQ_BITS, seed: 0 }
    }

    pub fn surrogate(output_bits: u16, seed: u64) -> Self {
        HashFunctionSpec { kind: HashKind::SurrogateProjection, output_bits, seed }
    }

    pub fn validate(&self) -> Result<(), HashError> {
        match self.kind {
            HashKind::Pdq => {
                if self.output_bits != pdq::PDQ_BITS {
                    return Err(HashError::InvalidSpec(format!(
                        "the pdq kind always outputs {} bits, got {}",
                        pdq::PDQ_BITS,
                        self.output_bits
                    )));
                }
            }
            HashKind::SurrogateProjection => {
                if !(64..=512).contains(&self.output_bits) || self.output_bits % 8 != 0 {
                    return Err(HashError::InvalidSpec(format!(
                        "surrogate output bits must be a multiple of 8 in 64..=512, got {}",
                        self.output_bits
                    )));
                }
            }
        }
        Ok(())
    }
}

/// An instantiated hash function. Stateless (PDQ) or holding an immutable
/// seeded projection (surrogate); safe to share across threads.
#[derive(Debug, Clone)]
pub enum HashFunction {
    Pdq,
    SurrogateProjection(SurrogateHash),
}

impl HashFunction {
    pub fn from_spec(spec: &HashFunctionSpec) -> Result<Self, HashError> {
        spec.validate()?;
        Ok(match spec.kind {
            HashKind::Pdq => HashFunction::Pdq,
            HashKind::SurrogateProjection => {
                HashFunction::SurrogateProjection(SurrogateHash::new(spec.output_bits, spec.seed))
            }
        })
    }

    pub fn hash(&self, image: &LumaImage) -> Result<PerceptualHash, HashError> {
        match self {
            HashFunction::Pdq => pdq::pdq_hash(image),
            HashFunction::SurrogateProjection(s) => s.hash(image),
        }
    }

    pub fn output_bits(&self) -> u16 {
        match self {
            HashFunction::Pdq => pdq::PDQ_BITS,
            HashFunction::SurrogateProjection(s) => s.output_bits(),
        }
    }

    pub fn kind(&self) -> HashKind {
        match self {
            HashFunction::Pdq => HashKind::Pdq,
            HashFunction::SurrogateProjection(_) => HashKind::SurrogateProjection,
        }
    }

    pub fn spec(&self) -> HashFunctionSpec {
        match self {
            HashFunction::Pdq => HashFunctionSpec::pdq(),
            HashFunction::SurrogateProjection(s) => {
                HashFunctionSpec::surrogate(s.output_bits(), s.seed())
            }
        }
    }
}

/// Distance between two hashes of equal length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    /// Number of differing bits.
    Hamming,
    /// Hamming divided by the bit length; ranges over [0, 1].
    NormalizedL1,
}

impl std::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistanceMetric::Hamming => write!(f, "hamming"),
            DistanceMetric::NormalizedL1 => write!(f, "normalized-l1"),
        }
    }
}

impl DistanceMetric {
    /// The largest distance the metric can produce for `len_bits`-bit codes.
    pub fn max_value(&self, len_bits: u16) -> f64 {
        match self {
            DistanceMetric::Hamming => len_bits as f64,
            DistanceMetric::NormalizedL1 => 1.0,
        }
    }

    pub fn from_hamming(&self, hamming: u32, len_bits: u16) -> f64 {
        match self {
            DistanceMetric::Hamming => hamming as f64,
            DistanceMetric::NormalizedL1 => hamming as f64 / len_bits as f64,
        }
    }
}

pub fn distance(
    a: &PerceptualHash,
    b: &PerceptualHash,
    metric: DistanceMetric,
) -> Result<f64, HashError> {
    let h = a.hamming(b)?;
    Ok(metric.from_hamming(h, a.len_bits()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip_is_identity() {
        let mut h = PerceptualHash::zero(256, 100.0);
        for i in [0usize, 5, 63, 64, 127, 200, 255] {
            h.set_bit(i);
        }
        let hex = h.to_hex();
        assert_eq!(hex.len(), 64);
        let back = PerceptualHash::from_hex(&hex).unwrap();
        assert_eq!(back, h);
        assert_eq!(back.to_hex(), hex);
    }

    #[test]
    fn hex_is_msb_first() {
        let mut h = PerceptualHash::zero(64, 100.0);
        h.set_bit(63);
        assert_eq!(h.to_hex(), "8000000000000000");
        let mut h = PerceptualHash::zero(64, 100.0);
        h.set_bit(0);
        assert_eq!(h.to_hex(), "0000000000000001");
    }

    #[test]
    fn distance_identity_and_complement() {
        let mut a = PerceptualHash::zero(256, 100.0);
        for i in (0..256).step_by(3) {
            a.set_bit(i);
        }
        assert_eq!(distance(&a, &a, DistanceMetric::Hamming).unwrap(), 0.0);
        let b = a.complement();
        assert_eq!(distance(&a, &b, DistanceMetric::Hamming).unwrap(), 256.0);
        assert_eq!(distance(&a, &b, DistanceMetric::NormalizedL1).unwrap(), 1.0);
    }

    #[test]
    fn normalized_distance_for_16_of_256_bits() {
        let a = PerceptualHash::zero(256, 100.0);
        let mut b = a.clone();
        for i in 0..16 {
            b.set_bit(i * 7);
        }
        assert_eq!(distance(&a, &b, DistanceMetric::NormalizedL1).unwrap(), 0.0625);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let a = PerceptualHash::zero(256, 100.0);
        let b = PerceptualHash::zero(128, 100.0);
        assert!(matches!(
            distance(&a, &b, DistanceMetric::Hamming),
            Err(HashError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(HashFunctionSpec::pdq().validate().is_ok());
        let mut bad = HashFunctionSpec::pdq();
        bad.output_bits = 128;
        assert!(bad.validate().is_err());
        assert!(HashFunctionSpec::surrogate(64, 1).validate().is_ok());
        assert!(HashFunctionSpec::surrogate(512, 1).validate().is_ok());
        assert!(HashFunctionSpec::surrogate(48, 1).validate().is_err());
        assert!(HashFunctionSpec::surrogate(520, 1).validate().is_err());
    }
}
