//! Unified functional hashing.
//!
//! A candidate is fingerprinted by running a short, canonical, seeded version
//! of its own training and validation loop and folding every hashable output
//! (a float produced by the forward pass) into a 64-bit FNV-1a accumulator.
//! Each float contributes its sign, raw exponent and a truncated mantissa, so
//! `m_bits` controls how much roundoff the hash tolerates.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;

pub const FNV_OFFSET_BASIS: u64 = 14_695_981_039_346_656_037;
pub const FNV_PRIME: u64 = 1_099_511_628_211;

/// Mantissa width of binary64.
pub const MANTISSA_BITS: u32 = 52;

const EXPONENT_MASK: u64 = 0x7FF;
const MANTISSA_MASK: u64 = (1 << MANTISSA_BITS) - 1;

/// 64-bit fingerprint of a candidate's input-output behaviour.
///
/// Serializes as a 16-character lowercase hex string.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunctionalHash(pub u64);

impl FunctionalHash {
    /// Fresh accumulator at the FNV offset basis.
    pub const BASIS: FunctionalHash = FunctionalHash(FNV_OFFSET_BASIS);

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn to_hex(self) -> String {
        format!("{:016x}", self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 16 {
            return None;
        }
        u64::from_str_radix(s, 16).ok().map(FunctionalHash)
    }
}

impl Default for FunctionalHash {
    fn default() -> Self {
        Self::BASIS
    }
}

impl fmt::Display for FunctionalHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for FunctionalHash {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for FunctionalHash {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        FunctionalHash::from_hex(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid functional hash {s:?}")))
    }
}

/// Parameters of the hash construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HashConfig {
    /// Mantissa bits kept per hashable output, at most 52.
    pub m_bits: u32,
    /// Canonical examples per phase.
    pub n_examples: usize,
    /// Number of seeds the harvest is repeated with.
    pub n_seeds: usize,
    /// Base seed of the private hashing generator.
    pub fixed_seed: u64,
}

impl Default for HashConfig {
    fn default() -> Self {
        Self {
            m_bits: 24,
            n_examples: 10,
            n_seeds: 3,
            fixed_seed: 0x5EED_0F_0FA5_4A54,
        }
    }
}

impl HashConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.m_bits > MANTISSA_BITS {
            return Err(format!("hash.m_bits = {} exceeds {}", self.m_bits, MANTISSA_BITS));
        }
        if self.n_examples == 0 {
            return Err("hash.n_examples must be >= 1".into());
        }
        if self.n_seeds == 0 {
            return Err("hash.n_seeds must be >= 1".into());
        }
        Ok(())
    }
}

/// Sign, raw exponent and truncated mantissa of a binary64 value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FloatFingerprint {
    pub sign: u64,
    pub exponent: u64,
    pub mantissa: u64,
}

/// Splits `x` into a [`FloatFingerprint`] keeping the `m_bits` most significant
/// mantissa bits. Every NaN maps to `(0, 0x7FF, 0)`.
///
/// # Panics
///
/// Panics if `m_bits > 52`.
pub fn decompose_float(x: f64, m_bits: u32) -> FloatFingerprint {
    assert!(m_bits <= MANTISSA_BITS, "m_bits = {m_bits} exceeds {MANTISSA_BITS}");
    if x.is_nan() {
        return FloatFingerprint { sign: 0, exponent: EXPONENT_MASK, mantissa: 0 };
    }
    let bits = x.to_bits();
    let mantissa = bits & MANTISSA_MASK;
    FloatFingerprint {
        sign: bits >> 63,
        exponent: (bits >> MANTISSA_BITS) & EXPONENT_MASK,
        // Shifting a u64 by 52 is fine; m_bits = 0 discards everything.
        mantissa: mantissa >> (MANTISSA_BITS - m_bits),
    }
}

/// Folds the 8 little-endian bytes of `value` into `hash` with FNV-1a.
#[inline]
pub fn hash_mix(hash: FunctionalHash, value: u64) -> FunctionalHash {
    let mut h = hash.0;
    for byte in value.to_le_bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(FNV_PRIME);
    }
    FunctionalHash(h)
}

/// Mixes one hashable output into `hash`: sign, exponent, then mantissa.
#[inline]
pub fn add_to_hash(hash: FunctionalHash, hashable_output: f64, m_bits: u32) -> FunctionalHash {
    let fp = decompose_float(hashable_output, m_bits);
    [fp.sign, fp.exponent, fp.mantissa].into_iter().fold(hash, hash_mix)
}

/// Which canonical subset an example is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Train,
    Validation,
}

/// The hooks [`unified_functional_hash`] needs from a candidate: the same
/// initialize/forward/backward structure as a normal evaluation, with the
/// forward pass also reporting its hashable outputs.
pub trait HashProbe {
    type Example;
    type State;

    /// Canonical examples for `phase`. Must return the same sequence on every
    /// call with the same arguments.
    fn canonical_examples(&self, phase: Phase, n: usize, fixed_seed: u64) -> Vec<Self::Example>;

    fn initialize(&self, rng: &mut SplitMix64) -> Self::State;

    /// Runs the forward pass and appends the hashable outputs to `outputs`.
    fn forward(
        &self,
        state: &mut Self::State,
        example: &Self::Example,
        rng: &mut SplitMix64,
        outputs: &mut Vec<f64>,
    );

    fn backward(&self, state: &mut Self::State, example: &Self::Example, rng: &mut SplitMix64);
}

/// Work performed by one hash computation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HashStats {
    pub initialize_passes: u64,
    pub forward_passes: u64,
    pub backward_passes: u64,
    pub outputs_folded: u64,
}

/// Computes the functional hash of whatever `probe` wraps.
pub fn unified_functional_hash<P: HashProbe>(probe: &P, config: &HashConfig) -> FunctionalHash {
    unified_functional_hash_with_stats(probe, config).0
}

/// As [`unified_functional_hash`], also reporting how much work was done.
pub fn unified_functional_hash_with_stats<P: HashProbe>(
    probe: &P,
    config: &HashConfig,
) -> (FunctionalHash, HashStats) {
    let train = probe.canonical_examples(Phase::Train, config.n_examples, config.fixed_seed);
    let validation =
        probe.canonical_examples(Phase::Validation, config.n_examples, config.fixed_seed);
    let mut stats = HashStats::default();
    let mut hash = FunctionalHash::BASIS;
    let mut outputs = Vec::new();

    for seed_offset in 0..config.n_seeds as u64 {
        let mut rng = SplitMix64::new(config.fixed_seed.wrapping_add(seed_offset));
        let mut state = probe.initialize(&mut rng);
        stats.initialize_passes += 1;

        for example in &train {
            outputs.clear();
            // Outputs are harvested from the forward pass that precedes the update.
            probe.forward(&mut state, example, &mut rng, &mut outputs);
            probe.backward(&mut state, example, &mut rng);
            stats.forward_passes += 1;
            stats.backward_passes += 1;
            for &out in &outputs {
                hash = add_to_hash(hash, out, config.m_bits);
            }
            stats.outputs_folded += outputs.len() as u64;
        }
        for example in &validation {
            outputs.clear();
            probe.forward(&mut state, example, &mut rng, &mut outputs);
            stats.forward_passes += 1;
            for &out in &outputs {
                hash = add_to_hash(hash, out, config.m_bits);
            }
            stats.outputs_folded += outputs.len() as u64;
        }
    }
    (hash, stats)
}
