//! Binary arithmetic coding shared by the octree codecs.
//!
//! Probabilities crossing the coder boundary are always 16-bit fixed point,
//! so a stream decodes identically on every platform.

mod container;
mod range;

pub use container::{Bitstream, CodecId, Header, SurrogateExt, MAGIC};
pub use range::{RangeDecoder, RangeEncoder};

/// Adaptation rate used by every context model unless configured otherwise.
pub const DEFAULT_UPDATE_SHIFT: u8 = 5;

/// Probability of a one bit in 16-bit fixed point, adapted after each coded
/// bit by `p1 += (target - p1) >> update_shift`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptiveBinModel {
    p1: u16,
    update_shift: u8,
}

impl Default for AdaptiveBinModel {
    fn default() -> Self {
        Self::uniform()
    }
}

impl AdaptiveBinModel {
    /// `p1` is clamped to 1..=65535 and `update_shift` to 1..=15.
    pub fn new(p1: u16, update_shift: u8) -> Self {
        Self { p1: p1.max(1), update_shift: update_shift.clamp(1, 15) }
    }

    pub fn uniform() -> Self {
        Self::new(1 << 15, DEFAULT_UPDATE_SHIFT)
    }

    #[inline]
    pub fn p1(&self) -> u16 {
        self.p1
    }

    /// Probability of a one as a real number.
    pub fn probability(&self) -> f64 {
        self.p1 as f64 / 65536.0
    }

    #[inline]
    pub fn update(&mut self, bit: bool) {
        let p = self.p1 as u32;
        let next = if bit {
            p + ((65536 - p) >> self.update_shift)
        } else {
            p - (p >> self.update_shift)
        };
        self.p1 = next.clamp(1, 65535) as u16;
    }
}

/// Ideal code length in bits of `bit` under probability `p` of a one.
pub fn estimate_bits(p: f64, bit: bool) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "probability {p} outside (0,1)");
    if bit {
        -p.log2()
    } else {
        -(1.0 - p).log2()
    }
}

/// Quantizes a probability of a one to the coder's fixed point range.
pub fn quantize_probability(p: f64) -> u16 {
    let q = (p * 65536.0).round();
    if q.is_nan() {
        return 1 << 15;
    }
    q.clamp(1.0, 65535.0) as u16
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn estimate_bits_values() {
        assert_eq!(estimate_bits(0.5, true), 1.0);
        assert_eq!(estimate_bits(0.5, false), 1.0);
        assert!((estimate_bits(0.9, false) - 3.3219).abs() < 1e-4);
    }

    #[test]
    fn quantized_probability_range() {
        assert_eq!(quantize_probability(0.0), 1);
        assert_eq!(quantize_probability(1.0), 65535);
        assert_eq!(quantize_probability(0.5), 32768);
    }

    #[test]
    fn model_adapts_toward_observed_bits() {
        let mut m = AdaptiveBinModel::uniform();
        for _ in 0..50 {
            m.update(true);
        }
        assert!(m.probability() > 0.75);
        for _ in 0..200 {
            m.update(false);
        }
        assert!(m.probability() < 0.01);
    }

    proptest! {
        #[test]
        fn model_stays_in_range(
            p in 0u16..=65535,
            shift in 0u8..=20,
            bits in prop::collection::vec(any::<bool>(), 0..3000),
        ) {
            let mut m = AdaptiveBinModel::new(p, shift);
            prop_assert!(m.p1() >= 1);
            for b in bits {
                m.update(b);
                prop_assert!(m.p1() >= 1);
            }
        }

        #[test]
        fn long_runs_never_saturate(shift in 1u8..=15, bit in any::<bool>()) {
            let mut m = AdaptiveBinModel::new(32768, shift);
            for _ in 0..100_000 {
                m.update(bit);
            }
            prop_assert!((1..=65535).contains(&m.p1()));
        }
    }
}
