//! 32-bit binary range coder with carry propagation.
//!
//! The interval split is `bound = (range >> 16) * p1`, where `p1` is the
//! probability of a one bit in 16-bit fixed point. The encoder drops the
//! always-zero leading byte and flushes the shortest tail that pins the final
//! interval; the decoder pads with up to four implicit zero bytes.

use super::AdaptiveBinModel;
use crate::{Error, Result};

const TOP: u32 = 1 << 24;
/// Implicit trailing zero bytes the decoder may consume.
const MAX_PAD: usize = 4;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    started: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, pending: 1, started: false, out: Vec::new() }
    }

    /// Codes `bit` with the model's current probability, then adapts it.
    #[inline]
    pub fn encode_bit(&mut self, model: &mut AdaptiveBinModel, bit: bool) {
        self.encode_bit_static(model.p1(), bit);
        model.update(bit);
    }

    /// Codes `bit` where `p1` (1..=65535) is the probability of a one.
    #[inline]
    pub fn encode_bit_static(&mut self, p1: u16, bit: bool) {
        assert!(p1 != 0, "probability must be in 1..=65535");
        let bound = (self.range >> 16) * p1 as u32;
        if bit {
            self.range = bound;
        } else {
            self.low += bound as u64;
            self.range -= bound;
        }
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn emit(&mut self, byte: u8) {
        // The first byte the cache produces is the always-zero carry slot.
        if self.started {
            self.out.push(byte);
        } else {
            debug_assert_eq!(byte, 0);
            self.started = true;
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xff00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.emit(byte.wrapping_add(carry));
                byte = 0xff;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xff) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00ff_ffff) << 8;
    }

    /// Bytes produced so far (excluding bytes still held for carry).
    pub fn bytes_so_far(&self) -> usize {
        self.out.len()
    }

    /// Flushes the coder and returns the payload.
    pub fn finish(mut self) -> Vec<u8> {
        let last = self.low + self.range as u64 - 1;
        // Fewest leading bytes of the 32-bit window that still land inside
        // [low, low + range).
        let mut kept = 4;
        let mut value = self.low;
        for k in 0..4u32 {
            let unit = 1u64 << (32 - 8 * k);
            let v = self.low.div_ceil(unit) * unit;
            if v <= last {
                kept = k;
                value = v;
                break;
            }
        }
        self.low = value;
        for _ in 0..=kept {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    padded: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self { data, pos: 0, padded: 0, code: 0, range: u32::MAX };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        if let Some(&b) = self.data.get(self.pos) {
            self.pos += 1;
            Ok(b)
        } else {
            self.padded += 1;
            if self.padded > MAX_PAD {
                return Err(Error::Truncated);
            }
            Ok(0)
        }
    }

    #[inline]
    pub fn decode_bit(&mut self, model: &mut AdaptiveBinModel) -> Result<bool> {
        let bit = self.decode_bit_static(model.p1())?;
        model.update(bit);
        Ok(bit)
    }

    #[inline]
    pub fn decode_bit_static(&mut self, p1: u16) -> Result<bool> {
        assert!(p1 != 0, "probability must be in 1..=65535");
        let bound = (self.range >> 16) * p1 as u32;
        let bit = if self.code < bound {
            self.range = bound;
            true
        } else {
            self.code -= bound;
            self.range -= bound;
            false
        };
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(bit)
    }

    /// Bytes of the payload consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::super::{estimate_bits, DEFAULT_UPDATE_SHIFT};
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn roundtrip_static(stream: &[(u16, bool)]) -> Vec<u8> {
        let mut enc = RangeEncoder::new();
        for &(p, b) in stream {
            enc.encode_bit_static(p, b);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for (i, &(p, b)) in stream.iter().enumerate() {
            assert_eq!(dec.decode_bit_static(p).unwrap(), b, "bit {i}");
        }
        bytes
    }

    fn ideal_bits(stream: &[(u16, bool)]) -> f64 {
        stream.iter().map(|&(p, b)| estimate_bits(p as f64 / 65536.0, b)).sum()
    }

    #[test]
    fn four_bits_at_half() {
        let s: Vec<(u16, bool)> = [true, false, true, true].iter().map(|&b| (32768, b)).collect();
        let bytes = roundtrip_static(&s);
        // 4 bits of information plus at most 4 flush bytes.
        assert!(bytes.len() * 8 <= 4 + 32, "{} bytes", bytes.len());
        assert!(!bytes.is_empty());
    }

    #[test]
    fn adaptive_zeros_compress() {
        let mut enc = RangeEncoder::new();
        let mut m = AdaptiveBinModel::new(32768, DEFAULT_UPDATE_SHIFT);
        for _ in 0..1000 {
            enc.encode_bit(&mut m, false);
        }
        let bytes = enc.finish();
        assert!(bytes.len() * 8 < 100, "{} bytes", bytes.len());
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        let mut m = AdaptiveBinModel::new(32768, DEFAULT_UPDATE_SHIFT);
        for _ in 0..1000 {
            assert!(!dec.decode_bit(&mut m).unwrap());
        }
    }

    #[test]
    fn near_certain_ones() {
        let s = vec![(65535u16, true); 10_000];
        let bytes = roundtrip_static(&s);
        assert!(bytes.len() <= 40, "{} bytes", bytes.len());
    }

    #[test]
    fn sixty_four_fair_bits() {
        let s = vec![(32768u16, true); 64];
        let bytes = roundtrip_static(&s);
        let bits = bytes.len() * 8;
        assert!((64..=64 + 32).contains(&bits), "{bits} bits");
    }

    #[test]
    fn mixed_probabilities_within_entropy_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for len in [10_000usize, 50_000] {
            let s: Vec<(u16, bool)> = (0..len)
                .map(|_| {
                    let p: u16 = rng.random_range(1..=65535);
                    let b = rng.random_range(0..65536u32) < p as u32;
                    (p, b)
                })
                .collect();
            let bytes = roundtrip_static(&s);
            let ideal = ideal_bits(&s);
            assert!(
                (bytes.len() * 8) as f64 <= 1.02 * ideal + 32.0,
                "{} bits vs ideal {ideal}",
                bytes.len() * 8
            );
        }
    }

    #[test]
    fn carry_heavy_stream() {
        // Long runs of likely zeros at high p1 push `low` toward carries.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<(u16, bool)> = (0..100_000)
            .map(|i| {
                let p = if i % 7 == 0 { 1 } else { 65000 };
                (p, rng.random_range(0..100) < 3)
            })
            .collect();
        roundtrip_static(&s);
    }

    #[test]
    fn truncated_payload_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<(u16, bool)> = (0..5000).map(|_| (32768, rng.random())).collect();
        let mut enc = RangeEncoder::new();
        for &(p, b) in &s {
            enc.encode_bit_static(p, b);
        }
        let bytes = enc.finish();
        let cut = &bytes[..bytes.len() / 2];
        let mut dec = RangeDecoder::new(cut).unwrap();
        let err = (0..s.len()).try_for_each(|_| dec.decode_bit_static(32768).map(|_| ()));
        assert!(matches!(err, Err(Error::Truncated)));
    }

    proptest! {
        #[test]
        fn fuzz_round_trip(bits in prop::collection::vec((1u16..=65535, any::<bool>()), 0..4000)) {
            roundtrip_static(&bits);
        }

        #[test]
        fn fuzz_adaptive_round_trip(bits in prop::collection::vec(any::<bool>(), 0..4000), shift in 1u8..=12) {
            let mut enc = RangeEncoder::new();
            let mut m = AdaptiveBinModel::new(32768, shift);
            for &b in &bits { enc.encode_bit(&mut m, b); }
            let bytes = enc.finish();
            let mut dec = RangeDecoder::new(&bytes).unwrap();
            let mut m = AdaptiveBinModel::new(32768, shift);
            for &b in &bits { prop_assert_eq!(dec.decode_bit(&mut m).unwrap(), b); }
        }
    }
}
