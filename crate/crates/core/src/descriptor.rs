//! 256-bit binary descriptors and the pixel features that carry them.

use std::fmt;

use rand::Rng;

/// Width of every descriptor in bits.
pub const DESCRIPTOR_BITS: u32 = 256;

/// A 256-bit binary descriptor, stored as four little-endian words.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Descriptor(pub [u64; 4]);

impl Descriptor {
    pub const ZERO: Descriptor = Descriptor([0; 4]);
    pub const ONES: Descriptor = Descriptor([u64::MAX; 4]);

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Descriptor([rng.random(), rng.random(), rng.random(), rng.random()])
    }

    #[inline]
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, value: bool) {
        let mask = 1u64 << (i % 64);
        if value {
            self.0[i / 64] |= mask;
        } else {
            self.0[i / 64] &= !mask;
        }
    }

    /// Copy with every bit flipped independently with probability `rate`.
    pub fn with_bit_flips<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R) -> Self {
        if rate <= 0.0 {
            return *self;
        }
        let mut out = *self;
        for i in 0..DESCRIPTOR_BITS as usize {
            if rng.random::<f64>() < rate {
                out.0[i / 64] ^= 1u64 << (i % 64);
            }
        }
        out
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        for (chunk, word) in out.chunks_exact_mut(8).zip(self.0.iter()) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8; 32]) -> Self {
        let mut words = [0u64; 4];
        for (word, chunk) in words.iter_mut().zip(bytes.chunks_exact(8)) {
            *word = u64::from_le_bytes(chunk.try_into().unwrap());
        }
        Descriptor(words)
    }
}

impl fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Descriptor({:016x}{:016x}{:016x}{:016x})",
            self.0[3], self.0[2], self.0[1], self.0[0]
        )
    }
}

/// A detected image feature: pixel position plus descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub u: f64,
    pub v: f64,
    pub descriptor: Descriptor,
}

impl Feature {
    pub fn new(u: f64, v: f64, descriptor: Descriptor) -> Self {
        Self { u, v, descriptor }
    }

    pub fn pixel_distance_sq(&self, u: f64, v: f64) -> f64 {
        let (du, dv) = (self.u - u, self.v - v);
        du * du + dv * dv
    }

    /// Pixel coordinates rounded to single precision, as stored in map files.
    pub fn quantized(&self) -> Self {
        Self {
            u: self.u as f32 as f64,
            v: self.v as f32 as f64,
            descriptor: self.descriptor,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hamming_extremes() {
        assert_eq!(Descriptor::ZERO.hamming(&Descriptor::ONES), 256);
        assert_eq!(Descriptor::ONES.hamming(&Descriptor::ONES), 0);
    }

    #[test]
    fn bit_access() {
        let mut d = Descriptor::ZERO;
        d.set_bit(130, true);
        assert!(d.bit(130));
        assert_eq!(d.hamming(&Descriptor::ZERO), 1);
        d.set_bit(130, false);
        assert_eq!(d, Descriptor::ZERO);
    }

    #[test]
    fn bit_flip_rate_is_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Descriptor::random(&mut rng);
        let total: u32 = (0..400)
            .map(|_| d.with_bit_flips(0.05, &mut rng).hamming(&d))
            .sum();
        let mean = total as f64 / 400.0;
        assert!((mean - 12.8).abs() < 1.0, "mean flips {mean}");
        assert_eq!(d.with_bit_flips(0.0, &mut rng), d);
    }

    #[test]
    fn bytes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = Descriptor::random(&mut rng);
        assert_eq!(Descriptor::from_bytes(&d.to_bytes()), d);
    }
}
