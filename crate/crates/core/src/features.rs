//! Binary local features: 256-bit descriptors, interest points and per-frame feature sets.

use std::fmt;

/// Number of bits in a descriptor.
pub const DESCRIPTOR_BITS: usize = 256;
/// Number of bytes in a serialized descriptor.
pub const DESCRIPTOR_BYTES: usize = DESCRIPTOR_BITS / 8;

/// A 256-bit binary descriptor.
///
/// Bit `i` lives in byte `i / 8` at position `i % 8` of the serialized form.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Descriptor([u64; 4]);

impl Descriptor {
    pub const ZERO: Descriptor = Descriptor([0; 4]);
    pub const ONES: Descriptor = Descriptor([u64::MAX; 4]);

    pub fn from_words(words: [u64; 4]) -> Self {
        Descriptor(words)
    }

    pub fn words(&self) -> &[u64; 4] {
        &self.0
    }

    pub fn from_bytes(bytes: &[u8; DESCRIPTOR_BYTES]) -> Self {
        let mut words = [0u64; 4];
        for (k, word) in words.iter_mut().enumerate() {
            let mut chunk = [0u8; 8];
            chunk.copy_from_slice(&bytes[8 * k..8 * k + 8]);
            *word = u64::from_le_bytes(chunk);
        }
        Descriptor(words)
    }

    pub fn to_bytes(&self) -> [u8; DESCRIPTOR_BYTES] {
        let mut out = [0u8; DESCRIPTOR_BYTES];
        for (k, word) in self.0.iter().enumerate() {
            out[8 * k..8 * k + 8].copy_from_slice(&word.to_le_bytes());
        }
        out
    }

    /// Descriptor with exactly the given bits set.
    pub fn from_set_bits(bits: &[usize]) -> Self {
        let mut d = Descriptor::ZERO;
        for &b in bits {
            d.set_bit(b, true);
        }
        d
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < DESCRIPTOR_BITS, "bit index {i} out of range");
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set_bit(&mut self, i: usize, value: bool) {
        assert!(i < DESCRIPTOR_BITS, "bit index {i} out of range");
        let mask = 1u64 << (i % 64);
        if value {
            self.0[i / 64] |= mask;
        } else {
            self.0[i / 64] &= !mask;
        }
    }

    pub fn flip_bit(&mut self, i: usize) {
        assert!(i < DESCRIPTOR_BITS, "bit index {i} out of range");
        self.0[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn count_ones(&self) -> u32 {
        self.0.iter().map(|w| w.count_ones()).sum()
    }
}

impl fmt::Debug for Descriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Descriptor(")?;
        for b in self.to_bytes() {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

/// Hamming distance: popcount of the bitwise XOR. Always in `[0, 256]`.
#[inline]
pub fn hamming_distance(a: &Descriptor, b: &Descriptor) -> u32 {
    a.0.iter()
        .zip(b.0.iter())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// Pixel location of an interest point (column, row).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InterestPoint {
    pub x: f32,
    pub y: f32,
}

impl InterestPoint {
    pub fn new(x: f32, y: f32) -> Self {
        InterestPoint { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// One local feature: where it is and what it looks like.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFeature {
    pub point: InterestPoint,
    pub descriptor: Descriptor,
}

/// The local features extracted from (or rendered for) a single frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameFeatures {
    pub frame_index: u32,
    pub features: Vec<LocalFeature>,
}

impl FrameFeatures {
    pub fn new(frame_index: u32, features: Vec<LocalFeature>) -> Self {
        FrameFeatures {
            frame_index,
            features,
        }
    }

    pub fn empty(frame_index: u32) -> Self {
        FrameFeatures::new(frame_index, Vec::new())
    }

    /// Builds a frame from parallel point and descriptor lists.
    ///
    /// Panics if the lists differ in length.
    pub fn from_parts(
        frame_index: u32,
        points: Vec<InterestPoint>,
        descriptors: Vec<Descriptor>,
    ) -> Self {
        assert_eq!(
            points.len(),
            descriptors.len(),
            "points and descriptors must have equal length"
        );
        let features = points
            .into_iter()
            .zip(descriptors)
            .map(|(point, descriptor)| LocalFeature { point, descriptor })
            .collect();
        FrameFeatures::new(frame_index, features)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn descriptors(&self) -> impl ExactSizeIterator<Item = &Descriptor> + '_ {
        self.features.iter().map(|f| &f.descriptor)
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &InterestPoint> + '_ {
        self.features.iter().map(|f| &f.point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_descriptor() -> impl Strategy<Value = Descriptor> {
        any::<[u64; 4]>().prop_map(Descriptor::from_words)
    }

    #[test]
    fn zero_vs_zero() {
        assert_eq!(hamming_distance(&Descriptor::ZERO, &Descriptor::ZERO), 0);
    }

    #[test]
    fn zero_vs_ones() {
        assert_eq!(hamming_distance(&Descriptor::ZERO, &Descriptor::ONES), 256);
    }

    #[test]
    fn small_hand_example() {
        // {0,1,2} xor {2,3} = {0,1,3}
        let a = Descriptor::from_set_bits(&[0, 1, 2]);
        let b = Descriptor::from_set_bits(&[2, 3]);
        assert_eq!(hamming_distance(&a, &b), 3);
    }

    #[test]
    fn bytes_layout() {
        let d = Descriptor::from_set_bits(&[0, 9, 255]);
        let bytes = d.to_bytes();
        assert_eq!(bytes[0], 0x01);
        assert_eq!(bytes[1], 0x02);
        assert_eq!(bytes[31], 0x80);
        assert_eq!(Descriptor::from_bytes(&bytes), d);
    }

    proptest! {
        #[test]
        fn hamming_symmetric(a in arb_descriptor(), b in arb_descriptor()) {
            prop_assert_eq!(hamming_distance(&a, &b), hamming_distance(&b, &a));
        }

        #[test]
        fn hamming_zero_iff_equal(a in arb_descriptor(), b in arb_descriptor()) {
            prop_assert_eq!(hamming_distance(&a, &a), 0);
            prop_assert_eq!(hamming_distance(&a, &b) == 0, a == b);
        }

        #[test]
        fn hamming_single_flip(a in arb_descriptor(), bit in 0usize..256) {
            let mut b = a;
            b.flip_bit(bit);
            prop_assert_eq!(hamming_distance(&a, &b), 1);
        }
    }
}
