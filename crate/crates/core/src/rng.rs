//! Splittable counter-based random streams.
//!
//! Every random quantity in the generator is drawn from a stream keyed by
//! `(master seed, domain, identifiers...)`, so parallel generation is
//! order-independent and any row can be regenerated in isolation. Key mixing
//! and sequence generation use the SplitMix64 finalizer (Vigna); this is a
//! statistical, non-cryptographic generator.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A hierarchical stream key. Absorbing the same components in the same
/// order always yields the same stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(master_seed: u64) -> Self {
        StreamKey(mix64(master_seed ^ GOLDEN))
    }

    /// Derives a child key from one component.
    #[must_use]
    pub fn with(self, component: u64) -> Self {
        StreamKey(mix64((self.0 ^ component).wrapping_add(GOLDEN)))
    }

    pub fn rng(self) -> StreamRng {
        StreamRng { state: self.0 }
    }
}

/// SplitMix64 sequence over a derived key.
#[derive(Debug, Clone)]
pub struct StreamRng {
    state: u64,
}

impl StreamRng {
    #[inline]
    fn step(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        const DENOM: f64 = (1u64 << 53) as f64;
        ((self.step() >> 11) as f64) / DENOM
    }

    /// Uniform draw in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    #[inline]
    pub fn coin_flip(&mut self) -> bool {
        self.step() & 1 == 1
    }
}

impl RngCore for StreamRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.step() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.step()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.step().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
