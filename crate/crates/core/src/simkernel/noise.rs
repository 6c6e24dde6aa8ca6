//! Bit-level error injection.
//!
//! Every received bit is flipped independently with probability `p_bit`.
//! Each stream draws from its own ChaCha stream, so the outcome for a given
//! `(seed, stream_id, position)` never depends on other streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub p_bit: f64,
    pub rng_seed: u64,
}

impl ErrorModel {
    pub fn new(p_bit: f64, rng_seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&p_bit), "p_bit must lie in [0, 1]");
        Self { p_bit, rng_seed }
    }

    pub fn noiseless() -> Self {
        Self::new(0.0, 0)
    }

    pub fn stream(&self, stream_id: u64) -> NoiseStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(stream_id);
        NoiseStream {
            rng,
            p_bit: self.p_bit,
            position: 0,
        }
    }
}

/// Sequential flip decisions for one receiver.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    p_bit: f64,
    position: u64,
}

impl NoiseStream {
    /// Whether the next received bit is corrupted.
    pub fn next_flip(&mut self) -> bool {
        self.position += 1;
        if self.p_bit == 0.0 {
            return false;
        }
        self.rng.gen::<f64>() < self.p_bit
    }

    pub fn receive(&mut self, bit: bool) -> bool {
        bit ^ self.next_flip()
    }

    pub fn position(&self) -> u64 {
        self.position
    }
}

pub fn corrupt_bits(bits: &[bool], model: &ErrorModel, stream_id: u64) -> Vec<bool> {
    let mut s = model.stream(stream_id);
    bits.iter().map(|&b| s.receive(b)).collect()
}

/// Parses a string of `0`/`1` characters.
pub fn parse_bits(s: &str) -> Option<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect()
}

pub fn bits_to_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}
