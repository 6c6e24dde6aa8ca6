//! Framed identifier patterns.
//!
//! A frame is `0`, then `L` ones, then `0`, then the `L`-bit big-endian
//! value. The all-ones value is reserved so a payload can never extend a
//! header run.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("value {0} is reserved for framing")]
    ValueReserved(u64),
    #[error("value {value} does not fit in {bits} bits")]
    ValueTooLarge { value: u64, bits: u32 },
    #[error("pattern length {0} outside 1..=31")]
    BadLength(u32),
}

/// Bits needed to give `count` items distinct non-reserved values,
/// `ceil(log2(count + 1))`, at least 1.
pub fn pattern_bits(count: u64) -> u32 {
    let mut l = 1;
    while (1u64 << l) - 1 < count {
        l += 1;
    }
    l
}

pub fn frame_len(l: u32) -> usize {
    2 * l as usize + 2
}

pub fn encode_identifier(value: u64, l: u32) -> Result<Vec<bool>, CodecError> {
    if !(1..=31).contains(&l) {
        return Err(CodecError::BadLength(l));
    }
    let ones = (1u64 << l) - 1;
    if value == ones {
        return Err(CodecError::ValueReserved(value));
    }
    if value > ones {
        return Err(CodecError::ValueTooLarge { value, bits: l });
    }
    let mut out = Vec::with_capacity(frame_len(l));
    out.push(false);
    out.extend(std::iter::repeat_n(true, l as usize));
    out.push(false);
    out.extend((0..l).rev().map(|i| value >> i & 1 == 1));
    Ok(out)
}

/// Finds every frame in `bits`. After a match the scan resumes right after
/// the frame; otherwise it advances one bit.
pub fn decode_stream(bits: &[bool], l: u32) -> Vec<(usize, u64)> {
    let n = frame_len(l);
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= bits.len() {
        match decode_frame(&bits[i..i + n], l) {
            Some(v) => {
                out.push((i, v));
                i += n;
            }
            None => i += 1,
        }
    }
    out
}

/// Decodes exactly one frame.
pub fn decode_frame(frame: &[bool], l: u32) -> Option<u64> {
    let l = l as usize;
    if frame.len() != 2 * l + 2 || frame[0] || frame[l + 1] {
        return None;
    }
    if !frame[1..=l].iter().all(|&b| b) {
        return None;
    }
    let v = frame[l + 2..].iter().fold(0u64, |a, &b| a << 1 | b as u64);
    if v == (1u64 << l) - 1 {
        None
    } else {
        Some(v)
    }
}

/// Bit-at-a-time version of [`decode_stream`].
#[derive(Debug, Clone)]
pub struct StreamDecoder {
    l: u32,
    window: u64,
    filled: usize,
    header: u64,
    header_mask: u64,
}

impl StreamDecoder {
    pub fn new(l: u32) -> Self {
        assert!((1..=31).contains(&l));
        let n = frame_len(l);
        let header_mask = ((1u64 << (l + 2)) - 1) << l;
        let header = ((1u64 << l) - 1) << (l + 1);
        debug_assert!(header_mask < 1 << n);
        Self {
            l,
            window: 0,
            filled: 0,
            header,
            header_mask,
        }
    }

    pub fn push(&mut self, bit: bool) -> Option<u64> {
        let n = frame_len(self.l);
        let mask = (1u64 << n) - 1;
        self.window = (self.window << 1 | bit as u64) & mask;
        self.filled += 1;
        if self.filled < n || self.window & self.header_mask != self.header {
            return None;
        }
        let ones = (1u64 << self.l) - 1;
        let v = self.window & ones;
        if v == ones {
            return None;
        }
        self.filled = 0;
        Some(v)
    }
}
