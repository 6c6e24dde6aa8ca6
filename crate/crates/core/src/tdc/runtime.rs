use super::codec::pattern_bits;

/// Predicted ticks for serial identification: `d * t`.
pub fn serial_runtime(d: u64, t: u64) -> u64 {
    d * t
}

/// Predicted ticks for parallel identification: `r * t * (2L + 2)`.
pub fn parallel_runtime(d: u64, r: u64, t: u64) -> u64 {
    r * t * (2 * pattern_bits(d) as u64 + 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formulas() {
        assert_eq!(serial_runtime(4, 1), 4);
        assert_eq!(serial_runtime(256, 1), 256);
        assert_eq!(parallel_runtime(254, 1, 1), 18);
        assert_eq!(parallel_runtime(1, 1, 1), 4);
        assert_eq!(parallel_runtime(100, 1, 1), 16);
    }
}
