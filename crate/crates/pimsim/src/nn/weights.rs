//! Reproducible weight and input generation.
//!
//! All pseudo-random data in the toolchain comes from a SplitMix64 stream so
//! that fixtures are bit-identical across platforms and languages. Element
//! (r, c) of a generated matrix takes the top 8 bits of the (r*cols + c)-th
//! stream output, interpreted as a signed byte; the stream index is absolute,
//! so a prefix of a wider matrix equals the same prefix of a narrower one.

/// SplitMix64 with the standard constants.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Top 8 bits of the next output, as a signed byte.
    pub fn next_i8(&mut self) -> i8 {
        (self.next_u64() >> 56) as i8
    }
}

/// Deterministic `rows x cols` int8 matrix in row-major order.
pub fn generate_weights(seed: u64, rows: usize, cols: usize) -> Vec<i8> {
    assert!(rows >= 1 && cols >= 1);
    let mut rng = SplitMix64::new(seed);
    (0..rows * cols).map(|_| rng.next_i8()).collect()
}

/// Deterministic int8 vector, used for fixture inputs.
pub fn generate_input(seed: u64, len: usize) -> Vec<i8> {
    let mut rng = SplitMix64::new(seed);
    (0..len).map(|_| rng.next_i8()).collect()
}
