//! Deterministic input generators shared by unit, integration, and
//! acceptance tests. Only inputs live here; expected values always come from
//! independent oracles in the test code itself.

use crate::backbone::{Frame, FrameBatch, FrameMode};
use crate::mat::Mat;

/// SplitMix64, re-exposed for seeded test data.
pub struct TestRng(crate::backbone::fixture::SplitMix64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(crate::backbone::fixture::SplitMix64::new(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.0.uniform_f64(lo, hi)
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.uniform(lo, hi)).collect()
    }

    pub fn mat(&mut self, rows: usize, cols: usize, lo: f64, hi: f64) -> Mat {
        Mat::from_vec(rows, cols, self.vec(rows * cols, lo, hi))
    }
}

/// A deterministic synthetic frame; `salt` varies the pattern.
pub fn synth_frame(width: usize, height: usize, salt: u8) -> Frame {
    let mut rgb = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            rgb.push(((x * 37 + y * 11) as u8).wrapping_add(salt));
            rgb.push(((x * 7 + y * 53) as u8).wrapping_add(salt.wrapping_mul(3)));
            rgb.push(((x * 97 + y * 29) as u8).wrapping_add(salt.wrapping_mul(7)));
        }
    }
    Frame::new(width, height, rgb).unwrap()
}

/// A batch of `t` distinct synthetic frames.
pub fn synth_batch(width: usize, height: usize, t: usize, mode: FrameMode) -> FrameBatch {
    let frames = (0..t).map(|i| synth_frame(width, height, i as u8)).collect();
    FrameBatch::new(frames, t / 2, mode).unwrap()
}
