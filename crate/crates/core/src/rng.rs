//! Counter-based Gaussian increment streams.
//!
//! Every increment is a pure function of `(seed, path_id, step_index)`: the
//! ChaCha8 stream id carries the path, and each step owns a fixed window of
//! keystream words, so normals are produced by Box–Muller (a fixed number of
//! uniforms per normal) rather than a rejection sampler.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TWO_PI: f64 = std::f64::consts::TAU;

/// Open-interval uniform in (0, 1) from the top 53 bits.
#[inline]
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Source of Wiener increments for the SODE stepper.
pub trait IncrementSource {
    /// Fills `out` with the increment `W(t_{step+1}) - W(t_step)` for a step of size `tau`.
    fn increment(&mut self, step: u64, tau: f64, out: &mut [f64]);

    fn seed(&self) -> Option<u64> {
        None
    }
}

/// Deterministic N(0, 1) stream keyed by `(seed, path_id)`, addressed by step.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
    seed: u64,
    path_id: u64,
    dim: usize,
    next_step: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, path_id: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_id);
        Self {
            rng,
            seed,
            path_id,
            dim,
            next_step: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    /// 32-bit keystream words consumed per step: two u64 draws per normal pair.
    fn words_per_step(&self) -> u128 {
        (self.dim.div_ceil(2) as u128) * 4
    }

    /// Writes `dim` standard normals belonging to `step` into `out`.
    pub fn standard_normals(&mut self, step: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        if step != self.next_step {
            self.rng.set_word_pos(step as u128 * self.words_per_step());
        }
        let mut i = 0;
        while i < self.dim {
            let u1 = open_unit(self.rng.next_u64());
            let u2 = open_unit(self.rng.next_u64());
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (TWO_PI * u2).sin_cos();
            out[i] = r * c;
            if i + 1 < self.dim {
                out[i + 1] = r * s;
            }
            i += 2;
        }
        self.next_step = step + 1;
    }
}

impl IncrementSource for NoiseStream {
    fn increment(&mut self, step: u64, tau: f64, out: &mut [f64]) {
        self.standard_normals(step, out);
        let scale = tau.sqrt();
        out.iter_mut().for_each(|v| *v *= scale);
    }

    fn seed(&self) -> Option<u64> {
        Some(self.seed)
    }
}

/// All increments zero; turns a stepper into its deterministic skeleton.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

impl IncrementSource for ZeroNoise {
    fn increment(&mut self, _step: u64, _tau: f64, out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Uniform (0, 1) draws for samplers that are not step-addressed.
pub fn uniform_stream(seed: u64, stream: u64) -> impl FnMut() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    move || open_unit(rng.next_u64())
}
