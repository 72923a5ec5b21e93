//! Deterministic random number generation.
//!
//! Every stochastic component in this crate draws from [`StreamRng`], a
//! SplitMix64 generator (Steele, Lea & Flood's `splitmix64`, the same mixer
//! used to seed xoshiro). It is counter-based: the state advances by the
//! 64-bit golden-ratio constant and each output is a fixed finalizer of the
//! state, so any implementation language can reproduce the streams exactly.
//!
//! Stream layout:
//!
//! - master seed `s` and stream id `k` give initial state
//!   `mix64(s ^ mix64(k + GOLDEN))`;
//! - each `next_u64` does `state += GOLDEN; return mix64(state)`;
//! - `next_f64` is `(next_u64() >> 11) * 2^-53`, uniform on `[0, 1)`;
//! - `normal()` is Box-Muller on a pair of uniforms (second value cached).
//!
//! Subsystems own fixed stream ids (see [`Stream`]); ids are append-only so
//! adding a subsystem never perturbs existing streams.

/// Golden-ratio increment of SplitMix64.
pub const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fixed stream ids for the master-seed splitter. Append-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    /// Network parameter initialization.
    Init = 1,
    /// Environment resets and initial states.
    EnvReset = 2,
    /// Replay-buffer index sampling.
    Replay = 3,
    /// Online-actor path noise.
    ActorNoise = 4,
    /// Target-actor path noise.
    TargetNoise = 5,
    /// Evaluation episodes.
    Eval = 6,
    /// Exploration actions before learning starts.
    Warmup = 7,
    /// Discrete oracle instance generation.
    OracleInstances = 8,
    /// Monte-Carlo estimators in verification suites.
    Verification = 9,
    /// Endpoint/latent histogram sampling.
    Histogram = 10,
}

/// A single SplitMix64 stream.
#[derive(Debug, Clone)]
pub struct StreamRng {
    state: u64,
    spare_normal: Option<f64>,
}

impl StreamRng {
    /// Stream `stream` of master seed `master`.
    pub fn new(master: u64, stream: u64) -> Self {
        StreamRng {
            state: mix64(master ^ mix64(stream.wrapping_add(GOLDEN))),
            spare_normal: None,
        }
    }

    pub fn substream(master: u64, stream: Stream) -> Self {
        Self::new(master, stream as u64)
    }

    /// Derive an independent child stream, e.g. one per parallel run.
    pub fn child(&self, tag: u64) -> Self {
        StreamRng {
            state: mix64(self.state ^ mix64(tag.wrapping_add(GOLDEN))),
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `0..n` via the 128-bit multiply-shift reduction.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal draw (Box-Muller; consumes two uniforms per pair).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fill `out` with standard normal draws.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }
}
