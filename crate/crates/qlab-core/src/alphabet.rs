//! Quantization grids and the scalar round-to-nearest / stochastic quantizers.

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the quantization grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlphabetKind {
    /// All integer multiples of the step.
    Infinite,
    /// `{ k*step : -2^(b-1) <= k <= 2^(b-1) }`, cardinality `2^b + 1`.
    FiniteSymmetric { bits: u32 },
}

/// A symmetric quantization grid with step `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alphabet {
    kind: AlphabetKind,
    step: f64,
}

/// Outcome of a single scalar quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rounded {
    pub value: f64,
    /// True when the input fell outside a finite grid and was clamped.
    pub saturated: bool,
}

impl Alphabet {
    pub fn infinite(step: f64) -> Result<Self> {
        Self::validate_step(step)?;
        Ok(Self {
            kind: AlphabetKind::Infinite,
            step,
        })
    }

    pub fn finite_symmetric(step: f64, bits: u32) -> Result<Self> {
        Self::validate_step(step)?;
        if bits == 0 || bits > 32 {
            return Err(Error::InvalidAlphabet(format!(
                "bit width must be in 1..=32, got {bits}"
            )));
        }
        Ok(Self {
            kind: AlphabetKind::FiniteSymmetric { bits },
            step,
        })
    }

    fn validate_step(step: f64) -> Result<()> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidAlphabet(format!(
                "step must be a positive real, got {step}"
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> AlphabetKind {
        self.kind
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn bits(&self) -> Option<u32> {
        match self.kind {
            AlphabetKind::Infinite => None,
            AlphabetKind::FiniteSymmetric { bits } => Some(bits),
        }
    }

    /// Largest grid point `2^(b-1) * step`; `None` for the infinite grid.
    pub fn max_level(&self) -> Option<f64> {
        self.bits().map(|b| 2f64.powi(b as i32 - 1) * self.step)
    }

    /// Number of grid points, `2^b + 1`; `None` for the infinite grid.
    pub fn cardinality(&self) -> Option<u128> {
        self.bits().map(|b| (1u128 << b) + 1)
    }

    /// All grid points in ascending order; `None` for the infinite grid.
    pub fn levels(&self) -> Option<Vec<f64>> {
        self.bits().map(|b| {
            let half = 1i64 << (b - 1);
            (-half..=half).map(|k| k as f64 * self.step).collect()
        })
    }

    /// Whether `v` is a grid point, up to a small multiple of machine epsilon.
    pub fn contains(&self, v: f64) -> bool {
        let t = v / self.step;
        let near_integer = (t - t.round()).abs() <= 1e-9 * t.abs().max(1.0);
        match self.max_level() {
            None => near_integer,
            Some(edge) => near_integer && v.abs() <= edge * (1.0 + 1e-12),
        }
    }

    /// Round to nearest, ties toward the larger grid point. Out-of-range
    /// inputs saturate to the extreme point of a finite grid.
    pub fn msq(&self, z: f64) -> f64 {
        self.msq_flagged(z).value
    }

    pub fn msq_flagged(&self, z: f64) -> Rounded {
        let magnitude = (z / self.step + 0.5).floor().abs();
        let sign = if z < 0.0 { -1.0 } else { 1.0 };
        let nearest = self.step * sign * magnitude + 0.0; // normalize -0.0
        self.clamp_to_grid(nearest)
    }

    /// Unbiased stochastic rounding: `z` in `[k*step, (k+1)*step]` goes to
    /// `k*step` with probability `1 - z/step + k`, else to `(k+1)*step`.
    /// Finite grids clamp `z` into range *before* sampling, so unbiasedness
    /// is lost only outside the grid range.
    pub fn stoc<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> f64 {
        self.stoc_flagged(z, rng).value
    }

    pub fn stoc_flagged<R: Rng + ?Sized>(&self, z: f64, rng: &mut R) -> Rounded {
        let (z, saturated) = match self.max_level() {
            Some(edge) if z.abs() > edge => (edge.copysign(z), true),
            _ => (z, false),
        };
        let t = z / self.step;
        let lower = t.floor();
        let p_lower = 1.0 - t + lower;
        let u: f64 = rng.random();
        let k = if u < p_lower { lower } else { lower + 1.0 };
        Rounded {
            value: k * self.step,
            saturated,
        }
    }

    fn clamp_to_grid(&self, v: f64) -> Rounded {
        match self.max_level() {
            Some(edge) if v.abs() > edge => Rounded {
                value: edge.copysign(v),
                saturated: true,
            },
            _ => Rounded {
                value: v,
                saturated: false,
            },
        }
    }
}

/// How the quantizers round: a pure round-to-nearest, or reproducible
/// stochastic rounding where the seed fully determines every draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundingMode {
    Deterministic,
    Stochastic { seed: u64 },
}

/// Per-call rounding state. Stochastic draws come from a counter-based
/// ChaCha12 stream, so `(seed, stream, draw index)` pins every output bit;
/// independent workers get independent streams.
#[derive(Debug, Clone)]
pub enum Rounder {
    Deterministic,
    Stochastic(Box<ChaCha12Rng>),
}

impl Rounder {
    pub fn new(mode: RoundingMode, stream: u64) -> Self {
        match mode {
            RoundingMode::Deterministic => Rounder::Deterministic,
            RoundingMode::Stochastic { seed } => {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                rng.set_stream(stream);
                Rounder::Stochastic(Box::new(rng))
            }
        }
    }

    pub fn round(&mut self, alphabet: &Alphabet, z: f64) -> Rounded {
        match self {
            Rounder::Deterministic => alphabet.msq_flagged(z),
            Rounder::Stochastic(rng) => alphabet.stoc_flagged(z, rng),
        }
    }

    /// The half-width of the rounding residue guaranteed in-range:
    /// `step/2` deterministic, `step` stochastic.
    pub fn residue_bound(&self, alphabet: &Alphabet) -> f64 {
        match self {
            Rounder::Deterministic => alphabet.step() / 2.0,
            Rounder::Stochastic(_) => alphabet.step(),
        }
    }
}

/// Independent round-to-nearest of every coordinate (the MSQ baseline).
pub fn msq_vector(w: &DVector<f64>, alphabet: &Alphabet) -> DVector<f64> {
    w.map(|z| alphabet.msq(z))
}

/// Derive a fresh 64-bit seed stream from a master seed. Used to hand
/// independent Monte Carlo trials their own seeds.
pub fn derive_seeds(master: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha12Rng::seed_from_u64(master);
    (0..count).map(|_| rng.next_u64()).collect()
}
