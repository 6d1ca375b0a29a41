//! Seeded Brownian increments on a refined grid.
//!
//! Every path owns an independent ChaCha8 stream: the key is expanded from
//! the master seed with `SeedableRng::seed_from_u64` and the ChaCha stream
//! id is the path index. ChaCha is counter based, so path `i` is the same
//! sequence no matter which worker generates it or in what order.
//!
//! Standard normals come from `rand_distr::StandardNormal` (ziggurat) and are
//! scaled by `√(Δ/m)`. Each coarse increment `ΔB_k` is the left-to-right sum
//! of its `m` fine increments, and every consumer uses [`accumulate`] so the
//! sums agree bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{MtemError, Result};

/// Left fold starting at `0.0`.
#[inline]
pub fn accumulate(increments: &[f64]) -> f64 {
    increments.iter().fold(0.0, |acc, v| acc + v)
}

/// Streaming generator of fine increments for one path.
#[derive(Debug, Clone)]
pub struct IncrementStream {
    rng: ChaCha8Rng,
    scale: f64,
    refinement: usize,
}

impl IncrementStream {
    pub fn new(seed: u64, path_index: u64, delta: f64, refinement: usize) -> Result<Self> {
        check_grid(delta, refinement)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        Ok(Self {
            rng,
            scale: (delta / refinement as f64).sqrt(),
            refinement,
        })
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    /// Fills `fine` (length `m`) with the next coarse step's fine increments
    /// and returns their sum `ΔB_k`.
    #[inline]
    pub fn next_step(&mut self, fine: &mut [f64]) -> f64 {
        debug_assert_eq!(fine.len(), self.refinement);
        for v in fine.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *v = z * self.scale;
        }
        accumulate(fine)
    }
}

fn check_grid(delta: f64, refinement: usize) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(MtemError::input(format!("step size must be positive, got {delta}")));
    }
    if refinement == 0 {
        return Err(MtemError::input("refinement factor must be at least 1"));
    }
    Ok(())
}

/// A materialised Brownian path: `m` fine increments per coarse step.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    seed: u64,
    path_index: u64,
    delta: f64,
    refinement: usize,
    fine: Vec<f64>,
}

impl BrownianPath {
    pub fn generate(
        seed: u64,
        path_index: u64,
        delta: f64,
        refinement: usize,
        steps: usize,
    ) -> Result<Self> {
        let mut stream = IncrementStream::new(seed, path_index, delta, refinement)?;
        let mut fine = vec![0.0; steps * refinement];
        for chunk in fine.chunks_exact_mut(refinement) {
            stream.next_step(chunk);
        }
        Ok(Self {
            seed,
            path_index,
            delta,
            refinement,
            fine,
        })
    }

    /// A path with prescribed fine increments (`steps · m` values).
    pub fn from_fine_increments(delta: f64, refinement: usize, fine: Vec<f64>) -> Result<Self> {
        check_grid(delta, refinement)?;
        if !fine.len().is_multiple_of(refinement) {
            return Err(MtemError::input(format!(
                "{} fine increments do not fill whole steps of {refinement}",
                fine.len()
            )));
        }
        Ok(Self {
            seed: 0,
            path_index: 0,
            delta,
            refinement,
            fine,
        })
    }

    /// The degenerate path `B ≡ 0`.
    pub fn zero(delta: f64, refinement: usize, steps: usize) -> Result<Self> {
        Self::from_fine_increments(delta, refinement, vec![0.0; steps * refinement])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    pub fn steps(&self) -> usize {
        self.fine.len() / self.refinement
    }

    pub fn fine_increments(&self, k: usize) -> &[f64] {
        &self.fine[k * self.refinement..(k + 1) * self.refinement]
    }

    /// `ΔB_k = B((k+1)Δ) − B(kΔ)`.
    pub fn coarse_increment(&self, k: usize) -> f64 {
        accumulate(self.fine_increments(k))
    }

    /// `B(kΔ + jΔ/m) − B(kΔ)` for `0 ≤ j ≤ m`.
    pub fn partial_increment(&self, k: usize, j: usize) -> f64 {
        accumulate(&self.fine_increments(k)[..j])
    }
}
