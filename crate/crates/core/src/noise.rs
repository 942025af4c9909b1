//! Reproducible random streams and Brownian increments.
//!
//! Every Monte Carlo path owns one [`RngStream`]. A stream is a ChaCha8
//! keystream keyed by the master seed and selected by the path index, so a
//! path's draws never depend on which worker advances it or in what order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{SymMat, VecN};

#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        Self {
            master_seed,
            stream_index,
            rng,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }
}

/// Draws `dB ~ N(0, Q dt)` for a diagonal, nonnegative `Q`.
pub fn sample_brownian_increment(q: &SymMat, dt: f64, rng: &mut RngStream) -> Result<VecN> {
    let sampler = BrownianSampler::new(q, dt)?;
    let mut out = VecN::zeros(q.order());
    sampler.fill(rng, out.as_mut_slice());
    Ok(out)
}

/// Precomputed per-component standard deviations `sqrt(Q_ii dt)`.
#[derive(Clone, Debug)]
pub struct BrownianSampler {
    std_dev: Vec<f64>,
}

impl BrownianSampler {
    pub fn new(q: &SymMat, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "time step must be positive and finite, got {dt}"
            )));
        }
        check_noise_intensity(q)?;
        Ok(Self {
            std_dev: q.diagonal().iter().map(|&qi| (qi * dt).sqrt()).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.std_dev.len()
    }

    pub fn fill(&self, rng: &mut RngStream, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.std_dev.len());
        for (o, &s) in out.iter_mut().zip(&self.std_dev) {
            // The draw is consumed even for a zero component so stream positions stay aligned.
            let z = rng.standard_normal();
            *o = if s == 0.0 { 0.0 } else { s * z };
        }
    }
}

/// White-noise intensity must be diagonal with nonnegative entries.
pub fn check_noise_intensity(q: &SymMat) -> Result<()> {
    if let Some((row, col, value)) = q.first_off_diagonal() {
        return Err(Error::NonDiagonalNoise { row, col, value });
    }
    if let Some(v) = q.diagonal().into_iter().find(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise intensity has a negative diagonal entry {v}"
        )));
    }
    Ok(())
}
