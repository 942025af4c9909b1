//! SDE models `dx = f(t,x) dt + g(t,x) dB` and Monte Carlo path propagation.
//!
//! Paths advance in lockstep over a uniform grid. Each path owns its own
//! [`RngStream`] (keyed by master seed and path index), the per-path work is
//! spread over the rayon pool, and every reduction runs in path order, so the
//! results are bit-identical for any worker count.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::linalg::{SymMat, VecN};
use crate::noise::{BrownianSampler, RngStream};
use crate::ode::{rk4_step_in_place, Rk4Workspace};

/// Any |component| above this marks a path as divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Fraction of divergent paths that aborts a run.
pub const MAX_DIVERGENT_FRACTION: f64 = 1e-3;

pub trait SdeModel: Sync {
    fn state_dim(&self) -> usize;

    fn noise_dim(&self) -> usize;

    /// Diagonal white-noise intensity `Q` (m×m).
    fn noise_intensity(&self) -> &SymMat;

    fn drift(&self, t: f64, x: &[f64], dx: &mut [f64]);

    /// The n×m diffusion matrix `g(t, x)`.
    fn diffusion(&self, t: f64, x: &[f64]) -> DMatrix<f64>;

    /// Adds `g(t, x) db` to `out`. Models with structured `g` override this.
    fn add_diffusion(&self, t: f64, x: &[f64], db: &[f64], out: &mut [f64]) {
        let g = self.diffusion(t, x);
        for (i, o) in out.iter_mut().enumerate() {
            *o += (0..db.len()).map(|k| g[(i, k)] * db[k]).sum::<f64>();
        }
    }

    /// Rejects states where the dynamics are undefined (e.g. a gravitational singularity).
    fn check_state(&self, _x: &[f64]) -> Result<()> {
        Ok(())
    }
}

/// Path stepping rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `x + f(t,x) dt + g(t,x) dB`.
    #[default]
    EulerMaruyama,
    /// Drift flow advanced by one RK4 step, then `+ g(t,x) dB`. Agrees with
    /// Euler–Maruyama to first order in `dt` but does not inflate the
    /// invariants of a stiff conservative drift.
    SplitRk4,
}

/// One Euler–Maruyama step.
pub fn em_step<M: SdeModel + ?Sized>(model: &M, t: f64, x: &[f64], dt: f64, db: &[f64]) -> Result<VecN> {
    check_step_args(model, x, dt, db)?;
    let mut out = x.to_vec();
    let (mut drift, mut noise) = (vec![0.0; x.len()], vec![0.0; x.len()]);
    euler_maruyama_in_place(model, t, &mut out, dt, db, &mut drift, &mut noise);
    finite_or_err(&out, t + dt)?;
    Ok(VecN::from_vec(out))
}

/// One split step: RK4 on the drift, then the diffusion increment.
pub fn split_rk4_step<M: SdeModel + ?Sized>(model: &M, t: f64, x: &[f64], dt: f64, db: &[f64]) -> Result<VecN> {
    check_step_args(model, x, dt, db)?;
    let mut out = x.to_vec();
    let mut ws = Rk4Workspace::new(x.len());
    let mut noise = vec![0.0; x.len()];
    split_rk4_in_place(model, t, &mut out, dt, db, &mut ws, &mut noise);
    finite_or_err(&out, t + dt)?;
    Ok(VecN::from_vec(out))
}

fn check_step_args<M: SdeModel + ?Sized>(model: &M, x: &[f64], dt: f64, db: &[f64]) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if x.len() != model.state_dim() || db.len() != model.noise_dim() {
        return Err(Error::Dimension(format!(
            "state/noise lengths {}/{} do not match model dimensions {}/{}",
            x.len(),
            db.len(),
            model.state_dim(),
            model.noise_dim()
        )));
    }
    Ok(())
}

fn finite_or_err(x: &[f64], t: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("SDE step result at t = {t}")))
    }
}

fn euler_maruyama_in_place<M: SdeModel + ?Sized>(
    model: &M,
    t: f64,
    x: &mut [f64],
    dt: f64,
    db: &[f64],
    drift: &mut [f64],
    noise: &mut [f64],
) {
    model.drift(t, x, drift);
    noise.fill(0.0);
    model.add_diffusion(t, x, db, noise);
    for i in 0..x.len() {
        x[i] += drift[i] * dt + noise[i];
    }
}

fn split_rk4_in_place<M: SdeModel + ?Sized>(
    model: &M,
    t: f64,
    x: &mut [f64],
    dt: f64,
    db: &[f64],
    ws: &mut Rk4Workspace,
    noise: &mut [f64],
) {
    noise.fill(0.0);
    model.add_diffusion(t, x, db, noise);
    rk4_step_in_place(|t, y, dy| model.drift(t, y, dy), t, x, dt, ws);
    for (xi, ni) in x.iter_mut().zip(noise.iter()) {
        *xi += ni;
    }
}

/// Uniform time grid `t0, t0 + dt, …, t0 + steps·dt`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid needs finite t0 and positive dt, got t0 = {t0}, dt = {dt}"
            )));
        }
        Ok(Self { t0, dt, steps })
    }

    /// Grid on `[0, t_final]`; `t_final` must be an integer multiple of `dt`.
    pub fn from_horizon(dt: f64, t_final: f64) -> Result<Self> {
        if !(dt > 0.0) || !(t_final >= dt) {
            return Err(Error::InvalidArgument(format!(
                "need dt > 0 and t_final >= dt, got dt = {dt}, t_final = {t_final}"
            )));
        }
        let steps = (t_final / dt).round();
        if (steps * dt - t_final).abs() > 1e-9 * t_final {
            return Err(Error::InvalidArgument(format!(
                "t_final = {t_final} is not a multiple of dt = {dt}"
            )));
        }
        Self::new(0.0, dt, steps as usize)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }
}

/// N sampled states at a common time.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    t: f64,
    dim: usize,
    states: Vec<f64>,
    divergent: Vec<bool>,
    master_seed: u64,
}

impl Ensemble {
    pub fn from_states(t: f64, states: Vec<Vec<f64>>, master_seed: u64) -> Result<Self> {
        let n = states.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "an ensemble needs at least 2 states, got {n}"
            )));
        }
        let dim = states[0].len();
        if states.iter().any(|s| s.len() != dim) {
            return Err(Error::Dimension("ensemble states differ in length".into()));
        }
        let flat: Vec<f64> = states.into_iter().flatten().collect();
        if !flat.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("ensemble state".into()));
        }
        Ok(Self {
            t,
            dim,
            states: flat,
            divergent: vec![false; n],
            master_seed,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of paths, including any flagged divergent.
    pub fn len(&self) -> usize {
        self.divergent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.divergent.is_empty()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_divergent(&self, i: usize) -> bool {
        self.divergent[i]
    }

    pub fn divergent_count(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }

    /// Non-divergent states in path order.
    pub fn live_states(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.states
            .chunks_exact(self.dim)
            .zip(&self.divergent)
            .filter(|(_, &d)| !d)
            .map(|(s, _)| s)
    }

    pub fn live_count(&self) -> usize {
        self.len() - self.divergent_count()
    }
}

/// Lockstep Monte Carlo propagation of an SDE over a [`TimeGrid`].
pub struct EnsembleRun<'a, M: SdeModel> {
    model: &'a M,
    scheme: Scheme,
    grid: TimeGrid,
    sampler: BrownianSampler,
    step: usize,
    ensemble: Ensemble,
    streams: Vec<RngStream>,
}

impl<'a, M: SdeModel> EnsembleRun<'a, M> {
    /// Samples `n` initial states from `initial` and positions the run at the grid start.
    pub fn new(
        model: &'a M,
        scheme: Scheme,
        initial: &GaussianBelief,
        grid: TimeGrid,
        n: usize,
        master_seed: u64,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 paths, got {n}")));
        }
        let dim = model.state_dim();
        if initial.dim() != dim {
            return Err(Error::Dimension(format!(
                "initial belief has dimension {} but the model state has {dim}",
                initial.dim()
            )));
        }
        if model.noise_intensity().order() != model.noise_dim() {
            return Err(Error::Dimension(
                "noise intensity does not match noise dimension".into(),
            ));
        }
        let sampler = BrownianSampler::new(model.noise_intensity(), grid.dt())?;
        let factor = initial.sampling_factor();
        let mut streams: Vec<RngStream> = (0..n).map(|i| RngStream::new(master_seed, i as u64)).collect();
        let mut states = vec![0.0; n * dim];
        states
            .par_chunks_mut(dim)
            .zip(streams.par_iter_mut())
            .for_each(|(x, rng)| initial.sample_with(&factor, rng, x));
        for (i, x) in states.chunks_exact(dim).enumerate() {
            model.check_state(x).map_err(|e| with_path(e, i))?;
        }
        Ok(Self {
            model,
            scheme,
            grid,
            sampler,
            step: 0,
            ensemble: Ensemble {
                t: grid.time(0),
                dim,
                states,
                divergent: vec![false; n],
                master_seed,
            },
            streams,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ensemble
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.grid.steps()
    }

    /// Advances every path by one grid step. Returns `Ok(false)` once the grid is exhausted.
    pub fn advance(&mut self) -> Result<bool> {
        if self.is_finished() {
            return Ok(false);
        }
        let t = self.grid.time(self.step);
        let dt = self.grid.dt();
        let dim = self.ensemble.dim;
        let m = self.model.noise_dim();
        let (model, scheme, sampler) = (self.model, self.scheme, &self.sampler);

        let outcomes: Vec<StepOutcome> = self
            .ensemble
            .states
            .par_chunks_mut(dim)
            .zip(self.streams.par_iter_mut())
            .zip(self.ensemble.divergent.par_iter())
            .map_init(
                || {
                    let buf = vec![0.0; dim];
                    (vec![0.0; m], buf.clone(), buf.clone(), Rk4Workspace::new(dim), buf)
                },
                |(db, drift, noise, ws, prev), ((x, rng), &dead)| {
                    // Draws are consumed even for frozen paths so streams stay aligned.
                    sampler.fill(rng, db);
                    if dead {
                        return StepOutcome::Frozen;
                    }
                    prev.copy_from_slice(x);
                    match scheme {
                        Scheme::EulerMaruyama => euler_maruyama_in_place(model, t, x, dt, db, drift, noise),
                        Scheme::SplitRk4 => split_rk4_in_place(model, t, x, dt, db, ws, noise),
                    }
                    if x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD) {
                        x.copy_from_slice(prev);
                        return StepOutcome::Diverged;
                    }
                    match model.check_state(x) {
                        Ok(()) => StepOutcome::Ok,
                        Err(e) => StepOutcome::Failed(e),
                    }
                },
            )
            .collect();

        for (i, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                StepOutcome::Failed(e) => return Err(with_path(e, i)),
                StepOutcome::Diverged => self.ensemble.divergent[i] = true,
                StepOutcome::Ok | StepOutcome::Frozen => {}
            }
        }
        let total = self.ensemble.len();
        let diverged = self.ensemble.divergent_count();
        let limit = (MAX_DIVERGENT_FRACTION * total as f64).floor() as usize;
        if diverged > limit {
            return Err(Error::Divergence { diverged, total, limit });
        }
        self.step += 1;
        self.ensemble.t = self.grid.time(self.step);
        Ok(true)
    }
}

enum StepOutcome {
    Ok,
    Frozen,
    Diverged,
    Failed(Error),
}

fn with_path(e: Error, path: usize) -> Error {
    match e {
        Error::Singularity { radius, r_min, .. } => Error::Singularity { path, radius, r_min },
        other => other,
    }
}

/// Runs the full grid and returns every intermediate ensemble.
///
/// Memory grows with `grid.len() · n`; long runs should drive [`EnsembleRun`] directly.
pub fn propagate_ensemble<M: SdeModel>(
    model: &M,
    scheme: Scheme,
    initial: &GaussianBelief,
    grid: TimeGrid,
    n: usize,
    master_seed: u64,
) -> Result<Vec<Ensemble>> {
    let mut run = EnsembleRun::new(model, scheme, initial, grid, n, master_seed)?;
    let mut out = Vec::with_capacity(grid.len());
    out.push(run.ensemble().clone());
    while run.advance()? {
        out.push(run.ensemble().clone());
    }
    Ok(out)
}

/// `dx = g dB` with constant `g = I`: pure Brownian motion.
#[derive(Clone, Debug)]
pub struct BrownianMotion {
    q: SymMat,
}

impl BrownianMotion {
    pub fn new(q: SymMat) -> Result<Self> {
        crate::noise::check_noise_intensity(&q)?;
        Ok(Self { q })
    }
}

impl SdeModel for BrownianMotion {
    fn state_dim(&self) -> usize {
        self.q.order()
    }

    fn noise_dim(&self) -> usize {
        self.q.order()
    }

    fn noise_intensity(&self) -> &SymMat {
        &self.q
    }

    fn drift(&self, _t: f64, _x: &[f64], dx: &mut [f64]) {
        dx.fill(0.0);
    }

    fn diffusion(&self, _t: f64, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.q.order(), self.q.order())
    }

    fn add_diffusion(&self, _t: f64, _x: &[f64], db: &[f64], out: &mut [f64]) {
        for (o, b) in out.iter_mut().zip(db) {
            *o += b;
        }
    }
}
