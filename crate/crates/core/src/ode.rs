//! Classical fixed-step RK4 for the deterministic moment equations.

use crate::error::{Error, Result};

/// Scratch buffers for [`rk4_step_in_place`]; reuse across steps to avoid allocation.
#[derive(Clone, Debug)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }
}

/// Advances `y` by one RK4 step of size `dt`. The field writes `ẏ` into its last argument.
pub fn rk4_step_in_place<F>(mut field: F, t: f64, y: &mut [f64], dt: f64, ws: &mut Rk4Workspace)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    debug_assert_eq!(ws.k1.len(), n);
    let half = 0.5 * dt;

    field(t, y, &mut ws.k1);
    axpy(&mut ws.tmp, y, half, &ws.k1);
    field(t + half, &ws.tmp, &mut ws.k2);
    axpy(&mut ws.tmp, y, half, &ws.k2);
    field(t + half, &ws.tmp, &mut ws.k3);
    axpy(&mut ws.tmp, y, dt, &ws.k3);
    field(t + dt, &ws.tmp, &mut ws.k4);
    for (i, yi) in y.iter_mut().enumerate() {
        *yi += dt / 6.0 * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
}

/// `out = y + a·k`.
fn axpy(out: &mut [f64], y: &[f64], a: f64, k: &[f64]) {
    for ((o, yi), ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + a * ki;
    }
}

/// One RK4 step returning the new state; aborts on a non-finite result.
pub fn rk4_step<F>(field: F, t: f64, y: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("RK4 step must be positive, got {dt}")));
    }
    let mut out = y.to_vec();
    let mut ws = Rk4Workspace::new(y.len());
    rk4_step_in_place(|t, y, dy| dy.copy_from_slice(&field(t, y)), t, &mut out, dt, &mut ws);
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("RK4 state component {i} at t = {}", t + dt)));
    }
    Ok(out)
}
