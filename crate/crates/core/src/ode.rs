//! Adaptive Dormand–Prince 5(4) integrator for real state vectors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            initial_step: None,
            max_steps: 1_000_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `dy/dt = f(t, y)` from `(t0, y0)` and returns the state at
/// every point of `grid` (non-decreasing, all `>= t0`). Steps are clipped
/// so the grid points are hit exactly.
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], grid: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if grid.windows(2).any(|w| w[1] < w[0]) || grid.first().is_some_and(|&g| g < t0) {
        return Err(Error::Numerical("time grid must be sorted and start at or after t0".into()));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    f(t, &y, &mut k[0]);

    let span = grid.last().map_or(0.0, |&g| g - t0);
    let mut h = opts.initial_step.unwrap_or_else(|| (span * 1e-3).max(1e-12));
    let mut steps = 0usize;
    let mut out = Vec::with_capacity(grid.len());

    for &target in grid {
        while t < target {
            if steps >= opts.max_steps {
                return Err(Error::Numerical(format!("step budget exhausted at t = {t:e}")));
            }
            steps += 1;
            let last = target - t <= h;
            let step = if last { target - t } else { h };

            let stage = |coeffs: &[(usize, f64)], y: &[f64], k: &[Vec<f64>], tmp: &mut [f64]| {
                for i in 0..y.len() {
                    tmp[i] = y[i] + step * coeffs.iter().map(|&(s, a)| a * k[s][i]).sum::<f64>();
                }
            };
            stage(&[(0, A21)], &y, &k, &mut tmp);
            f(t + C2 * step, &tmp, &mut k[1]);
            stage(&[(0, A31), (1, A32)], &y, &k, &mut tmp);
            f(t + C3 * step, &tmp, &mut k[2]);
            stage(&[(0, A41), (1, A42), (2, A43)], &y, &k, &mut tmp);
            f(t + C4 * step, &tmp, &mut k[3]);
            stage(&[(0, A51), (1, A52), (2, A53), (3, A54)], &y, &k, &mut tmp);
            f(t + C5 * step, &tmp, &mut k[4]);
            stage(&[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], &y, &k, &mut tmp);
            f(t + step, &tmp, &mut k[5]);
            stage(&[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)], &y, &k, &mut y_new);
            f(t + step, &y_new, &mut k[6]);

            let mut err: f64 = 0.0;
            for i in 0..n {
                let e = step
                    * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
                let scale = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
                err = err.max((e / scale).abs());
            }
            if !err.is_finite() {
                return Err(Error::Numerical(format!("non-finite error estimate at t = {t:e}")));
            }
            if err <= 1.0 {
                t = if last { target } else { t + step };
                std::mem::swap(&mut y, &mut y_new);
                k.swap(0, 6);
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            // keep the proposed size when a clipped final step succeeded
            if !(last && err <= 1.0) {
                h = step * factor;
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Numerical(format!("step size underflow at t = {t:e}")));
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}
