//! Light–atom dynamics of a single ensemble in the bad-cavity limit.
//!
//! Far-detuned Raman scattering couples the symmetric spin-wave mode `S`
//! to the forward Stokes mode through an effective gain `κ′`, while
//! spontaneous scattering at the per-atom rate `γ′` feeds every spin-wave
//! mode alike. The ratio `κ′/γ′` grows with atom number, and the masters
//! equation here makes that collective enhancement visible on a handful of
//! representative modes.

use serde::{Deserialize, Serialize};

use crate::error::{check_range, invalid, Error, Result};
use crate::fock::{vacuum, DensityOperator, ModeLayout};
use crate::ode::{integrate, OdeOptions};

/// Below this the cavity cannot be adiabatically eliminated reliably.
pub const BAD_CAVITY_WARNING_RATIO: f64 = 10.0;

/// Default number of non-symmetric spin-wave modes kept in the master equation.
pub const DEFAULT_NOISE_MODES: usize = 3;

/// Microscopic parameters; rates are angular frequencies in s⁻¹, time in s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleParams {
    pub atom_count: u64,
    pub rabi: f64,
    pub detuning: f64,
    pub coupling: f64,
    pub cavity_decay: f64,
    pub spont_rate: f64,
    pub interaction_time: f64,
}

impl EnsembleParams {
    pub fn validate(&self) -> Result<()> {
        if self.atom_count == 0 {
            return Err(invalid("atom_count", "must be positive"));
        }
        for (field, v) in [
            ("rabi", self.rabi),
            ("detuning", self.detuning),
            ("coupling", self.coupling),
        ] {
            if !v.is_finite() {
                return Err(invalid(field, "must be finite"));
            }
        }
        if self.detuning == 0.0 {
            return Err(invalid("detuning", "must be non-zero"));
        }
        if !(self.cavity_decay > 0.0) || !self.cavity_decay.is_finite() {
            return Err(invalid("cavity_decay", "must be positive"));
        }
        check_range("spont_rate", self.spont_rate, 0.0, f64::MAX)?;
        check_range("interaction_time", self.interaction_time, 0.0, f64::MAX)
    }

    /// `κ / (√N |Ω g| / |Δ|)`; infinite when the coherent coupling vanishes.
    pub fn bad_cavity_ratio(&self) -> f64 {
        let coupling = (self.atom_count as f64).sqrt() * (self.rabi * self.coupling).abs()
            / self.detuning.abs();
        if coupling == 0.0 {
            f64::INFINITY
        } else {
            self.cavity_decay / coupling
        }
    }

    pub fn adiabatic_warning(&self) -> bool {
        self.bad_cavity_ratio() < BAD_CAVITY_WARNING_RATIO
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveRates {
    /// Collective Raman gain κ′.
    pub kappa_prime: f64,
    /// Per-atom spontaneous scattering rate γ′.
    pub gamma_prime: f64,
    /// Signal-to-noise ratio `4 N g² / (κ γ)`; infinite without spontaneous emission.
    pub snr: f64,
    /// Squeezing parameter with `cosh r = e^{κ′ t / 2}`.
    pub squeeze: f64,
    /// `tanh² r`.
    pub excitation_prob: f64,
}

pub fn effective_rates(params: &EnsembleParams) -> Result<EffectiveRates> {
    params.validate()?;
    let n = params.atom_count as f64;
    let det2 = params.detuning * params.detuning;
    let kappa_prime =
        4.0 * n * (params.rabi * params.coupling).powi(2) / (det2 * params.cavity_decay);
    let gamma_prime = params.rabi * params.rabi / det2 * params.spont_rate;
    let snr = if params.spont_rate == 0.0 {
        f64::INFINITY
    } else {
        4.0 * n * params.coupling * params.coupling / (params.cavity_decay * params.spont_rate)
    };
    let half_gain = kappa_prime * params.interaction_time / 2.0;
    // arccosh(e^x) = x + ln(1 + sqrt(1 - e^{-2x}))
    let squeeze = half_gain + (1.0 + (-(-2.0 * half_gain).exp_m1()).sqrt()).ln();
    // tanh² r = 1 − 1/cosh² r = 1 − e^{−κ′t}
    let excitation_prob = -(-2.0 * half_gain).exp_m1();
    if !squeeze.is_finite() {
        return Err(Error::Numerical(format!("κ′ t = {} overflows", 2.0 * half_gain)));
    }
    Ok(EffectiveRates {
        kappa_prime,
        gamma_prime,
        snr,
        squeeze,
        excitation_prob,
    })
}

/// Amplitude gain `e^{κ′ t/2}` of the spin-wave creation operator.
pub fn langevin_mean_solution(kappa_prime: f64, t: f64) -> f64 {
    (kappa_prime * t / 2.0).exp()
}

/// Integrates the drift `dS†/dt = (κ′/2) S†` from `S†(0) = 1` on `grid`.
pub fn langevin_drift_numeric(kappa_prime: f64, grid: &[f64]) -> Result<Vec<f64>> {
    let sol = integrate(
        |_, y, dy| dy[0] = 0.5 * kappa_prime * y[0],
        0.0,
        &[1.0],
        grid,
        &OdeOptions::default(),
    )?;
    Ok(sol.into_iter().map(|y| y[0]).collect())
}

/// Joint state of the spin wave (mode 0) and the effective Stokes mode
/// (mode 1): the two-mode squeezed vacuum `Σ tanh^n r |n,n> / cosh r`.
pub fn squeezed_joint_state(rates: &EffectiveRates, cutoff: usize) -> Result<DensityOperator> {
    squeezed_pair(rates.squeeze, cutoff)
}

pub(crate) fn squeezed_pair(r: f64, cutoff: usize) -> Result<DensityOperator> {
    vacuum(ModeLayout::new(2, cutoff)?).apply_two_mode_squeeze(0, 1, r)
}

/// Mean of the measured photon-number operator for the Stokes pulse.
pub fn stokes_photon_mean(state: &DensityOperator) -> Result<f64> {
    state.mean_photon_number(1)
}

/// Gain rates of the Lindblad terms `L[S†]` on the symmetric mode and
/// `L[S_μ†]` on every other mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainRates {
    pub collective: f64,
    pub noise: f64,
}

impl GainRates {
    /// Symmetric mode heated at `κ′ + γ′`, others at `γ′`.
    pub fn from_rates(rates: &EffectiveRates) -> Self {
        Self {
            collective: rates.kappa_prime + rates.gamma_prime,
            noise: rates.gamma_prime,
        }
    }

    /// Asymptotic ratio of collective to noise-mode growth, `R_sn + 1`.
    pub fn expected_ratio(&self) -> f64 {
        self.collective / self.noise
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModePopulations {
    pub time_grid: Vec<f64>,
    /// Mean excitation of the symmetric mode.
    pub collective: Vec<f64>,
    /// Mean excitation per non-symmetric mode, averaged over those modes.
    pub per_noise_mode: Vec<f64>,
    /// Each non-symmetric mode separately, indexed `[mode][time]`.
    pub noise_modes: Vec<Vec<f64>>,
    pub max_trace_error: f64,
    pub min_population: f64,
}

impl ModePopulations {
    /// Least-squares slope through the origin of collective versus noise
    /// populations. Meaningful in the short-time linear regime.
    pub fn growth_rate_ratio(&self) -> f64 {
        let slope = |pops: &[f64]| {
            let num: f64 = self.time_grid.iter().zip(pops).map(|(t, p)| t * p).sum();
            let den: f64 = self.time_grid.iter().map(|t| t * t).sum();
            num / den
        };
        slope(&self.collective) / slope(&self.per_noise_mode)
    }

    /// Pointwise collective/noise ratio; NaN where the noise mode is empty.
    pub fn pointwise_ratio(&self) -> Vec<f64> {
        self.collective
            .iter()
            .zip(&self.per_noise_mode)
            .map(|(c, n)| if *n > 0.0 { c / n } else { f64::NAN })
            .collect()
    }
}

/// Integrates `dρ/dt = g_c L[S†]ρ + g_n Σ_μ L[S_μ†]ρ` from the multimode
/// vacuum, with `L[X]ρ = XρX† − {X†X, ρ}/2` and truncated creation operators
/// (so the trace is conserved exactly by the generator).
pub fn integrate_master_equation(
    gains: &GainRates,
    noise_modes: usize,
    cutoff: usize,
    t_grid: &[f64],
) -> Result<ModePopulations> {
    if noise_modes == 0 {
        return Err(invalid("noise_modes", "need at least one non-symmetric mode"));
    }
    check_range("gains.collective", gains.collective, 0.0, f64::MAX)?;
    check_range("gains.noise", gains.noise, 0.0, f64::MAX)?;
    let layout = ModeLayout::new(noise_modes + 1, cutoff)?;
    let dim = layout.dim();
    let rates: Vec<f64> = std::iter::once(gains.collective)
        .chain(std::iter::repeat_n(gains.noise, noise_modes))
        .collect();
    let occ: Vec<Vec<usize>> = (0..dim).map(|x| layout.occupations(x)).collect();
    let strides: Vec<usize> = (0..layout.modes()).map(|m| layout.stride(m)).collect();
    // diagonal of a a† with the top level annihilated by the truncation
    let aad = |n: usize| if n < cutoff { (n + 1) as f64 } else { 0.0 };

    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (re, im) = y.split_at(dim * dim);
        let (dre, dim_) = dy.split_at_mut(dim * dim);
        for x in 0..dim {
            for z in 0..dim {
                let k = x * dim + z;
                let (mut acc_re, mut acc_im) = (0.0, 0.0);
                for (m, &g) in rates.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let (nx, nz) = (occ[x][m], occ[z][m]);
                    if nx > 0 && nz > 0 {
                        let w = g * ((nx * nz) as f64).sqrt();
                        let src = (x - strides[m]) * dim + z - strides[m];
                        acc_re += w * re[src];
                        acc_im += w * im[src];
                    }
                    let damp = 0.5 * g * (aad(nx) + aad(nz));
                    acc_re -= damp * re[k];
                    acc_im -= damp * im[k];
                }
                dre[k] = acc_re;
                dim_[k] = acc_im;
            }
        }
    };

    let rho0 = vacuum(layout);
    let mut y0 = vec![0.0; 2 * dim * dim];
    for (k, v) in rho0.data().iter().enumerate() {
        y0[k] = v.re;
        y0[dim * dim + k] = v.im;
    }
    let states = integrate(rhs, 0.0, &y0, t_grid, &OdeOptions::default())?;

    let mut out = ModePopulations {
        time_grid: t_grid.to_vec(),
        collective: Vec::with_capacity(t_grid.len()),
        per_noise_mode: Vec::with_capacity(t_grid.len()),
        noise_modes: vec![Vec::with_capacity(t_grid.len()); noise_modes],
        max_trace_error: 0.0,
        min_population: f64::INFINITY,
    };
    for y in &states {
        let diag = |x: usize| y[x * dim + x];
        let trace: f64 = (0..dim).map(diag).sum();
        out.max_trace_error = out.max_trace_error.max((trace - 1.0).abs());
        let min_diag = (0..dim).map(diag).fold(f64::INFINITY, f64::min);
        out.min_population = out.min_population.min(min_diag);
        let mean = |m: usize| (0..dim).map(|x| occ[x][m] as f64 * diag(x)).sum::<f64>();
        out.collective.push(mean(0));
        let mut total = 0.0;
        for mu in 0..noise_modes {
            let p = mean(mu + 1);
            out.noise_modes[mu].push(p);
            total += p;
        }
        out.per_noise_mode.push(total / noise_modes as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreeSpaceSnr {
    pub snr: f64,
    /// On-resonance optical depth estimate; numerically equal to `snr`.
    pub optical_depth: f64,
    /// `k_s / ρ^{1/3} >= 1`: no superradiant collective decay.
    pub dilute: bool,
}

/// Cavity-free estimate `R_sn ≈ 3 ρ L / k²` for number density `density`,
/// sample length `length` and Stokes wavenumber `wavenumber`.
pub fn free_space_snr(density: f64, length: f64, wavenumber: f64) -> Result<FreeSpaceSnr> {
    for (field, v) in [("density", density), ("length", length), ("wavenumber", wavenumber)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(invalid(field, "must be positive and finite"));
        }
    }
    let snr = 3.0 * density * length / (wavenumber * wavenumber);
    Ok(FreeSpaceSnr {
        snr,
        optical_depth: snr,
        dilute: wavenumber / density.cbrt() >= 1.0,
    })
}
