//! Uses of two long-distance links: correlation and CHSH measurements, an
//! entanglement-based key exchange, and probabilistic teleportation of a
//! single excitation shared between two ensembles.
//!
//! Each side interferes the retrieved pulses of its two ensembles on a
//! 50/50 beamsplitter. Post-selecting one click per side (or per
//! beamsplitter, for teleportation) removes the vacuum admixture, so
//! correlations and fidelities do not depend on `c`; only the success
//! probability does.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use num_complex::Complex64 as C64;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_range, invalid, Error, Result};
use crate::fock::{DensityOperator, DetectorModel, DetectorOutcome, ModeLayout, PureState};
use crate::repeater::eme_density;

const CUTOFF: usize = 2;

/// Rounds handled by one random stream in the key-exchange sampler.
pub const ROUNDS_PER_STREAM: u64 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeasurementSetting {
    pub psi_l: f64,
    pub psi_r: f64,
}

impl MeasurementSetting {
    pub fn new(psi_l: f64, psi_r: f64) -> Self {
        Self { psi_l, psi_r }
    }
}

/// Click record of one side: which of its two detectors fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SideClicks {
    None,
    D1,
    D2,
    Both,
}

impl SideClicks {
    pub const ALL: [SideClicks; 4] = [Self::None, Self::D1, Self::D2, Self::Both];

    fn outcomes(self) -> (DetectorOutcome, DetectorOutcome) {
        use DetectorOutcome::{Click, NoClick};
        match self {
            Self::None => (NoClick, NoClick),
            Self::D1 => (Click, NoClick),
            Self::D2 => (NoClick, Click),
            Self::Both => (Click, Click),
        }
    }

    /// Key bit for a single click: `D1 → 0`, `D2 → 1`.
    pub fn bit(self) -> Option<u8> {
        match self {
            Self::D1 => Some(0),
            Self::D2 => Some(1),
            _ => None,
        }
    }
}

/// Joint probabilities `table[left][right]` indexed as [`SideClicks::ALL`].
pub type ClickTable = [[f64; 4]; 4];

fn check_common(c_n: f64, phi: f64, eta_a: f64, dark_prob: f64) -> Result<()> {
    check_range("vacuum_coeff", c_n, 0.0, f64::MAX)?;
    check_range("app_efficiency", eta_a, 0.0, 1.0)?;
    check_range("dark_prob", dark_prob, 0.0, 1.0)?;
    if !phi.is_finite() {
        return Err(invalid("phase", "must be finite"));
    }
    Ok(())
}

/// Full click statistics of the two-link measurement.
///
/// Modes are `[L1, R1, L2, R2]`; each retrieved mode loses `1 − √η_a`, so a
/// two-photon coincidence carries `η_a`. The setting phases act on `L2`
/// and `R2`, and `D1` sits on the output port of the second mode.
pub fn click_table(
    c_n: f64,
    phi: f64,
    setting: MeasurementSetting,
    eta_a: f64,
    dark_prob: f64,
) -> Result<ClickTable> {
    check_common(c_n, phi, eta_a, dark_prob)?;
    let pair = eme_density(c_n, phi, CUTOFF)?;
    let mut rho = pair.tensor(&pair)?;
    let per_mode = eta_a.sqrt();
    for m in 0..4 {
        rho = rho.apply_loss(m, per_mode)?;
    }
    let rho = rho
        .apply_phase(2, setting.psi_l)?
        .apply_phase(3, setting.psi_r)?
        .apply_beamsplitter(0, 2, FRAC_PI_4, 0.0)?
        .apply_beamsplitter(1, 3, FRAC_PI_4, 0.0)?;
    let det = DetectorModel::new(1.0, dark_prob)?;
    let mut table = [[0.0; 4]; 4];
    for (li, l) in SideClicks::ALL.iter().enumerate() {
        let (l2, l1) = l.outcomes();
        for (ri, r) in SideClicks::ALL.iter().enumerate() {
            let (r2, r1) = r.outcomes();
            // descending mode order keeps the remaining indices valid
            let p = rho
                .project_detector(3, &det, r1)?
                .project_detector(2, &det, l1)?
                .project_detector(1, &det, r2)?
                .project_detector(0, &det, l2)?
                .trace();
            table[li][ri] = p.max(0.0);
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    /// `P11 + P22 − P12 − P21` over single-click coincidences.
    pub e: f64,
    /// Probability of exactly one click on each side.
    pub coincidence_prob: f64,
    /// Normalized `[[P11, P12], [P21, P22]]`.
    pub coincidences: [[f64; 2]; 2],
}

impl Correlation {
    fn from_table(table: &ClickTable) -> Result<Self> {
        let raw = [[table[1][1], table[1][2]], [table[2][1], table[2][2]]];
        let total: f64 = raw.iter().flatten().sum();
        if total < crate::fock::MIN_OUTCOME_PROBABILITY {
            return Err(Error::ImpossibleOutcome { probability: total });
        }
        let n = raw.map(|row| row.map(|p| p / total));
        Ok(Self {
            e: n[0][0] + n[1][1] - n[0][1] - n[1][0],
            coincidence_prob: total,
            coincidences: n,
        })
    }
}

pub fn correlation(c_n: f64, phi: f64, setting: MeasurementSetting, eta_a: f64) -> Result<Correlation> {
    correlation_with_dark(c_n, phi, setting, eta_a, 0.0)
}

pub fn correlation_with_dark(
    c_n: f64,
    phi: f64,
    setting: MeasurementSetting,
    eta_a: f64,
    dark_prob: f64,
) -> Result<Correlation> {
    Correlation::from_table(&click_table(c_n, phi, setting, eta_a, dark_prob)?)
}

/// Standard CHSH settings `(ψ_L, ψ_R)` with their signs.
pub const CHSH_SETTINGS: [(f64, f64, f64); 4] = [
    (0.0, FRAC_PI_4, 1.0),
    (FRAC_PI_2, FRAC_PI_4, 1.0),
    (FRAC_PI_2, 3.0 * FRAC_PI_4, 1.0),
    (0.0, 3.0 * FRAC_PI_4, -1.0),
];

pub fn chsh_value(c_n: f64, phi: f64, eta_a: f64) -> Result<f64> {
    chsh_for_settings(c_n, phi, eta_a, 0.0, &CHSH_SETTINGS)
}

/// `|Σ sign·E(ψ_L, ψ_R)|` over arbitrary settings.
pub fn chsh_for_settings(
    c_n: f64,
    phi: f64,
    eta_a: f64,
    dark_prob: f64,
    settings: &[(f64, f64, f64); 4],
) -> Result<f64> {
    let mut s = 0.0;
    for &(l, r, sign) in settings {
        s += sign * correlation_with_dark(c_n, phi, MeasurementSetting::new(l, r), eta_a, dark_prob)?.e;
    }
    Ok(s.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyStats {
    pub seed: u64,
    pub rounds: u64,
    pub coincidences: u64,
    /// Coincident rounds where both sides chose the same setting.
    pub key_length: u64,
    pub errors: u64,
    /// Error fraction of the sifted key; NaN without sifted bits.
    pub qber: f64,
    pub coincidence_rate: f64,
    pub sifted_fraction: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct KeyTally {
    coincidences: u64,
    sifted: u64,
    errors: u64,
}

/// Key exchange with settings drawn uniformly from `{0, π/2}` per side and
/// outcomes drawn from the exact click distribution.
pub fn ekert_simulation(c_n: f64, phi: f64, eta_a: f64, rounds: u64, seed: u64) -> Result<KeyStats> {
    ekert_simulation_with_dark(c_n, phi, eta_a, 0.0, rounds, seed)
}

pub fn ekert_simulation_with_dark(
    c_n: f64,
    phi: f64,
    eta_a: f64,
    dark_prob: f64,
    rounds: u64,
    seed: u64,
) -> Result<KeyStats> {
    if rounds == 0 {
        return Err(invalid("rounds", "need at least one round"));
    }
    let angles = [0.0, FRAC_PI_2];
    let mut samplers = Vec::with_capacity(4);
    for l in angles {
        for r in angles {
            let table = click_table(c_n, phi, MeasurementSetting::new(l, r), eta_a, dark_prob)?;
            // drop rounding residue so forbidden patterns are never drawn
            let weights: Vec<f64> = table
                .iter()
                .flatten()
                .map(|&p| if p < 1e-14 { 0.0 } else { p })
                .collect();
            samplers.push(
                WeightedIndex::new(&weights).map_err(|e| Error::Numerical(e.to_string()))?,
            );
        }
    }
    let streams = rounds.div_ceil(ROUNDS_PER_STREAM);
    let tallies: Vec<KeyTally> = (0..streams)
        .into_par_iter()
        .map(|stream| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let start = stream * ROUNDS_PER_STREAM;
            let count = ROUNDS_PER_STREAM.min(rounds - start);
            let mut t = KeyTally::default();
            for _ in 0..count {
                let (l, r) = (rng.random_range(0..2usize), rng.random_range(0..2usize));
                let k = samplers[2 * l + r].sample(&mut rng);
                let (left, right) = (SideClicks::ALL[k / 4], SideClicks::ALL[k % 4]);
                if let (Some(a), Some(b)) = (left.bit(), right.bit()) {
                    t.coincidences += 1;
                    if l == r {
                        t.sifted += 1;
                        t.errors += (a != b) as u64;
                    }
                }
            }
            t
        })
        .collect();
    let total = tallies.iter().fold(KeyTally::default(), |acc, t| KeyTally {
        coincidences: acc.coincidences + t.coincidences,
        sifted: acc.sifted + t.sifted,
        errors: acc.errors + t.errors,
    });
    let ratio = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    Ok(KeyStats {
        seed,
        rounds,
        coincidences: total.coincidences,
        key_length: total.sifted,
        errors: total.errors,
        qber: ratio(total.errors, total.sifted),
        coincidence_rate: ratio(total.coincidences, rounds),
        sifted_fraction: ratio(total.sifted, total.coincidences),
    })
}

/// Single excitation shared between `I1` and `I2`: `d0 S_{I1}† + d1 S_{I2}†`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolarizationQubit {
    pub d0: C64,
    pub d1: C64,
}

impl PolarizationQubit {
    pub fn new(d0: C64, d1: C64) -> Result<Self> {
        let norm = d0.norm_sqr() + d1.norm_sqr();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(invalid("qubit", format!("|d0|² + |d1|² = {norm}, expected 1")));
        }
        Ok(Self { d0, d1 })
    }

    fn state(&self, layout: ModeLayout) -> Result<PureState> {
        PureState::from_terms(layout, &[(&[1, 0], self.d0), (&[0, 1], self.d1)])
    }
}

/// Port of a teleportation beamsplitter that fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TeleportPort {
    /// Output port on the input-ensemble side.
    I,
    /// Output port on the link side.
    L,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PatternRecord {
    /// Ports that fired on the first and second beamsplitter.
    pub ports: (TeleportPort, TeleportPort),
    /// Whether `R2` gets a π rotation for this pattern.
    pub corrected: bool,
    pub accept_prob: f64,
    /// Probability of the pattern together with one excitation on the right.
    pub success_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Teleport {
    /// Accepted pattern and an excitation found on the right.
    pub success_prob: f64,
    /// Fidelity of the right-side state given success.
    pub output_fidelity: f64,
    /// Accepted pattern regardless of the right side.
    pub accept_prob: f64,
    pub patterns: Vec<PatternRecord>,
}

pub fn teleport(q: &PolarizationQubit, c_n: f64, eta_a: f64) -> Result<Teleport> {
    teleport_with_dark(q, c_n, eta_a, 0.0)
}

/// Modes `[I1, I2, L1, R1, L2, R2]`; beamsplitters mix `(I1, L1)` and
/// `(I2, L2)`. Success needs one click on each beamsplitter; patterns with
/// one `I` port and one `L` port get a π rotation on `R2`.
pub fn teleport_with_dark(q: &PolarizationQubit, c_n: f64, eta_a: f64, dark_prob: f64) -> Result<Teleport> {
    check_common(c_n, 0.0, eta_a, dark_prob)?;
    PolarizationQubit::new(q.d0, q.d1)?;
    let input = q.state(ModeLayout::new(2, CUTOFF)?)?.to_density();
    let pair = eme_density(c_n, 0.0, CUTOFF)?;
    let mut rho = input.tensor(&pair)?.tensor(&pair)?;
    let per_mode = eta_a.sqrt();
    for m in [0, 1, 2, 4] {
        rho = rho.apply_loss(m, per_mode)?;
    }
    let rho = rho
        .apply_beamsplitter(0, 2, FRAC_PI_4, 0.0)?
        .apply_beamsplitter(1, 4, FRAC_PI_4, 0.0)?;
    let det = DetectorModel::new(1.0, dark_prob)?;
    use DetectorOutcome::{Click, NoClick};
    let pick = |port: TeleportPort| match port {
        TeleportPort::I => (Click, NoClick),
        TeleportPort::L => (NoClick, Click),
    };

    let mut patterns = Vec::with_capacity(4);
    let mut accepted: Option<DensityOperator> = None;
    for first in [TeleportPort::I, TeleportPort::L] {
        for second in [TeleportPort::I, TeleportPort::L] {
            let (i1, l1) = pick(first);
            let (i2, l2) = pick(second);
            // remaining modes: R1, R2
            let mut out = rho
                .project_detector(4, &det, l2)?
                .project_detector(2, &det, l1)?
                .project_detector(1, &det, i2)?
                .project_detector(0, &det, i1)?;
            let corrected = first != second;
            if corrected {
                out = out.apply_phase(1, PI)?;
            }
            let accept_prob = out.trace();
            let success_prob = out.sector_weight(&[0, 1], 1)?;
            patterns.push(PatternRecord {
                ports: (first, second),
                corrected,
                accept_prob,
                success_prob,
            });
            accepted = Some(match accepted {
                None => out,
                Some(acc) => acc.add(&out)?,
            });
        }
    }
    let accepted = accepted.expect("four patterns");
    let success_prob: f64 = patterns.iter().map(|p| p.success_prob).sum();
    if success_prob < crate::fock::MIN_OUTCOME_PROBABILITY {
        return Err(Error::ImpossibleOutcome {
            probability: success_prob,
        });
    }
    let target = q.state(*accepted.layout())?;
    Ok(Teleport {
        success_prob,
        output_fidelity: accepted.fidelity(&target)? / success_prob,
        accept_prob: accepted.trace(),
        patterns,
    })
}

/// `η_a / (2 (c+1)²)`: single-click coincidence probability of two links.
pub fn coincidence_prob_analytic(c_n: f64, eta_a: f64) -> f64 {
    eta_a / (2.0 * (c_n + 1.0).powi(2))
}
