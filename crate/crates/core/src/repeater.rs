//! Entanglement generation and connection between ensemble pairs.
//!
//! A link is described by an [`EMEState`]: a mixture of the two-ensemble
//! vacuum (relative weight `c`) and one shared excitation
//! `(S_L† + e^{iφ} S_R†)|vac>/√2`. Generation sets `c` from dark counts,
//! each connection maps `c → 2c + 1 − η_s`. The `*_oracle` functions rebuild
//! the same quantities by conditioning explicit Fock-space states.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{check_range, invalid, Error, Result};
use crate::fock::{DensityOperator, DetectorModel, DetectorOutcome, ModeLayout, PureState};

/// Success probabilities below this make the chain unusable.
pub const STALL_PROBABILITY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EMEState {
    pub vacuum_coeff: f64,
    pub phase: f64,
    pub fidelity_deficit: f64,
    /// In units of the attenuation length.
    pub span_length: f64,
}

impl EMEState {
    pub fn new(vacuum_coeff: f64, phase: f64, fidelity_deficit: f64, span_length: f64) -> Result<Self> {
        check_range("vacuum_coeff", vacuum_coeff, 0.0, f64::MAX)?;
        check_range("fidelity_deficit", fidelity_deficit, 0.0, 1.0)?;
        check_range("span_length", span_length, 0.0, f64::MAX)?;
        if !phase.is_finite() {
            return Err(invalid("phase", "must be finite"));
        }
        Ok(Self {
            vacuum_coeff,
            phase,
            fidelity_deficit,
            span_length,
        })
    }

    /// Weight `1/(c+1)` of the entangled component.
    pub fn entangled_fraction(&self) -> f64 {
        1.0 / (self.vacuum_coeff + 1.0)
    }

    /// Two-mode density operator `(c |00><00| + |Ψ_φ><Ψ_φ|)/(c+1)`.
    pub fn density(&self, cutoff: usize) -> Result<DensityOperator> {
        eme_density(self.vacuum_coeff, self.phase, cutoff)
    }
}

/// `(c |00><00| + |Ψ_φ><Ψ_φ|)/(c+1)` with `|Ψ_φ> = (|10> + e^{iφ}|01>)/√2`.
pub fn eme_density(c: f64, phase: f64, cutoff: usize) -> Result<DensityOperator> {
    check_range("vacuum_coeff", c, 0.0, f64::MAX)?;
    let layout = ModeLayout::new(2, cutoff)?;
    let psi = shared_excitation(layout, phase)?;
    let vac = PureState::basis(layout, &[0, 0])?.to_density();
    let w = 1.0 / (c + 1.0);
    vac.scaled(c * w).add(&psi.to_density().scaled(w))
}

/// `(|10> + e^{iφ}|01>)/√2` on a two-mode layout.
pub fn shared_excitation(layout: ModeLayout, phase: f64) -> Result<PureState> {
    PureState::from_terms(
        layout,
        &[(&[1, 0], C64::new(1.0, 0.0)), (&[0, 1], C64::from_polar(1.0, phase))],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeaterParams {
    pub excitation_prob: f64,
    /// Seconds per excitation attempt.
    pub pulse_time: f64,
    pub local_efficiency: f64,
    pub swap_efficiency: f64,
    pub app_efficiency: f64,
    pub dark_prob: f64,
    pub attenuation_length: f64,
    pub segment_length: f64,
    pub levels: u32,
    /// Channel phase difference carried by each elementary link.
    #[serde(default)]
    pub channel_phase: f64,
}

impl RepeaterParams {
    pub fn validate(&self) -> Result<()> {
        let open = |field: &'static str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("{v} not in (0, 1)")))
            }
        };
        let half_open = |field: &'static str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("{v} not in (0, 1]")))
            }
        };
        open("excitation_prob", self.excitation_prob)?;
        half_open("local_efficiency", self.local_efficiency)?;
        half_open("swap_efficiency", self.swap_efficiency)?;
        half_open("app_efficiency", self.app_efficiency)?;
        if !(self.dark_prob >= 0.0 && self.dark_prob < 1.0) {
            return Err(invalid("dark_prob", format!("{} not in [0, 1)", self.dark_prob)));
        }
        for (field, v) in [
            ("pulse_time", self.pulse_time),
            ("attenuation_length", self.attenuation_length),
            ("segment_length", self.segment_length),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(field, format!("{v} must be positive and finite")));
            }
        }
        if !self.channel_phase.is_finite() {
            return Err(invalid("channel_phase", "must be finite"));
        }
        if self.levels > 60 {
            return Err(invalid("levels", "at most 60 nesting levels"));
        }
        Ok(())
    }

    /// `η_p = η_p′ e^{−L₀/L_att}`.
    pub fn channel_efficiency(&self) -> f64 {
        self.local_efficiency * (-self.segment_length / self.attenuation_length).exp()
    }

    /// Segment length in units of `L_att`.
    pub fn segment_over_latt(&self) -> f64 {
        self.segment_length / self.attenuation_length
    }

    /// `L_n = 2ⁿ L₀` in units of `L_att`.
    pub fn total_over_latt(&self) -> f64 {
        self.segment_over_latt() * 2f64.powi(self.levels as i32)
    }

    pub fn link(&self) -> LinkInputs {
        LinkInputs {
            excitation_prob: self.excitation_prob,
            channel_efficiency: self.channel_efficiency(),
            dark_prob: self.dark_prob,
            phase: self.channel_phase,
        }
    }
}

/// What a single generation attempt sees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkInputs {
    pub excitation_prob: f64,
    /// `η_p`, already including fiber attenuation.
    pub channel_efficiency: f64,
    pub dark_prob: f64,
    pub phase: f64,
}

impl LinkInputs {
    fn validate(&self) -> Result<()> {
        check_range("excitation_prob", self.excitation_prob, 0.0, 1.0)?;
        check_range("channel_efficiency", self.channel_efficiency, 0.0, 1.0)?;
        check_range("dark_prob", self.dark_prob, 0.0, 1.0)?;
        if !self.phase.is_finite() {
            return Err(invalid("phase", "must be finite"));
        }
        Ok(())
    }

    /// Heralding probability per attempt, `η_p p_c + p_dc`.
    pub fn click_prob(&self) -> f64 {
        self.channel_efficiency * self.excitation_prob + self.dark_prob
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Generation {
    pub state: EMEState,
    pub click_prob: f64,
    /// Mean preparation time `t_Δ/(η_p p_c)`, seconds.
    pub t0: f64,
}

pub fn generate_analytic(params: &RepeaterParams) -> Result<Generation> {
    params.validate()?;
    let link = params.link();
    let signal = link.channel_efficiency * link.excitation_prob;
    if signal <= 0.0 {
        return Err(Error::Infeasible(format!(
            "heralding signal η_p p_c underflows at L₀/L_att = {}; every click would be dark",
            params.segment_over_latt()
        )));
    }
    let c = link.dark_prob / signal;
    let t0 = params.pulse_time / signal;
    if !c.is_finite() || !t0.is_finite() {
        return Err(Error::Numerical("vacuum coefficient or T₀ overflows".into()));
    }
    Ok(Generation {
        state: EMEState::new(c, link.phase, params.excitation_prob, params.segment_over_latt())?,
        click_prob: link.click_prob(),
        t0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenerationOracle {
    /// Vacuum over one-excitation population of the heralded pair.
    pub c_measured: f64,
    /// `1 − <Ψ_φ|ρ|Ψ_φ>/(1 − ρ_vac)`: infidelity of the non-vacuum part.
    pub delta_f: f64,
    /// Probability of the heralding pattern (click on one port only).
    pub click_prob: f64,
}

/// Heralded state of `(S_L, S_R)` after one click on the plus port and
/// none on the minus port, with each source truncated at two excitations.
pub fn generate_oracle(link: &LinkInputs, cutoff: usize) -> Result<GenerationOracle> {
    generate_oracle_with(link, cutoff, SourceExpansion::PerEnsemble(2))
}

/// Truncation of the two-source input state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SourceExpansion {
    /// Joint state kept to first order in `√p_c`: vacuum plus one pair
    /// from either side, never both.
    FirstOrder,
    /// Each source `Σ_{n≤k} (√p_c)^n |n,n>` independently.
    PerEnsemble(usize),
}

pub fn generate_oracle_with(
    link: &LinkInputs,
    cutoff: usize,
    expansion: SourceExpansion,
) -> Result<GenerationOracle> {
    let (rho, click_prob) = heralded_link_state(link, cutoff, expansion)?;
    let vac = rho.population(&[0, 0])?;
    let single = rho.population(&[1, 0])? + rho.population(&[0, 1])?;
    let psi = shared_excitation(*rho.layout(), link.phase)?;
    let overlap = rho.fidelity(&psi)?;
    Ok(GenerationOracle {
        c_measured: vac / single,
        delta_f: 1.0 - overlap / (1.0 - vac),
        click_prob,
    })
}

/// Normalized `(S_L, S_R)` state after heralding, with its probability.
pub fn heralded_link_state(
    link: &LinkInputs,
    cutoff: usize,
    expansion: SourceExpansion,
) -> Result<(DensityOperator, f64)> {
    link.validate()?;
    let order = match expansion {
        SourceExpansion::FirstOrder => 1,
        SourceExpansion::PerEnsemble(0) => {
            return Err(invalid("expansion", "sources need at least one excitation term"))
        }
        SourceExpansion::PerEnsemble(k) => k,
    };
    // both pulses may meet at the beamsplitter
    let needed = match expansion {
        SourceExpansion::FirstOrder => 1,
        SourceExpansion::PerEnsemble(_) => 2 * order,
    };
    if cutoff < needed {
        return Err(Error::Truncation(format!(
            "cutoff {cutoff} below {needed} photons reaching the beamsplitter"
        )));
    }
    let amp = link.excitation_prob.sqrt();
    // modes: S_L, a_L, S_R, a_R
    let mut rho = match expansion {
        SourceExpansion::FirstOrder => {
            let layout = ModeLayout::new(4, cutoff)?;
            let a = C64::new(amp, 0.0);
            PureState::from_terms(
                layout,
                &[
                    (&[0, 0, 0, 0], C64::new(1.0, 0.0)),
                    (&[1, 1, 0, 0], a),
                    (&[0, 0, 1, 1], a),
                ],
            )?
            .to_density()
        }
        SourceExpansion::PerEnsemble(_) => {
            let occ: Vec<[usize; 2]> = (0..=order).map(|n| [n, n]).collect();
            let terms: Vec<(&[usize], C64)> = occ
                .iter()
                .enumerate()
                .map(|(n, o)| (&o[..], C64::new(amp.powi(n as i32), 0.0)))
                .collect();
            let source = PureState::from_terms(ModeLayout::new(2, cutoff)?, &terms)?.to_density();
            source.tensor(&source)?
        }
    };
    rho = rho.apply_loss(1, link.channel_efficiency)?;
    rho = rho.apply_loss(3, link.channel_efficiency)?;
    rho = rho.apply_phase(3, link.phase)?;
    rho = rho.apply_beamsplitter(1, 3, std::f64::consts::FRAC_PI_4, 0.0)?;
    let det = DetectorModel::new(1.0, link.dark_prob)?;
    // plus port is mode 3; after removing it the minus port is mode 1
    let rho = rho.project_detector(3, &det, DetectorOutcome::Click)?;
    let rho = rho.project_detector(1, &det, DetectorOutcome::NoClick)?;
    let p = rho.trace();
    if p < crate::fock::MIN_OUTCOME_PROBABILITY {
        return Err(Error::ImpossibleOutcome { probability: p });
    }
    Ok((rho.scaled(1.0 / p), p))
}

fn check_swap_efficiency(eta_s: f64) -> Result<()> {
    if eta_s > 0.0 && eta_s <= 1.0 {
        Ok(())
    } else {
        Err(invalid("swap_efficiency", format!("{eta_s} not in (0, 1]")))
    }
}

/// Connection success probability `η_s (1 − η_s/(2(c+1)))/(c+1)`.
pub fn swap_success_prob(c: f64, eta_s: f64) -> f64 {
    eta_s * (1.0 - eta_s / (2.0 * (c + 1.0))) / (c + 1.0)
}

/// Vacuum coefficient after a connection, `2c + 1 − η_s`.
pub fn swap_vacuum_coeff(c: f64, eta_s: f64) -> f64 {
    2.0 * c + 1.0 - eta_s
}

/// Connects two equal-`c` links. Phases and spans add; the fidelity
/// deficits add to first order.
pub fn swap_analytic(left: &EMEState, right: &EMEState, eta_s: f64) -> Result<(f64, EMEState)> {
    check_swap_efficiency(eta_s)?;
    let scale = left.vacuum_coeff.abs().max(right.vacuum_coeff.abs()).max(1.0);
    if (left.vacuum_coeff - right.vacuum_coeff).abs() > 1e-12 * scale {
        return Err(invalid(
            "vacuum_coeff",
            format!(
                "connection recursion needs equal coefficients, got {} and {}; use the oracle",
                left.vacuum_coeff, right.vacuum_coeff
            ),
        ));
    }
    let c = left.vacuum_coeff;
    let out = EMEState {
        vacuum_coeff: swap_vacuum_coeff(c, eta_s),
        phase: left.phase + right.phase,
        fidelity_deficit: (left.fidelity_deficit + right.fidelity_deficit).min(1.0),
        span_length: left.span_length + right.span_length,
    };
    Ok((swap_success_prob(c, eta_s), out))
}

/// How the two connection detectors register photons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SwapDetection {
    /// Success when exactly one photon is registered in total.
    Resolving,
    /// Success when exactly one detector fires; two photons bunched into
    /// one port pass.
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwapOracle {
    pub success_prob: f64,
    pub c_out: f64,
    /// Largest `|ρ_xy|` between different excitation-number sectors.
    pub sector_coherence: f64,
    /// Population with two excitations on `(L, R)`.
    pub two_excitation_weight: f64,
    /// `|P(10) − P(01)|`.
    pub single_imbalance: f64,
}

/// Connection oracle for two links with vacuum coefficient `c`.
pub fn swap_oracle(c: f64, eta_s: f64, cutoff: usize) -> Result<SwapOracle> {
    swap_oracle_general(c, c, eta_s, cutoff, SwapDetection::Resolving)
}

/// Connection of `(L, I₁)` and `(I₂, R)`: retrieval loss `η_s` on the inner
/// modes, a 50/50 beamsplitter, then post-selection per `detection`.
pub fn swap_oracle_general(
    c_left: f64,
    c_right: f64,
    eta_s: f64,
    cutoff: usize,
    detection: SwapDetection,
) -> Result<SwapOracle> {
    let branches = swap_branches(c_left, 0.0, c_right, 0.0, eta_s, cutoff, detection)?;
    let mut total: Option<DensityOperator> = None;
    for b in branches {
        total = Some(match total {
            None => b,
            Some(t) => t.add(&b)?,
        });
    }
    let rho = total.expect("two herald branches");
    let p = rho.trace();
    if p < crate::fock::MIN_OUTCOME_PROBABILITY {
        return Err(Error::ImpossibleOutcome { probability: p });
    }
    let rho = rho.scaled(1.0 / p);
    let layout = *rho.layout();
    let vac = rho.population(&[0, 0])?;
    let (p10, p01) = (rho.population(&[1, 0])?, rho.population(&[0, 1])?);
    let mut coherence: f64 = 0.0;
    for x in 0..rho.dim() {
        let nx: usize = layout.occupations(x).iter().sum();
        for y in 0..rho.dim() {
            let ny: usize = layout.occupations(y).iter().sum();
            if nx != ny {
                coherence = coherence.max(rho.get(x, y).norm());
            }
        }
    }
    Ok(SwapOracle {
        success_prob: p,
        c_out: vac / (p10 + p01),
        sector_coherence: coherence,
        two_excitation_weight: rho.sector_weight(&[0, 1], 2)?,
        single_imbalance: (p10 - p01).abs(),
    })
}

/// Normalized `(L, R)` state heralded on the plus port of the connection
/// beamsplitter, where no phase correction is needed.
pub fn swap_oracle_plus_port(
    left: &EMEState,
    right: &EMEState,
    eta_s: f64,
    cutoff: usize,
) -> Result<DensityOperator> {
    let branches = swap_branches(
        left.vacuum_coeff,
        left.phase,
        right.vacuum_coeff,
        right.phase,
        eta_s,
        cutoff,
        SwapDetection::Resolving,
    )?;
    let plus = &branches[0];
    plus.normalized()
}

/// Unnormalized `(L, R)` states for the plus-port and minus-port heralds.
fn swap_branches(
    c_left: f64,
    phi_left: f64,
    c_right: f64,
    phi_right: f64,
    eta_s: f64,
    cutoff: usize,
    detection: SwapDetection,
) -> Result<[DensityOperator; 2]> {
    check_swap_efficiency(eta_s)?;
    if cutoff < 2 {
        return Err(Error::Truncation(
            "connection needs cutoff >= 2 to hold two bunched photons".into(),
        ));
    }
    // modes: L, I1, I2, R
    let rho = eme_density(c_left, phi_left, cutoff)?.tensor(&eme_density(c_right, phi_right, cutoff)?)?;
    let rho = rho
        .apply_loss(1, eta_s)?
        .apply_loss(2, eta_s)?
        .apply_beamsplitter(1, 2, std::f64::consts::FRAC_PI_4, 0.0)?;
    let herald = |fire: usize, silent: usize| -> Result<DensityOperator> {
        // measure the higher index first so the other keeps its position
        let (hi, lo) = (fire.max(silent), fire.min(silent));
        let outcome = |m: usize| match (detection, m == fire) {
            (SwapDetection::Resolving, true) => DetectorOutcome::Count(1),
            (SwapDetection::Resolving, false) => DetectorOutcome::Count(0),
            (SwapDetection::Threshold, true) => DetectorOutcome::Click,
            (SwapDetection::Threshold, false) => DetectorOutcome::NoClick,
        };
        let det = match detection {
            SwapDetection::Resolving => DetectorModel::ideal().resolving(),
            SwapDetection::Threshold => DetectorModel::ideal(),
        };
        rho.project_detector(hi, &det, outcome(hi))?
            .project_detector(lo, &det, outcome(lo))
    };
    Ok([herald(2, 1)?, herald(1, 2)?])
}

/// `c_i = 2^i c₀ + (2^i − 1)(1 − η_s)`, the solution of `c_i = 2c_{i−1} + 1 − η_s`.
pub fn vacuum_coeff_closed_form(level: u32, eta_s: f64, c0: f64) -> f64 {
    let m = 2f64.powi(level as i32);
    m * c0 + (m - 1.0) * (1.0 - eta_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelReport {
    pub level: u32,
    /// Span in units of `L_att`.
    pub length: f64,
    pub vacuum_coeff: f64,
    /// Connection success probability; absent at level 0.
    pub success_prob: Option<f64>,
    pub fidelity_deficit: f64,
    /// Mean time to hold a level-`i` link, seconds.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub levels: Vec<LevelReport>,
}

impl ChainReport {
    pub fn last(&self) -> &LevelReport {
        self.levels.last().expect("chain has at least level 0")
    }

    /// `Π p_i` over the connection levels.
    pub fn success_product(&self) -> f64 {
        self.levels.iter().filter_map(|l| l.success_prob).product()
    }
}

/// Iterates generation and `levels` connections with `T_i = T_{i−1}/p_i`.
pub fn chain(params: &RepeaterParams) -> Result<ChainReport> {
    let generation = generate_analytic(params)?;
    let mut state = generation.state;
    let mut levels = vec![LevelReport {
        level: 0,
        length: state.span_length,
        vacuum_coeff: state.vacuum_coeff,
        success_prob: None,
        fidelity_deficit: state.fidelity_deficit,
        time: generation.t0,
    }];
    let mut time = generation.t0;
    for level in 1..=params.levels {
        let (p, next) = swap_analytic(&state, &state, params.swap_efficiency)?;
        if !(p >= STALL_PROBABILITY) {
            return Err(Error::ChainStall {
                level: level as usize,
                probability: p,
            });
        }
        time /= p;
        state = next;
        levels.push(LevelReport {
            level,
            length: state.span_length,
            vacuum_coeff: state.vacuum_coeff,
            success_prob: Some(p),
            fidelity_deficit: state.fidelity_deficit,
            time,
        });
    }
    Ok(ChainReport { levels })
}
