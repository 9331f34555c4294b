//! Communication-time scaling of the nested repeater.
//!
//! The normative time is built from the chain: `T₀ = t_Δ/(η_p p_c)`,
//! `T_n = T₀/Π p_i`, `T_tot = T_n/p_a`. A target infidelity `ΔF_T` fixes
//! `p_c = ΔF_T/2ⁿ`, and `T_con = 2t_Δ/(η_p′ η_a ΔF_T)` removes the
//! distance-independent constants, so `T_tot/T_con` depends only on the
//! geometry and the efficiencies.

use serde::Serialize;

use crate::error::{check_range, invalid, Error, Result};
use crate::repeater::{chain, ChainReport, RepeaterParams};

/// Deepest nesting considered by the integer scan.
pub const MAX_SCAN_LEVELS: u32 = 40;

/// Noise contributions below this fraction of the target count as negligible.
pub const NEGLIGIBLE_BUDGET_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FidelityBudget {
    pub delta_f_target: f64,
    /// Dark counts at every connection add linearly.
    pub delta_f_dark: f64,
    /// Random phase asymmetries add like a random walk.
    pub delta_f_asym: f64,
    pub negligible: bool,
}

/// Budget for `segments = L_n/L₀` elementary links.
pub fn fidelity_budget(
    segments: f64,
    per_connection_dark: f64,
    asym: f64,
    delta_f_target: f64,
) -> Result<FidelityBudget> {
    check_range("segments", segments, 0.0, f64::MAX)?;
    check_range("per_connection_dark", per_connection_dark, 0.0, f64::MAX)?;
    check_range("asym", asym, 0.0, f64::MAX)?;
    check_range("delta_f_target", delta_f_target, 0.0, 1.0)?;
    let delta_f_dark = segments * per_connection_dark;
    let delta_f_asym = segments.sqrt() * asym;
    Ok(FidelityBudget {
        delta_f_target,
        delta_f_dark,
        delta_f_asym,
        negligible: delta_f_dark + delta_f_asym <= NEGLIGIBLE_BUDGET_FRACTION * delta_f_target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub l_over_latt: f64,
    pub l0_over_latt: f64,
    pub levels: u32,
    pub excitation_prob: f64,
    pub t0: f64,
    pub t_n: f64,
    pub app_success_prob: f64,
    pub t_tot: f64,
    pub t_con: f64,
    /// `T_tot / T_con`.
    pub ratio: f64,
    /// `2 (L/L₀)² / (η_p p_a ΔF_T Π p_i)`, in units of `t_Δ`.
    pub printed_form_time: f64,
    /// `printed_form_time · t_Δ / T_con`.
    pub printed_form_ratio: f64,
    /// Direct transmission, `e^{L/L_att}`.
    pub baseline_direct_ratio: f64,
    pub chain: ChainReport,
    pub fidelity_budget: FidelityBudget,
}

/// Compositional time for `params.levels` nesting levels, with the
/// excitation probability set from the target infidelity. The budget uses
/// `dark_prob` as the per-connection dark-count infidelity and no asymmetry.
pub fn total_time(params: &RepeaterParams, delta_f_target: f64) -> Result<ScalingReport> {
    if !(delta_f_target > 0.0 && delta_f_target <= 1.0) {
        return Err(invalid("delta_f_target", format!("{delta_f_target} not in (0, 1]")));
    }
    let segments = 2f64.powi(params.levels as i32);
    let p_c = delta_f_target / segments;
    if p_c >= 1.0 {
        return Err(Error::Infeasible(format!(
            "excitation probability ΔF_T L₀/L = {p_c} must stay below 1"
        )));
    }
    let mut p = *params;
    p.excitation_prob = p_c;
    let chain = chain(&p)?;
    let t0 = chain.levels[0].time;
    let t_n = chain.last().time;
    let c_n = chain.last().vacuum_coeff;
    let app_success_prob = p.app_efficiency / (2.0 * (c_n + 1.0).powi(2));
    let t_tot = t_n / app_success_prob;
    let t_con = 2.0 * p.pulse_time / (p.local_efficiency * p.app_efficiency * delta_f_target);
    let printed_form_time = 2.0 * segments * segments
        / (p.channel_efficiency() * app_success_prob * delta_f_target * chain.success_product());
    let l_over_latt = p.total_over_latt();
    Ok(ScalingReport {
        l_over_latt,
        l0_over_latt: p.segment_over_latt(),
        levels: p.levels,
        excitation_prob: p_c,
        t0,
        t_n,
        app_success_prob,
        t_tot,
        t_con,
        ratio: t_tot / t_con,
        printed_form_time,
        printed_form_ratio: printed_form_time * p.pulse_time / t_con,
        baseline_direct_ratio: l_over_latt.exp(),
        fidelity_budget: fidelity_budget(segments, p.dark_prob, 0.0, delta_f_target)?,
        chain,
    })
}

/// Limiting forms of `T_tot/T_con`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClosedFormCase {
    /// `η_s → 1`: `(L/L₀)² e^{L₀/L_att}`.
    HighEta,
    /// `(L/L₀)^{[log₂(L/L₀)+1]/2 + log₂(1/η_s − 1) + 2} e^{L₀/L_att}`.
    General,
}

/// Closed-form `T_tot/T_con` for a continuous `L/L₀`.
pub fn closed_form_ratio(
    l_over_l0: f64,
    l0_over_latt: f64,
    eta_s: f64,
    case: ClosedFormCase,
) -> Result<f64> {
    if !(l_over_l0 > 1.0) || !l_over_l0.is_finite() {
        return Err(invalid("l_over_l0", format!("{l_over_l0} must exceed 1")));
    }
    check_range("l0_over_latt", l0_over_latt, 0.0, f64::MAX)?;
    let exponent = match case {
        ClosedFormCase::HighEta => 2.0,
        ClosedFormCase::General => {
            if !(eta_s > 0.0 && eta_s < 1.0) {
                return Err(invalid(
                    "swap_efficiency",
                    format!("{eta_s} not in (0, 1); use the high-efficiency form at η_s = 1"),
                ));
            }
            (l_over_l0.log2() + 1.0) / 2.0 + (1.0 / eta_s - 1.0).log2() + 2.0
        }
    };
    Ok(l_over_l0.powf(exponent) * l0_over_latt.exp())
}

/// Closed-form ratio for the geometry of `params` (`L/L₀ = 2ⁿ`).
pub fn closed_form_time(params: &RepeaterParams, case: ClosedFormCase) -> Result<f64> {
    params.validate()?;
    closed_form_ratio(
        2f64.powi(params.levels as i32),
        params.segment_over_latt(),
        params.swap_efficiency,
        case,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Objective {
    Compositional,
    ClosedForm(ClosedFormCase),
    /// Surrogate `(L/L₀)^m e^{L₀/L_att}` over continuous `L₀`.
    PowerLaw { m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint {
    pub levels: u32,
    pub l0_over_latt: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentOptimum {
    pub l0_star: f64,
    /// Absent for the continuous surrogate.
    pub n_star: Option<u32>,
    pub ratio_star: f64,
    pub scan: Vec<ScanPoint>,
}

/// Minimizes `T_tot/T_con` at total distance `l_over_latt`. The integer
/// objectives scan `L₀ = L/2ⁿ`, skipping levels whose chain is infeasible.
pub fn optimize_segment(
    base: &RepeaterParams,
    delta_f_target: f64,
    l_over_latt: f64,
    objective: Objective,
) -> Result<SegmentOptimum> {
    if !(l_over_latt > 0.0) || !l_over_latt.is_finite() {
        return Err(invalid("l_over_latt", "must be positive and finite"));
    }
    if let Objective::PowerLaw { m } = objective {
        let l0 = power_law_optimum(m, l_over_latt)?;
        return Ok(SegmentOptimum {
            l0_star: l0,
            n_star: None,
            ratio_star: (l_over_latt / l0).powf(m) * l0.exp(),
            scan: Vec::new(),
        });
    }
    let mut scan = Vec::new();
    for n in 0..=MAX_SCAN_LEVELS {
        let l0 = l_over_latt / 2f64.powi(n as i32);
        let mut p = *base;
        p.levels = n;
        p.segment_length = l0 * base.attenuation_length;
        let ratio = match objective {
            Objective::Compositional => total_time(&p, delta_f_target).map(|r| r.ratio),
            Objective::ClosedForm(case) if n > 0 => {
                closed_form_ratio(2f64.powi(n as i32), l0, base.swap_efficiency, case)
            }
            _ => continue,
        };
        match ratio {
            Ok(r) if r.is_finite() => scan.push(ScanPoint {
                levels: n,
                l0_over_latt: l0,
                ratio: r,
            }),
            Ok(_) => {}
            Err(Error::Infeasible(_) | Error::ChainStall { .. } | Error::Numerical(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let best = scan
        .iter()
        .min_by(|a, b| a.ratio.total_cmp(&b.ratio))
        .copied()
        .ok_or_else(|| Error::Infeasible("no nesting level gives a finite time".into()))?;
    Ok(SegmentOptimum {
        l0_star: best.l0_over_latt,
        n_star: Some(best.levels),
        ratio_star: best.ratio,
        scan,
    })
}

/// Minimizes `m ln(L/L₀) + L₀` over `L₀ ∈ (0, L]` by bisection on its
/// derivative `1 − m/L₀`, which is increasing; a flat minimum would cap a
/// value-based search near `√ε` relative accuracy.
pub fn power_law_optimum(m: f64, l_over_latt: f64) -> Result<f64> {
    if !(m > 0.0) || !m.is_finite() {
        return Err(invalid("m", "exponent must be positive"));
    }
    let slope = |l0: f64| 1.0 - m / l0;
    if slope(l_over_latt) <= 0.0 {
        return Ok(l_over_latt);
    }
    let (mut lo, mut hi) = (0.0f64, l_over_latt);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub l_over_latt: f64,
    pub l0_over_latt: f64,
    pub n: u32,
    pub ratio_compositional: f64,
    /// General closed form, or the high-efficiency one when `η_s = 1`.
    pub ratio_closed_form: f64,
    pub ratio_direct: f64,
}

/// One row per distance and feasible nesting level `1..=max_levels`.
pub fn sweep(
    base: &RepeaterParams,
    delta_f_target: f64,
    distances: &[f64],
    max_levels: u32,
) -> Result<Vec<SweepRow>> {
    let case = if base.swap_efficiency < 1.0 {
        ClosedFormCase::General
    } else {
        ClosedFormCase::HighEta
    };
    let mut rows = Vec::new();
    for &l in distances {
        for n in 1..=max_levels {
            let l0 = l / 2f64.powi(n as i32);
            let mut p = *base;
            p.levels = n;
            p.segment_length = l0 * base.attenuation_length;
            let comp = match total_time(&p, delta_f_target) {
                Ok(r) => r.ratio,
                Err(Error::Infeasible(_) | Error::ChainStall { .. }) => continue,
                Err(e) => return Err(e),
            };
            rows.push(SweepRow {
                l_over_latt: l,
                l0_over_latt: l0,
                n,
                ratio_compositional: comp,
                ratio_closed_form: closed_form_ratio(2f64.powi(n as i32), l0, base.swap_efficiency, case)?,
                ratio_direct: l.exp(),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(levels: u32, l0: f64, eta_s: f64) -> RepeaterParams {
        RepeaterParams {
            excitation_prob: 0.5,
            pulse_time: 1e-6,
            local_efficiency: 0.9,
            swap_efficiency: eta_s,
            app_efficiency: 0.9,
            dark_prob: 0.0,
            attenuation_length: 1.0,
            segment_length: l0,
            levels,
            channel_phase: 0.0,
        }
    }

    #[test]
    fn high_eta_closed_form_example() {
        let r = closed_form_time(&base(4, 1.0, 1.0), ClosedFormCase::HighEta).unwrap();
        assert!((r - 256.0 * std::f64::consts::E).abs() < 1e-9);
        assert!(closed_form_time(&base(4, 1.0, 1.0), ClosedFormCase::General).is_err());
    }

    #[test]
    fn general_form_exponent_drop() {
        let g = closed_form_ratio(16.0, 1.0, 2.0 / 3.0, ClosedFormCase::General).unwrap();
        // [log₂16 + 1]/2 − 1 + 2 = 3.5
        assert!((g - 16f64.powf(3.5) * 1f64.exp()).abs() < 1e-6 * g);
    }

    #[test]
    fn rejects_short_distance() {
        assert!(closed_form_ratio(1.0, 1.0, 0.5, ClosedFormCase::HighEta).is_err());
    }

    #[test]
    fn budget_examples() {
        let b = fidelity_budget(1000.0, 1e-5, 0.0, 0.1).unwrap();
        assert!((b.delta_f_dark - 1e-2).abs() < 1e-15);
        let b = fidelity_budget(100.0, 0.0, 1e-4, 0.1).unwrap();
        assert!((b.delta_f_asym - 1e-3).abs() < 1e-15);
        assert!(b.negligible);
        let b = fidelity_budget(100.0, 0.0, 0.0, 0.1).unwrap();
        assert_eq!((b.delta_f_dark, b.delta_f_asym), (0.0, 0.0));
    }

    #[test]
    fn infeasible_budget() {
        let p = base(0, 1.0, 1.0);
        assert!(matches!(total_time(&p, 1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn power_law_stationary_point() {
        assert!((power_law_optimum(2.0, 100.0).unwrap() - 2.0).abs() < 1e-9);
        assert!((power_law_optimum(5.7, 100.0).unwrap() - 5.7).abs() < 1e-9);
    }
}
