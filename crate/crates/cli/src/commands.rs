use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use dlcz::applications::{
    chsh_for_settings, coincidence_prob_analytic, correlation_with_dark, ekert_simulation_with_dark,
    teleport_with_dark, MeasurementSetting, PolarizationQubit, TeleportPort, CHSH_SETTINGS,
};
use dlcz::ensemble::{effective_rates, free_space_snr, integrate_master_equation, GainRates};
use dlcz::fock::C64;
use dlcz::montecarlo::{estimate, estimate_with_threads, sample_trials};
use dlcz::repeater::chain;
use dlcz::scaling::{optimize_segment, sweep, ClosedFormCase, Objective};
use serde_json::{json, Map, Value};

use crate::config::{Config, ObjectiveKind};
use crate::error::CliError;
use crate::output::{Cell, Report, Table};

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("reports are objects"),
    }
}

/// Single-row table mirroring flat scalar fields.
fn single_row(fields: &[(&str, Cell)]) -> Table {
    Table {
        columns: fields.iter().map(|(k, _)| k.to_string()).collect(),
        rows: vec![fields.iter().map(|(_, c)| c.clone()).collect()],
    }
}

pub fn rates(cfg: &Config) -> Result<Report, CliError> {
    let r = effective_rates(&cfg.ensemble)?;
    if cfg.ensemble.adiabatic_warning() {
        eprintln!(
            "warning: cavity decay only {:.3} times the coherent coupling, adiabatic elimination is marginal",
            cfg.ensemble.bad_cavity_ratio()
        );
    }
    let mut fields = vec![
        ("kappa_prime", Cell::Num(r.kappa_prime)),
        ("gamma_prime", Cell::Num(r.gamma_prime)),
        ("snr", Cell::Num(r.snr)),
        ("squeeze", Cell::Num(r.squeeze)),
        ("excitation_prob", Cell::Num(r.excitation_prob)),
        ("bad_cavity_ratio", Cell::Num(cfg.ensemble.bad_cavity_ratio())),
    ];
    let mut json = json!({
        "kappa_prime": r.kappa_prime,
        "gamma_prime": r.gamma_prime,
        "snr": r.snr,
        "squeeze": r.squeeze,
        "excitation_prob": r.excitation_prob,
        "bad_cavity_ratio": cfg.ensemble.bad_cavity_ratio(),
        "adiabatic_warning": cfg.ensemble.adiabatic_warning(),
    });
    if let Some(fs) = cfg.free_space {
        let f = free_space_snr(fs.density, fs.length, fs.wavenumber)?;
        fields.push(("optical_depth", Cell::Num(f.optical_depth)));
        fields.push(("free_space_snr", Cell::Num(f.snr)));
        json["optical_depth"] = f.optical_depth.into();
        json["free_space_snr"] = f.snr.into();
        json["dilute"] = f.dilute.into();
    }
    Ok(Report {
        json: object(json),
        table: single_row(&fields),
        notes: Vec::new(),
    })
}

pub fn dynamics(cfg: &Config) -> Result<Report, CliError> {
    let d = cfg.dynamics;
    let gains = GainRates::from_rates(&effective_rates(&cfg.ensemble)?);
    if !(gains.collective > 0.0) {
        return Err(CliError::Config("ensemble: κ′ + γ′ vanishes, nothing to integrate".into()));
    }
    let t_end = d.gain_time_end / gains.collective;
    let grid: Vec<f64> = (1..=d.steps).map(|k| t_end * k as f64 / d.steps as f64).collect();
    let pops = integrate_master_equation(&gains, d.noise_modes, d.cutoff, &grid)?;
    let ratio = pops.pointwise_ratio();
    let growth = pops.growth_rate_ratio();
    eprintln!(
        "growth ratio {:.6} vs (κ′+γ′)/γ′ = {:.6}",
        growth,
        gains.expected_ratio()
    );

    let mut table = Table::new(&["t", "pop_collective", "pop_noise_mode", "ratio"]);
    let mut rows = Vec::new();
    for k in 0..grid.len() {
        table.rows.push(vec![
            Cell::Num(grid[k]),
            Cell::Num(pops.collective[k]),
            Cell::Num(pops.per_noise_mode[k]),
            Cell::Num(ratio[k]),
        ]);
        rows.push(json!({
            "t": grid[k],
            "pop_collective": pops.collective[k],
            "pop_noise_mode": pops.per_noise_mode[k],
            "ratio": ratio[k],
        }));
    }
    Ok(Report {
        json: object(json!({
            "noise_modes": d.noise_modes,
            "cutoff": d.cutoff,
            "growth_ratio": growth,
            "expected_ratio": gains.expected_ratio(),
            "max_trace_error": pops.max_trace_error,
            "rows": rows,
        })),
        table,
        notes: vec![
            ("growth_ratio".into(), growth),
            ("expected_ratio".into(), gains.expected_ratio()),
        ],
    })
}

pub fn chain_report(cfg: &Config) -> Result<Report, CliError> {
    let report = chain(&cfg.repeater)?;
    let mut table = Table::new(&["i", "L_i", "c_i", "p_i", "dF_i", "T_i"]);
    let mut levels = Vec::new();
    for l in &report.levels {
        table.rows.push(vec![
            Cell::Int(l.level as u64),
            Cell::Num(l.length),
            Cell::Num(l.vacuum_coeff),
            l.success_prob.map_or(Cell::Empty, Cell::Num),
            Cell::Num(l.fidelity_deficit),
            Cell::Num(l.time),
        ]);
        levels.push(json!({
            "i": l.level,
            "L_i": l.length,
            "c_i": l.vacuum_coeff,
            "p_i": l.success_prob,
            "dF_i": l.fidelity_deficit,
            "T_i": l.time,
        }));
    }
    Ok(Report {
        json: object(json!({ "params": cfg.repeater, "levels": levels })),
        table,
        notes: Vec::new(),
    })
}

pub fn scaling(cfg: &Config) -> Result<Report, CliError> {
    let s = &cfg.scaling;
    let rows = sweep(&cfg.repeater, s.delta_f_target, &s.distances, s.max_levels)?;
    if rows.is_empty() {
        return Err(CliError::Infeasible("no feasible nesting level at any distance".into()));
    }
    let mut table = Table::new(&[
        "L_over_Latt",
        "L0_over_Latt",
        "n",
        "ratio_compositional",
        "ratio_closed_form",
        "ratio_direct",
    ]);
    for r in &rows {
        table.rows.push(vec![
            Cell::Num(r.l_over_latt),
            Cell::Num(r.l0_over_latt),
            Cell::Int(r.n as u64),
            Cell::Num(r.ratio_compositional),
            Cell::Num(r.ratio_closed_form),
            Cell::Num(r.ratio_direct),
        ]);
    }
    let json_rows: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "L_over_Latt": r.l_over_latt,
                "L0_over_Latt": r.l0_over_latt,
                "n": r.n,
                "ratio_compositional": r.ratio_compositional,
                "ratio_closed_form": r.ratio_closed_form,
                "ratio_direct": r.ratio_direct,
            })
        })
        .collect();
    Ok(Report {
        json: object(json!({ "delta_f_target": s.delta_f_target, "rows": json_rows })),
        table,
        notes: vec![("delta_f_target".into(), s.delta_f_target)],
    })
}

pub fn optimize(cfg: &Config) -> Result<Report, CliError> {
    let o = cfg.optimize;
    let objective = match o.objective {
        ObjectiveKind::Compositional => Objective::Compositional,
        ObjectiveKind::ClosedFormGeneral => Objective::ClosedForm(ClosedFormCase::General),
        ObjectiveKind::ClosedFormHighEta => Objective::ClosedForm(ClosedFormCase::HighEta),
        ObjectiveKind::PowerLaw => Objective::PowerLaw { m: o.m },
    };
    let opt = optimize_segment(&cfg.repeater, cfg.scaling.delta_f_target, o.distance, objective)?;
    let name = serde_json::to_value(o.objective).expect("objective serializes");
    let name = name.as_str().unwrap_or_default().to_string();
    let scan: Vec<Value> = opt
        .scan
        .iter()
        .map(|s| json!({ "n": s.levels, "L0_over_Latt": s.l0_over_latt, "ratio": s.ratio }))
        .collect();
    Ok(Report {
        json: object(json!({
            "objective": name,
            "L_over_Latt": o.distance,
            "L0_star": opt.l0_star,
            "n_star": opt.n_star,
            "ratio_star": opt.ratio_star,
            "scan": scan,
        })),
        table: single_row(&[
            ("objective", Cell::Text(name.clone())),
            ("L_over_Latt", Cell::Num(o.distance)),
            ("L0_star", Cell::Num(opt.l0_star)),
            ("n_star", opt.n_star.map_or(Cell::Empty, |n| Cell::Int(n as u64))),
            ("ratio_star", Cell::Num(opt.ratio_star)),
        ]),
        notes: Vec::new(),
    })
}

pub fn chsh(cfg: &Config) -> Result<Report, CliError> {
    let a = cfg.applications;
    let alice = [0.0, FRAC_PI_2];
    let bob = [FRAC_PI_4, 3.0 * FRAC_PI_4];
    let mut e_matrix = [[0.0; 2]; 2];
    let mut coincidence_prob = 0.0;
    for (i, &l) in alice.iter().enumerate() {
        for (j, &r) in bob.iter().enumerate() {
            let c = correlation_with_dark(a.c_n, a.phi, MeasurementSetting::new(l, r), a.eta_a, a.dark_prob)?;
            e_matrix[i][j] = c.e;
            if i == 0 && j == 0 {
                coincidence_prob = c.coincidence_prob;
            }
        }
    }
    let s = chsh_for_settings(a.c_n, a.phi, a.eta_a, a.dark_prob, &CHSH_SETTINGS)?;

    let mut table = Table::new(&["psi_L", "psi_R", "sign", "E"]);
    let mut settings = Vec::new();
    for &(l, r, sign) in &CHSH_SETTINGS {
        let i = alice.iter().position(|&x| x == l).expect("setting listed");
        let j = bob.iter().position(|&x| x == r).expect("setting listed");
        table.rows.push(vec![
            Cell::Num(l),
            Cell::Num(r),
            Cell::Num(sign),
            Cell::Num(e_matrix[i][j]),
        ]);
        settings.push(json!({ "psi_L": l, "psi_R": r, "sign": sign }));
    }
    Ok(Report {
        json: object(json!({
            "settings": settings,
            "E_matrix": e_matrix,
            "chsh": s,
            "coincidence_prob": coincidence_prob,
            "coincidence_prob_analytic": coincidence_prob_analytic(a.c_n, a.eta_a),
        })),
        table,
        notes: vec![("chsh".into(), s), ("coincidence_prob".into(), coincidence_prob)],
    })
}

pub fn teleport(cfg: &Config) -> Result<Report, CliError> {
    let a = cfg.applications;
    let half = a.qubit_theta / 2.0;
    let q = PolarizationQubit::new(
        C64::new(half.cos(), 0.0),
        C64::from_polar(half.sin(), a.qubit_phase),
    )?;
    let t = teleport_with_dark(&q, a.c_n, a.eta_a, a.dark_prob)?;
    let port = |p: TeleportPort| match p {
        TeleportPort::I => "I",
        TeleportPort::L => "L",
    };
    let mut table = Table::new(&["port_1", "port_2", "corrected", "accept_prob", "success_prob"]);
    let mut patterns = Vec::new();
    for p in &t.patterns {
        table.rows.push(vec![
            Cell::Text(port(p.ports.0).into()),
            Cell::Text(port(p.ports.1).into()),
            Cell::Text(p.corrected.to_string()),
            Cell::Num(p.accept_prob),
            Cell::Num(p.success_prob),
        ]);
        patterns.push(json!({
            "port_1": port(p.ports.0),
            "port_2": port(p.ports.1),
            "corrected": p.corrected,
            "accept_prob": p.accept_prob,
            "success_prob": p.success_prob,
        }));
    }
    let analytic = coincidence_prob_analytic(a.c_n, a.eta_a) / 2.0;
    Ok(Report {
        json: object(json!({
            "success_prob": t.success_prob,
            "success_prob_analytic": analytic,
            "accept_prob": t.accept_prob,
            "output_fidelity": t.output_fidelity,
            "patterns": patterns,
        })),
        table,
        notes: vec![
            ("success_prob".into(), t.success_prob),
            ("output_fidelity".into(), t.output_fidelity),
        ],
    })
}

pub fn ekert(cfg: &Config) -> Result<Report, CliError> {
    let a = cfg.applications;
    let k = ekert_simulation_with_dark(a.c_n, a.phi, a.eta_a, a.dark_prob, a.rounds, cfg.trials.seed)?;
    Ok(Report {
        json: object(json!({
            "key_length": k.key_length,
            "qber": k.qber,
            "seed": k.seed,
            "rounds": k.rounds,
            "coincidences": k.coincidences,
            "errors": k.errors,
            "coincidence_rate": k.coincidence_rate,
            "coincidence_prob_analytic": coincidence_prob_analytic(a.c_n, a.eta_a),
            "sifted_fraction": k.sifted_fraction,
        })),
        table: single_row(&[
            ("key_length", Cell::Int(k.key_length)),
            ("qber", Cell::Num(k.qber)),
            ("seed", Cell::Int(k.seed)),
            ("rounds", Cell::Int(k.rounds)),
            ("coincidences", Cell::Int(k.coincidences)),
            ("errors", Cell::Int(k.errors)),
            ("coincidence_rate", Cell::Num(k.coincidence_rate)),
            ("sifted_fraction", Cell::Num(k.sifted_fraction)),
        ]),
        notes: Vec::new(),
    })
}

pub fn montecarlo(cfg: &Config, threads: Option<usize>) -> Result<Report, CliError> {
    let levels = cfg.repeater.levels;
    let est = match threads {
        Some(n) => estimate_with_threads(&cfg.repeater, levels, &cfg.trials, n)?,
        None => estimate(&cfg.repeater, levels, &cfg.trials)?,
    };
    let policy = serde_json::to_value(est.policy).expect("policy serializes");
    let policy_name = policy.as_str().unwrap_or_default().to_string();
    Ok(Report {
        json: object(json!({
            "params_echo": { "repeater": cfg.repeater, "trials": cfg.trials },
            "n_trials": est.n_trials,
            "seed": est.seed,
            "policy": policy,
            "mean_s": est.mean,
            "stddev_s": est.stddev,
            "ci95_s": est.ci95,
            "analytic_Tn_s": est.analytic_tn,
            "ratio": est.vs_analytic_ratio,
        })),
        table: single_row(&[
            ("n_trials", Cell::Int(est.n_trials)),
            ("seed", Cell::Int(est.seed)),
            ("policy", Cell::Text(policy_name)),
            ("levels", Cell::Int(levels as u64)),
            ("mean_s", Cell::Num(est.mean)),
            ("stddev_s", Cell::Num(est.stddev)),
            ("ci95_s", Cell::Num(est.ci95)),
            ("analytic_Tn_s", Cell::Num(est.analytic_tn)),
            ("ratio", Cell::Num(est.vs_analytic_ratio)),
        ]),
        notes: Vec::new(),
    })
}

/// Per-trial times in trial order.
pub fn trial_table(cfg: &Config) -> Result<Report, CliError> {
    let times = sample_trials(&cfg.repeater, cfg.repeater.levels, &cfg.trials)?;
    let mut table = Table::new(&["trial", "time_s"]);
    table.rows = times
        .iter()
        .enumerate()
        .map(|(i, t)| vec![Cell::Int(i as u64), Cell::Num(*t)])
        .collect();
    Ok(Report {
        json: Map::new(),
        table,
        notes: Vec::new(),
    })
}
