//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use dlcz::applications::{chsh_value, coincidence_prob_analytic, correlation, teleport, MeasurementSetting, PolarizationQubit};
use dlcz::ensemble::{
    integrate_master_equation, langevin_drift_numeric, langevin_mean_solution, squeezed_joint_state,
    stokes_photon_mean, EffectiveRates, GainRates,
};
use dlcz::montecarlo::{estimate, estimate_with_threads, Policy, TrialConfig};
use dlcz::repeater::{
    generate_oracle, heralded_link_state, swap_analytic, swap_oracle, swap_vacuum_coeff,
    vacuum_coeff_closed_form, EMEState, LinkInputs, RepeaterParams, SourceExpansion,
};
use dlcz::scaling::{optimize_segment, Objective};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(cond: bool, what: &str, failures: &mut Vec<String>) {
    if !cond {
        failures.push(what.to_string());
    }
}

fn finish(failures: Vec<String>, summary: String) -> Outcome {
    if failures.is_empty() {
        Outcome { pass: true, detail: summary }
    } else {
        Outcome {
            pass: false,
            detail: format!("{summary}; failed: {}", failures.join(", ")),
        }
    }
}

fn recursion_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut f = Vec::new();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let c0: f64 = rng.random_range(0.0..5.0);
        let eta: f64 = rng.random_range(0.01..=1.0);
        let i: u32 = rng.random_range(0..=20);
        let mut c = c0;
        for _ in 0..i {
            c = swap_vacuum_coeff(c, eta);
        }
        let closed = vacuum_coeff_closed_form(i, eta, c0);
        worst = worst.max((closed - c).abs() / closed.abs().max(1.0));
        let m = 2f64.powi(i as i32);
        if vacuum_coeff_closed_form(i, eta, 0.0) != (m - 1.0) * (1.0 - eta) {
            f.push(format!("c0 = 0 form differs at i = {i}"));
        }
    }
    check(worst <= 1e-12, "iteration vs closed form", &mut f);
    finish(f, format!("max scaled deviation {worst:.2e} over 200 draws"))
}

fn swap_equivalence() -> Outcome {
    let mut f = Vec::new();
    let (mut dp, mut dc): (f64, f64) = (0.0, 0.0);
    for c in [0.0, 1.0 / 3.0, 1.0, 3.0] {
        for eta in [0.4, 2.0 / 3.0, 0.9] {
            let o = swap_oracle(c, eta, 2).unwrap();
            let s = EMEState::new(c, 0.0, 0.0, 1.0).unwrap();
            let (p, out) = swap_analytic(&s, &s, eta).unwrap();
            dp = dp.max((o.success_prob - p).abs());
            dc = dc.max((o.c_out - out.vacuum_coeff).abs());
        }
    }
    check(dp < 1e-9, "success probability", &mut f);
    check(dc < 1e-9, "vacuum coefficient", &mut f);
    finish(f, format!("max |Δp| {dp:.1e}, max |Δc| {dc:.1e} over 12 grid points"))
}

fn generation_oracle() -> Outcome {
    let mut f = Vec::new();
    let p_c = 0.005;
    let link = LinkInputs {
        excitation_prob: p_c,
        channel_efficiency: 0.2,
        dark_prob: 1e-5,
        phase: 0.0,
    };
    let o = generate_oracle(&link, 4).unwrap();
    let c0 = 1e-5 / (0.2 * p_c);
    let rel = (o.c_measured - c0).abs() / c0;
    check(rel <= 2.0 * p_c, "vacuum coefficient", &mut f);
    let factor = o.delta_f / p_c;
    check((0.5..=2.0).contains(&factor), "infidelity within factor 2 of p_c", &mut f);
    // share of the infidelity carried by two or more excitations
    let (rho, _) = heralded_link_state(&link, 4, SourceExpansion::PerEnsemble(2)).unwrap();
    let vac = rho.population(&[0, 0]).unwrap();
    let multi = (1.0 - vac - rho.sector_weight(&[0, 1], 1).unwrap()) / (1.0 - vac);
    finish(
        f,
        format!(
            "c = {:.6} (rel. dev. {rel:.1e}, bound {:.0e}); ΔF = {:.5} = {factor:.2}·p_c, multi-excitation {multi:.5}",
            o.c_measured,
            2.0 * p_c,
            o.delta_f
        ),
    )
}

fn chsh() -> Outcome {
    let mut f = Vec::new();
    let reference = chsh_value(0.0, 0.0, 1.0).unwrap();
    let tsirelson = 2.0 * 2f64.sqrt();
    check((reference - tsirelson).abs() < 1e-9, "2√2", &mut f);
    let mut spread: f64 = 0.0;
    for phi in [0.0, 1.0, PI] {
        for c in [0.0, 1.0, 5.0] {
            for eta in [0.3, 1.0] {
                spread = spread.max((chsh_value(c, phi, eta).unwrap() - reference).abs());
            }
        }
    }
    check(spread < 1e-10, "invariance", &mut f);
    let mut dev: f64 = 0.0;
    for i in 0..8 {
        for j in 0..8 {
            let (l, r) = (i as f64 * PI / 4.0, j as f64 * PI / 4.0);
            let e = correlation(1.0, 0.5, MeasurementSetting::new(l, r), 0.7).unwrap().e;
            dev = dev.max((e - (l - r).cos()).abs());
        }
    }
    check(dev < 1e-9, "cosine surface", &mut f);
    finish(
        f,
        format!("S = {reference:.10}, invariance spread {spread:.1e}, max |E − cos| {dev:.1e}"),
    )
}

fn teleportation() -> Outcome {
    let mut f = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut dfid, mut dsum, mut dform): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..20 {
        let theta: f64 = rng.random_range(0.0..PI);
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        let q = PolarizationQubit::new(
            C64::new((theta / 2.0).cos(), 0.0),
            C64::from_polar((theta / 2.0).sin(), phase),
        )
        .unwrap();
        for c in [0.0, 1.0] {
            for eta in [1.0, 0.5] {
                let t = teleport(&q, c, eta).unwrap();
                dfid = dfid.max((t.output_fidelity - 1.0).abs());
                let sum: f64 = t.patterns.iter().map(|p| p.success_prob).sum();
                dsum = dsum.max((t.success_prob - sum).abs());
                dform = dform.max((t.success_prob - 0.5 * coincidence_prob_analytic(c, eta)).abs());
            }
        }
    }
    check(dfid < 1e-9, "fidelity", &mut f);
    check(dsum < 1e-9, "pattern sum", &mut f);
    check(dform < 1e-9, "η_a/[2(c+1)²] form (half, one of two right-side modes)", &mut f);
    finish(
        f,
        format!("max |F − 1| {dfid:.1e}, pattern-sum dev {dsum:.1e}, p_a/2 dev {dform:.1e}"),
    )
}

fn scaling_headline() -> Outcome {
    let mut f = Vec::new();
    let base = RepeaterParams {
        excitation_prob: 0.5,
        pulse_time: 1e-6,
        local_efficiency: 1.0,
        swap_efficiency: 2.0 / 3.0,
        app_efficiency: 1.0,
        dark_prob: 0.0,
        attenuation_length: 1.0,
        segment_length: 1.0,
        levels: 0,
        channel_phase: 0.0,
    };
    let opt = optimize_segment(&base, 0.1, 100.0, Objective::Compositional).unwrap();
    check((1e5..=3e7).contains(&opt.ratio_star), "minimized ratio in [1e5, 3e7]", &mut f);
    check((4.0..=8.0).contains(&opt.l0_star), "L0* in [4, 8]", &mut f);
    let direct = 100f64.exp();
    check((direct / 2.688e43 - 1.0).abs() < 1e-3, "e^100", &mut f);
    let advantage = direct / opt.ratio_star;
    check(advantage >= 1e30, "advantage", &mut f);
    let neighbours: Vec<String> = opt
        .scan
        .iter()
        .filter(|s| (3..=5).contains(&s.levels))
        .map(|s| format!("n={}: {:.3e}", s.levels, s.ratio))
        .collect();
    finish(
        f,
        format!(
            "min T_tot/T_con = {:.3e} at n = {}, L0 = {} L_att [{}]; e^100 = {direct:.4e}; advantage {advantage:.1e}",
            opt.ratio_star,
            opt.n_star.unwrap(),
            opt.l0_star,
            neighbours.join(", ")
        ),
    )
}

fn collective_enhancement() -> Outcome {
    let mut f = Vec::new();
    let mut parts = Vec::new();
    for snr in [10.0, 40.0, 200.0] {
        let kappa = 1.0;
        let gains = GainRates {
            collective: kappa + kappa / snr,
            noise: kappa / snr,
        };
        let grid: Vec<f64> = (1..=50).map(|k| k as f64 * 0.001).collect();
        let pops = integrate_master_equation(&gains, 3, 2, &grid).unwrap();
        let ratio = pops.growth_rate_ratio();
        let rel = (ratio / gains.expected_ratio() - 1.0).abs();
        check(rel < 0.05, &format!("ratio at R = {snr}"), &mut f);
        check(pops.max_trace_error < 1e-9, &format!("trace at R = {snr}"), &mut f);
        parts.push(format!("R={snr}: {ratio:.3} vs {:.3}", gains.expected_ratio()));
    }
    finish(f, parts.join(", "))
}

fn squeezing_solution() -> Outcome {
    let mut f = Vec::new();
    let kappa = 0.8;
    let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 0.03 / kappa).collect();
    let numeric = langevin_drift_numeric(kappa, &grid).unwrap();
    let ode_dev = grid
        .iter()
        .zip(&numeric)
        .map(|(t, y)| (y - langevin_mean_solution(kappa, *t)).abs())
        .fold(0.0, f64::max);
    check(ode_dev < 1e-8, "drift ODE", &mut f);
    let r = 0.5f64;
    let rates = EffectiveRates {
        kappa_prime: kappa,
        gamma_prime: 0.0,
        snr: f64::INFINITY,
        squeeze: r,
        excitation_prob: r.tanh().powi(2),
    };
    let rho = squeezed_joint_state(&rates, 20).unwrap();
    let (t2, c2) = (r.tanh().powi(2), r.cosh().powi(2));
    let ladder = (0..=18)
        .map(|n| (rho.population(&[n, n]).unwrap() - t2.powi(n as i32) / c2).abs())
        .fold(0.0, f64::max);
    check(ladder < 1e-8, "P(n,n)", &mut f);
    let mean_dev = (stokes_photon_mean(&rho).unwrap() - r.sinh().powi(2)).abs();
    check(mean_dev < 1e-8, "sinh² r", &mut f);
    finish(
        f,
        format!("ODE dev {ode_dev:.1e}, ladder dev {ladder:.1e}, mean dev {mean_dev:.1e}"),
    )
}

fn monte_carlo() -> Outcome {
    let mut f = Vec::new();
    let params = RepeaterParams {
        excitation_prob: 0.02,
        pulse_time: 1e-6,
        local_efficiency: 0.5,
        swap_efficiency: 2.0 / 3.0,
        app_efficiency: 1.0,
        dark_prob: 1e-4,
        attenuation_length: 1e12,
        segment_length: 1e-12,
        levels: 0,
        channel_phase: 0.0,
    };
    let q = 0.5 * 0.02 + 1e-4;
    let cfg = |n| TrialConfig {
        seed: 42,
        n_trials: n,
        policy: Policy::ParallelMax,
    };
    let g = estimate(&params, 0, &cfg(100_000)).unwrap();
    let sigma = g.stddev / (g.n_trials as f64).sqrt();
    let z = (g.mean - 1e-6 / q) / sigma;
    check(z.abs() < 3.0, "generation mean", &mut f);
    let c = estimate(&params, 2, &cfg(20_000)).unwrap();
    check((1.0..=4.0).contains(&c.vs_analytic_ratio), "n = 2 ratio", &mut f);
    let one = estimate_with_threads(&params, 2, &cfg(5_000), 1).unwrap();
    let eight = estimate_with_threads(&params, 2, &cfg(5_000), 8).unwrap();
    let identical = one.mean.to_bits() == eight.mean.to_bits()
        && one.stddev.to_bits() == eight.stddev.to_bits()
        && one.ci95.to_bits() == eight.ci95.to_bits();
    check(identical, "1 vs 8 threads", &mut f);
    finish(
        f,
        format!(
            "generation z = {z:.2}; T_2 sampled/analytic = {:.3}; thread-count reproducible = {identical}",
            c.vs_analytic_ratio
        ),
    )
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("recursion identity", Duration::from_secs(1), recursion_identity),
        ("swap oracle equals recursion", Duration::from_secs(10), swap_equivalence),
        ("generation oracle", Duration::from_secs(10), generation_oracle),
        ("CHSH and correlation surface", Duration::from_secs(30), chsh),
        ("teleportation", Duration::from_secs(30), teleportation),
        ("scaling headline", Duration::from_secs(5), scaling_headline),
        ("collective enhancement", Duration::from_secs(60), collective_enhancement),
        ("squeezing solution", Duration::from_secs(5), squeezing_solution),
        ("Monte Carlo consistency", Duration::from_secs(60), monte_carlo),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = outcome.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {} {:<30} {}  ({:.2} s of {} s) {}{}",
            k + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            outcome.detail,
            if in_time { "" } else { "; over time budget" }
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
