//! Trial-level sampling of the generate-and-connect waiting time.
//!
//! The analytic chain multiplies mean times, `T_i = T_{i−1}/p_i`. Here each
//! trial draws geometric generation attempts, waits for both sub-links of a
//! level, and retries the connection until it succeeds. A failed connection
//! consumes both sub-links, which are then prepared again. Connections take
//! no time of their own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::repeater::{chain, RepeaterParams};

/// Connection attempts allowed in one trial before giving up.
pub const MAX_ATTEMPTS: u64 = 100_000_000;

/// How the two sub-links of a level are timed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Prepared one after the other: times add.
    SerialRedo,
    /// Prepared concurrently: the slower one sets the time.
    #[default]
    ParallelMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub seed: u64,
    pub n_trials: u64,
    #[serde(default)]
    pub policy: Policy,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(invalid("n_trials", "need at least one trial"));
        }
        Ok(())
    }
}

/// Per-attempt heralding probability `q = η_p p_c + p_dc`, required in `(0, 1]`.
pub fn attempt_success_prob(params: &RepeaterParams) -> Result<f64> {
    params.validate()?;
    let q = params.link().click_prob();
    if !(q > 0.0 && q <= 1.0) {
        return Err(invalid("click_prob", format!("q = {q} not in (0, 1]")));
    }
    Ok(q)
}

/// Geometric attempt sampler with the pulse duration attached.
#[derive(Debug, Clone, Copy)]
pub struct GenerationSampler {
    geometric: Geometric,
    q: f64,
    pulse_time: f64,
}

impl GenerationSampler {
    pub fn new(params: &RepeaterParams) -> Result<Self> {
        let q = attempt_success_prob(params)?;
        Ok(Self {
            geometric: Geometric::new(q).map_err(|e| Error::Numerical(e.to_string()))?,
            q,
            pulse_time: params.pulse_time,
        })
    }

    /// Mean time `t_Δ/q`.
    pub fn mean(&self) -> f64 {
        self.pulse_time / self.q
    }

    /// Time until the first heralding click, `attempts · t_Δ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // the distribution counts failures before the first success
        (self.geometric.sample(rng) as f64 + 1.0) * self.pulse_time
    }
}

pub fn sample_generation_time<R: Rng + ?Sized>(params: &RepeaterParams, rng: &mut R) -> Result<f64> {
    Ok(GenerationSampler::new(params)?.sample(rng))
}

/// Everything a chain trial needs, computed once.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    generation: GenerationSampler,
    /// `p_1..p_n`.
    success: Vec<f64>,
    policy: Policy,
}

impl ChainSampler {
    pub fn new(params: &RepeaterParams, levels: u32, policy: Policy) -> Result<Self> {
        let mut p = *params;
        p.levels = levels;
        let report = chain(&p)?;
        Ok(Self {
            generation: GenerationSampler::new(&p)?,
            success: report.levels.iter().filter_map(|l| l.success_prob).collect(),
            policy,
        })
    }

    pub fn levels(&self) -> u32 {
        self.success.len() as u32
    }

    pub fn success_probs(&self) -> &[f64] {
        &self.success
    }

    /// Mean-value chain `T₀/Π p_i` with `T₀ = t_Δ/q`.
    pub fn analytic_mean(&self) -> f64 {
        self.generation.mean() / self.success.iter().product::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let mut attempts = 0u64;
        self.sample_level(self.levels(), rng, &mut attempts)
    }

    fn sample_level<R: Rng + ?Sized>(&self, level: u32, rng: &mut R, attempts: &mut u64) -> Result<f64> {
        if level == 0 {
            return Ok(self.generation.sample(rng));
        }
        let p = self.success[level as usize - 1];
        let mut elapsed = 0.0;
        loop {
            *attempts += 1;
            if *attempts > MAX_ATTEMPTS {
                return Err(Error::Numerical(format!(
                    "more than {MAX_ATTEMPTS} connection attempts (level {level}, p = {p:e}, elapsed {elapsed:e} s)"
                )));
            }
            let a = self.sample_level(level - 1, rng, attempts)?;
            let b = self.sample_level(level - 1, rng, attempts)?;
            elapsed += match self.policy {
                Policy::SerialRedo => a + b,
                Policy::ParallelMax => a.max(b),
            };
            if rng.random::<f64>() < p {
                return Ok(elapsed);
            }
        }
    }
}

/// One trial of `levels` nesting levels, with its own stream.
pub fn sample_chain_time<R: Rng + ?Sized>(
    params: &RepeaterParams,
    levels: u32,
    policy: Policy,
    rng: &mut R,
) -> Result<f64> {
    ChainSampler::new(params, levels, policy)?.sample(rng)
}

/// Generator for trial `index`: the seed picks the key, the index the stream,
/// so results do not depend on how trials are scheduled.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Every trial time in trial order.
pub fn sample_trials(params: &RepeaterParams, levels: u32, cfg: &TrialConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let sampler = ChainSampler::new(params, levels, cfg.policy)?;
    (0..cfg.n_trials)
        .into_par_iter()
        .map(|i| sampler.sample(&mut trial_rng(cfg.seed, i)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub n_trials: u64,
    pub seed: u64,
    pub policy: Policy,
    pub mean: f64,
    pub stddev: f64,
    /// Half-width `1.96 σ/√n` of the normal 95% interval.
    pub ci95: f64,
    pub analytic_tn: f64,
    /// `mean / analytic_tn`.
    pub vs_analytic_ratio: f64,
}

impl Estimate {
    fn from_samples(samples: &[f64], cfg: &TrialConfig, analytic_tn: f64) -> Self {
        let n = samples.len() as f64;
        // sequential sums in trial order keep results bit-identical
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let stddev = var.sqrt();
        Self {
            n_trials: cfg.n_trials,
            seed: cfg.seed,
            policy: cfg.policy,
            mean,
            stddev,
            ci95: 1.96 * stddev / n.sqrt(),
            analytic_tn,
            vs_analytic_ratio: mean / analytic_tn,
        }
    }
}

pub fn estimate(params: &RepeaterParams, levels: u32, cfg: &TrialConfig) -> Result<Estimate> {
    let analytic = ChainSampler::new(params, levels, cfg.policy)?.analytic_mean();
    let samples = sample_trials(params, levels, cfg)?;
    Ok(Estimate::from_samples(&samples, cfg, analytic))
}

/// [`estimate`] on a dedicated pool of `threads` workers.
pub fn estimate_with_threads(
    params: &RepeaterParams,
    levels: u32,
    cfg: &TrialConfig,
    threads: usize,
) -> Result<Estimate> {
    if threads == 0 {
        return Err(invalid("threads", "need at least one thread"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Numerical(e.to_string()))?;
    pool.install(|| estimate(params, levels, cfg))
}
