//! Generative simulators for the four models, and parameter/model recovery
//! studies built on them.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Condition, DataError, Dataset, Trial};
use crate::models::{
    simulate_effect_summary, EffectSummary, Family, ModelError, ModelSpec, Posterior, PriorConfig, RandomEffects,
};
use crate::psis_loo::{compare, elpd_loo, ComparisonResult, LooError, LooResult};
use crate::sampler::{rhat_of_chains, sample, PosteriorDraws, SamplerConfig, SamplerError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid design: {0}")]
    Design(String),
    #[error("invalid true parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Loo(#[from] LooError),
}

/// Named model-space values for one family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub family: Family,
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
}

impl TrueParams {
    pub fn new(family: Family, values: &[(&str, f64)]) -> Result<Self, SimError> {
        let p = Self {
            family,
            values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Plausible millisecond-scale values: a location near 400 ms and
    /// modest variance components.
    pub fn default_for(family: Family) -> Self {
        let values: &[(&str, f64)] = match family {
            Family::Standard => &[
                ("beta_1", 6.0),
                ("beta_2", -0.03),
                ("sigma_e", 0.4),
                ("sigma_u", 0.2),
                ("sigma_w", 0.1),
            ],
            Family::HomogeneousOverwriting => &[
                ("beta", 6.0),
                ("delta", 0.3),
                ("prob_hi", 0.35),
                ("prob_lo", 0.15),
                ("sigma_e", 0.35),
                ("sigma_u", 0.2),
                ("sigma_w", 0.1),
            ],
            Family::HeterogeneousOverwriting => &[
                ("beta", 6.0),
                ("delta", 0.3),
                ("prob_hi", 0.35),
                ("prob_lo", 0.15),
                ("sigma_e", 0.35),
                ("sigmap_e", 0.6),
                ("sigma_u", 0.2),
                ("sigma_w", 0.1),
            ],
            Family::Percolation => &[
                ("beta", 6.0),
                ("gamma", -0.2),
                ("prob_perc", 0.3),
                ("sigma_e", 0.35),
                ("sigma_u", 0.2),
                ("sigma_w", 0.1),
            ],
        };
        Self::new(family, values).expect("defaults are valid")
    }

    pub fn get(&self, name: &str) -> f64 {
        self.values[name]
    }

    /// Checks names and supports. Truths may sit on a boundary the fitted
    /// model excludes (a probability of 0, `delta = 0`, a zero intercept
    /// SD) so that degenerate cases can be simulated.
    pub fn validate(&self) -> Result<(), SimError> {
        let params = self.family.scalar_params();
        for p in params {
            let v = *self
                .values
                .get(p.name)
                .ok_or_else(|| SimError::Params(format!("{} model needs a value for {}", self.family, p.name)))?;
            let ok = v.is_finite()
                && match p.name {
                    "delta" => v >= 0.0,
                    "gamma" => v < 0.0,
                    "prob_hi" | "prob_lo" | "prob_perc" => (0.0..=1.0).contains(&v),
                    "sigma_e" | "sigmap_e" => v > 0.0,
                    "sigma_u" | "sigma_w" => v >= 0.0,
                    _ => true,
                };
            if !ok {
                return Err(SimError::Params(format!("{} = {v} is outside its support", p.name)));
            }
        }
        if let Some(extra) = self.values.keys().find(|k| self.family.scalar_index(k).is_none()) {
            return Err(SimError::Params(format!(
                "{extra} is not a parameter of the {} model",
                self.family
            )));
        }
        Ok(())
    }

    /// Truth for a reported name, including `diffprob`.
    pub fn reported(&self, name: &str) -> Option<f64> {
        match name {
            "diffprob" if self.family.is_overwriting() => Some(self.values["prob_hi"] - self.values["prob_lo"]),
            _ => self.values.get(name).copied(),
        }
    }
}

/// Fully crossed design: every subject reads every item `reps` times, in
/// one condition fixed by a Latin-square split (`+1` when `i + j` is even).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Design {
    pub n_subjects: usize,
    pub n_items: usize,
    pub reps: usize,
}

impl Default for Design {
    fn default() -> Self {
        Self {
            n_subjects: 40,
            n_items: 24,
            reps: 1,
        }
    }
}

impl Design {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_subjects == 0 || self.n_items == 0 || self.reps == 0 {
            return Err(SimError::Design(
                "subjects, items and repetitions must all be at least 1".into(),
            ));
        }
        if self.n_subjects * self.n_items < 2 {
            return Err(SimError::Design(
                "a single subject-item cell cannot show both conditions".into(),
            ));
        }
        Ok(())
    }

    pub fn condition(&self, subject: usize, item: usize) -> Condition {
        if (subject + item).is_multiple_of(2) {
            Condition::Attraction
        } else {
            Condition::NoAttraction
        }
    }

    pub fn n_trials(&self) -> usize {
        self.n_subjects * self.n_items * self.reps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dataset: Dataset,
    /// Per trial: whether the shifted mixture component generated it.
    pub latent: Vec<bool>,
    pub random_effects: RandomEffects,
}

/// SplitMix64 step; derives independent seeds from a root seed.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one dataset from the model `p.family` with true values `p`.
pub fn simulate(p: &TrueParams, design: &Design, seed: u64) -> Result<Simulation, SimError> {
    p.validate()?;
    design.validate()?;
    let family = p.family;
    let roles = family.roles();
    let params = family.scalar_params();
    let v = |k: usize| p.values[params[k].name];
    let location = v(roles.location);
    let effect = roles.effect.map_or(0.0, v);
    let shift = roles.shift.map_or(0.0, v);
    let sigma_e = v(roles.sigma_e);
    let sigma_slow = roles.sigma_slow.map_or(sigma_e, v);
    let prob_attraction = roles.prob_attraction.map(v);
    let prob_no_attraction = roles.prob_no_attraction.map(v);
    let (sigma_u, sigma_w) = (v(roles.sigma_u), v(roles.sigma_w));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let u: Vec<f64> = (0..design.n_subjects).map(|_| sigma_u * normal(&mut rng)).collect();
    let w: Vec<f64> = (0..design.n_items).map(|_| sigma_w * normal(&mut rng)).collect();

    let mut trials = Vec::with_capacity(design.n_trials());
    let mut latent = Vec::with_capacity(design.n_trials());
    for i in 0..design.n_subjects {
        for j in 0..design.n_items {
            let condition = design.condition(i, j);
            let mu = location + effect * condition.code() + u[i] + w[j];
            let prob = match condition {
                Condition::Attraction => prob_attraction,
                Condition::NoAttraction => prob_no_attraction,
            };
            for _ in 0..design.reps {
                let slow = prob.is_some_and(|pr| rng.random::<f64>() < pr);
                let z = normal(&mut rng);
                let log_rt = if slow {
                    mu + shift + sigma_slow * z
                } else {
                    mu + sigma_e * z
                };
                trials.push(Trial {
                    subject: i,
                    item: j,
                    condition,
                    rt: log_rt.exp(),
                });
                latent.push(slow);
            }
        }
    }
    let subject_labels = (1..=design.n_subjects).map(|i| format!("s{i}")).collect();
    let item_labels = (1..=design.n_items).map(|j| format!("i{j}")).collect();
    Ok(Simulation {
        dataset: Dataset::with_labels(trials, subject_labels, item_labels)?,
        latent,
        random_effects: RandomEffects { u, w },
    })
}

/// Fits `family` to `data`.
pub fn fit(
    family: Family,
    priors: PriorConfig,
    data: &Dataset,
    cfg: &SamplerConfig,
) -> Result<(ModelSpec, PosteriorDraws), SimError> {
    let spec = ModelSpec::for_dataset(family, priors, data)?;
    let posterior = Posterior::new(spec.clone(), data)?;
    let draws = sample(&posterior, cfg)?;
    Ok((spec, draws))
}

/// Largest split R-hat over every recorded parameter; `None` for a single
/// chain.
pub fn max_rhat(draws: &PosteriorDraws) -> Option<f64> {
    (0..draws.n_params())
        .filter_map(|k| rhat_of_chains(&draws.chains(k)).ok())
        .reduce(f64::max)
}

/// R-hat above which a replication counts as not converged.
pub const RHAT_LIMIT: f64 = 1.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub data_seed: u64,
    pub sampler_seed: u64,
    pub max_rhat: Option<f64>,
    pub divergences: usize,
    pub converged: bool,
    pub summary: EffectSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRecovery {
    pub name: String,
    pub truth: f64,
    /// Converged replications whose 95% interval covers the truth.
    pub covered: usize,
    pub used: usize,
    pub coverage: f64,
    pub mean_estimate: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub truth: TrueParams,
    pub design: Design,
    pub sampler: SamplerConfig,
    pub n_replications: usize,
    pub n_excluded: usize,
    pub parameters: Vec<ParameterRecovery>,
    pub replications: Vec<ReplicationRecord>,
}

impl RecoveryReport {
    pub fn parameter(&self, name: &str) -> Option<&ParameterRecovery> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Simulate-then-fit `n_replications` times, recording interval coverage
/// and bias for every reported parameter. Replications with R-hat above
/// [`RHAT_LIMIT`] are excluded from coverage and counted.
pub fn recovery_study(
    p: &TrueParams,
    design: &Design,
    n_replications: usize,
    cfg: &SamplerConfig,
) -> Result<RecoveryReport, SimError> {
    if n_replications == 0 {
        return Err(SimError::Design("at least one replication is required".into()));
    }
    p.validate()?;
    design.validate()?;
    let fit_cfg = SamplerConfig {
        store_loglik: false,
        ..cfg.clone()
    };
    let records: Vec<ReplicationRecord> = (0..n_replications)
        .into_par_iter()
        .map(|r| {
            let data_seed = derive_seed(cfg.seed, 2 * r as u64);
            let sampler_seed = derive_seed(cfg.seed, 2 * r as u64 + 1);
            let sim = simulate(p, design, data_seed)?;
            let cfg = SamplerConfig {
                seed: sampler_seed,
                ..fit_cfg.clone()
            };
            let (spec, draws) = fit(p.family, PriorConfig::default(), &sim.dataset, &cfg)?;
            let max_rhat = max_rhat(&draws);
            Ok(ReplicationRecord {
                replication: r,
                data_seed,
                sampler_seed,
                max_rhat,
                divergences: draws.total_divergences(),
                converged: max_rhat.is_none_or(|r| r <= RHAT_LIMIT),
                summary: simulate_effect_summary(&draws, &spec),
            })
        })
        .collect::<Result<_, SimError>>()?;

    let n_excluded = records.iter().filter(|r| !r.converged).count();
    if n_excluded > 0 {
        log::warn!("{n_excluded} replication(s) excluded for R-hat above {RHAT_LIMIT}");
    }
    let parameters = p
        .family
        .reported_names()
        .into_iter()
        .map(|name| {
            let truth = p.reported(name).expect("reported names have truths");
            let used: Vec<_> = records
                .iter()
                .filter(|r| r.converged)
                .filter_map(|r| r.summary.get(name))
                .collect();
            let covered = used.iter().filter(|s| s.covers(truth)).count();
            let n = used.len();
            let mean_estimate = used.iter().map(|s| s.mean).sum::<f64>() / n as f64;
            ParameterRecovery {
                name: name.to_string(),
                truth,
                covered,
                used: n,
                coverage: covered as f64 / n as f64,
                mean_estimate,
                bias: mean_estimate - truth,
            }
        })
        .collect();
    Ok(RecoveryReport {
        truth: p.clone(),
        design: *design,
        sampler: cfg.clone(),
        n_replications,
        n_excluded,
        parameters,
        replications: records,
    })
}

/// The model pairs compared in a recovery table: the three comparisons
/// of the published table first, then the remaining pairs.
pub const COMPARISON_PAIRS: [(Family, Family); 6] = [
    (Family::Standard, Family::HomogeneousOverwriting),
    (Family::Percolation, Family::HomogeneousOverwriting),
    (Family::HomogeneousOverwriting, Family::HeterogeneousOverwriting),
    (Family::Standard, Family::HeterogeneousOverwriting),
    (Family::Percolation, Family::HeterogeneousOverwriting),
    (Family::Standard, Family::Percolation),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFitRecord {
    pub family: Family,
    pub max_rhat: Option<f64>,
    pub divergences: usize,
    pub loo: LooResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_a: Family,
    pub model_b: Family,
    #[serde(flatten)]
    pub result: ComparisonResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecoveryReport {
    pub truth: TrueParams,
    pub design: Design,
    pub data_seed: u64,
    pub fits: Vec<ModelFitRecord>,
    pub comparisons: Vec<ComparisonRow>,
}

impl ModelRecoveryReport {
    pub fn loo(&self, family: Family) -> &LooResult {
        &self
            .fits
            .iter()
            .find(|f| f.family == family)
            .expect("all families fit")
            .loo
    }

    pub fn row(&self, a: Family, b: Family) -> Option<&ComparisonRow> {
        self.comparisons.iter().find(|r| r.model_a == a && r.model_b == b)
    }
}

/// Simulates one dataset from `p`, fits all four models to it, and
/// compares them pairwise by PSIS-LOO.
pub fn model_recovery(p: &TrueParams, design: &Design, cfg: &SamplerConfig) -> Result<ModelRecoveryReport, SimError> {
    let data_seed = derive_seed(cfg.seed, u64::MAX);
    let sim = simulate(p, design, data_seed)?;
    let fit_cfg = SamplerConfig {
        store_loglik: true,
        ..cfg.clone()
    };
    let fits: Vec<ModelFitRecord> = Family::ALL
        .par_iter()
        .map(|&family| {
            let (_, draws) = fit(family, PriorConfig::default(), &sim.dataset, &fit_cfg)?;
            Ok(ModelFitRecord {
                family,
                max_rhat: max_rhat(&draws),
                divergences: draws.total_divergences(),
                loo: elpd_loo(&draws)?,
            })
        })
        .collect::<Result<_, SimError>>()?;
    let loo_of = |f: Family| &fits.iter().find(|r| r.family == f).unwrap().loo;
    let comparisons = COMPARISON_PAIRS
        .iter()
        .map(|&(a, b)| {
            Ok(ComparisonRow {
                model_a: a,
                model_b: b,
                result: compare(loo_of(a), loo_of(b))?,
            })
        })
        .collect::<Result<_, SimError>>()?;
    Ok(ModelRecoveryReport {
        truth: p.clone(),
        design: *design,
        data_seed,
        fits,
        comparisons,
    })
}
