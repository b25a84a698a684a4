//! Leave-one-out predictive accuracy.
//!
//! [`elpd_loo`] estimates each trial's leave-one-out predictive density
//! from a single fit, by importance sampling with the ratios
//! `1 / p(y_i | theta_s)` after Pareto-smoothing their upper tail.
//! [`exact_loo`] computes the same quantity by brute force, refitting once
//! per held-out trial, and exists to validate the approximation.

mod gpd;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gpd::{gpd_fit, gpd_quantile, GpdFit};

use crate::data::Dataset;
use crate::models::{log_sum_exp, ModelError, ModelSpec, Posterior};
use crate::sampler::{sample, LogDensity, SamplerConfig, SamplerError};

/// Pareto k above which a trial's estimate is flagged as unreliable.
pub const KHAT_THRESHOLD: f64 = 0.7;
/// Largest dataset [`exact_loo`] refits without an explicit override.
pub const EXACT_LOO_MAX_N: usize = 200;

#[derive(Debug, Error)]
pub enum LooError {
    #[error("generalized Pareto fit needs at least 5 tail draws, got {0}")]
    TailTooSmall(usize),
    #[error("all tail values are equal; the generalized Pareto fit is degenerate")]
    DegenerateTail,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("Pareto smoothing needs at least 25 draws, got {0}")]
    TooFewDraws(usize),
    #[error("draws carry no pointwise log-likelihood matrix")]
    MissingLoglik,
    #[error("results are not aligned: {0} vs {1} observations")]
    Alignment(usize, usize),
    #[error("cannot leave out a single observation from a dataset of {0}")]
    TooFewObservations(usize),
    #[error("exact LOO refits the model {n} times; pass the override to allow more than {max}")]
    TooLarge { n: usize, max: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub elpd_loo: f64,
    pub se_elpd: f64,
    pub pointwise: Vec<f64>,
    pub khat: Vec<f64>,
    pub n_bad_k: usize,
}

impl LooResult {
    pub fn from_pointwise(pointwise: Vec<f64>, khat: Vec<f64>) -> Self {
        let n_bad_k = khat.iter().filter(|&&k| k > KHAT_THRESHOLD).count();
        Self {
            elpd_loo: pointwise.iter().sum(),
            se_elpd: (pointwise.len() as f64 * sample_variance(&pointwise)).sqrt(),
            pointwise,
            khat,
            n_bad_k,
        }
    }

    /// Zero-based indices of trials whose k-hat exceeds the threshold.
    pub fn bad_k_indices(&self) -> Vec<usize> {
        self.khat
            .iter()
            .enumerate()
            .filter(|(_, &k)| k > KHAT_THRESHOLD)
            .map(|(i, _)| i)
            .collect()
    }
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preferred {
    A,
    B,
    Neither,
}

/// Paired comparison of two LOO results on the same trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    /// `elpd(b) - elpd(a)`; positive favors `b`.
    pub elpd_diff: f64,
    pub se_diff: f64,
    pub preferred: Preferred,
}

/// Pareto-smoothed, self-normalized importance weights.
///
/// Returns normalized log weights (their exponentials sum to one) and the
/// tail shape estimate. The largest `min(ceil(0.2 S), ceil(3 sqrt(S)))`
/// weights are replaced by expected order statistics of a generalized
/// Pareto fit to the tail, and every weight is capped at the largest raw
/// weight. A flat tail needs no smoothing and reports k-hat 0.
pub fn psis_smooth(log_weights: &[f64]) -> Result<(Vec<f64>, f64), LooError> {
    let s = log_weights.len();
    if s < 25 {
        return Err(LooError::TooFewDraws(s));
    }
    if let Some(bad) = log_weights.iter().find(|v| !v.is_finite()) {
        return Err(LooError::Domain(format!("non-finite log weight {bad}")));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_weights.iter().map(|v| v - max).collect();

    let tail_len = (0.2 * s as f64).ceil().min((3.0 * (s as f64).sqrt()).ceil()) as usize;
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
    let tail = &order[s - tail_len..];
    let tail_min = lw[tail[0]];
    let tail_max = lw[tail[tail_len - 1]];
    let khat = if tail_len < 5 {
        f64::INFINITY
    } else if tail_max - tail_min < f64::EPSILON / 100.0 {
        0.0
    } else {
        let cutoff = lw[order[s - tail_len - 1]];
        let exp_cutoff = cutoff.exp();
        let exceedances: Vec<f64> = tail.iter().map(|&i| lw[i].exp() - exp_cutoff).collect();
        let fit = gpd::fit_sorted(&exceedances);
        if fit.k.is_finite() {
            for (z, &i) in tail.iter().enumerate() {
                let p = (z as f64 + 0.5) / tail_len as f64;
                lw[i] = (gpd_quantile(p, fit.k, fit.sigma) + exp_cutoff).ln();
            }
        }
        fit.k
    };
    for v in &mut lw {
        if *v > 0.0 {
            *v = 0.0;
        }
    }
    let norm = log_sum_exp(&lw);
    lw.iter_mut().for_each(|v| *v -= norm);
    Ok((lw, khat))
}

/// PSIS-LOO from the stored pointwise log-likelihood matrix.
pub fn elpd_loo(draws: &crate::sampler::PosteriorDraws) -> Result<LooResult, LooError> {
    let loglik = draws.loglik.as_ref().ok_or(LooError::MissingLoglik)?;
    elpd_loo_matrix(loglik, draws.n_samples(), draws.n_obs)
}

/// PSIS-LOO from an `S x N` draw-major log-likelihood matrix.
pub fn elpd_loo_matrix(loglik: &[f64], n_samples: usize, n_obs: usize) -> Result<LooResult, LooError> {
    if loglik.len() != n_samples * n_obs || n_obs == 0 {
        return Err(LooError::Alignment(loglik.len(), n_samples * n_obs));
    }
    if n_samples < 100 {
        log::warn!("PSIS-LOO with only {n_samples} draws; at least 100 are recommended");
    }
    let per_obs: Vec<(f64, f64)> = (0..n_obs)
        .into_par_iter()
        .map(|i| {
            let ll: Vec<f64> = (0..n_samples).map(|s| loglik[s * n_obs + i]).collect();
            let ratios: Vec<f64> = ll.iter().map(|v| -v).collect();
            let (lw, khat) = psis_smooth(&ratios)?;
            let terms: Vec<f64> = lw.iter().zip(&ll).map(|(w, l)| w + l).collect();
            Ok((log_sum_exp(&terms), khat))
        })
        .collect::<Result<_, LooError>>()?;
    let (pointwise, khat): (Vec<f64>, Vec<f64>) = per_obs.into_iter().unzip();
    let result = LooResult::from_pointwise(pointwise, khat);
    if result.n_bad_k > 0 {
        log::warn!(
            "{} trial(s) have Pareto k-hat above {KHAT_THRESHOLD}: {:?}",
            result.n_bad_k,
            result.bad_k_indices()
        );
    }
    Ok(result)
}

/// Paired difference `b - a` with the standard error of the summed
/// pointwise differences.
pub fn compare(a: &LooResult, b: &LooResult) -> Result<ComparisonResult, LooError> {
    if a.pointwise.len() != b.pointwise.len() {
        return Err(LooError::Alignment(a.pointwise.len(), b.pointwise.len()));
    }
    let diffs: Vec<f64> = a.pointwise.iter().zip(&b.pointwise).map(|(x, y)| y - x).collect();
    let elpd_diff: f64 = diffs.iter().sum();
    let se_diff = (diffs.len() as f64 * sample_variance(&diffs)).sqrt();
    let preferred = if elpd_diff > 0.0 {
        Preferred::B
    } else if elpd_diff < 0.0 {
        Preferred::A
    } else {
        Preferred::Neither
    };
    Ok(ComparisonResult {
        elpd_diff,
        se_diff,
        preferred,
    })
}

/// A model that can be refit without one of its observations.
pub trait LeaveOneOut: Sync {
    type Fit: LogDensity;

    fn n_obs(&self) -> usize;

    fn leave_out(&self, i: usize) -> Result<Self::Fit, LooError>;

    /// `ln p(y_i | draw)`, where `draw` is one row written by the refit's
    /// [`LogDensity::write_draw`].
    fn held_out_loglik(&self, fit: &Self::Fit, i: usize, draw: &[f64]) -> f64;
}

fn refit_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Brute-force LOO: for each observation, refit without it and average its
/// likelihood over the refit's draws. k-hat entries are 0.
pub fn exact_loo_with<P: LeaveOneOut>(problem: &P, cfg: &SamplerConfig) -> Result<LooResult, LooError> {
    let n = problem.n_obs();
    if n < 2 {
        return Err(LooError::TooFewObservations(n));
    }
    let pointwise: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let fit = problem.leave_out(i)?;
            let cfg = SamplerConfig {
                seed: refit_seed(cfg.seed, i),
                store_loglik: false,
                ..cfg.clone()
            };
            let draws = sample(&fit, &cfg)?;
            let lls: Vec<f64> = (0..draws.n_chains)
                .flat_map(|c| (0..draws.n_draws).map(move |s| (c, s)))
                .map(|(c, s)| problem.held_out_loglik(&fit, i, draws.draw(c, s)))
                .collect();
            Ok(log_sum_exp(&lls) - (lls.len() as f64).ln())
        })
        .collect::<Result<_, LooError>>()?;
    Ok(LooResult::from_pointwise(pointwise, vec![0.0; n]))
}

struct ReadingTimeLoo<'a> {
    spec: &'a ModelSpec,
    data: &'a Dataset,
    full: Posterior,
}

impl LeaveOneOut for ReadingTimeLoo<'_> {
    type Fit = Posterior;

    fn n_obs(&self) -> usize {
        self.data.len()
    }

    fn leave_out(&self, i: usize) -> Result<Posterior, LooError> {
        let rest = self
            .data
            .without_trial(i)
            .ok_or(LooError::TooFewObservations(self.data.len()))?;
        Ok(Posterior::new(self.spec.clone(), &rest)?)
    }

    fn held_out_loglik(&self, _fit: &Posterior, i: usize, draw: &[f64]) -> f64 {
        self.full.trial_loglik_from_output(draw, i)
    }
}

/// Exact LOO for a reading-time model by `N` full refits. Refuses datasets
/// larger than [`EXACT_LOO_MAX_N`] unless `allow_large` is set.
pub fn exact_loo(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &SamplerConfig,
    allow_large: bool,
) -> Result<LooResult, LooError> {
    if data.len() > EXACT_LOO_MAX_N && !allow_large {
        return Err(LooError::TooLarge {
            n: data.len(),
            max: EXACT_LOO_MAX_N,
        });
    }
    let problem = ReadingTimeLoo {
        spec,
        data,
        full: Posterior::new(spec.clone(), data)?,
    };
    exact_loo_with(&problem, cfg)
}
