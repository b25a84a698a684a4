use serde::{Deserialize, Serialize};

use super::{Family, ModelError, ModelSpec};
use crate::sampler::{ess_of_chains, rhat_of_chains, PosteriorDraws};

/// Posterior summary of one scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub median: f64,
    pub q97_5: f64,
    /// `None` when the diagnostic is unavailable (one chain, or constant
    /// draws).
    pub rhat: Option<f64>,
    pub ess_bulk: Option<f64>,
}

impl ParamSummary {
    pub fn from_chains(name: impl Into<String>, chains: &[Vec<f64>]) -> Self {
        let mut pooled: Vec<f64> = chains.concat();
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let sd = if pooled.len() > 1 {
            (pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        pooled.sort_by(f64::total_cmp);
        Self {
            name: name.into(),
            mean,
            sd,
            q2_5: quantile_sorted(&pooled, 0.025),
            median: quantile_sorted(&pooled, 0.5),
            q97_5: quantile_sorted(&pooled, 0.975),
            rhat: rhat_of_chains(chains).ok(),
            ess_bulk: ess_of_chains(chains).ok(),
        }
    }

    /// Whether the central 95% interval contains `value`.
    pub fn covers(&self, value: f64) -> bool {
        self.q2_5 <= value && value <= self.q97_5
    }
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summaries of the listed parameters (all of them when `names` is `None`).
pub fn summarize_draws(draws: &PosteriorDraws, names: Option<&[&str]>) -> Vec<ParamSummary> {
    let indices: Vec<usize> = match names {
        Some(ns) => ns.iter().filter_map(|n| draws.param_index(n)).collect(),
        None => (0..draws.n_params()).collect(),
    };
    indices
        .into_iter()
        .map(|k| ParamSummary::from_chains(&draws.names[k], &draws.chains(k)))
        .collect()
}

/// Named-parameter summaries plus derived quantities for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub parameters: Vec<ParamSummary>,
    /// `prob_hi - prob_lo`, for the overwriting models only.
    pub diffprob: Option<ParamSummary>,
}

impl EffectSummary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.parameters
            .iter()
            .chain(self.diffprob.as_ref())
            .find(|p| p.name == name)
    }
}

pub fn simulate_effect_summary(draws: &PosteriorDraws, spec: &ModelSpec) -> EffectSummary {
    let names: Vec<&str> = spec.family.scalar_params().iter().map(|p| p.name).collect();
    EffectSummary {
        parameters: summarize_draws(draws, Some(&names)),
        diffprob: diffprob_summary(draws, spec).ok(),
    }
}

/// Per-draw `prob_hi - prob_lo`.
pub fn diffprob_summary(draws: &PosteriorDraws, spec: &ModelSpec) -> Result<ParamSummary, ModelError> {
    if !spec.family.is_overwriting() {
        return Err(ModelError::NotApplicable("diffprob", spec.family));
    }
    let hi = draws
        .param_index("prob_hi")
        .ok_or_else(|| ModelError::UnknownParameter("prob_hi".into()))?;
    let lo = draws
        .param_index("prob_lo")
        .ok_or_else(|| ModelError::UnknownParameter("prob_lo".into()))?;
    let chains: Vec<Vec<f64>> = draws
        .chains(hi)
        .into_iter()
        .zip(draws.chains(lo))
        .map(|(h, l)| h.iter().zip(&l).map(|(a, b)| a - b).collect())
        .collect();
    Ok(ParamSummary::from_chains("diffprob", &chains))
}

impl Family {
    /// The parameter names reported in summaries, including derived ones.
    pub fn reported_names(self) -> Vec<&'static str> {
        let mut names: Vec<&str> = self.scalar_params().iter().map(|p| p.name).collect();
        if self.is_overwriting() {
            names.push("diffprob");
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PriorConfig;

    fn draws_from(names: &[&str], rows: &[Vec<f64>], n_chains: usize) -> PosteriorDraws {
        let n_draws = rows.len() / n_chains;
        PosteriorDraws {
            names: names.iter().map(|s| s.to_string()).collect(),
            n_chains,
            n_draws,
            n_obs: 0,
            values: rows.concat(),
            loglik: None,
            diagnostics: Vec::new(),
            seed: 0,
        }
    }

    fn hom_spec() -> ModelSpec {
        ModelSpec::new(Family::HomogeneousOverwriting, PriorConfig::default(), 1, 1).unwrap()
    }

    #[test]
    fn diffprob_arithmetic() {
        let d = draws_from(&["prob_hi", "prob_lo"], &[vec![0.4, 0.1], vec![0.6, 0.3]], 1);
        let s = diffprob_summary(&d, &hom_spec()).unwrap();
        assert!((s.mean - 0.3).abs() < 1e-12);
        assert_eq!(s.rhat, None);
    }

    #[test]
    fn equal_probabilities_center_diffprob_at_zero() {
        let rows: Vec<Vec<f64>> = (0..40).map(|k| vec![0.1 + 0.01 * k as f64; 2]).collect();
        let d = draws_from(&["prob_hi", "prob_lo"], &rows, 2);
        let s = diffprob_summary(&d, &hom_spec()).unwrap();
        assert_eq!((s.mean, s.q2_5, s.q97_5), (0.0, 0.0, 0.0));
    }

    #[test]
    fn diffprob_not_applicable_to_standard() {
        let spec = ModelSpec::new(Family::Standard, PriorConfig::default(), 1, 1).unwrap();
        let d = draws_from(&["beta_1"], &[vec![1.0]], 1);
        assert!(matches!(
            diffprob_summary(&d, &spec),
            Err(ModelError::NotApplicable("diffprob", Family::Standard))
        ));
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&xs, 0.5), 3.0);
        assert_eq!(quantile_sorted(&xs, 0.0), 1.0);
        assert_eq!(quantile_sorted(&xs, 1.0), 5.0);
        assert!((quantile_sorted(&xs, 0.025) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn reported_names_include_diffprob_for_overwriting() {
        assert_eq!(
            Family::HeterogeneousOverwriting.reported_names(),
            ["beta", "delta", "prob_hi", "prob_lo", "sigma_e", "sigmap_e", "sigma_u", "sigma_w", "diffprob"]
        );
        assert_eq!(
            Family::Standard.reported_names(),
            ["beta_1", "beta_2", "sigma_e", "sigma_u", "sigma_w"]
        );
    }
}
