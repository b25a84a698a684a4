//! The four hierarchical reading-time models.
//!
//! Every model is a LogNormal likelihood on milliseconds with crossed
//! by-subject and by-item varying intercepts. Three of them marginalize a
//! two-component mixture per trial:
//!
//! | family        | location       | condition +1             | condition -1              |
//! |---------------|----------------|--------------------------|---------------------------|
//! | `standard`    | beta_1 + beta_2 x | LogNormal             | LogNormal                 |
//! | `hom-overwrite` | beta         | mix(prob_lo, +delta)     | mix(prob_hi, +delta)      |
//! | `het-overwrite` | beta         | mix(prob_lo, +delta, sigmap_e) | mix(prob_hi, +delta, sigmap_e) |
//! | `percolation` | beta           | mix(prob_perc, +gamma)   | LogNormal                 |
//!
//! The sampling space is unconstrained: standard deviations and `delta` go
//! through `exp`, `gamma` through `-exp`, probabilities through the
//! logistic function. Random intercepts are non-centered: the sampler sees
//! innovations `z_u`, `z_w` and `u = sigma_u * z_u`.

mod density;
mod posterior;
mod summary;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;

pub use density::{log_mix, log_sum_exp, lognormal_logpdf, Transform};
pub use posterior::Posterior;
pub use summary::{simulate_effect_summary, summarize_draws, EffectSummary, ParamSummary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter `{0}` is not defined for this model")]
    UnknownParameter(String),
    #[error("{0} is not applicable to the {1} model")]
    NotApplicable(&'static str, Family),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "hom-overwrite")]
    HomogeneousOverwriting,
    #[serde(rename = "het-overwrite")]
    HeterogeneousOverwriting,
    #[serde(rename = "percolation")]
    Percolation,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::Standard,
        Family::HomogeneousOverwriting,
        Family::HeterogeneousOverwriting,
        Family::Percolation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Standard => "standard",
            Family::HomogeneousOverwriting => "hom-overwrite",
            Family::HeterogeneousOverwriting => "het-overwrite",
            Family::Percolation => "percolation",
        }
    }

    pub fn is_overwriting(self) -> bool {
        matches!(self, Family::HomogeneousOverwriting | Family::HeterogeneousOverwriting)
    }

    /// Named scalar parameters, in sampling-space order.
    pub fn scalar_params(self) -> &'static [ScalarParam] {
        use PriorKind::*;
        use Transform::*;
        const fn p(name: &'static str, transform: Transform, prior: PriorKind) -> ScalarParam {
            ScalarParam { name, transform, prior }
        }
        const STANDARD: [ScalarParam; 5] = [
            p("beta_1", Identity, Coefficient),
            p("beta_2", Identity, Coefficient),
            p("sigma_e", Positive, Scale),
            p("sigma_u", Positive, Scale),
            p("sigma_w", Positive, Scale),
        ];
        const HOMOGENEOUS: [ScalarParam; 7] = [
            p("beta", Identity, Coefficient),
            p("delta", Positive, Coefficient),
            p("prob_hi", Probability, Mixing),
            p("prob_lo", Probability, Mixing),
            p("sigma_e", Positive, Scale),
            p("sigma_u", Positive, Scale),
            p("sigma_w", Positive, Scale),
        ];
        const HETEROGENEOUS: [ScalarParam; 8] = [
            p("beta", Identity, Coefficient),
            p("delta", Positive, Coefficient),
            p("prob_hi", Probability, Mixing),
            p("prob_lo", Probability, Mixing),
            p("sigma_e", Positive, Scale),
            p("sigmap_e", Positive, Scale),
            p("sigma_u", Positive, Scale),
            p("sigma_w", Positive, Scale),
        ];
        const PERCOLATION: [ScalarParam; 6] = [
            p("beta", Identity, Coefficient),
            p("gamma", Negative, Coefficient),
            p("prob_perc", Probability, Mixing),
            p("sigma_e", Positive, Scale),
            p("sigma_u", Positive, Scale),
            p("sigma_w", Positive, Scale),
        ];
        match self {
            Family::Standard => &STANDARD,
            Family::HomogeneousOverwriting => &HOMOGENEOUS,
            Family::HeterogeneousOverwriting => &HETEROGENEOUS,
            Family::Percolation => &PERCOLATION,
        }
    }

    pub fn scalar_index(self, name: &str) -> Option<usize> {
        self.scalar_params().iter().position(|p| p.name == name)
    }

    pub(crate) fn roles(self) -> Roles {
        let idx = |name| self.scalar_index(name);
        match self {
            Family::Standard => Roles {
                location: 0,
                effect: Some(1),
                shift: None,
                prob_attraction: None,
                prob_no_attraction: None,
                sigma_e: 2,
                sigma_slow: None,
                sigma_u: 3,
                sigma_w: 4,
            },
            Family::HomogeneousOverwriting | Family::HeterogeneousOverwriting => Roles {
                location: 0,
                effect: None,
                shift: idx("delta"),
                prob_attraction: idx("prob_lo"),
                prob_no_attraction: idx("prob_hi"),
                sigma_e: idx("sigma_e").unwrap(),
                sigma_slow: idx("sigmap_e"),
                sigma_u: idx("sigma_u").unwrap(),
                sigma_w: idx("sigma_w").unwrap(),
            },
            Family::Percolation => Roles {
                location: 0,
                effect: None,
                shift: idx("gamma"),
                prob_attraction: idx("prob_perc"),
                prob_no_attraction: None,
                sigma_e: 3,
                sigma_slow: None,
                sigma_u: 4,
                sigma_w: 5,
            },
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Family::Standard),
            "hom-overwrite" => Ok(Family::HomogeneousOverwriting),
            "het-overwrite" => Ok(Family::HeterogeneousOverwriting),
            "percolation" => Ok(Family::Percolation),
            other => Err(ModelError::Config(format!(
                "unknown model `{other}`; expected standard, hom-overwrite, het-overwrite or percolation"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    /// Cauchy(0, coef_scale).
    Coefficient,
    /// Half-Cauchy(0, sd_scale).
    Scale,
    /// Beta(mix_alpha, mix_beta).
    Mixing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarParam {
    pub name: &'static str,
    pub transform: Transform,
    pub prior: PriorKind,
}

/// Positions of the scalar parameters that play each role in the
/// likelihood. `prob_attraction` mixes condition +1 trials,
/// `prob_no_attraction` condition -1 trials.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Roles {
    pub location: usize,
    pub effect: Option<usize>,
    pub shift: Option<usize>,
    pub prob_attraction: Option<usize>,
    pub prob_no_attraction: Option<usize>,
    pub sigma_e: usize,
    pub sigma_slow: Option<usize>,
    pub sigma_u: usize,
    pub sigma_w: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub coef_scale: f64,
    pub sd_scale: f64,
    pub mix_alpha: f64,
    pub mix_beta: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            coef_scale: 2.5,
            sd_scale: 2.5,
            mix_alpha: 1.0,
            mix_beta: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("coef_scale", self.coef_scale),
            ("sd_scale", self.sd_scale),
            ("mix_alpha", self.mix_alpha),
            ("mix_beta", self.mix_beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::Config(format!(
                    "prior hyperparameter {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One of the four models, sized for a particular subject/item count.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub priors: PriorConfig,
    pub n_subjects: usize,
    pub n_items: usize,
}

/// Subject and item intercepts on the millisecond log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffects {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

/// A point in parameter space, held in both coordinate systems.
///
/// `constrained` lists the named scalars in family order, then the
/// subject innovations `z_u`, then the item innovations `z_w`. The
/// innovations are the model's own coordinates (their prior is standard
/// normal), so only the scalar transforms contribute to `log_jacobian`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub unconstrained: Vec<f64>,
    pub constrained: Vec<f64>,
    pub log_jacobian: f64,
}

impl ModelSpec {
    pub fn new(family: Family, priors: PriorConfig, n_subjects: usize, n_items: usize) -> Result<Self, ModelError> {
        priors.validate()?;
        if n_subjects == 0 || n_items == 0 {
            return Err(ModelError::Config(
                "a model needs at least one subject and one item".into(),
            ));
        }
        Ok(Self {
            family,
            priors,
            n_subjects,
            n_items,
        })
    }

    pub fn for_dataset(family: Family, priors: PriorConfig, data: &Dataset) -> Result<Self, ModelError> {
        Self::new(family, priors, data.n_subjects(), data.n_items())
    }

    pub fn n_scalars(&self) -> usize {
        self.family.scalar_params().len()
    }

    /// Length of the unconstrained vector.
    pub fn dim(&self) -> usize {
        self.n_scalars() + self.n_subjects + self.n_items
    }

    /// Names of the `constrained` coordinates of a [`ParameterVector`].
    pub fn param_names(&self) -> Vec<String> {
        self.names_with("z_u", "z_w")
    }

    /// Names of the values recorded per draw: the scalars, then the scaled
    /// intercepts `u[i]` and `w[j]` (one-based).
    pub fn output_names(&self) -> Vec<String> {
        self.names_with("u", "w")
    }

    fn names_with(&self, subj: &str, item: &str) -> Vec<String> {
        let mut names: Vec<String> = self.family.scalar_params().iter().map(|p| p.name.to_string()).collect();
        names.extend((1..=self.n_subjects).map(|i| format!("{subj}[{i}]")));
        names.extend((1..=self.n_items).map(|j| format!("{item}[{j}]")));
        names
    }

    fn check_dim(&self, len: usize) -> Result<(), ModelError> {
        if len != self.dim() {
            return Err(ModelError::Config(format!(
                "parameter vector has length {len}, {} model with {} subjects and {} items needs {}",
                self.family,
                self.n_subjects,
                self.n_items,
                self.dim()
            )));
        }
        Ok(())
    }

    /// Maps an unconstrained vector into model space.
    pub fn constrain(&self, unconstrained: &[f64]) -> Result<ParameterVector, ModelError> {
        self.check_dim(unconstrained.len())?;
        let params = self.family.scalar_params();
        let mut constrained = unconstrained.to_vec();
        let mut log_jacobian = 0.0;
        for (k, p) in params.iter().enumerate() {
            constrained[k] = p.transform.constrain(unconstrained[k]);
            log_jacobian += p.transform.log_jacobian(unconstrained[k]).0;
        }
        Ok(ParameterVector {
            unconstrained: unconstrained.to_vec(),
            constrained,
            log_jacobian,
        })
    }

    /// Inverse of [`constrain`](Self::constrain); fails when a value lies
    /// outside its support.
    pub fn unconstrain(&self, constrained: &[f64]) -> Result<ParameterVector, ModelError> {
        self.check_dim(constrained.len())?;
        let params = self.family.scalar_params();
        let mut unconstrained = constrained.to_vec();
        for (k, p) in params.iter().enumerate() {
            unconstrained[k] = p.transform.unconstrain(constrained[k]).ok_or_else(|| {
                ModelError::Domain(format!(
                    "{} = {} is outside the support of the {} model",
                    p.name, constrained[k], self.family
                ))
            })?;
        }
        if let Some(bad) = constrained[params.len()..].iter().find(|v| !v.is_finite()) {
            return Err(ModelError::Domain(format!("non-finite random-effect innovation {bad}")));
        }
        let log_jacobian = params
            .iter()
            .zip(&unconstrained)
            .map(|(p, &x)| p.transform.log_jacobian(x).0)
            .sum();
        Ok(ParameterVector {
            unconstrained,
            constrained: constrained.to_vec(),
            log_jacobian,
        })
    }

    /// Builds a parameter vector from named scalars and scaled intercepts,
    /// the layout produced by [`output_names`](Self::output_names).
    pub fn from_output(&self, values: &[f64]) -> Result<ParameterVector, ModelError> {
        self.check_dim(values.len())?;
        let k = self.n_scalars();
        let roles = self.family.roles();
        let (sigma_u, sigma_w) = (values[roles.sigma_u], values[roles.sigma_w]);
        if !(sigma_u > 0.0 && sigma_w > 0.0) {
            return Err(ModelError::Domain(
                "random-effect standard deviations must be positive".into(),
            ));
        }
        let mut constrained = values.to_vec();
        for v in &mut constrained[k..k + self.n_subjects] {
            *v /= sigma_u;
        }
        for v in &mut constrained[k + self.n_subjects..] {
            *v /= sigma_w;
        }
        self.unconstrain(&constrained)
    }

    /// Named scalar value of `theta`.
    pub fn value(&self, theta: &ParameterVector, name: &str) -> Result<f64, ModelError> {
        self.family
            .scalar_index(name)
            .map(|k| theta.constrained[k])
            .ok_or_else(|| ModelError::UnknownParameter(name.to_string()))
    }

    pub fn random_effects(&self, theta: &ParameterVector) -> RandomEffects {
        let k = self.n_scalars();
        let roles = self.family.roles();
        let (sigma_u, sigma_w) = (theta.constrained[roles.sigma_u], theta.constrained[roles.sigma_w]);
        let i_end = k + self.n_subjects;
        RandomEffects {
            u: theta.constrained[k..i_end].iter().map(|z| sigma_u * z).collect(),
            w: theta.constrained[i_end..].iter().map(|z| sigma_w * z).collect(),
        }
    }

    /// The per-draw output values (scalars, `u`, `w`) for `theta`.
    pub fn output_values(&self, theta: &ParameterVector) -> Vec<f64> {
        let k = self.n_scalars();
        let re = self.random_effects(theta);
        let mut out = theta.constrained[..k].to_vec();
        out.extend(re.u);
        out.extend(re.w);
        out
    }

    /// Per-trial log-likelihood, aligned with the dataset's trial order.
    pub fn pointwise_loglik(&self, theta: &ParameterVector, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        self.check_dim(theta.constrained.len())?;
        self.check_data(data)?;
        let posterior = Posterior::new(self.clone(), data)?;
        Ok(posterior.pointwise_from_constrained(&theta.constrained))
    }

    /// Sum of the prior log densities evaluated in model space. Does not
    /// include the Jacobian.
    pub fn log_prior(&self, theta: &ParameterVector) -> f64 {
        posterior::log_prior_constrained(self, &theta.constrained)
    }

    /// Log posterior density on the unconstrained scale, up to the
    /// marginal likelihood. Non-finite intermediates give `-inf`.
    pub fn log_posterior(&self, unconstrained: &[f64], data: &Dataset) -> Result<f64, ModelError> {
        self.check_dim(unconstrained.len())?;
        self.check_data(data)?;
        let posterior = Posterior::new(self.clone(), data)?;
        let mut grad = vec![0.0; self.dim()];
        Ok(posterior.log_density_and_grad(unconstrained, &mut grad))
    }

    pub fn grad_log_posterior(&self, unconstrained: &[f64], data: &Dataset) -> Result<Vec<f64>, ModelError> {
        self.check_dim(unconstrained.len())?;
        self.check_data(data)?;
        let posterior = Posterior::new(self.clone(), data)?;
        let mut grad = vec![0.0; self.dim()];
        posterior.log_density_and_grad(unconstrained, &mut grad);
        Ok(grad)
    }

    pub(crate) fn check_data(&self, data: &Dataset) -> Result<(), ModelError> {
        if data.n_subjects() != self.n_subjects || data.n_items() != self.n_items {
            return Err(ModelError::Config(format!(
                "model sized for {} subjects and {} items, dataset has {} and {}",
                self.n_subjects,
                self.n_items,
                data.n_subjects(),
                data.n_items()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_dimensions() {
        let dims: Vec<_> = Family::ALL
            .iter()
            .map(|&f| ModelSpec::new(f, PriorConfig::default(), 3, 4).unwrap().dim())
            .collect();
        assert_eq!(dims, [5 + 7, 7 + 7, 8 + 7, 6 + 7]);
    }

    #[test]
    fn names_follow_reported_parameters() {
        let spec = ModelSpec::new(Family::HeterogeneousOverwriting, PriorConfig::default(), 1, 2).unwrap();
        assert_eq!(
            spec.output_names(),
            [
                "beta", "delta", "prob_hi", "prob_lo", "sigma_e", "sigmap_e", "sigma_u", "sigma_w", "u[1]", "w[1]",
                "w[2]"
            ]
        );
        let spec = ModelSpec::new(Family::Standard, PriorConfig::default(), 1, 1).unwrap();
        assert_eq!(
            &spec.param_names()[..5],
            ["beta_1", "beta_2", "sigma_e", "sigma_u", "sigma_w"]
        );
        assert_eq!(&spec.param_names()[5..], ["z_u[1]", "z_w[1]"]);
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(json, format!("\"{}\"", f.name()));
        }
        assert!("mixture".parse::<Family>().is_err());
    }

    #[test]
    fn prior_config_rejects_non_positive() {
        let bad = PriorConfig {
            sd_scale: 0.0,
            ..PriorConfig::default()
        };
        assert!(ModelSpec::new(Family::Standard, bad, 1, 1).is_err());
    }

    #[test]
    fn constraints_hold_for_extreme_unconstrained_values() {
        for f in Family::ALL {
            let spec = ModelSpec::new(f, PriorConfig::default(), 2, 2).unwrap();
            for x0 in [-30.0, 0.0, 30.0] {
                let theta = spec.constrain(&vec![x0; spec.dim()]).unwrap();
                for (p, v) in f.scalar_params().iter().zip(&theta.constrained) {
                    match p.transform {
                        Transform::Positive => assert!(*v > 0.0),
                        Transform::Negative => assert!(*v < 0.0),
                        Transform::Probability => assert!(*v > 0.0 && *v < 1.0, "{v}"),
                        Transform::Identity => assert!(v.is_finite()),
                    }
                }
            }
        }
    }

    #[test]
    fn output_values_round_trip_through_from_output() {
        let spec = ModelSpec::new(Family::Percolation, PriorConfig::default(), 2, 3).unwrap();
        let x: Vec<f64> = (0..spec.dim()).map(|k| 0.3 * k as f64 - 1.0).collect();
        let theta = spec.constrain(&x).unwrap();
        let back = spec.from_output(&spec.output_values(&theta)).unwrap();
        for (a, b) in back.unconstrained.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let spec = ModelSpec::new(Family::Standard, PriorConfig::default(), 1, 1).unwrap();
        assert!(matches!(spec.constrain(&[0.0; 3]), Err(ModelError::Config(_))));
    }
}
