use super::density::{
    beta_lpdf_logit, cauchy_lpdf, half_cauchy_lpdf, log_sum_exp2, lognormal_lpdf_ln, softplus, std_normal_lpdf,
};
use super::{Family, ModelError, ModelSpec, PriorKind, Roles, Transform};
use crate::data::{Condition, Dataset};
use crate::sampler::LogDensity;

#[derive(Debug, Clone, Copy)]
struct Obs {
    ln_y: f64,
    subject: u32,
    item: u32,
    attraction: bool,
}

/// A model bound to a dataset: the log posterior and its gradient on the
/// unconstrained scale.
#[derive(Debug, Clone)]
pub struct Posterior {
    spec: ModelSpec,
    roles: Roles,
    obs: Vec<Obs>,
}

/// Model-space scalars pulled out by role.
#[derive(Debug, Clone, Copy)]
struct Scalars {
    location: f64,
    effect: f64,
    shift: f64,
    sigma_e: f64,
    sigma_slow: f64,
    /// Mixing probability and its log and log-complement, per condition.
    mix_attraction: Option<Mix>,
    mix_no_attraction: Option<Mix>,
    sigma_u: f64,
    sigma_w: f64,
}

#[derive(Debug, Clone, Copy)]
struct Mix {
    p: f64,
    ln_p: f64,
    ln_1mp: f64,
}

/// Gradient of the log-likelihood with respect to model-space quantities.
/// Scale entries are with respect to the log of the standard deviation.
#[derive(Debug, Default)]
struct LikGrad {
    location: f64,
    effect: f64,
    shift: f64,
    log_sigma_e: f64,
    log_sigma_slow: f64,
    logit_attraction: f64,
    logit_no_attraction: f64,
    subject: Vec<f64>,
    item: Vec<f64>,
}

impl Posterior {
    pub fn new(spec: ModelSpec, data: &Dataset) -> Result<Self, ModelError> {
        spec.check_data(data)?;
        let obs = data
            .trials()
            .iter()
            .map(|t| Obs {
                ln_y: t.rt.ln(),
                subject: t.subject as u32,
                item: t.item as u32,
                attraction: t.condition == Condition::Attraction,
            })
            .collect();
        let roles = spec.family.roles();
        Ok(Self { spec, roles, obs })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn scalars_from_unconstrained(&self, x: &[f64]) -> Scalars {
        let params = self.spec.family.scalar_params();
        let v = |k: usize| params[k].transform.constrain(x[k]);
        let mix = |k: Option<usize>| {
            k.map(|k| Mix {
                p: v(k),
                ln_p: -softplus(-x[k]),
                ln_1mp: -softplus(x[k]),
            })
        };
        self.scalars_with(v, mix)
    }

    fn scalars_from_constrained(&self, c: &[f64]) -> Scalars {
        let mix = |k: Option<usize>| {
            k.map(|k| Mix {
                p: c[k],
                ln_p: c[k].ln(),
                ln_1mp: (-c[k]).ln_1p(),
            })
        };
        self.scalars_with(|k| c[k], mix)
    }

    fn scalars_with(&self, v: impl Fn(usize) -> f64, mix: impl Fn(Option<usize>) -> Option<Mix>) -> Scalars {
        let r = &self.roles;
        let sigma_e = v(r.sigma_e);
        Scalars {
            location: v(r.location),
            effect: r.effect.map_or(0.0, &v),
            shift: r.shift.map_or(0.0, &v),
            sigma_e,
            sigma_slow: r.sigma_slow.map_or(sigma_e, &v),
            mix_attraction: mix(r.prob_attraction),
            mix_no_attraction: mix(r.prob_no_attraction),
            sigma_u: v(r.sigma_u),
            sigma_w: v(r.sigma_w),
        }
    }

    /// Log-likelihood of every trial given scalars and scaled intercepts.
    /// When `grad` is given, accumulates the likelihood gradient.
    fn likelihood(
        &self,
        s: &Scalars,
        u: &[f64],
        w: &[f64],
        mut pointwise: Option<&mut [f64]>,
        mut grad: Option<&mut LikGrad>,
    ) -> f64 {
        let inv_var_e = 1.0 / (s.sigma_e * s.sigma_e);
        let inv_var_slow = 1.0 / (s.sigma_slow * s.sigma_slow);
        let mut total = 0.0;
        for (n, o) in self.obs.iter().enumerate() {
            let x = if o.attraction { 1.0 } else { -1.0 };
            let mu = s.location + s.effect * x + u[o.subject as usize] + w[o.item as usize];
            let mix = if o.attraction {
                s.mix_attraction
            } else {
                s.mix_no_attraction
            };
            let resid = o.ln_y - mu;
            let lp = match mix {
                None => {
                    let lp = lognormal_lpdf_ln(o.ln_y, mu, s.sigma_e);
                    if let Some(g) = grad.as_deref_mut() {
                        let d_mu = resid * inv_var_e;
                        g.location += d_mu;
                        g.effect += d_mu * x;
                        g.subject[o.subject as usize] += d_mu;
                        g.item[o.item as usize] += d_mu;
                        g.log_sigma_e += resid * resid * inv_var_e - 1.0;
                    }
                    lp
                }
                Some(m) => {
                    let lp_slow = lognormal_lpdf_ln(o.ln_y, mu + s.shift, s.sigma_slow);
                    let lp_base = lognormal_lpdf_ln(o.ln_y, mu, s.sigma_e);
                    let a = m.ln_p + lp_slow;
                    let lp = log_sum_exp2(a, m.ln_1mp + lp_base);
                    if let Some(g) = grad.as_deref_mut() {
                        // Posterior responsibility of the shifted component.
                        let r = (a - lp).exp();
                        let resid_slow = resid - s.shift;
                        let d_slow = r * resid_slow * inv_var_slow;
                        let d_mu = d_slow + (1.0 - r) * resid * inv_var_e;
                        g.location += d_mu;
                        g.effect += d_mu * x;
                        g.shift += d_slow;
                        g.subject[o.subject as usize] += d_mu;
                        g.item[o.item as usize] += d_mu;
                        g.log_sigma_slow += r * (resid_slow * resid_slow * inv_var_slow - 1.0);
                        g.log_sigma_e += (1.0 - r) * (resid * resid * inv_var_e - 1.0);
                        if o.attraction {
                            g.logit_attraction += r - m.p;
                        } else {
                            g.logit_no_attraction += r - m.p;
                        }
                    }
                    lp
                }
            };
            if let Some(out) = pointwise.as_deref_mut() {
                out[n] = lp;
            }
            total += lp;
        }
        total
    }

    fn split_effects(&self, c: &[f64], s: &Scalars) -> (Vec<f64>, Vec<f64>) {
        let k = self.spec.n_scalars();
        let i_end = k + self.spec.n_subjects;
        let u = c[k..i_end].iter().map(|z| s.sigma_u * z).collect();
        let w = c[i_end..].iter().map(|z| s.sigma_w * z).collect();
        (u, w)
    }

    /// Per-trial log-likelihood from a constrained vector (scalars plus
    /// innovations).
    pub(crate) fn pointwise_from_constrained(&self, c: &[f64]) -> Vec<f64> {
        let s = self.scalars_from_constrained(c);
        let (u, w) = self.split_effects(c, &s);
        let mut out = vec![0.0; self.obs.len()];
        self.likelihood(&s, &u, &w, Some(&mut out), None);
        out
    }

    /// Log-likelihood of trial `n` alone, from draw output values.
    pub(crate) fn trial_loglik_from_output(&self, values: &[f64], n: usize) -> f64 {
        let k = self.spec.n_scalars();
        let s = self.scalars_from_constrained(values);
        let o = self.obs[n];
        let x = if o.attraction { 1.0 } else { -1.0 };
        let mu = s.location
            + s.effect * x
            + values[k + o.subject as usize]
            + values[k + self.spec.n_subjects + o.item as usize];
        let mix = if o.attraction {
            s.mix_attraction
        } else {
            s.mix_no_attraction
        };
        match mix {
            None => lognormal_lpdf_ln(o.ln_y, mu, s.sigma_e),
            Some(m) => log_sum_exp2(
                m.ln_p + lognormal_lpdf_ln(o.ln_y, mu + s.shift, s.sigma_slow),
                m.ln_1mp + lognormal_lpdf_ln(o.ln_y, mu, s.sigma_e),
            ),
        }
    }

    /// Log posterior at `x` (unconstrained); writes its gradient into
    /// `grad`. Returns `-inf` when any term is not finite.
    pub fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(x.len(), self.spec.dim());
        let spec = &self.spec;
        let k = spec.n_scalars();
        let s = self.scalars_from_unconstrained(x);
        let (u, w) = self.split_effects(x, &s);

        let mut g = LikGrad {
            subject: vec![0.0; spec.n_subjects],
            item: vec![0.0; spec.n_items],
            ..Default::default()
        };
        let mut lp = self.likelihood(&s, &u, &w, None, Some(&mut g));

        grad.iter_mut().for_each(|v| *v = 0.0);
        let r = &self.roles;
        grad[r.location] += g.location;
        if let Some(i) = r.effect {
            grad[i] += g.effect;
        }
        if let Some(i) = r.shift {
            grad[i] += g.shift * s.shift;
        }
        grad[r.sigma_e] += g.log_sigma_e;
        match r.sigma_slow {
            Some(i) => grad[i] += g.log_sigma_slow,
            None => grad[r.sigma_e] += g.log_sigma_slow,
        }
        if let Some(i) = r.prob_attraction {
            grad[i] += g.logit_attraction;
        }
        if let Some(i) = r.prob_no_attraction {
            grad[i] += g.logit_no_attraction;
        }
        let mut d_log_sigma_u = 0.0;
        for (i, (gi, ui)) in g.subject.iter().zip(&u).enumerate() {
            grad[k + i] += gi * s.sigma_u;
            d_log_sigma_u += gi * ui;
        }
        grad[r.sigma_u] += d_log_sigma_u;
        let mut d_log_sigma_w = 0.0;
        let j0 = k + spec.n_subjects;
        for (j, (gj, wj)) in g.item.iter().zip(&w).enumerate() {
            grad[j0 + j] += gj * s.sigma_w;
            d_log_sigma_w += gj * wj;
        }
        grad[r.sigma_w] += d_log_sigma_w;

        // Priors and Jacobian, scalar by scalar.
        let pc = &spec.priors;
        for (k, p) in spec.family.scalar_params().iter().enumerate() {
            let v = p.transform.constrain(x[k]);
            let (prior, d_prior) = match p.prior {
                PriorKind::Coefficient => {
                    let (lp, d) = cauchy_lpdf(v, pc.coef_scale);
                    (lp, d * p.transform.derivative(v))
                }
                PriorKind::Scale => {
                    let (lp, d) = half_cauchy_lpdf(v, pc.sd_scale);
                    (lp, d * p.transform.derivative(v))
                }
                PriorKind::Mixing => {
                    debug_assert_eq!(p.transform, Transform::Probability);
                    beta_lpdf_logit(v, -softplus(-x[k]), -softplus(x[k]), pc.mix_alpha, pc.mix_beta)
                }
            };
            let (lj, d_lj) = p.transform.log_jacobian(x[k]);
            lp += prior + lj;
            grad[k] += d_prior + d_lj;
        }
        for (z, gz) in x[k..].iter().zip(&mut grad[k..]) {
            lp += std_normal_lpdf(*z);
            *gz -= z;
        }

        if lp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            lp
        } else {
            f64::NEG_INFINITY
        }
    }
}

pub(super) fn log_prior_constrained(spec: &ModelSpec, c: &[f64]) -> f64 {
    let pc = &spec.priors;
    let params = spec.family.scalar_params();
    let mut lp = 0.0;
    for (p, &v) in params.iter().zip(c) {
        lp += match p.prior {
            PriorKind::Coefficient => cauchy_lpdf(v, pc.coef_scale).0,
            PriorKind::Scale => half_cauchy_lpdf(v, pc.sd_scale).0,
            PriorKind::Mixing => beta_lpdf_logit(v, v.ln(), (-v).ln_1p(), pc.mix_alpha, pc.mix_beta).0,
        };
    }
    lp + c[params.len()..].iter().map(|&z| std_normal_lpdf(z)).sum::<f64>()
}

impl LogDensity for Posterior {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.log_density_and_grad(x, grad)
    }

    fn param_names(&self) -> Vec<String> {
        self.spec.output_names()
    }

    fn write_draw(&self, x: &[f64], out: &mut Vec<f64>) {
        let params = self.spec.family.scalar_params();
        let s = self.scalars_from_unconstrained(x);
        out.extend(params.iter().zip(x).map(|(p, &v)| p.transform.constrain(v)));
        let (u, w) = self.split_effects(x, &s);
        out.extend(u);
        out.extend(w);
    }

    fn n_obs(&self) -> usize {
        self.obs.len()
    }

    fn pointwise_loglik(&self, x: &[f64], out: &mut [f64]) {
        let s = self.scalars_from_unconstrained(x);
        let (u, w) = self.split_effects(x, &s);
        self.likelihood(&s, &u, &w, Some(out), None);
    }
}

impl Family {
    /// Whether trials in `condition` are modeled as a two-component mixture.
    pub fn mixes(self, condition: Condition) -> bool {
        match self {
            Family::Standard => false,
            Family::HomogeneousOverwriting | Family::HeterogeneousOverwriting => true,
            Family::Percolation => condition == Condition::Attraction,
        }
    }
}
