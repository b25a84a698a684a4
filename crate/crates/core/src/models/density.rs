//! Scalar log densities and the transforms between sampling space and model
//! space.

use super::ModelError;

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const LN_PI: f64 = 1.144_729_885_849_400_2;

/// LogNormal log density of `y` (milliseconds) with log-scale location `mu`
/// and log-scale standard deviation `sigma`.
pub fn lognormal_logpdf(y: f64, mu: f64, sigma: f64) -> Result<f64, ModelError> {
    if !(y > 0.0) {
        return Err(ModelError::Domain(format!("lognormal requires y > 0, got {y}")));
    }
    if !(sigma > 0.0) {
        return Err(ModelError::Domain(format!("lognormal requires sigma > 0, got {sigma}")));
    }
    Ok(lognormal_lpdf_ln(y.ln(), mu, sigma))
}

/// LogNormal log density given `ln y` directly.
#[inline]
pub(crate) fn lognormal_lpdf_ln(ln_y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (ln_y - mu) / sigma;
    -ln_y - sigma.ln() - LN_SQRT_2PI - 0.5 * z * z
}

/// `ln(lambda * exp(lp1) + (1 - lambda) * exp(lp2))`, evaluated without
/// leaving log space.
pub fn log_mix(lambda: f64, lp1: f64, lp2: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ModelError::Domain(format!(
            "mixing probability must lie in [0, 1], got {lambda}"
        )));
    }
    if lambda == 1.0 {
        return Ok(lp1);
    }
    if lambda == 0.0 {
        return Ok(lp2);
    }
    Ok(log_sum_exp2(lambda.ln() + lp1, (-lambda).ln_1p() + lp2))
}

#[inline]
pub(crate) fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Cauchy(0, scale) log density and its derivative in `x`.
#[inline]
pub(crate) fn cauchy_lpdf(x: f64, scale: f64) -> (f64, f64) {
    let s2 = scale * scale;
    let lp = -LN_PI - scale.ln() - (x * x / s2).ln_1p();
    (lp, -2.0 * x / (s2 + x * x))
}

/// Half-Cauchy(0, scale) on the positive half-line.
#[inline]
pub(crate) fn half_cauchy_lpdf(x: f64, scale: f64) -> (f64, f64) {
    let (lp, d) = cauchy_lpdf(x, scale);
    (lp + std::f64::consts::LN_2, d)
}

#[inline]
pub(crate) fn std_normal_lpdf(z: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * z * z
}

/// Beta(a, b) log density at `p` with the logit-scale derivative folded in:
/// returns `(log density, d/d logit(p))`.
pub(crate) fn beta_lpdf_logit(p: f64, ln_p: f64, ln_1mp: f64, a: f64, b: f64) -> (f64, f64) {
    let lp = (a - 1.0) * ln_p + (b - 1.0) * ln_1mp - statrs::function::beta::ln_beta(a, b);
    (lp, (a - 1.0) * (1.0 - p) - (b - 1.0) * p)
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// How an unconstrained coordinate maps into model space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// `exp(x)`, onto (0, inf).
    Positive,
    /// `-exp(x)`, onto (-inf, 0).
    Negative,
    /// Logistic, onto (0, 1).
    Probability,
}

impl Transform {
    pub fn constrain(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Positive => x.exp(),
            Transform::Negative => -x.exp(),
            Transform::Probability => logistic(x),
        }
    }

    /// Inverse of `constrain`; `None` outside the support.
    pub fn unconstrain(self, v: f64) -> Option<f64> {
        match self {
            Transform::Identity => v.is_finite().then_some(v),
            Transform::Positive => (v > 0.0 && v.is_finite()).then(|| v.ln()),
            Transform::Negative => (v < 0.0 && v.is_finite()).then(|| (-v).ln()),
            Transform::Probability => (v > 0.0 && v < 1.0).then(|| (v / (1.0 - v)).ln()),
        }
    }

    /// `ln |d constrain / dx|` and its derivative in `x`.
    pub fn log_jacobian(self, x: f64) -> (f64, f64) {
        match self {
            Transform::Identity => (0.0, 0.0),
            Transform::Positive | Transform::Negative => (x, 1.0),
            Transform::Probability => {
                let ln_p = -softplus(-x);
                let ln_1mp = -softplus(x);
                (ln_p + ln_1mp, 1.0 - 2.0 * logistic(x))
            }
        }
    }

    /// Derivative of `constrain` at `x`, given the constrained value `v`.
    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Positive | Transform::Negative => v,
            Transform::Probability => v * (1.0 - v),
        }
    }
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
