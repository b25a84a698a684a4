use mixrt::data::{Condition, Dataset, Trial};
use mixrt::models::{Family, ModelSpec, ParameterVector, PriorConfig, Transform};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn toy() -> Dataset {
    let rts = [310.0, 455.0, 520.0, 280.0, 690.0, 401.0];
    let trials = rts
        .iter()
        .enumerate()
        .map(|(n, &rt)| Trial {
            subject: n % 2,
            item: n % 3,
            condition: if n % 2 == 0 {
                Condition::Attraction
            } else {
                Condition::NoAttraction
            },
            rt,
        })
        .collect();
    Dataset::new(trials, 2, 3).unwrap()
}

fn lognormal_density(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y.ln() - mu) / sigma;
    (-0.5 * z * z).exp() / (y * sigma * (2.0 * PI).sqrt())
}

fn by_name(spec: &ModelSpec, c: &[f64], name: &str) -> f64 {
    c[spec.family.scalar_index(name).unwrap()]
}

/// Naive per-trial likelihood in probability space, written out per family.
fn naive_likelihood(spec: &ModelSpec, c: &[f64], data: &Dataset) -> Vec<f64> {
    let k = spec.n_scalars();
    let v = |n: &str| by_name(spec, c, n);
    let (su, sw) = (v("sigma_u"), v("sigma_w"));
    data.trials()
        .iter()
        .map(|t| {
            let re = su * c[k + t.subject] + sw * c[k + spec.n_subjects + t.item];
            let plus = t.condition == Condition::Attraction;
            match spec.family {
                Family::Standard => {
                    let x = if plus { 1.0 } else { -1.0 };
                    lognormal_density(t.rt, v("beta_1") + v("beta_2") * x + re, v("sigma_e"))
                }
                Family::HomogeneousOverwriting | Family::HeterogeneousOverwriting => {
                    let p = if plus { v("prob_lo") } else { v("prob_hi") };
                    let slow = if spec.family == Family::HeterogeneousOverwriting {
                        v("sigmap_e")
                    } else {
                        v("sigma_e")
                    };
                    let mu = v("beta") + re;
                    p * lognormal_density(t.rt, mu + v("delta"), slow)
                        + (1.0 - p) * lognormal_density(t.rt, mu, v("sigma_e"))
                }
                Family::Percolation => {
                    let mu = v("beta") + re;
                    let base = lognormal_density(t.rt, mu, v("sigma_e"));
                    if plus {
                        let p = v("prob_perc");
                        p * lognormal_density(t.rt, mu + v("gamma"), v("sigma_e")) + (1.0 - p) * base
                    } else {
                        base
                    }
                }
            }
        })
        .collect()
}

/// Log posterior on the unconstrained scale, assembled from textbook
/// densities. Mixing prior is Beta(2, 3), whose normalizer is 1/12.
fn naive_log_posterior(spec: &ModelSpec, x: &[f64], data: &Dataset) -> f64 {
    let c = spec.constrain(x).unwrap().constrained;
    let mut lp: f64 = naive_likelihood(spec, &c, data).iter().map(|l| l.ln()).sum();
    let s = 2.5;
    for (k, p) in spec.family.scalar_params().iter().enumerate() {
        let v = c[k];
        let cauchy = (1.0 / (PI * s * (1.0 + (v / s).powi(2)))).ln();
        lp += match p.name {
            "beta" | "beta_1" | "beta_2" | "delta" | "gamma" => cauchy,
            "prob_hi" | "prob_lo" | "prob_perc" => (12.0 * v * (1.0 - v).powi(2)).ln(),
            _ => 2f64.ln() + cauchy,
        };
        lp += match p.transform {
            Transform::Identity => 0.0,
            Transform::Positive | Transform::Negative => x[k],
            Transform::Probability => (v * (1.0 - v)).ln(),
        };
    }
    for z in &x[spec.n_scalars()..] {
        lp += (-0.5 * z * z).exp().ln() - 0.5 * (2.0 * PI).ln();
    }
    lp
}

fn random_point(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
    x[0] = rng.random_range(5.0..7.0);
    x
}

#[test]
fn log_posterior_matches_naive_oracle() {
    let data = toy();
    let priors = PriorConfig {
        mix_alpha: 2.0,
        mix_beta: 3.0,
        ..PriorConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for family in Family::ALL {
        let spec = ModelSpec::for_dataset(family, priors, &data).unwrap();
        for _ in 0..50 {
            let x = random_point(&spec, &mut rng);
            let got = spec.log_posterior(&x, &data).unwrap();
            let want = naive_log_posterior(&spec, &x, &data);
            assert!(
                (got - want).abs() <= 1e-9 * want.abs().max(1.0),
                "{family}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn pointwise_matches_naive_likelihood() {
    let data = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for family in Family::ALL {
        let spec = ModelSpec::for_dataset(family, PriorConfig::default(), &data).unwrap();
        for _ in 0..50 {
            let theta = spec.constrain(&random_point(&spec, &mut rng)).unwrap();
            let got = spec.pointwise_loglik(&theta, &data).unwrap();
            let want = naive_likelihood(&spec, &theta.constrained, &data);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w.ln()).abs() < 1e-10, "{family}: {g} vs {}", w.ln());
            }
        }
    }
}

fn with_scalars(spec: &ModelSpec, base: &[f64], values: &[(&str, f64)]) -> ParameterVector {
    let mut c = base.to_vec();
    for (name, v) in values {
        c[spec.family.scalar_index(name).unwrap()] = *v;
    }
    ParameterVector {
        unconstrained: vec![],
        constrained: c,
        log_jacobian: 0.0,
    }
}

#[test]
fn percolation_without_percolating_is_standard() {
    let data = toy();
    let perc = ModelSpec::for_dataset(Family::Percolation, PriorConfig::default(), &data).unwrap();
    let std = ModelSpec::for_dataset(Family::Standard, PriorConfig::default(), &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let beta = rng.random_range(5.0..7.0);
        let sigma_e = rng.random_range(0.1..1.0);
        let (su, sw) = (rng.random_range(0.05..0.5), rng.random_range(0.05..0.5));
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut base = vec![0.0; 6];
        base.extend(&z);
        let p = perc.pointwise_loglik(
            &with_scalars(
                &perc,
                &base,
                &[
                    ("beta", beta),
                    ("gamma", -rng.random_range(0.01..2.0)),
                    ("prob_perc", 0.0),
                    ("sigma_e", sigma_e),
                    ("sigma_u", su),
                    ("sigma_w", sw),
                ],
            ),
            &data,
        );
        let mut base = vec![0.0; 5];
        base.extend(&z);
        let s = std.pointwise_loglik(
            &with_scalars(
                &std,
                &base,
                &[
                    ("beta_1", beta),
                    ("beta_2", 0.0),
                    ("sigma_e", sigma_e),
                    ("sigma_u", su),
                    ("sigma_w", sw),
                ],
            ),
            &data,
        );
        for (a, b) in p.unwrap().iter().zip(&s.unwrap()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn saturated_logit_behaves_like_an_exact_zero() {
    let data = toy();
    let spec = ModelSpec::for_dataset(Family::Percolation, PriorConfig::default(), &data).unwrap();
    let mut x = vec![6.0, -1.0, -800.0, -1.0, -1.5, -2.0, 0.3, -0.2, 0.5, 0.1, -0.4];
    let lp = spec.log_posterior(&x, &data).unwrap();
    let grad = spec.grad_log_posterior(&x, &data).unwrap();
    assert!(lp.is_finite());
    assert!(grad.iter().all(|g| g.is_finite()));
    // No trial is assigned to the shifted component, so gamma only sees its prior.
    let theta = spec.constrain(&x).unwrap();
    let ll = spec.pointwise_loglik(&theta, &data).unwrap();
    x[1] = 0.5;
    let moved = spec.pointwise_loglik(&spec.constrain(&x).unwrap(), &data).unwrap();
    assert_eq!(ll, moved);
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn unconstrain_inverts_constrain(seed in any::<u64>(), family_idx in 0usize..4) {
        let data = toy();
        let spec = ModelSpec::for_dataset(Family::ALL[family_idx], PriorConfig::default(), &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-8.0..8.0)).collect();
        let theta = spec.constrain(&x).unwrap();
        let back = spec.unconstrain(&theta.constrained).unwrap();
        for (a, b) in x.iter().zip(&back.unconstrained) {
            prop_assert!((a - b).abs() < 1e-8 * a.abs().max(1.0));
        }
        prop_assert!((theta.log_jacobian - back.log_jacobian).abs() < 1e-8);
        let from_out = spec.from_output(&spec.output_values(&theta)).unwrap();
        for (a, b) in x.iter().zip(&from_out.unconstrained) {
            prop_assert!((a - b).abs() < 1e-7 * a.abs().max(1.0));
        }
    }

    #[test]
    fn constrained_values_respect_supports(seed in any::<u64>(), family_idx in 0usize..4) {
        let family = Family::ALL[family_idx];
        let spec = ModelSpec::new(family, PriorConfig::default(), 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-30.0..30.0)).collect();
        let theta = spec.constrain(&x).unwrap();
        for (p, v) in family.scalar_params().iter().zip(&theta.constrained) {
            match p.transform {
                Transform::Identity => prop_assert!(v.is_finite()),
                Transform::Positive => prop_assert!(*v > 0.0),
                Transform::Negative => prop_assert!(*v < 0.0),
                Transform::Probability => prop_assert!((0.0..=1.0).contains(v)),
            }
        }
        prop_assert!(theta.log_jacobian.is_finite());
    }

    #[test]
    fn log_jacobian_is_log_abs_derivative(x in -20.0f64..20.0) {
        for t in [Transform::Positive, Transform::Negative, Transform::Probability] {
            let h = 1e-5;
            let d = (t.constrain(x + h) - t.constrain(x - h)) / (2.0 * h);
            let (lj, _) = t.log_jacobian(x);
            if t != Transform::Probability || x.abs() < 10.0 {
                prop_assert!((lj - d.abs().ln()).abs() < 1e-5, "{:?} at {}", t, x);
            }
        }
    }

    #[test]
    fn density_is_finite_for_positive_times(
        seed in any::<u64>(),
        family_idx in 0usize..4,
        rt in 1.0f64..1e5,
    ) {
        let trials = vec![
            Trial { subject: 0, item: 0, condition: Condition::Attraction, rt },
            Trial { subject: 0, item: 0, condition: Condition::NoAttraction, rt },
        ];
        let data = Dataset::new(trials, 1, 1).unwrap();
        let spec = ModelSpec::for_dataset(Family::ALL[family_idx], PriorConfig::default(), &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ll = spec.pointwise_loglik(&spec.constrain(&x).unwrap(), &data).unwrap();
        prop_assert!(ll.iter().all(|v| v.is_finite()));
    }
}
