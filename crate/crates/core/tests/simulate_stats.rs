use mixrt::data::Condition;
use mixrt::models::Family;
use mixrt::simulate::{simulate, Design, TrueParams};
use statrs::distribution::{ContinuousCDF, Normal};

const BIG: Design = Design {
    n_subjects: 100,
    n_items: 100,
    reps: 1,
};

fn without_random_effects(family: Family) -> TrueParams {
    let mut p = TrueParams::default_for(family);
    p.values.insert("sigma_u".into(), 0.0);
    p.values.insert("sigma_w".into(), 0.0);
    p
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn standard_log_residuals_are_normal() {
    let p = without_random_effects(Family::Standard);
    let sim = simulate(&p, &BIG, 1).unwrap();
    let (b1, b2, sigma) = (p.get("beta_1"), p.get("beta_2"), p.get("sigma_e"));
    let resid: Vec<f64> = sim
        .dataset
        .trials()
        .iter()
        .map(|t| (t.rt.ln() - b1 - b2 * t.condition.code()) / sigma)
        .collect();
    let n = resid.len() as f64;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let d = ks_statistic(resid, |x| std_normal.cdf(x));
    // 1% critical value.
    assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn lognormal_condition_means() {
    let p = without_random_effects(Family::Standard);
    let sim = simulate(&p, &BIG, 2).unwrap();
    let sigma = p.get("sigma_e");
    for cond in [Condition::Attraction, Condition::NoAttraction] {
        let rts: Vec<f64> = sim
            .dataset
            .trials()
            .iter()
            .filter(|t| t.condition == cond)
            .map(|t| t.rt)
            .collect();
        let n = rts.len() as f64;
        let mu = p.get("beta_1") + p.get("beta_2") * cond.code();
        let mean = (mu + 0.5 * sigma * sigma).exp();
        let sd = mean * ((sigma * sigma).exp() - 1.0).sqrt();
        let got = rts.iter().sum::<f64>() / n;
        assert!((got - mean).abs() < 4.0 * sd / n.sqrt(), "{cond}: {got} vs {mean}");
    }
}

#[test]
fn mixing_fractions_match_condition_probabilities() {
    let p = TrueParams::default_for(Family::HomogeneousOverwriting);
    let sim = simulate(&p, &BIG, 3).unwrap();
    for (cond, prob) in [
        (Condition::NoAttraction, p.get("prob_hi")),
        (Condition::Attraction, p.get("prob_lo")),
    ] {
        let flags: Vec<bool> = sim
            .dataset
            .trials()
            .iter()
            .zip(&sim.latent)
            .filter(|(t, _)| t.condition == cond)
            .map(|(_, &l)| l)
            .collect();
        let n = flags.len() as f64;
        let frac = flags.iter().filter(|&&l| l).count() as f64 / n;
        let se = (prob * (1.0 - prob) / n).sqrt();
        assert!((frac - prob).abs() < 4.0 * se, "{cond}: {frac} vs {prob}");
    }
}

#[test]
fn shifted_component_has_its_own_spread() {
    let p = without_random_effects(Family::HeterogeneousOverwriting);
    let sim = simulate(&p, &BIG, 4).unwrap();
    let slow: Vec<f64> = sim
        .dataset
        .trials()
        .iter()
        .zip(&sim.latent)
        .filter(|(_, &l)| l)
        .map(|(t, _)| (t.rt.ln() - p.get("beta") - p.get("delta")) / p.get("sigmap_e"))
        .collect();
    let n = slow.len() as f64;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let d = ks_statistic(slow, |x| std_normal.cdf(x));
    assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn random_intercepts_have_the_stated_spread() {
    let mut p = TrueParams::default_for(Family::Standard);
    p.values.insert("sigma_u".into(), 0.3);
    let design = Design {
        n_subjects: 2000,
        n_items: 2,
        reps: 1,
    };
    let sim = simulate(&p, &design, 5).unwrap();
    let u = &sim.random_effects.u;
    let n = u.len() as f64;
    let var = u.iter().map(|x| x * x).sum::<f64>() / n;
    // Var of the sample variance of normals is 2 sigma^4 / n.
    let se = (2.0 * 0.3f64.powi(4) / n).sqrt();
    assert!((var - 0.09).abs() < 4.0 * se, "{var}");
}
