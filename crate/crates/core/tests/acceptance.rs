//! End-to-end checks, one line of output per criterion. Runs without the
//! libtest harness so the lines are printed even when every check passes.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use mixrt::cli::run_from;
use mixrt::data::{Condition, Dataset, Trial};
use mixrt::models::{Family, ModelSpec, ParameterVector, PriorConfig};
use mixrt::psis_loo::{compare, elpd_loo, exact_loo_with, gpd_fit, LeaveOneOut, LooError};
use mixrt::sampler::{mcse_mean, rhat_of_chains, sample, LogDensity, SamplerConfig};
use mixrt::simulate::{self, derive_seed, model_recovery, recovery_study, Design, TrueParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

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

fn gradient() -> Outcome {
    let data = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for family in Family::ALL {
        let spec = ModelSpec::for_dataset(family, PriorConfig::default(), &data).unwrap();
        for _ in 0..100 {
            let mut x: Vec<f64> = (0..spec.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            x[0] += 6.0;
            let g = spec.grad_log_posterior(&x, &data).unwrap();
            for k in 0..x.len() {
                let (mut hi, mut lo) = (x.clone(), x.clone());
                hi[k] += h;
                lo[k] -= h;
                let fd =
                    (spec.log_posterior(&hi, &data).unwrap() - spec.log_posterior(&lo, &data).unwrap()) / (2.0 * h);
                worst = worst.max((g[k] - fd).abs() / g[k].abs().max(1.0));
            }
        }
    }
    check(
        worst < 1e-6,
        format!("max relative error {worst:.2e} over 4 x 100 points"),
    )
}

fn mixture_collapse() -> Outcome {
    let data = toy();
    let std = ModelSpec::for_dataset(Family::Standard, PriorConfig::default(), &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for n in 0..1000 {
        let family = if n % 2 == 0 {
            Family::HomogeneousOverwriting
        } else {
            Family::HeterogeneousOverwriting
        };
        let spec = ModelSpec::for_dataset(family, PriorConfig::default(), &data).unwrap();
        let beta = rng.random_range(4.0..8.0);
        let sigma_e = rng.random_range(0.05..2.0);
        let (su, sw) = (rng.random_range(0.01..1.0), rng.random_range(0.01..1.0));
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut c = vec![0.0; spec.n_scalars()];
        let mut set = |name: &str, v: f64| c[family.scalar_index(name).unwrap()] = v;
        set("beta", beta);
        set("delta", 0.0);
        set("prob_hi", rng.random_range(0.0..1.0));
        set("prob_lo", rng.random_range(0.0..1.0));
        set("sigma_e", sigma_e);
        set("sigma_u", su);
        set("sigma_w", sw);
        if family == Family::HeterogeneousOverwriting {
            set("sigmap_e", sigma_e);
        }
        c.extend(&z);
        let mut s = vec![beta, 0.0, sigma_e, su, sw];
        s.extend(&z);
        let point = |c: Vec<f64>| ParameterVector {
            unconstrained: vec![],
            constrained: c,
            log_jacobian: 0.0,
        };
        let mix = spec.pointwise_loglik(&point(c), &data).unwrap();
        let base = std.pointwise_loglik(&point(s), &data).unwrap();
        for (a, b) in mix.iter().zip(&base) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        worst <= 1e-12,
        format!("max |difference| {worst:.2e} over 1000 configurations"),
    )
}

/// N(mean, D R D) with R an AR(1) correlation matrix, whose inverse is
/// tridiagonal.
struct Gaussian {
    mean: [f64; 5],
    sd: [f64; 5],
    rho: f64,
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        5
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r: Vec<f64> = (0..5).map(|i| (x[i] - self.mean[i]) / self.sd[i]).collect();
        let c = 1.0 / (1.0 - self.rho * self.rho);
        let mut q = 0.0;
        for i in 0..5 {
            let diag = if i == 0 || i == 4 {
                1.0
            } else {
                1.0 + self.rho * self.rho
            };
            let mut pr = diag * r[i];
            if i > 0 {
                pr -= self.rho * r[i - 1];
            }
            if i < 4 {
                pr -= self.rho * r[i + 1];
            }
            pr *= c;
            q += r[i] * pr;
            grad[i] = -pr / self.sd[i];
        }
        -0.5 * q
    }
}

fn sampler() -> Outcome {
    let target = Gaussian {
        mean: [1.0, -2.0, 0.5, 3.0, 0.0],
        sd: [1.0, 2.0, 0.5, 3.0, 1.0],
        rho: 0.6,
    };
    let cfg = SamplerConfig {
        store_loglik: false,
        seed: 3,
        ..SamplerConfig::default()
    };
    let draws = sample(&target, &cfg).unwrap();
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    let mut worst_rhat: f64 = 0.0;
    for k in 0..5 {
        let chains = draws.chains(k);
        let mean = draws.pooled(k).iter().sum::<f64>() / draws.n_samples() as f64;
        let z = (mean - target.mean[k]).abs() / mcse_mean(&chains).unwrap();
        let rhat = rhat_of_chains(&chains).unwrap();
        ok &= z < 3.0 && rhat < 1.01;
        worst_z = worst_z.max(z);
        worst_rhat = worst_rhat.max(rhat);
    }
    check(ok, format!("max |error|/MCSE {worst_z:.2}, max R-hat {worst_rhat:.4}"))
}

/// y_i ~ N(mu, 1), mu ~ N(0, 3^2).
struct NormalMean {
    y: Vec<f64>,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

impl LogDensity for NormalMean {
    fn dim(&self) -> usize {
        1
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mu = x[0];
        grad[0] = self.y.iter().map(|y| y - mu).sum::<f64>() - mu / 9.0;
        -0.5 * self.y.iter().map(|y| (y - mu).powi(2)).sum::<f64>() - mu * mu / 18.0
    }

    fn n_obs(&self) -> usize {
        self.y.len()
    }

    fn pointwise_loglik(&self, x: &[f64], out: &mut [f64]) {
        for (o, y) in out.iter_mut().zip(&self.y) {
            *o = -0.5 * (y - x[0]).powi(2) - LN_SQRT_2PI;
        }
    }
}

impl LeaveOneOut for NormalMean {
    type Fit = NormalMean;

    fn n_obs(&self) -> usize {
        self.y.len()
    }

    fn leave_out(&self, i: usize) -> Result<NormalMean, LooError> {
        let mut y = self.y.clone();
        y.remove(i);
        Ok(NormalMean { y })
    }

    fn held_out_loglik(&self, _fit: &NormalMean, i: usize, draw: &[f64]) -> f64 {
        -0.5 * (self.y[i] - draw[0]).powi(2) - LN_SQRT_2PI
    }
}

fn loo_vs_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let normal = rand_distr::Normal::new(0.5, 1.0).unwrap();
    let model = NormalMean {
        y: (0..20).map(|_| rng.sample(normal)).collect(),
    };
    let cfg = SamplerConfig {
        seed: 4,
        ..SamplerConfig::default()
    };
    let psis = elpd_loo(&sample(&model, &cfg).unwrap()).unwrap();
    let exact = exact_loo_with(&model, &cfg).unwrap();
    let max_k = psis.khat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst = psis
        .pointwise
        .iter()
        .zip(&exact.pointwise)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let total = (psis.elpd_loo - exact.elpd_loo).abs();
    check(
        max_k < 0.5 && worst < 0.1 && total < 0.2,
        format!("max k-hat {max_k:.3}, max pointwise |diff| {worst:.4}, total |diff| {total:.4}"),
    )
}

fn gpd() -> Outcome {
    let (k, sigma) = (0.5, 1.0);
    let hits = (0..100u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let x: Vec<f64> = (0..2000)
                .map(|_| {
                    let u: f64 = rng.random();
                    sigma / k * ((1.0 - u).powf(-k) - 1.0)
                })
                .collect();
            let fit = gpd_fit(&x).unwrap();
            (0.4..=0.6).contains(&fit.k)
        })
        .count();
    check(hits >= 95, format!("k-hat in [0.4, 0.6] for {hits}/100 seeds"))
}

fn parameter_recovery() -> Outcome {
    let truth = TrueParams::default_for(Family::HeterogeneousOverwriting);
    let report = recovery_study(&truth, &Design::default(), 20, &SamplerConfig::default()).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for p in &report.parameters {
        if p.name == "diffprob" {
            ok &= (p.mean_estimate - 0.20).abs() <= 0.12;
            parts.push(format!("diffprob mean {:.3}", p.mean_estimate));
        } else {
            ok &= p.covered >= 16;
            parts.push(format!("{} {}/20", p.name, p.covered));
        }
    }
    parts.push(format!("{} excluded", report.n_excluded));
    check(ok, parts.join(", "))
}

fn model_ordering() -> Outcome {
    use Family::*;
    let truth = TrueParams::default_for(HeterogeneousOverwriting);
    let design = Design {
        n_subjects: 60,
        n_items: 32,
        reps: 1,
    };
    let cfg = SamplerConfig {
        seed: 7,
        ..SamplerConfig::default()
    };
    let report = model_recovery(&truth, &design, &cfg).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (a, b) in [
        (HomogeneousOverwriting, HeterogeneousOverwriting),
        (Percolation, HomogeneousOverwriting),
        (Standard, HomogeneousOverwriting),
    ] {
        let r = compare(report.loo(a), report.loo(b)).unwrap();
        ok &= r.elpd_diff > 2.0 * r.se_diff;
        parts.push(format!("{b} over {a} {:.1} (SE {:.1})", r.elpd_diff, r.se_diff));
    }
    let mut additivity: f64 = 0.0;
    for a in Family::ALL {
        for b in Family::ALL {
            for c in Family::ALL {
                let ab = compare(report.loo(a), report.loo(b)).unwrap().elpd_diff;
                let bc = compare(report.loo(b), report.loo(c)).unwrap().elpd_diff;
                let ac = compare(report.loo(a), report.loo(c)).unwrap().elpd_diff;
                additivity = additivity.max((ab + bc - ac).abs());
            }
        }
    }
    ok &= additivity <= 1e-9;
    parts.push(format!("additivity error {additivity:.1e}"));
    check(ok, parts.join(", "))
}

fn null_safety() -> Outcome {
    let truth = TrueParams::default_for(Family::Standard);
    let mut passes = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for seed in 0..10u64 {
        let cfg = SamplerConfig {
            seed: derive_seed(8, seed),
            ..SamplerConfig::default()
        };
        let report = model_recovery(&truth, &Design::default(), &cfg).unwrap();
        let std = report.loo(Family::Standard);
        let mut safe = true;
        for m in [
            Family::HomogeneousOverwriting,
            Family::HeterogeneousOverwriting,
            Family::Percolation,
        ] {
            let r = compare(std, report.loo(m)).unwrap();
            worst = worst.max(r.elpd_diff / r.se_diff);
            safe &= r.elpd_diff <= 2.0 * r.se_diff;
        }
        passes += usize::from(safe);
    }
    check(
        passes >= 9,
        format!("{passes}/10 seeds with no mixture ahead by > 2 SE (largest diff/SE {worst:.2})"),
    )
}

fn facilitation_sign() -> Outcome {
    let truth = TrueParams::new(
        Family::Standard,
        &[
            ("beta_1", 6.0),
            ("beta_2", -0.03),
            ("sigma_e", 0.35),
            ("sigma_u", 0.2),
            ("sigma_w", 0.1),
        ],
    )
    .unwrap();
    let design = Design {
        n_subjects: 60,
        n_items: 32,
        reps: 1,
    };
    let cfg = SamplerConfig {
        store_loglik: false,
        ..SamplerConfig::default()
    };
    let mut hits = 0;
    let mut masses = Vec::new();
    for r in 0..20u64 {
        let sim = simulate::simulate(&truth, &design, derive_seed(9, 2 * r)).unwrap();
        let cfg = SamplerConfig {
            seed: derive_seed(9, 2 * r + 1),
            ..cfg.clone()
        };
        let (_, draws) = simulate::fit(Family::Standard, PriorConfig::default(), &sim.dataset, &cfg).unwrap();
        let beta_2 = draws.pooled(draws.param_index("beta_2").unwrap());
        let below = beta_2.iter().filter(|&&b| b < 0.0).count() as f64 / beta_2.len() as f64;
        hits += usize::from(below >= 0.95);
        masses.push(below);
    }
    let min = masses.iter().copied().fold(1.0, f64::min);
    check(
        hits >= 18,
        format!("{hits}/20 replications with >= 95% of beta_2 below 0 (smallest {min:.3})"),
    )
}

fn run(args: &[&str]) -> i32 {
    run_from(std::iter::once("mixrt").chain(args.iter().copied()))
}

fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<_> = fs::read_dir(a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for name in &names {
        let (x, y) = (fs::read(a.join(name)), fs::read(b.join(name)));
        if x.map_err(|e| e.to_string())? != y.map_err(|e| format!("{}: {e}", name.to_string_lossy()))? {
            return Err(format!("{} differs", name.to_string_lossy()));
        }
    }
    Ok(names.len())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let steps: Vec<(&str, Vec<String>, i32)> = vec![
        (
            "simulate",
            vec![
                "simulate".into(),
                "--model".into(),
                "hom-overwrite".into(),
                "--subjects".into(),
                "12".into(),
                "--items".into(),
                "8".into(),
                "--seed".into(),
                "5".into(),
                "--out".into(),
                p("sim1"),
            ],
            0,
        ),
        (
            "simulate rerun",
            vec![
                "simulate".into(),
                "--config".into(),
                p("sim1/config.json"),
                "--out".into(),
                p("sim2"),
            ],
            0,
        ),
        (
            "fit",
            vec![
                "fit".into(),
                "--model".into(),
                "hom-overwrite".into(),
                "--data".into(),
                p("sim1/data.csv"),
                "--chains".into(),
                "2".into(),
                "--warmup".into(),
                "200".into(),
                "--draws".into(),
                "200".into(),
                "--seed".into(),
                "6".into(),
                "--out".into(),
                p("fit_hom1"),
            ],
            -1,
        ),
        (
            "fit rerun",
            vec![
                "fit".into(),
                "--config".into(),
                p("fit_hom1/config.json"),
                "--out".into(),
                p("fit_hom2"),
            ],
            -1,
        ),
        (
            "fit standard",
            vec![
                "fit".into(),
                "--model".into(),
                "standard".into(),
                "--data".into(),
                p("sim1/data.csv"),
                "--chains".into(),
                "2".into(),
                "--warmup".into(),
                "200".into(),
                "--draws".into(),
                "200".into(),
                "--seed".into(),
                "6".into(),
                "--out".into(),
                p("fit_std"),
            ],
            -1,
        ),
        (
            "compare",
            vec!["compare".into(), p("fit_std"), p("fit_hom1"), "--out".into(), p("cmp1")],
            0,
        ),
        (
            "compare rerun",
            vec![
                "compare".into(),
                "--config".into(),
                p("cmp1/config.json"),
                "--out".into(),
                p("cmp2"),
            ],
            0,
        ),
    ];
    let mut codes = Vec::new();
    for (what, args, want) in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let code = run(&args);
        if code == 1 || (*want >= 0 && code != *want) {
            return Err(format!("{what} exited {code}"));
        }
        codes.push(code);
    }
    if codes[2] != codes[3] {
        return Err("rerun exit code differs".into());
    }
    let mut files = 0;
    for (a, b) in [("sim1", "sim2"), ("fit_hom1", "fit_hom2"), ("cmp1", "cmp2")] {
        files += same_files(&dir.path().join(a), &dir.path().join(b))?;
    }
    Ok(format!(
        "{files} output files identical across simulate, fit and compare reruns"
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient vs finite differences", gradient),
        ("mixture collapse", mixture_collapse),
        ("sampler on a correlated Gaussian", sampler),
        ("PSIS-LOO vs exact LOO", loo_vs_exact),
        ("GPD shape recovery", gpd),
        ("heterogeneous parameter recovery", parameter_recovery),
        ("model recovery ordering", model_ordering),
        ("null safety", null_safety),
        ("facilitation sign", facilitation_sign),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let id = (n + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} {name}: PASS ({detail}; {secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({detail}; {secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
