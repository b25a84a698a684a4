//! Dynamic HMC (NUTS) with windowed warmup adaptation, plus split-chain
//! convergence diagnostics.

mod adapt;
mod diagnostics;
mod nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{ess, ess_of_chains, mcse_mean, rhat, rhat_of_chains, DiagnosticError};

use adapt::{metric_windows, DualAveraging, RunningVariance};
use nuts::{find_reasonable_step, transition, Hamiltonian, Point};

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `x`, writing its gradient into `grad`. A non-finite
    /// return value marks `x` as outside the support.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Names of the values [`write_draw`](Self::write_draw) records.
    fn param_names(&self) -> Vec<String> {
        (1..=self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    /// Appends the recorded values for the point `x`.
    fn write_draw(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(x);
    }

    /// Number of observations with a pointwise log-likelihood.
    fn n_obs(&self) -> usize {
        0
    }

    fn pointwise_loglik(&self, _x: &[f64], _out: &mut [f64]) {}
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("chain {chain}: no finite log density after {tries} initialization attempts")]
    Initialization { chain: usize, tries: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_draws: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    pub init_radius: f64,
    /// Keep the per-draw pointwise log-likelihood matrix.
    pub store_loglik: bool,
    /// Independent uniform starts per chain, each run through the initial
    /// warmup buffer; the chain continues from the one with the highest
    /// mean log density.
    pub init_candidates: usize,
    /// At the end of the initial buffer and again at the end of warmup,
    /// chains whose mean log density trails the best chain's by more than
    /// this restart from a copy of the best chain's state. `None` disables
    /// the check.
    pub restart_gap: Option<f64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_draws: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 20_160_901,
            init_radius: 2.0,
            store_loglik: true,
            init_candidates: 4,
            restart_gap: Some(5.0),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let fail = |m: String| Err(SamplerError::Config(m));
        if self.n_chains < 1 {
            return fail("n_chains must be at least 1".into());
        }
        if self.n_draws < 1 {
            return fail("n_draws must be at least 1".into());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return fail(format!("target_accept must lie in (0, 1), got {}", self.target_accept));
        }
        if !(1..=15).contains(&self.max_tree_depth) {
            return fail(format!(
                "max_tree_depth must lie in [1, 15], got {}",
                self.max_tree_depth
            ));
        }
        if self.init_candidates < 1 {
            return fail("init_candidates must be at least 1".into());
        }
        if self.restart_gap.is_some_and(|g| !(g > 0.0)) {
            return fail(format!("restart_gap must be positive, got {:?}", self.restart_gap));
        }
        if !(self.init_radius >= 0.0 && self.init_radius.is_finite()) {
            return fail(format!("init_radius must be non-negative, got {}", self.init_radius));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    /// Post-warmup divergent transitions.
    pub divergences: usize,
    pub warmup_divergences: usize,
    pub mean_tree_depth: f64,
    /// Post-warmup transitions that stopped at `max_tree_depth`.
    pub max_depth_hits: usize,
    pub mean_accept_stat: f64,
    pub n_leapfrog: usize,
    /// Chain whose state this one was moved to after the initial buffer.
    pub restarted_from: Option<usize>,
}

/// Post-warmup draws from every chain.
///
/// `values` is laid out chain-major, then draw, then parameter; `loglik`
/// chain-major, then draw, then observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub n_chains: usize,
    pub n_draws: usize,
    pub n_obs: usize,
    pub values: Vec<f64>,
    pub loglik: Option<Vec<f64>>,
    pub diagnostics: Vec<ChainDiagnostics>,
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    /// Total number of draws across chains.
    pub fn n_samples(&self) -> usize {
        self.n_chains * self.n_draws
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, chain: usize, draw: usize, param: usize) -> f64 {
        self.values[(chain * self.n_draws + draw) * self.n_params() + param]
    }

    /// All values of parameter `param`, one vector per chain.
    pub fn chains(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| (0..self.n_draws).map(|s| self.value(c, s, param)).collect())
            .collect()
    }

    /// All values of parameter `param` with chains concatenated.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.chains(param).concat()
    }

    /// The full parameter vector of one draw.
    pub fn draw(&self, chain: usize, draw: usize) -> &[f64] {
        let k = self.n_params();
        let start = (chain * self.n_draws + draw) * k;
        &self.values[start..start + k]
    }

    /// Pointwise log-likelihood row of one draw.
    pub fn loglik_row(&self, chain: usize, draw: usize) -> Option<&[f64]> {
        let n = self.n_obs;
        let start = (chain * self.n_draws + draw) * n;
        self.loglik.as_ref().map(|ll| &ll[start..start + n])
    }

    pub fn total_divergences(&self) -> usize {
        self.diagnostics.iter().map(|d| d.divergences).sum()
    }

    /// Draws from a subset of chains, in the order given.
    pub fn select_chains(&self, chains: &[usize]) -> PosteriorDraws {
        let k = self.n_params();
        let per_chain = self.n_draws * k;
        let values = chains
            .iter()
            .flat_map(|&c| self.values[c * per_chain..(c + 1) * per_chain].iter().copied())
            .collect();
        let loglik = self.loglik.as_ref().map(|ll| {
            let per = self.n_draws * self.n_obs;
            chains
                .iter()
                .flat_map(|&c| ll[c * per..(c + 1) * per].iter().copied())
                .collect()
        });
        PosteriorDraws {
            names: self.names.clone(),
            n_chains: chains.len(),
            n_draws: self.n_draws,
            n_obs: self.n_obs,
            values,
            loglik,
            diagnostics: chains.iter().map(|&c| self.diagnostics[c].clone()).collect(),
            seed: self.seed,
        }
    }
}

struct ChainOutput {
    values: Vec<f64>,
    loglik: Vec<f64>,
    diagnostics: ChainDiagnostics,
}

/// The RNG for `chain`: one root seed, with each chain on its own ChaCha
/// stream so that adding chains leaves existing ones unchanged.
pub fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64 + 1);
    rng
}

/// Draws from `model` with NUTS. Deterministic for a fixed seed,
/// regardless of how chains are scheduled across threads.
pub fn sample<M: LogDensity>(model: &M, cfg: &SamplerConfig) -> Result<PosteriorDraws, SamplerError> {
    cfg.validate()?;
    let n = cfg.n_chains;
    let k = cfg.init_candidates;
    let buffer_end = metric_windows(cfg.n_warmup).first().map_or(0, |w| w.0);
    let explore = buffer_end >= 2 && (k > 1 || (n > 1 && cfg.restart_gap.is_some()));
    let mut done = 0;
    let mut states: Vec<ChainState> = if explore {
        // Every candidate runs the initial buffer; each chain keeps its
        // best one.
        let mut candidates: Vec<Option<ChainState>> = (0..n * k)
            .into_par_iter()
            .map(|i| {
                let mut s = ChainState::start(model, cfg, i % n, i / n)?;
                s.warmup(model, cfg, 0..buffer_end, buffer_end / 2);
                Ok(Some(s))
            })
            .collect::<Result<_, SamplerError>>()?;
        done = buffer_end;
        (0..n)
            .map(|c| {
                let best = (0..k)
                    .map(|j| c + j * n)
                    .reduce(|a, b| {
                        let (la, lb) = (
                            candidates[a].as_ref().unwrap().mean_lp(),
                            candidates[b].as_ref().unwrap().mean_lp(),
                        );
                        if lb > la || la.is_nan() {
                            b
                        } else {
                            a
                        }
                    })
                    .unwrap();
                candidates[best].take().unwrap()
            })
            .collect()
    } else {
        (0..n)
            .into_par_iter()
            .map(|c| ChainState::start(model, cfg, c, 0))
            .collect::<Result<_, _>>()?
    };
    if let Some(gap) = cfg.restart_gap.filter(|_| explore && n > 1) {
        restart_trapped(&mut states, gap);
        // Second check over the second half of the remaining warmup.
        let track_from = done + (cfg.n_warmup - done) / 2;
        states.par_iter_mut().for_each(|s| {
            s.lp_sum = 0.0;
            s.lp_count = 0;
            s.warmup(model, cfg, done..cfg.n_warmup, track_from)
        });
        restart_trapped(&mut states, gap);
        done = cfg.n_warmup;
    }
    states
        .par_iter_mut()
        .for_each(|s| s.warmup(model, cfg, done..cfg.n_warmup, usize::MAX));
    let outputs: Vec<ChainOutput> = states.into_par_iter().map(|s| s.draw(model, cfg)).collect();

    let mut values = Vec::new();
    let mut loglik = Vec::new();
    let mut diagnostics = Vec::new();
    for out in outputs {
        values.extend(out.values);
        loglik.extend(out.loglik);
        diagnostics.push(out.diagnostics);
    }
    Ok(PosteriorDraws {
        names: model.param_names(),
        n_chains: cfg.n_chains,
        n_draws: cfg.n_draws,
        n_obs: model.n_obs(),
        values,
        loglik: (cfg.store_loglik && model.n_obs() > 0).then_some(loglik),
        diagnostics,
        seed: cfg.seed,
    })
}

const INIT_TRIES: usize = 100;

fn initialize<M: LogDensity, R: Rng>(
    model: &M,
    cfg: &SamplerConfig,
    chain: usize,
    rng: &mut R,
) -> Result<Point, SamplerError> {
    let r = cfg.init_radius;
    for _ in 0..INIT_TRIES {
        let q: Vec<f64> = (0..model.dim())
            .map(|_| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 })
            .collect();
        let z = Point::new(model, q);
        if z.is_finite() {
            return Ok(z);
        }
    }
    Err(SamplerError::Initialization {
        chain,
        tries: INIT_TRIES,
    })
}

/// Mutable state of one chain through warmup.
struct ChainState {
    rng: ChaCha8Rng,
    z: Point,
    inv_metric: Vec<f64>,
    step: f64,
    averager: DualAveraging,
    variance: RunningVariance,
    windows: Vec<(usize, usize)>,
    window_idx: usize,
    warmup_divergences: usize,
    lp_sum: f64,
    lp_count: usize,
    restarted_from: Option<usize>,
}

impl ChainState {
    fn start<M: LogDensity>(
        model: &M,
        cfg: &SamplerConfig,
        chain: usize,
        candidate: usize,
    ) -> Result<Self, SamplerError> {
        let mut rng = chain_rng(cfg.seed, chain);
        if candidate > 0 {
            rng.set_stream(chain as u64 + 1 + ((candidate as u64) << 32));
        }
        let dim = model.dim();
        let z = initialize(model, cfg, chain, &mut rng)?;
        let inv_metric = vec![1.0; dim];
        let step = find_reasonable_step(model, &inv_metric, &z, 1.0, &mut rng);
        Ok(Self {
            rng,
            z,
            inv_metric,
            step,
            averager: DualAveraging::new(cfg.target_accept, step),
            variance: RunningVariance::new(dim),
            windows: metric_windows(cfg.n_warmup),
            window_idx: 0,
            warmup_divergences: 0,
            lp_sum: 0.0,
            lp_count: 0,
            restarted_from: None,
        })
    }

    /// Warmup iterations `iters`; log densities from `track_from` on are
    /// averaged for the restart check.
    fn warmup<M: LogDensity>(
        &mut self,
        model: &M,
        cfg: &SamplerConfig,
        iters: std::ops::Range<usize>,
        track_from: usize,
    ) {
        for it in iters {
            let ham = Hamiltonian {
                model,
                inv_metric: &self.inv_metric,
                step: self.step,
            };
            let (next, info) = transition(&ham, &self.z, cfg.max_tree_depth, &mut self.rng);
            self.z = next;
            self.warmup_divergences += info.divergent as usize;
            self.step = self.averager.update(info.accept_stat);
            if it >= track_from {
                self.lp_sum += self.z.logp;
                self.lp_count += 1;
            }

            if let Some(&(start, end)) = self.windows.get(self.window_idx) {
                if it >= start && it < end {
                    self.variance.add(&self.z.q);
                }
                if it + 1 == end {
                    self.inv_metric = self.variance.regularized_variance();
                    self.variance.reset();
                    self.window_idx += 1;
                    self.step = find_reasonable_step(model, &self.inv_metric, &self.z, self.step, &mut self.rng);
                    self.averager = DualAveraging::new(cfg.target_accept, self.step);
                }
            }
        }
    }

    fn mean_lp(&self) -> f64 {
        self.lp_sum / self.lp_count as f64
    }

    fn draw<M: LogDensity>(mut self, model: &M, cfg: &SamplerConfig) -> ChainOutput {
        if cfg.n_warmup > 0 {
            self.step = self.averager.final_step();
        }
        let n_params = model.param_names().len();
        let n_obs = if cfg.store_loglik { model.n_obs() } else { 0 };
        let mut values = Vec::with_capacity(cfg.n_draws * n_params);
        let mut loglik = vec![0.0; cfg.n_draws * n_obs];
        let ham = Hamiltonian {
            model,
            inv_metric: &self.inv_metric,
            step: self.step,
        };
        let (mut divergences, mut depth_sum, mut max_depth_hits, mut accept_sum, mut n_leapfrog) =
            (0usize, 0usize, 0usize, 0.0, 0usize);
        let mut z = self.z;
        for s in 0..cfg.n_draws {
            let (next, info) = transition(&ham, &z, cfg.max_tree_depth, &mut self.rng);
            z = next;
            divergences += info.divergent as usize;
            depth_sum += info.depth;
            max_depth_hits += (info.depth >= cfg.max_tree_depth) as usize;
            accept_sum += info.accept_stat;
            n_leapfrog += info.n_leapfrog;
            model.write_draw(&z.q, &mut values);
            if n_obs > 0 {
                model.pointwise_loglik(&z.q, &mut loglik[s * n_obs..(s + 1) * n_obs]);
            }
        }
        let n = cfg.n_draws as f64;
        ChainOutput {
            values,
            loglik,
            diagnostics: ChainDiagnostics {
                step_size: self.step,
                inv_metric: self.inv_metric,
                divergences,
                warmup_divergences: self.warmup_divergences,
                mean_tree_depth: depth_sum as f64 / n,
                max_depth_hits,
                mean_accept_stat: accept_sum / n,
                n_leapfrog,
                restarted_from: self.restarted_from,
            },
        }
    }
}

/// Moves chains whose mean log density trails the best chain's by more
/// than `gap` onto a copy of the best chain's state.
fn restart_trapped(states: &mut [ChainState], gap: f64) {
    let lps: Vec<f64> = states.iter().map(ChainState::mean_lp).collect();
    let best = (0..lps.len())
        .filter(|&c| lps[c].is_finite())
        .reduce(|a, b| if lps[b] > lps[a] { b } else { a });
    let Some(best) = best else { return };
    log::debug!("mean log densities at restart check: {lps:?}");
    for c in 0..states.len() {
        if c != best && !(lps[c] >= lps[best] - gap) {
            log::info!(
                "chain {} restarted from chain {}: mean log density {:.1} vs {:.1}",
                c + 1,
                best + 1,
                lps[c],
                lps[best]
            );
            let b = &states[best];
            let (z, step, averager, inv_metric) = (b.z.clone(), b.step, b.averager.clone(), b.inv_metric.clone());
            let s = &mut states[c];
            s.z = z;
            s.step = step;
            s.averager = averager;
            s.inv_metric = inv_metric;
            s.restarted_from = Some(best);
        }
    }
}
