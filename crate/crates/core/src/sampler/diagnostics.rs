//! Split-chain R-hat and effective sample size.

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use super::PosteriorDraws;

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticError {
    #[error("diagnostic unavailable: needs at least 2 chains, got {0}")]
    SingleChain(usize),
    #[error("diagnostic unavailable: needs at least 4 draws per chain, got {0}")]
    TooFewDraws(usize),
    #[error("chains have unequal lengths")]
    Ragged,
    #[error("draws have zero variance; effective sample size is degenerate")]
    ZeroVariance,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
}

fn param_chains(draws: &PosteriorDraws, param: &str) -> Result<Vec<Vec<f64>>, DiagnosticError> {
    let idx = draws
        .param_index(param)
        .ok_or_else(|| DiagnosticError::UnknownParameter(param.to_string()))?;
    Ok(draws.chains(idx))
}

/// Split-chain potential scale reduction of `param`.
pub fn rhat(draws: &PosteriorDraws, param: &str) -> Result<f64, DiagnosticError> {
    rhat_of_chains(&param_chains(draws, param)?)
}

/// Bulk effective sample size of `param`.
pub fn ess(draws: &PosteriorDraws, param: &str) -> Result<f64, DiagnosticError> {
    ess_of_chains(&param_chains(draws, param)?)
}

fn check_chains(chains: &[Vec<f64>]) -> Result<(), DiagnosticError> {
    if chains.len() < 2 {
        return Err(DiagnosticError::SingleChain(chains.len()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(DiagnosticError::Ragged);
    }
    if n < 4 {
        return Err(DiagnosticError::TooFewDraws(n));
    }
    Ok(())
}

/// Splits each chain in half, dropping the middle draw of odd-length
/// chains.
fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn rhat_of_chains(chains: &[Vec<f64>]) -> Result<f64, DiagnosticError> {
    check_chains(chains)?;
    let halves = split(chains);
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let within = mean(&halves.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    if !(within > 0.0) {
        return Err(DiagnosticError::ZeroVariance);
    }
    let between = n * sample_var(&means);
    let var_plus = (n - 1.0) / n * within + between / n;
    Ok((var_plus / within).sqrt())
}

/// Bulk ESS: split chains, rank-normalized, autocorrelations summed with
/// Geyer's initial positive and monotone sequence truncation.
pub fn ess_of_chains(chains: &[Vec<f64>]) -> Result<f64, DiagnosticError> {
    check_chains(chains)?;
    let halves: Vec<Vec<f64>> = split(chains).into_iter().map(|c| c.to_vec()).collect();
    ess_raw(&rank_normalize(&halves))
}

/// Monte Carlo standard error of the mean, from the ESS of the
/// (un-normalized, split) draws. Works with a single chain.
pub fn mcse_mean(chains: &[Vec<f64>]) -> Result<f64, DiagnosticError> {
    let n = chains.first().map_or(0, |c| c.len());
    if n < 4 {
        return Err(DiagnosticError::TooFewDraws(n));
    }
    let halves: Vec<Vec<f64>> = split(chains).into_iter().map(|c| c.to_vec()).collect();
    let ess = ess_raw(&halves)?;
    let pooled: Vec<f64> = chains.concat();
    Ok((sample_var(&pooled) / ess).sqrt())
}

fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pooled: Vec<f64> = chains.concat();
    let s = pooled.len();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    // Average ranks over ties, one-based.
    let mut ranks = vec![0.0; s];
    let mut i = 0;
    while i < s {
        let mut j = i;
        while j + 1 < s && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let z: Vec<f64> = ranks
        .iter()
        .map(|r| normal.inverse_cdf((r - 0.375) / (s as f64 + 0.25)))
        .collect();
    let n = chains[0].len();
    z.chunks(n).map(|c| c.to_vec()).collect()
}

/// Biased autocovariance of one chain at `lag`.
fn autocov(chain: &[f64], chain_mean: f64, lag: usize) -> f64 {
    let n = chain.len();
    chain[..n - lag]
        .iter()
        .zip(&chain[lag..])
        .map(|(a, b)| (a - chain_mean) * (b - chain_mean))
        .sum::<f64>()
        / n as f64
}

fn ess_raw(chains: &[Vec<f64>]) -> Result<f64, DiagnosticError> {
    let m = chains.len();
    let n = chains[0].len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let mean_acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m as f64
    };
    let chain_vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| autocov(c, mu, 0) * n as f64 / (n as f64 - 1.0))
        .collect();
    let mean_var = mean(&chain_vars);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) || !var_plus.is_finite() {
        return Err(DiagnosticError::ZeroVariance);
    }
    let rho = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho(1);
    rho_hat[1] = rho_odd;
    let mut t = 0;
    while t + 5 < n && rho_even + rho_odd > 0.0 {
        t += 2;
        rho_even = rho(t);
        rho_odd = rho(t + 1);
        if rho_even + rho_odd >= 0.0 {
            rho_hat[t] = rho_even;
            rho_hat[t + 1] = rho_odd;
        }
    }
    let max_t = t;
    if rho_even > 0.0 {
        rho_hat[max_t] = rho_even;
    }
    // Initial monotone sequence.
    let mut t = 0;
    while t + 4 <= max_t {
        t += 2;
        if rho_hat[t] + rho_hat[t + 1] > rho_hat[t - 2] + rho_hat[t - 1] {
            rho_hat[t] = (rho_hat[t - 2] + rho_hat[t - 1]) / 2.0;
            rho_hat[t + 1] = rho_hat[t];
        }
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + rho_hat[max_t];
    let tau = tau.max(1.0 / total.log10());
    Ok(total / tau)
}
