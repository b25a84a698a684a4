//! The `mixrt` command line: `fit`, `compare`, `simulate`, `diagnose`.
//!
//! Every command resolves its settings (JSON config file, then flags on
//! top) into a [`RunConfig`], writes that to `config.json` next to its
//! outputs and embeds it in the JSON outputs. Passing the written
//! `config.json` back through `--config` reproduces the outputs exactly.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 fit-quality warning
//! (some R-hat above 1.05).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::models::{simulate_effect_summary, summarize_draws, EffectSummary, Family, ParamSummary, PriorConfig};
use crate::psis_loo::{compare, elpd_loo_matrix, LooResult, KHAT_THRESHOLD};
use crate::sampler::{ChainDiagnostics, PosteriorDraws, SamplerConfig};
use crate::simulate::{self, Design, TrueParams, RHAT_LIMIT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_WARNING: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "mixrt",
    version,
    about = "Fit and compare hierarchical mixture models of reading times"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model to a reading-time CSV.
    Fit(FitArgs),
    /// Compare two or more fits by PSIS-LOO.
    Compare(CompareArgs),
    /// Simulate a dataset from one model.
    Simulate(SimulateArgs),
    /// Print convergence and LOO diagnostics of a fit.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct SharedArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_family)]
    pub model: Option<Family>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SamplerArgs {
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Trial-level CSV with subject, item, condition, rt columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the interval plot.
    #[arg(long)]
    pub no_plot: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CompareArgs {
    /// Fit output directories.
    pub fits: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write comparison.csv and comparison.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DiagnoseArgs {
    pub fit: PathBuf,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: crate::models::ModelError| e.to_string())
}

/// Resolved settings of one run. Fields a command does not use are left
/// out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<Family>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub priors: Option<PriorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plot: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<Design>,
    /// True values for `simulate`; the model's defaults fill any gaps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fits: Vec<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    fn from_file(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

pub fn resolve_fit(args: &FitArgs) -> Result<RunConfig> {
    let file = RunConfig::from_file(args.shared.config.as_deref())?;
    let model = args
        .shared
        .model
        .or(file.model)
        .context("no model given; pass --model or set \"model\" in the config")?;
    let data = args
        .data
        .clone()
        .or(file.data)
        .context("no data given; pass --data or set \"data\" in the config")?;
    let priors = file.priors.unwrap_or_default();
    priors.validate()?;
    let mut sampler = file.sampler.unwrap_or_default();
    if let Some(s) = args.shared.seed.or(file.seed) {
        sampler.seed = s;
    }
    if let Some(c) = args.sampler.chains {
        sampler.n_chains = c;
    }
    if let Some(w) = args.sampler.warmup {
        sampler.n_warmup = w;
    }
    if let Some(d) = args.sampler.draws {
        sampler.n_draws = d;
    }
    sampler.store_loglik = true;
    sampler.validate()?;
    Ok(RunConfig {
        model: Some(model),
        data: Some(data),
        priors: Some(priors),
        plot: Some(!args.no_plot && file.plot.unwrap_or(true)),
        sampler: Some(sampler),
        ..Default::default()
    })
}

pub fn resolve_simulate(args: &SimulateArgs) -> Result<RunConfig> {
    let file = RunConfig::from_file(args.shared.config.as_deref())?;
    let model = args
        .shared
        .model
        .or(file.model)
        .context("no model given; pass --model or set \"model\" in the config")?;
    let mut design = file.design.unwrap_or_default();
    if let Some(i) = args.subjects {
        design.n_subjects = i;
    }
    if let Some(j) = args.items {
        design.n_items = j;
    }
    if let Some(r) = args.reps {
        design.reps = r;
    }
    design.validate()?;
    let mut truth = TrueParams::default_for(model);
    if let Some(values) = file.truth {
        truth.values.extend(values);
    }
    truth.validate()?;
    let seed = args
        .shared
        .seed
        .or(file.seed)
        .unwrap_or_else(|| SamplerConfig::default().seed);
    Ok(RunConfig {
        model: Some(model),
        seed: Some(seed),
        design: Some(design),
        truth: Some(truth.values),
        ..Default::default()
    })
}

pub fn resolve_compare(args: &CompareArgs) -> Result<RunConfig> {
    let file = RunConfig::from_file(args.config.as_deref())?;
    let fits = if args.fits.is_empty() {
        file.fits
    } else {
        args.fits.clone()
    };
    if fits.len() < 2 {
        bail!("compare needs at least two fit directories");
    }
    Ok(RunConfig {
        fits,
        ..Default::default()
    })
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_ERROR
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        EXIT_ERROR
    })
}

/// Fit summary written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: Family,
    pub seed: u64,
    pub n_obs: usize,
    pub n_subjects: usize,
    pub n_items: usize,
    pub n_chains: usize,
    pub n_draws: usize,
    /// Reported parameters, `diffprob` included where it applies.
    pub parameters: Vec<ParamSummary>,
    pub random_effects: Vec<ParamSummary>,
    pub max_rhat: Option<f64>,
    pub divergences: usize,
    pub chains: Vec<ChainDiagnostics>,
    pub warnings: Vec<String>,
    pub config: RunConfig,
}

impl FitSummary {
    pub fn parameter(&self, name: &str) -> Option<&ParamSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

pub fn cmd_fit(args: &FitArgs) -> Result<i32> {
    let config = resolve_fit(args)?;
    let family = config.model.unwrap();
    let data_path = config.data.as_ref().unwrap();
    let data = Dataset::load_csv(data_path).with_context(|| format!("loading {}", data_path.display()))?;
    let sampler = config.sampler.as_ref().unwrap();
    log::info!(
        "fitting {family} to {} trials ({} subjects, {} items), {} chains x {} draws",
        data.len(),
        data.n_subjects(),
        data.n_items(),
        sampler.n_chains,
        sampler.n_draws
    );
    let (spec, draws) = simulate::fit(family, config.priors.unwrap(), &data, sampler)?;

    let effects = simulate_effect_summary(&draws, &spec);
    let n_scalars = spec.n_scalars();
    let re_names: Vec<&str> = draws.names[n_scalars..].iter().map(String::as_str).collect();
    let random_effects = summarize_draws(&draws, Some(&re_names));
    let max_rhat = simulate::max_rhat(&draws);
    let warnings = fit_warnings(&effects, &random_effects, &draws);
    let summary = FitSummary {
        model: family,
        seed: sampler.seed,
        n_obs: data.len(),
        n_subjects: data.n_subjects(),
        n_items: data.n_items(),
        n_chains: draws.n_chains,
        n_draws: draws.n_draws,
        parameters: effects
            .parameters
            .iter()
            .cloned()
            .chain(effects.diffprob.clone())
            .collect(),
        random_effects,
        max_rhat,
        divergences: draws.total_divergences(),
        chains: draws.diagnostics.clone(),
        warnings,
        config: config.clone(),
    };

    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("config.json"), config.to_json().as_bytes())?;
    write_draws_csv(&out.join("draws.csv"), &draws)?;
    let loglik = draws.loglik.as_ref().expect("fit stores the log-likelihood");
    write_loglik(&out.join("loglik.bin"), draws.n_samples(), draws.n_obs, loglik)?;
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    write_file(&out.join("summary.json"), json.as_bytes())?;
    if config.plot == Some(true) {
        let title = format!("{family}: posterior medians and 95% intervals");
        write_file(
            &out.join("intervals.svg"),
            interval_svg(&title, &summary.parameters).as_bytes(),
        )?;
    }
    print_parameter_table(&summary.parameters);

    if summary.warnings.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("warning: fit-quality problems");
        for w in &summary.warnings {
            eprintln!("  - {w}");
        }
        let bad_rhat = max_rhat.is_some_and(|r| r > RHAT_LIMIT);
        Ok(if bad_rhat { EXIT_WARNING } else { EXIT_OK })
    }
}

fn fit_warnings(effects: &EffectSummary, random_effects: &[ParamSummary], draws: &PosteriorDraws) -> Vec<String> {
    let mut warnings = Vec::new();
    let high: Vec<String> = effects
        .parameters
        .iter()
        .chain(random_effects)
        .filter_map(|p| {
            p.rhat
                .filter(|r| *r > RHAT_LIMIT)
                .map(|r| format!("{} ({r:.3})", p.name))
        })
        .collect();
    if !high.is_empty() {
        warnings.push(format!("R-hat above {RHAT_LIMIT}: {}", high.join(", ")));
    }
    let div = draws.total_divergences();
    if div > 0 {
        warnings.push(format!("{div} divergent transitions after warmup"));
    }
    let hits: usize = draws.diagnostics.iter().map(|d| d.max_depth_hits).sum();
    if hits > 0 {
        warnings.push(format!("{hits} transitions hit the maximum tree depth"));
    }
    warnings
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Long format: `chain,iter,parameter,value`, chains and iterations
/// numbered from 1.
pub fn write_draws_csv(path: &Path, draws: &PosteriorDraws) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "chain,iter,parameter,value")?;
    for c in 0..draws.n_chains {
        for s in 0..draws.n_draws {
            for (name, v) in draws.names.iter().zip(draws.draw(c, s)) {
                writeln!(w, "{},{},{},{:?}", c + 1, s + 1, name, v)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub const LOGLIK_MAGIC: [u8; 4] = *b"MXLL";
pub const LOGLIK_VERSION: u32 = 1;

/// Writes the S x N pointwise log-likelihood matrix: a 16-byte header
/// (magic `MXLL`, version, S, N as little-endian u32) followed by the
/// values as little-endian f64, draw-major.
pub fn write_loglik(path: &Path, n_samples: usize, n_obs: usize, values: &[f64]) -> Result<()> {
    assert_eq!(values.len(), n_samples * n_obs);
    let mut bytes = Vec::with_capacity(16 + 8 * values.len());
    bytes.extend_from_slice(&LOGLIK_MAGIC);
    bytes.extend_from_slice(&LOGLIK_VERSION.to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(n_samples)?.to_le_bytes());
    bytes.extend_from_slice(&u32::try_from(n_obs)?.to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

/// Reads a matrix written by [`write_loglik`]: `(S, N, values)`.
pub fn read_loglik(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() < 16 || bytes[..4] != LOGLIK_MAGIC {
        bail!("{} is not a log-likelihood file", path.display());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let version = word(4) as u32;
    if version != LOGLIK_VERSION {
        bail!("{}: unsupported version {version}", path.display());
    }
    let (s, n) = (word(8), word(12));
    if bytes.len() != 16 + 8 * s * n {
        bail!("{}: expected {s} x {n} values, file size disagrees", path.display());
    }
    let values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((s, n, values))
}

fn print_parameter_table(params: &[ParamSummary]) {
    println!(
        "{:<10} {:>10} {:>9} {:>10} {:>10} {:>10} {:>7} {:>8}",
        "parameter", "mean", "sd", "2.5%", "median", "97.5%", "R-hat", "ESS"
    );
    for p in params {
        println!(
            "{:<10} {:>10.4} {:>9.4} {:>10.4} {:>10.4} {:>10.4} {:>7} {:>8}",
            p.name,
            p.mean,
            p.sd,
            p.q2_5,
            p.median,
            p.q97_5,
            fmt_opt(p.rhat, 3),
            fmt_opt(p.ess_bulk, 0)
        );
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

/// One panel per parameter: the 95% interval as a bar, the median as a
/// dot, each on its own axis.
pub fn interval_svg(title: &str, params: &[ParamSummary]) -> String {
    const WIDTH: f64 = 640.0;
    const ROW: f64 = 44.0;
    const LEFT: f64 = 110.0;
    const RIGHT: f64 = 30.0;
    let top = 40.0;
    let height = top + ROW * params.len() as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(title)
    );
    for (r, p) in params.iter().enumerate() {
        let y = top + ROW * r as f64 + ROW / 2.0;
        let (mut lo, mut hi) = (p.q2_5, p.q97_5);
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.15 * (hi - lo);
        let (lo_ax, hi_ax) = (lo - pad, hi + pad);
        let x = |v: f64| LEFT + (v - lo_ax) / (hi_ax - lo_ax) * (WIDTH - LEFT - RIGHT);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 10.0,
            y + 4.0,
            xml_escape(&p.name)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y2}" x2="{x2}" y2="{y2}" stroke="#bbb"/>"##,
            y2 = y + 12.0,
            x2 = WIDTH - RIGHT
        );
        if lo_ax < 0.0 && 0.0 < hi_ax {
            let _ = writeln!(
                s,
                r##"<line x1="{x0:.2}" y1="{y1}" x2="{x0:.2}" y2="{y2}" stroke="#999" stroke-dasharray="3,3"/>"##,
                x0 = x(0.0),
                y1 = y - 14.0,
                y2 = y + 12.0
            );
        }
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y}" x2="{:.2}" y2="{y}" stroke="#333" stroke-width="2"/>"##,
            x(p.q2_5),
            x(p.q97_5)
        );
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{y}" r="4" fill="#333"/>"##, x(p.median));
        for (v, anchor) in [(p.q2_5, "end"), (p.q97_5, "start")] {
            let dx = if anchor == "end" { -4.0 } else { 4.0 };
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="{}" text-anchor="{anchor}" font-size="10" fill="#555">{v:.3}</text>"##,
                x(v) + dx,
                y + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A fit directory's artifacts needed for comparison.
struct FitArtifacts {
    dir: PathBuf,
    summary: FitSummary,
    loo: LooResult,
}

fn load_summary(dir: &Path) -> Result<FitSummary> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_fit(dir: &Path) -> Result<FitArtifacts> {
    let summary = load_summary(dir)?;
    let (s, n, values) = read_loglik(&dir.join("loglik.bin"))?;
    let loo = elpd_loo_matrix(&values, s, n).with_context(|| format!("PSIS-LOO for {}", dir.display()))?;
    Ok(FitArtifacts {
        dir: dir.to_path_buf(),
        summary,
        loo,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLoo {
    pub fit: PathBuf,
    pub model: Family,
    pub elpd_loo: f64,
    pub se_elpd: f64,
    pub n_bad_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model_a: Family,
    pub model_b: Family,
    pub fit_a: PathBuf,
    pub fit_b: PathBuf,
    pub elpd_diff: f64,
    pub se_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub models: Vec<ModelLoo>,
    pub comparisons: Vec<CompareRow>,
    pub config: RunConfig,
}

/// Every pair of fits in argument order; positive `elpd_diff` favors
/// `model_b`.
pub fn compare_fits(config: &RunConfig) -> Result<CompareReport> {
    let fits = config.fits.iter().map(|d| load_fit(d)).collect::<Result<Vec<_>>>()?;
    let n = fits[0].loo.pointwise.len();
    if let Some(f) = fits.iter().find(|f| f.loo.pointwise.len() != n) {
        bail!(
            "datasets differ: {} has {} trials, {} has {}",
            fits[0].dir.display(),
            n,
            f.dir.display(),
            f.loo.pointwise.len()
        );
    }
    let models = fits
        .iter()
        .map(|f| ModelLoo {
            fit: f.dir.clone(),
            model: f.summary.model,
            elpd_loo: f.loo.elpd_loo,
            se_elpd: f.loo.se_elpd,
            n_bad_k: f.loo.n_bad_k,
        })
        .collect();
    let mut comparisons = Vec::new();
    for (i, a) in fits.iter().enumerate() {
        for b in &fits[i + 1..] {
            let c = compare(&a.loo, &b.loo)?;
            comparisons.push(CompareRow {
                model_a: a.summary.model,
                model_b: b.summary.model,
                fit_a: a.dir.clone(),
                fit_b: b.dir.clone(),
                elpd_diff: c.elpd_diff,
                se_diff: c.se_diff,
            });
        }
    }
    Ok(CompareReport {
        models,
        comparisons,
        config: config.clone(),
    })
}

/// Table rows `model_a, model_b, elpd_diff, SE`.
pub fn format_comparison_table(report: &CompareReport) -> String {
    let mut s = format!("{:<15} {:<15} {:>10} {:>8}\n", "model_a", "model_b", "elpd_diff", "SE");
    for r in &report.comparisons {
        let _ = writeln!(
            s,
            "{:<15} {:<15} {:>10.2} {:>8.2}",
            r.model_a.name(),
            r.model_b.name(),
            r.elpd_diff,
            r.se_diff
        );
    }
    s
}

pub fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let config = resolve_compare(args)?;
    let report = compare_fits(&config)?;
    print!("{}", format_comparison_table(&report));
    for m in &report.models {
        if m.n_bad_k > 0 {
            eprintln!(
                "warning: {} ({}): {} trial(s) with khat > {KHAT_THRESHOLD}",
                m.model,
                m.fit.display(),
                m.n_bad_k
            );
        }
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write_file(&out.join("config.json"), config.to_json().as_bytes())?;
        let mut csv = String::from("model_a,model_b,elpd_diff,se_diff\n");
        for r in &report.comparisons {
            let _ = writeln!(csv, "{},{},{:?},{:?}", r.model_a, r.model_b, r.elpd_diff, r.se_diff);
        }
        write_file(&out.join("comparison.csv"), csv.as_bytes())?;
        let json = serde_json::to_string_pretty(&report)? + "\n";
        write_file(&out.join("comparison.json"), json.as_bytes())?;
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub truth: TrueParams,
    pub design: Design,
    pub seed: u64,
    pub random_effects: crate::models::RandomEffects,
    pub config: RunConfig,
}

/// Writes `data.csv`, `truth.json` and the per-trial latent indicators in
/// `latent.csv`.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let config = resolve_simulate(args)?;
    let family = config.model.unwrap();
    let truth = TrueParams {
        family,
        values: config.truth.clone().unwrap(),
    };
    let design = config.design.unwrap();
    let seed = config.seed.unwrap();
    let sim = simulate::simulate(&truth, &design, seed)?;

    let out = &args.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_file(&out.join("config.json"), config.to_json().as_bytes())?;
    sim.dataset
        .save_csv(out.join("data.csv"))
        .with_context(|| format!("writing {}", out.join("data.csv").display()))?;
    let mut latent = String::from("trial,subject,item,condition,latent\n");
    for (n, (t, &z)) in sim.dataset.trials().iter().zip(&sim.latent).enumerate() {
        let _ = writeln!(
            latent,
            "{},{},{},{},{}",
            n + 1,
            sim.dataset.subject_labels()[t.subject],
            sim.dataset.item_labels()[t.item],
            t.condition,
            z as u8
        );
    }
    write_file(&out.join("latent.csv"), latent.as_bytes())?;
    let record = TruthRecord {
        truth,
        design,
        seed,
        random_effects: sim.random_effects,
        config,
    };
    write_file(
        &out.join("truth.json"),
        (serde_json::to_string_pretty(&record)? + "\n").as_bytes(),
    )?;
    println!(
        "simulated {} trials from {family} into {}",
        sim.dataset.len(),
        out.display()
    );
    Ok(EXIT_OK)
}

/// Counts of khat in `(-inf, 0.5]`, `(0.5, 0.7]`, `(0.7, 1]`, `(1, inf)`.
pub fn khat_histogram(khat: &[f64]) -> [usize; 4] {
    let mut h = [0; 4];
    for &k in khat {
        let bin = match k {
            k if k <= 0.5 => 0,
            k if k <= KHAT_THRESHOLD => 1,
            k if k <= 1.0 => 2,
            _ => 3,
        };
        h[bin] += 1;
    }
    h
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<i32> {
    let dir = &args.fit;
    let summary = load_summary(dir)?;
    let (s, n, values) = read_loglik(&dir.join("loglik.bin"))?;
    let loo = elpd_loo_matrix(&values, s, n)?;

    println!(
        "{} fit: {} chains x {} draws, {} trials",
        summary.model, summary.n_chains, summary.n_draws, summary.n_obs
    );
    println!("{:<12} {:>8} {:>9}", "parameter", "R-hat", "ESS bulk");
    for p in summary.parameters.iter().chain(&summary.random_effects) {
        println!("{:<12} {:>8} {:>9}", p.name, fmt_opt(p.rhat, 3), fmt_opt(p.ess_bulk, 0));
    }
    println!();
    println!(
        "{:<6} {:>11} {:>8} {:>10} {:>11} {:>10}",
        "chain", "divergent", "treedepth", "max-depth", "accept", "step"
    );
    for (c, d) in summary.chains.iter().enumerate() {
        println!(
            "{:<6} {:>11} {:>8.2} {:>10} {:>11.3} {:>10.4}",
            c + 1,
            d.divergences,
            d.mean_tree_depth,
            d.max_depth_hits,
            d.mean_accept_stat,
            d.step_size
        );
    }
    let max_depth = summary.config.sampler.as_ref().map_or(0, |s| s.max_tree_depth);
    let hits: usize = summary.chains.iter().map(|d| d.max_depth_hits).sum();
    println!(
        "total divergent transitions: {}; at max tree depth ({max_depth}): {hits}",
        summary.divergences
    );
    println!();
    let h = khat_histogram(&loo.khat);
    println!(
        "PSIS khat: (-inf, 0.5] {}  (0.5, 0.7] {}  (0.7, 1] {}  (1, inf) {}",
        h[0], h[1], h[2], h[3]
    );
    println!("elpd_loo {:.2} (SE {:.2})", loo.elpd_loo, loo.se_elpd);
    match summary.max_rhat {
        Some(r) if r > RHAT_LIMIT => {
            eprintln!("warning: R-hat up to {r:.3} exceeds {RHAT_LIMIT}");
            Ok(EXIT_WARNING)
        }
        _ => Ok(EXIT_OK),
    }
}
