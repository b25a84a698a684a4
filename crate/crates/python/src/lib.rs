//! Python bindings: load or simulate data, fit a model, compute PSIS-LOO and
//! compare fits.

use std::collections::HashMap;

use mixrt::models::{self, simulate_effect_summary, ModelSpec, ParamSummary};
use mixrt::psis_loo::{self, LooResult};
use mixrt::sampler::PosteriorDraws;
use mixrt::simulate::{self as sim, Design, TrueParams};
use mixrt::{Family, PriorConfig, SamplerConfig};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn family(name: &str) -> PyResult<Family> {
    name.parse().map_err(err)
}

/// A validated reading-time dataset.
#[pyclass(frozen, module = "mixrt")]
struct Dataset {
    inner: mixrt::Dataset,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: mixrt::Dataset::load_csv(path).map_err(err)?,
        })
    }

    /// Builds a dataset from parallel columns; labels are any strings.
    #[staticmethod]
    fn from_columns(subject: Vec<String>, item: Vec<String>, condition: Vec<i64>, rt: Vec<f64>) -> PyResult<Self> {
        let n = subject.len();
        if item.len() != n || condition.len() != n || rt.len() != n {
            return Err(PyValueError::new_err("columns must have equal length"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subject", "item", "condition", "rt"]).map_err(err)?;
        for k in 0..n {
            w.write_record([
                subject[k].clone(),
                item[k].clone(),
                condition[k].to_string(),
                format!("{:?}", rt[k]),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(err)?;
        Ok(Self {
            inner: mixrt::Dataset::read_csv(bytes.as_slice()).map_err(err)?,
        })
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        self.inner.save_csv(path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn n_subjects(&self) -> usize {
        self.inner.n_subjects()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.n_items()
    }

    #[getter]
    fn rt(&self) -> Vec<f64> {
        self.inner.trials().iter().map(|t| t.rt).collect()
    }

    #[getter]
    fn condition(&self) -> Vec<i64> {
        self.inner.trials().iter().map(|t| t.condition.code() as i64).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} trials, {} subjects, {} items)",
            self.inner.len(),
            self.inner.n_subjects(),
            self.inner.n_items()
        )
    }
}

fn summary_dict<'py>(py: Python<'py>, s: &ParamSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mean", s.mean)?;
    d.set_item("sd", s.sd)?;
    d.set_item("q2_5", s.q2_5)?;
    d.set_item("median", s.median)?;
    d.set_item("q97_5", s.q97_5)?;
    d.set_item("rhat", s.rhat)?;
    d.set_item("ess_bulk", s.ess_bulk)?;
    Ok(d)
}

/// Posterior draws from one fit.
#[pyclass(frozen, module = "mixrt")]
struct Fit {
    spec: ModelSpec,
    draws: PosteriorDraws,
}

#[pymethods]
impl Fit {
    #[getter]
    fn model(&self) -> &'static str {
        self.spec.family.name()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.draws.names.clone()
    }

    #[getter]
    fn max_rhat(&self) -> Option<f64> {
        sim::max_rhat(&self.draws)
    }

    #[getter]
    fn divergences(&self) -> usize {
        self.draws.total_divergences()
    }

    /// Draws of `name`, one list per chain.
    fn draws(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        let k = self
            .draws
            .param_index(name)
            .ok_or_else(|| PyKeyError::new_err(name.to_string()))?;
        Ok(self.draws.chains(k))
    }

    /// Summaries of the named scalars, plus `diffprob` for the overwriting
    /// models.
    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let effects = simulate_effect_summary(&self.draws, &self.spec);
        let out = PyDict::new(py);
        for s in effects.parameters.iter().chain(effects.diffprob.as_ref()) {
            out.set_item(&s.name, summary_dict(py, s)?)?;
        }
        Ok(out)
    }

    /// PSIS-LOO for this fit.
    fn loo(&self) -> PyResult<Loo> {
        Ok(Loo {
            inner: psis_loo::elpd_loo(&self.draws).map_err(err)?,
        })
    }
}

#[pyclass(frozen, module = "mixrt")]
struct Loo {
    inner: LooResult,
}

#[pymethods]
impl Loo {
    #[getter]
    fn elpd_loo(&self) -> f64 {
        self.inner.elpd_loo
    }

    #[getter]
    fn se(&self) -> f64 {
        self.inner.se_elpd
    }

    #[getter]
    fn pointwise(&self) -> Vec<f64> {
        self.inner.pointwise.clone()
    }

    #[getter]
    fn khat(&self) -> Vec<f64> {
        self.inner.khat.clone()
    }

    #[getter]
    fn n_bad_k(&self) -> usize {
        self.inner.n_bad_k
    }

    fn __repr__(&self) -> String {
        format!("Loo(elpd_loo={:.2}, se={:.2})", self.inner.elpd_loo, self.inner.se_elpd)
    }
}

/// Fits `model` to `data` with NUTS. Releases the GIL while sampling.
#[pyfunction]
#[pyo3(signature = (data, model, *, seed=None, chains=4, warmup=1000, draws=1000))]
fn fit(
    py: Python<'_>,
    data: &Dataset,
    model: &str,
    seed: Option<u64>,
    chains: usize,
    warmup: usize,
    draws: usize,
) -> PyResult<Fit> {
    let family = family(model)?;
    let defaults = SamplerConfig::default();
    let cfg = SamplerConfig {
        n_chains: chains,
        n_warmup: warmup,
        n_draws: draws,
        seed: seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let data = &data.inner;
    let (spec, draws) = py
        .detach(|| sim::fit(family, PriorConfig::default(), data, &cfg))
        .map_err(err)?;
    Ok(Fit { spec, draws })
}

/// Paired comparison `b - a`; positive `elpd_diff` favors `b`.
#[pyfunction]
fn compare<'py>(py: Python<'py>, a: &Loo, b: &Loo) -> PyResult<Bound<'py, PyDict>> {
    let r = psis_loo::compare(&a.inner, &b.inner).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("elpd_diff", r.elpd_diff)?;
    d.set_item("se_diff", r.se_diff)?;
    Ok(d)
}

/// Simulates a dataset; returns it with the per-trial latent component
/// flags. Unspecified true values take the model's defaults.
#[pyfunction]
#[pyo3(signature = (model, *, seed=0, subjects=40, items=24, reps=1, truth=None))]
fn simulate(
    model: &str,
    seed: u64,
    subjects: usize,
    items: usize,
    reps: usize,
    truth: Option<HashMap<String, f64>>,
) -> PyResult<(Dataset, Vec<bool>)> {
    let mut p = TrueParams::default_for(family(model)?);
    for (k, v) in truth.unwrap_or_default() {
        p.values.insert(k, v);
    }
    let design = Design {
        n_subjects: subjects,
        n_items: items,
        reps,
    };
    let s = sim::simulate(&p, &design, seed).map_err(err)?;
    Ok((Dataset { inner: s.dataset }, s.latent))
}

#[pyfunction]
fn lognormal_logpdf(y: f64, mu: f64, sigma: f64) -> PyResult<f64> {
    models::lognormal_logpdf(y, mu, sigma).map_err(err)
}

/// `log(lam * exp(lp1) + (1 - lam) * exp(lp2))`.
#[pyfunction]
fn log_mix(lam: f64, lp1: f64, lp2: f64) -> PyResult<f64> {
    models::log_mix(lam, lp1, lp2).map_err(err)
}

#[pymodule(name = "mixrt")]
fn mixrt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Fit>()?;
    m.add_class::<Loo>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(lognormal_logpdf, m)?)?;
    m.add_function(wrap_pyfunction!(log_mix, m)?)?;
    Ok(())
}
