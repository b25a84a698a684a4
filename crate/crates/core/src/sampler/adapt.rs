//! Warmup adaptation: dual-averaging step size and windowed diagonal
//! metric estimation.

/// Nesterov dual averaging of `ln(step size)` toward a target acceptance
/// statistic.
#[derive(Debug, Clone)]
pub(crate) struct DualAveraging {
    target: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

const GAMMA: f64 = 0.05;
const T0: f64 = 10.0;
const KAPPA: f64 = 0.75;

impl DualAveraging {
    pub fn new(target: f64, initial_step: f64) -> Self {
        Self {
            target,
            mu: (10.0 * initial_step).ln(),
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    /// Feeds one acceptance statistic, returns the next step size.
    pub fn update(&mut self, accept_stat: f64) -> f64 {
        let accept_stat = if accept_stat.is_nan() {
            0.0
        } else {
            accept_stat.min(1.0)
        };
        self.counter += 1.0;
        let eta = 1.0 / (self.counter + T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / GAMMA;
        let x_eta = self.counter.powf(-KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// The averaged step size used once adaptation stops.
    pub fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone)]
pub(crate) struct RunningVariance {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningVariance {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    /// Sample variances shrunk toward 1e-3, the usual regularization for a
    /// metric estimated from a short window.
    pub fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2
            .iter()
            .map(|s| {
                let var = s / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }

    pub fn reset(&mut self) {
        self.n = 0.0;
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        self.m2.iter_mut().for_each(|m| *m = 0.0);
    }
}

/// Slow-window boundaries `[start, end)` for metric estimation: a fast
/// initial buffer of 15% of warmup, doubling windows from 25 iterations,
/// and a fast terminal buffer of 10%. The last window absorbs any
/// remainder too short to hold the next doubling.
///
/// Warmup shorter than 150 gets one slow window between the same 15% and
/// 10% buffers; shorter than 20 adapts the step size only.
pub(crate) fn metric_windows(n_warmup: usize) -> Vec<(usize, usize)> {
    const BASE_WINDOW: usize = 25;
    let init = (0.15 * n_warmup as f64) as usize;
    let term = (0.10 * n_warmup as f64) as usize;
    let slow_end = n_warmup - term;
    if n_warmup < 20 {
        return Vec::new();
    }
    if n_warmup < 150 {
        return vec![(init, slow_end)];
    }
    let mut windows = Vec::new();
    let mut start = init;
    let mut size = BASE_WINDOW;
    while start < slow_end {
        let mut end = start + size;
        if end >= slow_end || end + 2 * size > slow_end {
            end = slow_end;
        }
        windows.push((start, end));
        start = end;
        size *= 2;
    }
    windows
}
