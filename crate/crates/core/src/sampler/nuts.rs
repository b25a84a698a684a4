//! One NUTS transition: multinomial sampling over a doubling trajectory,
//! with the generalized no-U-turn criterion on momentum sums checked
//! across every merged subtree, including the seams between them.

use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::models::log_sum_exp;

/// Energy error beyond which a trajectory is declared divergent.
pub(crate) const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl Point {
    pub fn new<M: LogDensity + ?Sized>(model: &M, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = model.log_density_grad(&q, &mut grad);
        Self {
            p: vec![0.0; q.len()],
            q,
            grad,
            logp,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.logp.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TransitionInfo {
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
}

/// Euclidean kinetic energy with a diagonal inverse metric.
pub(crate) struct Hamiltonian<'a, M: ?Sized> {
    pub model: &'a M,
    pub inv_metric: &'a [f64],
    pub step: f64,
}

impl<M: LogDensity + ?Sized> Hamiltonian<'_, M> {
    pub fn energy(&self, z: &Point) -> f64 {
        let kinetic: f64 = z.p.iter().zip(self.inv_metric).map(|(p, m)| p * p * m).sum();
        -z.logp + 0.5 * kinetic
    }

    pub fn sample_momentum<R: Rng>(&self, z: &mut Point, rng: &mut R) {
        for (p, m) in z.p.iter_mut().zip(self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    pub fn leapfrog(&self, z: &mut Point, eps: f64) {
        let half = 0.5 * eps;
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.model.log_density_grad(&z.q, &mut z.grad);
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
    }

    fn p_sharp(&self, p: &[f64], out: &mut [f64]) {
        for ((o, p), m) in out.iter_mut().zip(p).zip(self.inv_metric) {
            *o = p * m;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

struct TreeBuilder<'h, 'a, M: ?Sized> {
    ham: &'h Hamiltonian<'a, M>,
    h0: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

impl<M: LogDensity + ?Sized> TreeBuilder<'_, '_, M> {
    /// Extends the trajectory from `z` by `2^depth` leapfrog steps in
    /// direction `sign`. Returns false when the subtree diverged or turned.
    #[allow(clippy::too_many_arguments)]
    fn build<R: Rng>(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        p_sharp_beg: &mut [f64],
        p_sharp_end: &mut [f64],
        rho: &mut [f64],
        p_beg: &mut [f64],
        p_end: &mut [f64],
        sign: f64,
        log_sum_weight: &mut f64,
        rng: &mut R,
    ) -> bool {
        if depth == 0 {
            self.ham.leapfrog(z, sign * self.ham.step);
            self.n_leapfrog += 1;
            let mut h = self.ham.energy(z);
            if h.is_nan() {
                h = f64::INFINITY;
            }
            if h - self.h0 > MAX_DELTA_H {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(&[*log_sum_weight, self.h0 - h]);
            self.sum_metro_prob += if self.h0 - h > 0.0 { 1.0 } else { (self.h0 - h).exp() };
            z_propose.clone_from(z);
            self.ham.p_sharp(&z.p, p_sharp_beg);
            p_sharp_end.copy_from_slice(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            p_beg.copy_from_slice(&z.p);
            p_end.copy_from_slice(&z.p);
            return !self.divergent;
        }

        let dim = z.q.len();
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut p_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let mut lsw_init = f64::NEG_INFINITY;
        if !self.build(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            sign,
            &mut lsw_init,
            rng,
        ) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut p_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        let mut lsw_final = f64::NEG_INFINITY;
        if !self.build(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            sign,
            &mut lsw_final,
            rng,
        ) {
            return false;
        }

        let lsw_subtree = log_sum_exp(&[lsw_init, lsw_final]);
        *log_sum_weight = log_sum_exp(&[*log_sum_weight, lsw_subtree]);
        if lsw_final > lsw_subtree || rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(p_sharp_beg, p_sharp_end, &rho_subtree);
        persist &= no_u_turn(p_sharp_beg, &p_sharp_final_beg, &add(&rho_init, &p_final_beg));
        persist &= no_u_turn(&p_sharp_init_end, p_sharp_end, &add(&rho_final, &p_init_end));
        persist
    }
}

/// Runs one transition from `current` (whose `p` is ignored) and returns
/// the selected point.
pub(crate) fn transition<M: LogDensity + ?Sized, R: Rng>(
    ham: &Hamiltonian<'_, M>,
    current: &Point,
    max_depth: usize,
    rng: &mut R,
) -> (Point, TransitionInfo) {
    let mut z = current.clone();
    ham.sample_momentum(&mut z, rng);
    let dim = z.q.len();

    let mut z_fwd = z.clone();
    let mut z_bck = z.clone();
    let mut z_sample = z.clone();
    let mut z_propose = z.clone();

    let mut p_sharp = vec![0.0; dim];
    ham.p_sharp(&z.p, &mut p_sharp);
    let mut p_fwd_fwd = z.p.clone();
    let mut p_sharp_fwd_fwd = p_sharp.clone();
    let mut p_fwd_bck = z.p.clone();
    let mut p_sharp_fwd_bck = p_sharp.clone();
    let mut p_bck_fwd = z.p.clone();
    let mut p_sharp_bck_fwd = p_sharp.clone();
    let mut p_bck_bck = z.p.clone();
    let mut p_sharp_bck_bck = p_sharp;

    let mut rho = z.p.clone();
    let mut log_sum_weight = 0.0;
    let h0 = ham.energy(&z);
    let mut builder = TreeBuilder {
        ham,
        h0,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };

    let mut depth = 0;
    while depth < max_depth {
        let mut rho_fwd = vec![0.0; dim];
        let mut rho_bck = vec![0.0; dim];
        let mut lsw_subtree = f64::NEG_INFINITY;
        let valid = if rng.random::<f64>() > 0.5 {
            rho_bck.copy_from_slice(&rho);
            p_bck_fwd.copy_from_slice(&p_fwd_fwd);
            p_sharp_bck_fwd.copy_from_slice(&p_sharp_fwd_fwd);
            builder.build(
                depth,
                &mut z_fwd,
                &mut z_propose,
                &mut p_sharp_fwd_bck,
                &mut p_sharp_fwd_fwd,
                &mut rho_fwd,
                &mut p_fwd_bck,
                &mut p_fwd_fwd,
                1.0,
                &mut lsw_subtree,
                rng,
            )
        } else {
            rho_fwd.copy_from_slice(&rho);
            p_fwd_bck.copy_from_slice(&p_bck_bck);
            p_sharp_fwd_bck.copy_from_slice(&p_sharp_bck_bck);
            builder.build(
                depth,
                &mut z_bck,
                &mut z_propose,
                &mut p_sharp_bck_fwd,
                &mut p_sharp_bck_bck,
                &mut rho_bck,
                &mut p_bck_fwd,
                &mut p_bck_bck,
                -1.0,
                &mut lsw_subtree,
                rng,
            )
        };
        if !valid {
            break;
        }
        depth += 1;

        if lsw_subtree > log_sum_weight || rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
            z_sample.clone_from(&z_propose);
        }
        log_sum_weight = log_sum_exp(&[log_sum_weight, lsw_subtree]);

        rho = add(&rho_bck, &rho_fwd);
        let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
        persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &add(&rho_bck, &p_fwd_bck));
        persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
        if !persist {
            break;
        }
    }

    let info = TransitionInfo {
        accept_stat: if builder.n_leapfrog > 0 {
            builder.sum_metro_prob / builder.n_leapfrog as f64
        } else {
            0.0
        },
        depth,
        n_leapfrog: builder.n_leapfrog,
        divergent: builder.divergent,
    };
    (z_sample, info)
}

/// Doubles or halves `step` until a single leapfrog step's acceptance
/// probability crosses one half.
pub(crate) fn find_reasonable_step<M: LogDensity + ?Sized, R: Rng>(
    model: &M,
    inv_metric: &[f64],
    current: &Point,
    initial: f64,
    rng: &mut R,
) -> f64 {
    let threshold = 0.5f64.ln();
    let mut step = initial;
    let mut direction = 0.0;
    for _ in 0..100 {
        let ham = Hamiltonian {
            model,
            inv_metric,
            step,
        };
        let mut z = current.clone();
        ham.sample_momentum(&mut z, rng);
        let h0 = ham.energy(&z);
        ham.leapfrog(&mut z, step);
        let mut h = ham.energy(&z);
        if h.is_nan() {
            h = f64::INFINITY;
        }
        let delta = h0 - h;
        if direction == 0.0 {
            direction = if delta > threshold { 1.0 } else { -1.0 };
        }
        let crossed = if direction > 0.0 {
            !(delta > threshold)
        } else {
            !(delta < threshold)
        };
        if crossed {
            break;
        }
        step = if direction > 0.0 { step * 2.0 } else { step * 0.5 };
        if !(1e-8..=1e7).contains(&step) {
            step = step.clamp(1e-8, 1e7);
            break;
        }
    }
    step
}
