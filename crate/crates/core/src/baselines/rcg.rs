//! Riemannian conjugate gradient over the product of unit circles.
//!
//! Maximizes the softmin of user rates with respect to the RIS reflection
//! vector for fixed beamformers. Iterates stay on the manifold through the
//! elementwise retraction `x / |x|`.

use crate::error::{Error, Result};
use crate::linalg::{lift, project_unit_modulus, CMat, CVec, C64};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RcgOptions {
    pub max_iters: usize,
    /// Softmin temperature `mu_s`.
    pub temperature: f64,
    pub armijo: f64,
    pub grad_tol: f64,
    pub max_backtracks: usize,
}

impl Default for RcgOptions {
    fn default() -> Self {
        Self { max_iters: 50, temperature: 10.0, armijo: 1e-4, grad_tol: 1e-9, max_backtracks: 40 }
    }
}

#[derive(Debug, Clone)]
pub struct RcgResult {
    pub w: CVec,
    /// Surrogate value of every accepted iterate, starting with `w0`.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Line search failed before the iteration budget was spent.
    pub stagnated: bool,
}

/// `-(1/mu) ln sum_k exp(-mu r_k)`, evaluated stably.
pub fn softmin(rates: &[f64], temperature: f64) -> f64 {
    let m = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let s: f64 = rates.iter().map(|r| (-temperature * (r - m)).exp()).sum();
    m - s.ln() / temperature
}

/// Rate objective for fixed beamformers. Holds `c_kj = A_k^H b_j / sigma`.
pub struct RateObjective {
    coupling: Vec<Vec<CVec>>,
    temperature: f64,
}

impl RateObjective {
    pub fn new(combined: &[CMat], b: &CMat, noise: f64, temperature: f64) -> Result<Self> {
        let k = combined.len();
        if b.ncols() != k || combined.iter().any(|a| a.nrows() != b.nrows()) {
            return Err(Error::Shape(format!("B is {:?} for {k} users", b.shape())));
        }
        let s = C64::from(1.0 / noise.sqrt());
        let coupling = combined
            .iter()
            .map(|a| (0..k).map(|j| a.adjoint() * b.column(j) * s).collect())
            .collect();
        Ok(Self { coupling, temperature })
    }

    fn gains(&self, wt: &CVec) -> Vec<Vec<C64>> {
        self.coupling.iter().map(|row| row.iter().map(|c| wt.dotc(c)).collect()).collect()
    }

    pub fn rates(&self, w: &CVec) -> Vec<f64> {
        let z = self.gains(&lift(w));
        (0..z.len())
            .map(|k| {
                let total: f64 = z[k].iter().map(|x| x.norm_sqr()).sum::<f64>() + 1.0;
                let interf = total - z[k][k].norm_sqr();
                (total / interf).log2()
            })
            .collect()
    }

    pub fn value(&self, w: &CVec) -> f64 {
        softmin(&self.rates(w), self.temperature)
    }

    /// Value and Euclidean gradient `2 dF/d conj(w)`.
    pub fn value_grad(&self, w: &CVec) -> (f64, CVec) {
        let wt = lift(w);
        let z = self.gains(&wt);
        let k = z.len();
        let mut rates = Vec::with_capacity(k);
        let mut totals = Vec::with_capacity(k);
        let mut interfs = Vec::with_capacity(k);
        for i in 0..k {
            let total: f64 = z[i].iter().map(|x| x.norm_sqr()).sum::<f64>() + 1.0;
            let interf = total - z[i][i].norm_sqr();
            rates.push((total / interf).log2());
            totals.push(total);
            interfs.push(interf);
        }
        let value = softmin(&rates, self.temperature);
        let m = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = rates.iter().map(|r| (-self.temperature * (r - m)).exp()).collect();
        let wsum: f64 = weights.iter().sum();
        let mut grad = CVec::zeros(wt.len());
        let ln2 = std::f64::consts::LN_2;
        for i in 0..k {
            let pi = weights[i] / wsum;
            for j in 0..k {
                // d|w~^H c|^2 / d conj(w~) = c conj(w~^H c)
                let mut coef = 1.0 / totals[i];
                if j != i {
                    coef -= 1.0 / interfs[i];
                }
                grad += &self.coupling[i][j] * (z[i][j].conj() * (2.0 * pi * coef / ln2));
            }
        }
        (value, grad.rows(1, w.len()).into_owned())
    }
}

fn inner(a: &CVec, b: &CVec) -> f64 {
    a.dotc(b).re
}

/// Tangent-space projection at `w`: `g - Re(g conj(w)) w`.
pub fn project_tangent(w: &CVec, g: &CVec) -> CVec {
    CVec::from_fn(w.len(), |i, _| g[i] - w[i] * (g[i] * w[i].conj()).re)
}

pub fn rcg_maximize(objective: &RateObjective, w0: &CVec, opts: &RcgOptions) -> RcgResult {
    let mut w = w0.clone();
    let (mut f, eg) = objective.value_grad(&w);
    let mut grad = project_tangent(&w, &eg);
    let mut dir = grad.clone();
    let mut trace = vec![f];
    let mut stagnated = false;
    let mut iterations = 0;
    let mut step_hint = f64::NAN;
    let g0 = grad.norm().max(1e-300);
    for _ in 0..opts.max_iters {
        if grad.norm() <= opts.grad_tol * g0.max(1.0) || grad.norm() == 0.0 {
            break;
        }
        let mut slope = inner(&grad, &dir);
        if slope <= 0.0 {
            dir = grad.clone();
            slope = inner(&grad, &dir);
        }
        let dmax = dir.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let cap = std::f64::consts::FRAC_PI_2 / dmax;
        let mut alpha = if step_hint.is_finite() { (2.0 * step_hint).min(cap) } else { 0.25 * cap };
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let cand = project_unit_modulus(&(&w + &dir * C64::from(alpha)));
            let fc = objective.value(&cand);
            if fc >= f + opts.armijo * alpha * slope && fc >= f {
                accepted = Some((cand, fc));
                break;
            }
            alpha *= 0.5;
        }
        let Some((wn, fnew)) = accepted else {
            stagnated = true;
            break;
        };
        step_hint = alpha;
        let (_, egn) = objective.value_grad(&wn);
        let gn = project_tangent(&wn, &egn);
        // vector transport by projection
        let g_old = project_tangent(&wn, &grad);
        let d_old = project_tangent(&wn, &dir);
        let beta = (inner(&gn, &(&gn - &g_old)) / inner(&grad, &grad).max(1e-300)).max(0.0);
        dir = &gn + d_old * C64::from(beta);
        w = wn;
        f = fnew;
        grad = gn;
        trace.push(f);
        iterations += 1;
    }
    RcgResult { w, trace, iterations, stagnated }
}

/// Optimize the reflection vector for fixed beamformers on combined channels.
pub fn rcg_optimize_w(combined: &[CMat], b: &CMat, noise: f64, w0: &CVec, opts: &RcgOptions) -> Result<RcgResult> {
    crate::pilot::check_unit_modulus(w0)?;
    let objective = RateObjective::new(combined, b, noise, opts.temperature)?;
    Ok(rcg_maximize(&objective, w0, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cn_mat, phasor};
    use crate::rng::stream;
    use rand::Rng as _;

    fn instance(k: usize, m: usize, nr: usize, seed: u64) -> (Vec<CMat>, CMat, CVec) {
        let mut rng = stream(seed, &[]);
        let a = (0..k).map(|_| cn_mat(m, nr + 1, &mut rng)).collect();
        let b = cn_mat(m, k, &mut rng);
        let w = CVec::from_fn(nr, |_, _| phasor(rng.random_range(0.0..std::f64::consts::TAU)));
        (a, b, w)
    }

    #[test]
    fn softmin_bounds() {
        let mut rng = stream(1, &[]);
        for _ in 0..200 {
            let k = rng.random_range(1..6);
            let r: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..10.0)).collect();
            let mu = rng.random_range(0.5..20.0);
            let s = softmin(&r, mu);
            let m = r.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(s <= m + 1e-12);
            assert!(m <= s + (k as f64).ln() / mu + 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (a, b, w) = instance(3, 4, 6, 2);
        let obj = RateObjective::new(&a, &b, 0.5, 10.0).unwrap();
        let (_, g) = obj.value_grad(&w);
        let h = 1e-6;
        for i in 0..w.len() {
            for dir in [C64::new(1.0, 0.0), C64::new(0.0, 1.0)] {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[i] += dir * h;
                wm[i] -= dir * h;
                let fd = (obj.value(&wp) - obj.value(&wm)) / (2.0 * h);
                let an = (g[i].conj() * dir).re;
                assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn trace_is_monotone_and_unit_modulus_kept() {
        for seed in 0..100 {
            let (a, b, w) = instance(2, 3, 8, 100 + seed);
            let r = rcg_optimize_w(&a, &b, 0.3, &w, &RcgOptions::default()).unwrap();
            for pair in r.trace.windows(2) {
                assert!(pair[1] >= pair[0]);
            }
            assert!(r.w.iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn many_retractions_stay_on_manifold() {
        let (a, b, w) = instance(2, 3, 16, 9);
        let opts = RcgOptions { max_iters: 2000, grad_tol: 0.0, ..Default::default() };
        let r = rcg_optimize_w(&a, &b, 0.3, &w, &opts).unwrap();
        assert!(r.w.iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn stationary_point_is_kept() {
        // RIS columns of A are zero, so the objective does not depend on w
        let (mut a, b, w) = instance(2, 3, 5, 4);
        for ak in &mut a {
            for u in 1..6 {
                ak.column_mut(u).fill(C64::new(0.0, 0.0));
            }
        }
        let r = rcg_optimize_w(&a, &b, 1.0, &w, &RcgOptions::default()).unwrap();
        assert_eq!(r.w, w);
        assert_eq!(r.iterations, 0);
    }
}
