//! Duality-structured downlink beamforming, SINR/rate evaluation and
//! max-min SINR balancing by fixed-point iteration.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{lift, CMat, CVec, C64};

/// `A_k [1; w]`.
pub fn effective_channel(a: &CMat, w: &CVec) -> Result<CVec> {
    if a.ncols() != w.len() + 1 {
        return Err(Error::Shape(format!("A has {} columns, w has {} entries", a.ncols(), w.len())));
    }
    crate::pilot::check_unit_modulus(w)?;
    Ok(a * lift(w))
}

fn check_users(h: &[CVec], scale: f64) -> Result<usize> {
    let m = h.first().map(|v| v.len()).ok_or_else(|| Error::Shape("no users".into()))?;
    for (k, v) in h.iter().enumerate() {
        if v.len() != m {
            return Err(Error::Shape(format!("user {k} channel has {} entries, expected {m}", v.len())));
        }
        let n = v.norm();
        if !(n >= 1e-15 * scale) {
            return Err(Error::DegenerateUser { user: k, norm: n });
        }
    }
    Ok(m)
}

/// Unit-norm MMSE directions `(I + sum_{i != k} lambda_i / sigma^2 h_i h_i^H)^{-1} h_k`.
pub fn duality_directions(h: &[CVec], lambda: &[f64], noise: f64) -> Result<Vec<CVec>> {
    let m = check_users(h, 0.0)?;
    if lambda.len() != h.len() {
        return Err(Error::Shape(format!("{} powers for {} users", lambda.len(), h.len())));
    }
    let mut total = CMat::identity(m, m);
    for (hi, &li) in h.iter().zip(lambda) {
        total += hi * hi.adjoint() * C64::from(li / noise);
    }
    h.iter()
        .zip(lambda)
        .enumerate()
        .map(|(k, (hk, &lk))| {
            let q = &total - hk * hk.adjoint() * C64::from(lk / noise);
            let x = q
                .lu()
                .solve(hk)
                .ok_or_else(|| Error::Domain(format!("regularized covariance for user {k} is singular")))?;
            let n = x.norm();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::DegenerateUser { user: k, norm: n });
            }
            Ok(x / C64::from(n))
        })
        .collect()
}

/// Beamformer matrix `B` (`M x K`) with `||b_k||^2 = p_k`.
pub fn beamformers_from_duality(h: &[CVec], lambda: &[f64], p: &[f64], noise: f64) -> Result<CMat> {
    if lambda.iter().chain(p).any(|&x| x < 0.0) {
        return Err(Error::Domain("powers must be non-negative".into()));
    }
    if p.len() != h.len() {
        return Err(Error::Shape(format!("{} powers for {} users", p.len(), h.len())));
    }
    let dirs = duality_directions(h, lambda, noise)?;
    let cols: Vec<CVec> = dirs.iter().zip(p).map(|(d, &pk)| d * C64::from(pk.sqrt())).collect();
    Ok(CMat::from_columns(&cols))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub min_rate: f64,
}

/// Downlink SINR and `log2(1 + SINR)` rate per user for effective channels `h`.
pub fn sinr_and_rate(h: &[CVec], b: &CMat, noise: f64) -> Result<RateReport> {
    if b.ncols() != h.len() || h.iter().any(|v| v.len() != b.nrows()) {
        return Err(Error::Shape(format!("B is {:?} for {} users", b.shape(), h.len())));
    }
    let k = h.len();
    let gains = DMatrix::from_fn(k, k, |i, j| b.column(j).dotc(&h[i]).norm_sqr());
    let sinr: Vec<f64> = (0..k)
        .map(|i| {
            let interf: f64 = (0..k).filter(|&j| j != i).map(|j| gains[(i, j)]).sum();
            gains[(i, i)] / (interf + noise)
        })
        .collect();
    let rate: Vec<f64> = sinr.iter().map(|s| (1.0 + s).log2()).collect();
    let min_rate = rate.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(RateReport { sinr, rate, min_rate })
}

/// Rates for every user through combined channels `A_k` and reflection `w`.
pub fn rates_through(combined: &[CMat], w: &CVec, b: &CMat, noise: f64) -> Result<RateReport> {
    let h = combined.iter().map(|a| effective_channel(a, w)).collect::<Result<Vec<_>>>()?;
    sinr_and_rate(&h, b, noise)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500 }
    }
}

impl FixedPointOptions {
    /// Same tolerance with a large sweep budget. Nearly collinear users can
    /// need thousands of sweeps; pipelines that must not fail use this.
    pub fn patient() -> Self {
        Self { max_iter: 50_000, ..Self::default() }
    }
}

/// Max-min SINR solution for a fixed set of effective channels.
#[derive(Debug, Clone)]
pub struct PowerAllocation {
    /// Virtual uplink powers.
    pub lambda: Vec<f64>,
    /// Downlink powers.
    pub p: Vec<f64>,
    /// Balanced SINR level.
    pub tau: f64,
    /// Unit-norm beam directions.
    pub directions: Vec<CVec>,
    pub iterations: usize,
    pub residual: f64,
    /// Relative residual after every sweep.
    pub residual_trace: Vec<f64>,
}

impl PowerAllocation {
    pub fn beamformers(&self) -> CMat {
        let cols: Vec<CVec> = self.directions.iter().zip(&self.p).map(|(d, &p)| d * C64::from(p.sqrt())).collect();
        CMat::from_columns(&cols)
    }
}

/// `f_k(lambda) = h_k^H (sum_{i != k} lambda_i h_i h_i^H + sigma^2 I)^{-1} h_k`.
pub(crate) fn interference_gains(h: &[CVec], lambda: &[f64], noise: f64) -> Result<Vec<f64>> {
    let m = h[0].len();
    let mut total = CMat::identity(m, m) * C64::from(noise);
    for (hi, &li) in h.iter().zip(lambda) {
        total += hi * hi.adjoint() * C64::from(li);
    }
    h.iter()
        .zip(lambda)
        .enumerate()
        .map(|(k, (hk, &lk))| {
            let q = &total - hk * hk.adjoint() * C64::from(lk);
            let x = q.lu().solve(hk).ok_or_else(|| Error::Domain(format!("singular covariance for user {k}")))?;
            Ok(hk.dotc(&x).re)
        })
        .collect()
}

/// Fixed-point SINR balancing under total power `P_d`.
///
/// Iterates `lambda <- tau / f(lambda)` with `tau = P_d / sum_k 1/f_k` from
/// the uniform split, then recovers downlink powers by solving
/// `(I - tau D F) p = tau sigma^2 D 1`, where `D = diag(1/|h_k^H b_k|^2)` and
/// `F_ki = |h_k^H b_i|^2` off the diagonal.
pub fn fixed_point_power(h: &[CVec], total_power: f64, noise: f64, opts: FixedPointOptions) -> Result<PowerAllocation> {
    if !(total_power > 0.0) || !(noise > 0.0) {
        return Err(Error::Domain("power budget and noise must be positive".into()));
    }
    check_users(h, total_power.sqrt())?;
    let k = h.len();
    // Work with noise-normalized channels; f and tau are unchanged by this.
    let scale = C64::from(1.0 / noise.sqrt());
    let hn: Vec<CVec> = h.iter().map(|v| v * scale).collect();

    let mut lambda = vec![total_power / k as f64; k];
    let mut residual = f64::INFINITY;
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let f = interference_gains(&hn, &lambda, 1.0)?;
        let tau = total_power / f.iter().map(|x| 1.0 / x).sum::<f64>();
        let next: Vec<f64> = f.iter().map(|fk| tau / fk).collect();
        residual = next.iter().zip(&lambda).map(|(n, o)| ((n - o) / o).abs()).fold(0.0, f64::max);
        lambda = next;
        iterations += 1;
        trace.push(residual);
        if residual < opts.tol {
            break;
        }
    }
    if !(residual < opts.tol) {
        return Err(Error::IterationLimit { iterations, residual });
    }
    let f = interference_gains(&hn, &lambda, 1.0)?;
    let tau = total_power / f.iter().map(|x| 1.0 / x).sum::<f64>();

    let directions = duality_directions(&hn, &lambda, 1.0)?;
    let gains = DMatrix::from_fn(k, k, |i, j| directions[j].dotc(&hn[i]).norm_sqr());
    let system = DMatrix::from_fn(k, k, |i, j| {
        let d = 1.0 / gains[(i, i)];
        let off = if i == j { 0.0 } else { tau * d * gains[(i, j)] };
        if i == j {
            1.0 - off
        } else {
            -off
        }
    });
    let rhs = nalgebra::DVector::from_fn(k, |i, _| tau / gains[(i, i)]);
    let p = system.lu().solve(&rhs).ok_or_else(|| Error::Domain("downlink power system is singular".into()))?;
    Ok(PowerAllocation {
        lambda,
        p: p.iter().map(|&x| x.max(0.0)).collect(),
        tau,
        directions,
        iterations,
        residual,
        residual_trace: trace,
    })
}

/// Max-min rate for effective channels with optimal power allocation.
pub fn balanced_min_rate(h: &[CVec], total_power: f64, noise: f64) -> Result<(f64, PowerAllocation)> {
    let alloc = fixed_point_power(h, total_power, noise, FixedPointOptions::patient())?;
    let report = sinr_and_rate(h, &alloc.beamformers(), noise)?;
    Ok((report.min_rate, alloc))
}
