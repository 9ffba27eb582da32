//! Complex dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// One draw from CN(0, 1).
pub fn sample_cn(rng: &mut Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn cn_vec(n: usize, rng: &mut Rng) -> CVec {
    CVec::from_fn(n, |_, _| sample_cn(rng))
}

/// Column-major fill, matching the order nalgebra uses for `from_fn`.
pub fn cn_mat(r: usize, c: usize, rng: &mut Rng) -> CMat {
    CMat::from_fn(r, c, |_, _| sample_cn(rng))
}

/// `e^{j theta}`.
pub fn phasor(theta: f64) -> C64 {
    C64::from_polar(1.0, theta)
}

/// `[1; w]`.
pub fn lift(w: &CVec) -> CVec {
    let mut out = CVec::zeros(w.len() + 1);
    out[0] = C64::new(1.0, 0.0);
    out.rows_mut(1, w.len()).copy_from(w);
    out
}

/// Largest deviation of `|x_i|` from one.
pub fn max_modulus_error(v: &CVec) -> f64 {
    v.iter().map(|x| (x.norm() - 1.0).abs()).fold(0.0, f64::max)
}

/// Elementwise projection onto the unit circle. Zeros map to phase 0.
pub fn project_unit_modulus(v: &CVec) -> CVec {
    v.map(|x| {
        let n = x.norm();
        if n > 0.0 {
            x / n
        } else {
            C64::new(1.0, 0.0)
        }
    })
}
