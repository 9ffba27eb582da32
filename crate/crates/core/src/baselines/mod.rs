//! Model-based benchmarks: perfect-CSI block coordinate descent, random
//! reflection with perfect CSI and non-adaptive sensing matrices.

pub mod bcd;
pub mod rcg;

use std::f64::consts::TAU;

use rand::Rng as _;

use crate::linalg::{phasor, CVec};
use crate::pilot::SensingMatrix;
use crate::rng::Rng;

pub use bcd::{bcd_perfect_csi, fixed_w_perfect_csi, random_w_perfect_csi, BcdOptions, BcdResult, BeamSolution};
pub use rcg::{rcg_optimize_w, softmin, RcgOptions, RcgResult};

/// Reflection vector with i.i.d. uniform phases.
pub fn random_reflection(rng: &mut Rng, elements: usize) -> CVec {
    CVec::from_fn(elements, |_, _| phasor(rng.random_range(0.0..TAU)))
}

/// Sensing matrix with fresh i.i.d. uniform phases.
pub fn random_sensing(rng: &mut Rng, elements: usize, blocks: usize) -> SensingMatrix {
    let phases: Vec<Vec<f64>> = (0..blocks).map(|_| (0..elements).map(|_| rng.random_range(0.0..TAU)).collect()).collect();
    SensingMatrix::from_phases(&phases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use statrs::distribution::{ContinuousCDF, Uniform};

    #[test]
    fn random_reflection_properties() {
        let w = random_reflection(&mut stream(1, &[]), 64);
        assert!(w.iter().all(|x| (x.norm() - 1.0).abs() < 1e-15));
        assert_eq!(w, random_reflection(&mut stream(1, &[]), 64));
    }

    /// Kolmogorov-Smirnov test of the phases against U[0, 2pi).
    #[test]
    fn random_reflection_phase_distribution() {
        let w = random_reflection(&mut stream(2, &[]), 10_000);
        let mut ph: Vec<f64> = w.iter().map(|x| x.arg().rem_euclid(TAU)).collect();
        ph.sort_by(f64::total_cmp);
        let u = Uniform::new(0.0, TAU).unwrap();
        let n = ph.len() as f64;
        let d = ph
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = u.cdf(x);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value
        assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn random_sensing_changes_between_draws() {
        let mut rng = stream(3, &[]);
        let a = random_sensing(&mut rng, 8, 2);
        let b = random_sensing(&mut rng, 8, 2);
        assert_ne!(a, b);
        a.validate().unwrap();
        b.validate().unwrap();
    }
}
