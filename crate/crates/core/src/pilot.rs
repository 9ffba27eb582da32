//! Uplink pilot stage: decorrelated sensing observations and the
//! effective-channel estimate taken through the chosen reflection vector.

use serde::{Deserialize, Serialize};

use crate::channel::BlockChannels;
use crate::error::{Error, Result};
use crate::linalg::{cn_mat, cn_vec, lift, phasor, CMat, CVec, C64};
use crate::rng::Rng;

const MODULUS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotConfig {
    /// Number of sensing sub-blocks `L`.
    pub sensing_blocks: usize,
    /// Pilot length per sensing sub-block; equal to the number of users.
    pub pilot_length: usize,
    /// Pilot length `tau_w` of the effective-channel sub-block.
    pub estimate_length: usize,
    /// Uplink pilot power, mW.
    pub uplink_power: f64,
    /// Uplink noise power, mW.
    pub uplink_noise: f64,
}

impl PilotConfig {
    pub fn validate(&self, users: usize) -> Result<()> {
        if self.sensing_blocks == 0 || self.estimate_length == 0 {
            return Err(Error::Config("sensing_blocks and estimate_length must be at least 1".into()));
        }
        if self.pilot_length != users {
            return Err(Error::Config(format!("pilot length {} must equal the user count {users}", self.pilot_length)));
        }
        if !(self.uplink_power > 0.0) || !(self.uplink_noise >= 0.0) {
            return Err(Error::Config("uplink power must be positive and noise non-negative".into()));
        }
        Ok(())
    }

    /// Per-entry variance of the decorrelated sensing noise, `sigma_u^2 / (tau P_u)`.
    pub fn pilot_noise_variance(&self) -> f64 {
        self.uplink_noise / (self.pilot_length as f64 * self.uplink_power)
    }

    /// Per-entry variance of the effective-channel estimate, `sigma_u^2 / (tau_w P_u)`.
    pub fn estimate_noise_variance(&self) -> f64 {
        self.uplink_noise / (self.estimate_length as f64 * self.uplink_power)
    }
}

/// `L` lifted sensing vectors `[1; v_l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    pub lifted_columns: Vec<CVec>,
}

impl SensingMatrix {
    pub fn from_vectors(vs: &[CVec]) -> Result<Self> {
        let lifted_columns = vs.iter().map(lift_sensing).collect::<Result<Vec<_>>>()?;
        Ok(Self { lifted_columns })
    }

    /// Sensing vectors from phases, `phases[l][u]`.
    pub fn from_phases(phases: &[Vec<f64>]) -> Self {
        let lifted_columns = phases
            .iter()
            .map(|ph| lift(&CVec::from_iterator(ph.len(), ph.iter().map(|&t| phasor(t)))))
            .collect();
        Self { lifted_columns }
    }

    pub fn len(&self) -> usize {
        self.lifted_columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lifted_columns.is_empty()
    }

    /// `(N_r + 1) x L` matrix `V`.
    pub fn matrix(&self) -> CMat {
        CMat::from_columns(&self.lifted_columns)
    }

    pub fn validate(&self) -> Result<()> {
        for col in &self.lifted_columns {
            if col[0] != C64::new(1.0, 0.0) {
                return Err(Error::UnitModulus { index: 0, modulus: col[0].norm() });
            }
            check_unit_modulus(&col.rows(1, col.len() - 1).into_owned())?;
        }
        Ok(())
    }
}

pub fn check_unit_modulus(v: &CVec) -> Result<()> {
    for (i, x) in v.iter().enumerate() {
        if (x.norm() - 1.0).abs() > MODULUS_TOL {
            return Err(Error::UnitModulus { index: i, modulus: x.norm() });
        }
    }
    Ok(())
}

/// `[1; v]`, rejecting entries off the unit circle.
pub fn lift_sensing(v: &CVec) -> Result<CVec> {
    check_unit_modulus(v)?;
    Ok(lift(v))
}

/// Unit-variance noise draws for one frame's pilot stage. They are scaled by
/// the configured variances when applied, so the same draws can be reused
/// while the sensing decisions change.
#[derive(Debug, Clone)]
pub struct PilotNoise {
    /// `K` matrices `M x L`.
    pub sensing: Vec<CMat>,
    /// `K` vectors of length `M`.
    pub estimate: Vec<CVec>,
}

impl PilotNoise {
    pub fn sample(users: usize, antennas: usize, sensing_blocks: usize, rng: &mut Rng) -> Self {
        let sensing = (0..users).map(|_| cn_mat(antennas, sensing_blocks, rng)).collect();
        let estimate = (0..users).map(|_| cn_vec(antennas, rng)).collect();
        Self { sensing, estimate }
    }
}

#[derive(Debug, Clone)]
pub struct PilotObservation {
    pub y_bar: Vec<CMat>,
    pub h_c_hat: Vec<CVec>,
    pub pilot_noise_variance: f64,
    pub estimate_noise_variance: f64,
}

/// `Y_k = A_k V + Z_k` using pre-drawn unit-variance noise.
pub fn receive_pilots_with(block0: &BlockChannels, sensing: &SensingMatrix, config: &PilotConfig, noise: &PilotNoise) -> Result<Vec<CMat>> {
    let v = sensing.matrix();
    let sd = C64::from(config.pilot_noise_variance().sqrt());
    block0
        .combined
        .iter()
        .zip(&noise.sensing)
        .map(|(a, z)| {
            if a.ncols() != v.nrows() || z.shape() != (a.nrows(), v.ncols()) {
                return Err(Error::Shape(format!(
                    "A is {:?}, V is {:?}, noise is {:?}",
                    a.shape(),
                    v.shape(),
                    z.shape()
                )));
            }
            Ok(a * &v + z * sd)
        })
        .collect()
}

pub fn receive_pilots(block0: &BlockChannels, sensing: &SensingMatrix, config: &PilotConfig, rng: &mut Rng) -> Result<Vec<CMat>> {
    let m = block0.combined.first().map_or(0, |a| a.nrows());
    let noise = PilotNoise::sample(block0.users(), m, sensing.len(), rng);
    receive_pilots_with(block0, sensing, config, &noise)
}

/// `h_c,k = A_k [1; w] + z_k` with pre-drawn unit-variance noise.
pub fn estimate_effective_channel_with(block0: &BlockChannels, w: &CVec, config: &PilotConfig, noise: &PilotNoise) -> Result<Vec<CVec>> {
    check_unit_modulus(w)?;
    let lifted = lift(w);
    let sd = C64::from(config.estimate_noise_variance().sqrt());
    block0
        .combined
        .iter()
        .zip(&noise.estimate)
        .map(|(a, z)| {
            if a.ncols() != lifted.len() {
                return Err(Error::Shape(format!("A is {:?}, w~ has {} entries", a.shape(), lifted.len())));
            }
            Ok(a * &lifted + z * sd)
        })
        .collect()
}

pub fn estimate_effective_channel(block0: &BlockChannels, w: &CVec, config: &PilotConfig, rng: &mut Rng) -> Result<Vec<CVec>> {
    let m = block0.combined.first().map_or(0, |a| a.nrows());
    let noise = PilotNoise { sensing: Vec::new(), estimate: (0..block0.users()).map(|_| cn_vec(m, rng)).collect() };
    estimate_effective_channel_with(block0, w, config, &noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::combine;
    use crate::linalg::sample_cn;
    use crate::rng::stream;

    fn random_block(m: usize, nr: usize, k: usize, seed: u64) -> BlockChannels {
        let mut rng = stream(seed, &[]);
        let g = cn_mat(m, nr, &mut rng);
        let h_d: Vec<CVec> = (0..k).map(|_| cn_vec(m, &mut rng)).collect();
        let h_r: Vec<CVec> = (0..k).map(|_| cn_vec(nr, &mut rng)).collect();
        let combined = (0..k).map(|i| combine(&h_d[i], &g, &h_r[i])).collect();
        BlockChannels { g, h_d, h_r, combined, beta_g: 1.0, beta_d: vec![1.0; k], beta_r: vec![1.0; k] }
    }

    fn config(k: usize, noise: f64) -> PilotConfig {
        PilotConfig { sensing_blocks: 2, pilot_length: k, estimate_length: 5, uplink_power: 10f64.powf(0.5), uplink_noise: noise }
    }

    fn random_sensing(nr: usize, l: usize, seed: u64) -> SensingMatrix {
        let mut rng = stream(seed, &[]);
        let phases: Vec<Vec<f64>> = (0..l).map(|_| (0..nr).map(|_| sample_cn(&mut rng).arg()).collect()).collect();
        SensingMatrix::from_phases(&phases)
    }

    #[test]
    fn noise_variance_from_paper_powers() {
        let c = PilotConfig { uplink_noise: 10f64.powf(-8.4), ..config(3, 0.0) };
        let v = c.pilot_noise_variance();
        assert!((v - 10f64.powf(-8.4) / (3.0 * 10f64.powf(0.5))).abs() < 1e-24);
        assert!((v - 4.19e-10).abs() < 0.01e-10);
    }

    #[test]
    fn noiseless_pilots_are_exact() {
        let b = random_block(3, 8, 2, 1);
        let s = random_sensing(8, 2, 2);
        let y = receive_pilots(&b, &s, &config(2, 0.0), &mut stream(3, &[])).unwrap();
        for k in 0..2 {
            assert!((&y[k] - &b.combined[k] * s.matrix()).norm() < 1e-14);
        }
    }

    #[test]
    fn pilots_are_columnwise_linear_in_sensing() {
        let b = random_block(3, 8, 2, 4);
        let s = random_sensing(8, 2, 5);
        let c = config(2, 0.0);
        let y = receive_pilots(&b, &s, &c, &mut stream(0, &[])).unwrap();
        for l in 0..2 {
            let single = SensingMatrix { lifted_columns: vec![s.lifted_columns[l].clone()] };
            let yl = receive_pilots(&b, &single, &c, &mut stream(0, &[])).unwrap();
            for k in 0..2 {
                assert!((y[k].column(l) - yl[k].column(0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn lift_rejects_off_circle() {
        let v = CVec::from_element(4, C64::new(1.0, 0.0));
        let l = lift_sensing(&v).unwrap();
        assert_eq!(l.len(), 5);
        assert!(l.iter().all(|x| *x == C64::new(1.0, 0.0)));
        let bad = CVec::from_element(4, C64::new(0.5, 0.0));
        assert!(matches!(lift_sensing(&bad), Err(Error::UnitModulus { .. })));
        let s = random_sensing(6, 3, 9);
        s.validate().unwrap();
        assert!(s.lifted_columns.iter().all(|c| c[0] == C64::new(1.0, 0.0)));
    }

    #[test]
    fn estimate_noise_scaling() {
        let b = random_block(2, 4, 1, 7);
        let w = CVec::from_element(4, C64::new(1.0, 0.0));
        let c5 = PilotConfig { estimate_length: 5, ..config(1, 1.0) };
        let c10 = PilotConfig { estimate_length: 10, ..config(1, 1.0) };
        assert!((c5.estimate_noise_variance() / c10.estimate_noise_variance() - 2.0).abs() < 1e-12);
        let exact = b.effective(&w);
        let noiseless = estimate_effective_channel(&b, &w, &config(1, 0.0), &mut stream(1, &[])).unwrap();
        assert!((&noiseless[0] - &exact[0]).norm() < 1e-14);
        let mut rng = stream(11, &[]);
        let trials = 10_000;
        let mut mse = 0.0;
        for _ in 0..trials {
            let est = estimate_effective_channel(&b, &w, &c5, &mut rng).unwrap();
            mse += (&est[0] - &exact[0]).norm_squared() / 2.0;
        }
        mse /= trials as f64;
        let expect = c5.estimate_noise_variance();
        assert!((mse / expect - 1.0).abs() < 0.05, "mse {mse} vs {expect}");
    }

    #[test]
    fn pure_noise_and_power_scaling() {
        let mut b = random_block(2, 4, 1, 3);
        b.combined[0].fill(C64::new(0.0, 0.0));
        let s = random_sensing(4, 2, 1);
        let measure = |c: &PilotConfig, seed| {
            let mut rng = stream(seed, &[]);
            let mut acc = 0.0;
            let n = 5000;
            for _ in 0..n {
                let y = receive_pilots(&b, &s, c, &mut rng).unwrap();
                acc += y[0].norm_squared() / 4.0;
            }
            acc / n as f64
        };
        let c = config(1, 1.0);
        let v1 = measure(&c, 1);
        assert!((v1 / c.pilot_noise_variance() - 1.0).abs() < 0.03);
        let c2 = PilotConfig { uplink_power: 2.0 * c.uplink_power, ..c.clone() };
        let v2 = measure(&c2, 2);
        assert!((v1 / v2 - 2.0).abs() < 0.1, "{v1} {v2}");
    }

    /// Explicit orthogonal pilots through the full received-signal model,
    /// decorrelated by matched filtering, against direct synthesis.
    #[test]
    fn decorrelation_matches_direct_synthesis() {
        let (m, nr, k) = (2, 4, 2);
        let b = random_block(m, nr, k, 21);
        let s = random_sensing(nr, 1, 22);
        let pu: f64 = 3.0;
        let tau = k;
        let pilots: Vec<CVec> = (0..k)
            .map(|i| CVec::from_fn(tau, |n, _| phasor(-std::f64::consts::TAU * (i * n) as f64 / tau as f64) * pu.sqrt()))
            .collect();
        for i in 0..k {
            for j in 0..k {
                let ip = pilots[i].dotc(&pilots[j]);
                let expect = if i == j { tau as f64 * pu } else { 0.0 };
                assert!((ip - C64::from(expect)).norm() < 1e-12);
            }
        }
        let vt = &s.lifted_columns[0];
        let signal = (0..k).fold(CMat::zeros(m, tau), |acc, i| acc + &b.combined[i] * vt * pilots[i].adjoint());
        let c = PilotConfig { pilot_length: tau, uplink_power: pu, uplink_noise: 0.0, ..config(k, 0.0) };
        let direct = receive_pilots(&b, &s, &c, &mut stream(0, &[])).unwrap();
        for i in 0..k {
            let ybar = &signal * &pilots[i] / C64::from(tau as f64 * pu);
            assert!((ybar - direct[i].column(0)).norm() < 1e-12);
        }
        // noise statistics of the matched-filter path
        let sigma2: f64 = 0.7;
        let mut rng = stream(23, &[]);
        let n = 20_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let z = cn_mat(m, tau, &mut rng) * C64::from(sigma2.sqrt());
            let zbar = z * &pilots[0] / C64::from(tau as f64 * pu);
            acc += zbar.norm_squared() / m as f64;
        }
        let expect = PilotConfig { uplink_noise: sigma2, ..c }.pilot_noise_variance();
        assert!((acc / n as f64 / expect - 1.0).abs() < 0.03);
    }
}
