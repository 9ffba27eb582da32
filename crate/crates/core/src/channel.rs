//! Time-varying channel model: steering vectors, path loss, Rician LOS paths
//! and Gauss-Markov NLOS evolution.

use std::f64::consts::{PI, TAU};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{aoa_to_ris, distances, Point3, SystemGeometry, TrajectoryState};
use crate::linalg::{cn_mat, cn_vec, phasor, CMat, CVec, C64};
use crate::rng::Rng;

/// RIS steering vector for a uniform rectangular array with `columns` columns.
///
/// Element `u` (0-based) has phase `2 pi d / lambda * (mod(u, v) * dircos_y + floor(u / v) * dircos_z)`.
pub fn steering_ris(dircos_y: f64, dircos_z: f64, elements: usize, columns: usize, spacing: f64, wavelength: f64) -> Result<CVec> {
    if columns == 0 || elements % columns != 0 {
        return Err(Error::Config(format!("{columns} columns do not divide {elements} RIS elements")));
    }
    let k = TAU * spacing / wavelength;
    Ok(CVec::from_fn(elements, |u, _| {
        let i1 = (u % columns) as f64;
        let i2 = (u / columns) as f64;
        phasor(k * (i1 * dircos_y + i2 * dircos_z))
    }))
}

/// Uniform linear array steering vector at the AP.
pub fn steering_ap(phi: f64, antennas: usize, spacing: f64, wavelength: f64) -> CVec {
    let k = TAU * spacing / wavelength * phi.cos();
    CVec::from_fn(antennas, |m, _| phasor(k * m as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    Direct,
    RisSegment,
}

/// Log-distance path loss, `PL_dB = a + b log10(l)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathLossModel {
    pub direct_intercept_db: f64,
    pub direct_slope_db: f64,
    pub ris_intercept_db: f64,
    pub ris_slope_db: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self { direct_intercept_db: 32.0, direct_slope_db: 43.3, ris_intercept_db: 28.0, ris_slope_db: 16.9 }
    }
}

impl PathLossModel {
    pub fn loss_db(&self, kind: LinkKind, distance: f64) -> Result<f64> {
        if !(distance > 0.0) {
            return Err(Error::Domain(format!("path-loss distance must be positive, got {distance}")));
        }
        let (a, b) = match kind {
            LinkKind::Direct => (self.direct_intercept_db, self.direct_slope_db),
            LinkKind::RisSegment => (self.ris_intercept_db, self.ris_slope_db),
        };
        Ok(a + b * distance.log10())
    }

    /// Amplitude factor `10^(-PL_dB / 20)`.
    pub fn amplitude(&self, kind: LinkKind, distance: f64) -> Result<f64> {
        Ok(10f64.powf(-self.loss_db(kind, distance)? / 20.0))
    }
}

pub fn pathloss_amplitude(kind: LinkKind, distance: f64) -> Result<f64> {
    PathLossModel::default().amplitude(kind, distance)
}

/// Dimensions and statistics of the channel ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub antennas: usize,
    pub ris_elements: usize,
    pub users: usize,
    pub num_paths: usize,
    pub rician_factor: f64,
    pub correlation: f64,
    #[serde(default)]
    pub pathloss: PathLossModel,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.users == 0 || self.num_paths == 0 {
            return Err(Error::Config("antennas, users and num_paths must be positive".into()));
        }
        if !(self.rician_factor >= 0.0) {
            return Err(Error::Config("rician_factor must be non-negative".into()));
        }
        if !(self.correlation > 0.0 && self.correlation <= 1.0) {
            return Err(Error::Config("correlation must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn los_weights(&self) -> (f64, f64) {
        let e = self.rician_factor;
        ((e / (1.0 + e)).sqrt(), (1.0 / (1.0 + e)).sqrt())
    }
}

/// Episode-constant AP-RIS multipath geometry.
#[derive(Debug, Clone)]
pub struct StaticPaths {
    pub ap_aoas: Vec<f64>,
    pub ris_aods: Vec<f64>,
    pub ris_elevations: Vec<f64>,
    /// `sum_i a_AP(phi_1i) a_RIS(theta_2i, phi_2i)^H`, `M x N_r`.
    pub los_g_sum: CMat,
    pub rician_factor: f64,
}

impl StaticPaths {
    pub fn num_paths(&self) -> usize {
        self.ap_aoas.len()
    }

    /// `sum_i a_RIS(theta_2i, phi_2i)`.
    pub fn ris_departure_sum(&self, geometry: &SystemGeometry, elements: usize) -> Result<CVec> {
        let mut acc = CVec::zeros(elements);
        for (phi, theta) in self.ris_aods.iter().zip(&self.ris_elevations) {
            acc += ris_path_steering(*phi, *theta, geometry, elements)?;
        }
        Ok(acc)
    }
}

fn ris_path_steering(phi: f64, theta: f64, geometry: &SystemGeometry, elements: usize) -> Result<CVec> {
    steering_ris(
        phi.sin() * theta.cos(),
        theta.sin(),
        elements,
        geometry.ris_columns,
        geometry.ris_element_spacing,
        geometry.carrier_wavelength,
    )
}

/// Draws AP arrival azimuths on `[0, 2pi)` and RIS departure azimuths on
/// `[-pi/2, 0)` with zero elevation.
pub fn sample_static_paths(rng: &mut Rng, geometry: &SystemGeometry, params: &ChannelParams) -> Result<StaticPaths> {
    let (m, nr) = (params.antennas, params.ris_elements);
    let mut ap_aoas = Vec::with_capacity(params.num_paths);
    let mut ris_aods = Vec::with_capacity(params.num_paths);
    let mut los = CMat::zeros(m, nr);
    for _ in 0..params.num_paths {
        let phi1 = rng.random_range(0.0..TAU);
        let phi2 = rng.random_range(-PI / 2.0..0.0);
        let a_ap = steering_ap(phi1, m, geometry.ap_element_spacing, geometry.carrier_wavelength);
        let a_ris = ris_path_steering(phi2, 0.0, geometry, nr)?;
        los += &a_ap * a_ris.adjoint();
        ap_aoas.push(phi1);
        ris_aods.push(phi2);
    }
    Ok(StaticPaths {
        ris_elevations: vec![0.0; ap_aoas.len()],
        ap_aoas,
        ris_aods,
        los_g_sum: los,
        rician_factor: params.rician_factor,
    })
}

/// NLOS components following a stationary first-order Gauss-Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct NlosState {
    pub g_tilde: CMat,
    pub h_d_tilde: Vec<CVec>,
    pub h_r_tilde: Vec<CVec>,
    pub correlation: f64,
}

impl NlosState {
    pub fn sample(params: &ChannelParams, rng: &mut Rng) -> Self {
        let (m, nr, k) = (params.antennas, params.ris_elements, params.users);
        Self {
            g_tilde: cn_mat(m, nr, rng),
            h_d_tilde: (0..k).map(|_| cn_vec(m, rng)).collect(),
            h_r_tilde: (0..k).map(|_| cn_vec(nr, rng)).collect(),
            correlation: params.correlation,
        }
    }

    /// One step `x' = rho x + sqrt(1 - rho^2) mu`, fresh `mu ~ CN(0,1)` per entry.
    pub fn evolve(&self, rng: &mut Rng) -> Self {
        let rho = self.correlation;
        let s = (1.0 - rho * rho).max(0.0).sqrt();
        let g_tilde = self.g_tilde.map(|x| x * rho + crate::linalg::sample_cn(rng) * s);
        let step = |v: &CVec, rng: &mut Rng| v.map(|x| x * rho + crate::linalg::sample_cn(rng) * s);
        let h_d_tilde = self.h_d_tilde.iter().map(|v| step(v, rng)).collect();
        let h_r_tilde = self.h_r_tilde.iter().map(|v| step(v, rng)).collect();
        Self { g_tilde, h_d_tilde, h_r_tilde, correlation: rho }
    }
}

pub fn evolve_nlos(state: &NlosState, rng: &mut Rng) -> NlosState {
    state.evolve(rng)
}

/// All channels of one block.
#[derive(Debug, Clone)]
pub struct BlockChannels {
    pub g: CMat,
    pub h_d: Vec<CVec>,
    pub h_r: Vec<CVec>,
    /// `A_k = [h_d,k, G diag(h_r,k)]`, `M x (N_r + 1)`.
    pub combined: Vec<CMat>,
    pub beta_g: f64,
    pub beta_d: Vec<f64>,
    pub beta_r: Vec<f64>,
}

impl BlockChannels {
    pub fn users(&self) -> usize {
        self.combined.len()
    }

    /// `A_k w~` for every user.
    pub fn effective(&self, w: &CVec) -> Vec<CVec> {
        let lifted = crate::linalg::lift(w);
        self.combined.iter().map(|a| a * &lifted).collect()
    }
}

pub fn combine(h_d: &CVec, g: &CMat, h_r: &CVec) -> CMat {
    let (m, nr) = g.shape();
    let mut a = CMat::zeros(m, nr + 1);
    a.column_mut(0).copy_from(h_d);
    for u in 0..nr {
        let col = g.column(u) * h_r[u];
        a.column_mut(u + 1).copy_from(&col);
    }
    a
}

/// Per-user links for a UE at `position` with the given NLOS components.
pub fn user_links(
    position: &Point3,
    h_d_tilde: &CVec,
    h_r_tilde: &CVec,
    geometry: &SystemGeometry,
    params: &ChannelParams,
) -> Result<(CVec, CVec, f64, f64)> {
    let d = distances(position, geometry);
    let angles = aoa_to_ris(position, geometry)?;
    let beta_d = params.pathloss.amplitude(LinkKind::Direct, d.ue_ap)?;
    let beta_r = params.pathloss.amplitude(LinkKind::RisSegment, d.ue_ris)?;
    let (wl, wn) = params.los_weights();
    let los = steering_ris(
        angles.dircos_y,
        angles.dircos_z,
        params.ris_elements,
        geometry.ris_columns,
        geometry.ris_element_spacing,
        geometry.carrier_wavelength,
    )?;
    let h_r = (los * C64::from(wl) + h_r_tilde * C64::from(wn)) * C64::from(beta_r);
    let h_d = h_d_tilde * C64::from(beta_d);
    Ok((h_d, h_r, beta_d, beta_r))
}

/// AP-RIS channel `G` for the current NLOS state.
pub fn ap_ris_channel(paths: &StaticPaths, nlos: &NlosState, geometry: &SystemGeometry, params: &ChannelParams) -> Result<(CMat, f64)> {
    let beta_g = params.pathloss.amplitude(LinkKind::RisSegment, geometry.ap_ris_distance())?;
    let (wl, wn) = params.los_weights();
    let g = (&paths.los_g_sum * C64::from(wl) + &nlos.g_tilde * C64::from(wn)) * C64::from(beta_g);
    Ok((g, beta_g))
}

/// Assemble every channel of one block from positions, paths and NLOS state.
pub fn assemble_channels(
    traj: &TrajectoryState,
    z_ue: f64,
    paths: &StaticPaths,
    nlos: &NlosState,
    geometry: &SystemGeometry,
    params: &ChannelParams,
) -> Result<BlockChannels> {
    let (m, nr, k) = (params.antennas, params.ris_elements, params.users);
    if paths.los_g_sum.shape() != (m, nr)
        || nlos.g_tilde.shape() != (m, nr)
        || nlos.h_d_tilde.len() != k
        || nlos.h_r_tilde.len() != k
        || traj.num_users() != k
        || nlos.h_d_tilde.iter().any(|v| v.len() != m)
        || nlos.h_r_tilde.iter().any(|v| v.len() != nr)
    {
        return Err(Error::Shape(format!("channel inputs inconsistent with (M, N_r, K) = ({m}, {nr}, {k})")));
    }
    let (g, beta_g) = ap_ris_channel(paths, nlos, geometry, params)?;
    let mut out = BlockChannels {
        combined: Vec::with_capacity(k),
        h_d: Vec::with_capacity(k),
        h_r: Vec::with_capacity(k),
        beta_d: Vec::with_capacity(k),
        beta_r: Vec::with_capacity(k),
        beta_g,
        g,
    };
    for u in 0..k {
        let pos = traj.position3(u, z_ue);
        let (h_d, h_r, bd, br) = user_links(&pos, &nlos.h_d_tilde[u], &nlos.h_r_tilde[u], geometry, params)?;
        out.combined.push(combine(&h_d, &out.g, &h_r));
        out.h_d.push(h_d);
        out.h_r.push(h_r);
        out.beta_d.push(bd);
        out.beta_r.push(br);
    }
    Ok(out)
}
