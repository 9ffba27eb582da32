//! Deployment geometry and UE mobility.

use std::f64::consts::{PI, TAU};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const SPEED_OF_LIGHT: f64 = 3e8;

pub type Point3 = [f64; 3];

fn dist(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Static positions of the AP and RIS and the array parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemGeometry {
    pub ap_position: Point3,
    pub ris_position: Point3,
    pub ap_element_spacing: f64,
    pub ris_element_spacing: f64,
    /// Number of RIS columns `v`; the element count must be a multiple of it.
    pub ris_columns: usize,
    pub carrier_wavelength: f64,
    pub carrier_frequency: f64,
}

impl SystemGeometry {
    /// Half-wavelength spaced arrays at the given carrier.
    pub fn new(carrier_frequency: f64, ap_position: Point3, ris_position: Point3, ris_columns: usize) -> Self {
        let wavelength = SPEED_OF_LIGHT / carrier_frequency;
        Self {
            ap_position,
            ris_position,
            ap_element_spacing: wavelength / 2.0,
            ris_element_spacing: wavelength / 2.0,
            ris_columns,
            carrier_wavelength: wavelength,
            carrier_frequency,
        }
    }

    pub fn validate(&self, ris_elements: usize) -> Result<()> {
        if self.ris_columns == 0 || ris_elements % self.ris_columns != 0 {
            return Err(Error::Config(format!(
                "ris_columns = {} does not divide the RIS element count {}",
                self.ris_columns, ris_elements
            )));
        }
        if !(self.carrier_wavelength > 0.0) {
            return Err(Error::Config("carrier wavelength must be positive".into()));
        }
        Ok(())
    }

    /// AP-RIS distance.
    pub fn ap_ris_distance(&self) -> f64 {
        dist(&self.ap_position, &self.ris_position)
    }
}

impl Default for SystemGeometry {
    fn default() -> Self {
        Self::new(1e9, [100.0, -100.0, 0.0], [0.0, 0.0, 0.0], 10)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceArea {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl ServiceArea {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.x_min > self.x_max || self.y_min > self.y_max {
            return Err(Error::Config(format!("invalid service area bounds {self:?}")));
        }
        Ok(())
    }
}

/// Random-walk mobility with constant speed and jittered heading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilityConfig {
    pub service_area: ServiceArea,
    pub z_ue: f64,
    pub speed: f64,
    pub max_doppler: f64,
    pub block_duration: f64,
    pub step_length: f64,
    /// Half-width of the uniform heading perturbation, radians.
    pub heading_perturbation: f64,
}

impl MobilityConfig {
    /// Derives Doppler, block duration and per-block displacement from the
    /// speed and carrier: `f_max = v f_c / c`, `T_b = 1 / (2 f_max)`, `step = v T_b`.
    pub fn from_speed(service_area: ServiceArea, z_ue: f64, speed: f64, carrier_frequency: f64) -> Self {
        let max_doppler = speed * carrier_frequency / SPEED_OF_LIGHT;
        let block_duration = if max_doppler > 0.0 { 1.0 / (2.0 * max_doppler) } else { f64::INFINITY };
        let step_length = if max_doppler > 0.0 { speed * block_duration } else { 0.0 };
        Self {
            service_area,
            z_ue,
            speed,
            max_doppler,
            block_duration,
            step_length,
            heading_perturbation: 10f64.to_radians(),
        }
    }
}

impl Default for MobilityConfig {
    fn default() -> Self {
        Self::from_speed(
            ServiceArea { x_min: 5.0, x_max: 45.0, y_min: -35.0, y_max: 35.0 },
            -20.0,
            10.0,
            1e9,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub positions: Vec<[f64; 2]>,
    pub headings: Vec<f64>,
    pub block_index: usize,
}

impl TrajectoryState {
    pub fn num_users(&self) -> usize {
        self.positions.len()
    }

    /// 3-D position of user `k` given the fixed UE height.
    pub fn position3(&self, k: usize, z_ue: f64) -> Point3 {
        [self.positions[k][0], self.positions[k][1], z_ue]
    }
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Uniform initial positions and headings for `num_users` UEs.
pub fn init_episode(config: &MobilityConfig, num_users: usize, rng: &mut Rng) -> Result<TrajectoryState> {
    config.service_area.validate()?;
    if num_users == 0 {
        return Err(Error::Config("at least one user is required".into()));
    }
    let a = &config.service_area;
    let mut positions = Vec::with_capacity(num_users);
    let mut headings = Vec::with_capacity(num_users);
    for _ in 0..num_users {
        let x = uniform(rng, a.x_min, a.x_max);
        let y = uniform(rng, a.y_min, a.y_max);
        positions.push([x, y]);
        headings.push(uniform(rng, 0.0, TAU));
    }
    Ok(TrajectoryState { positions, headings, block_index: 0 })
}

fn mirror(mut v: f64, lo: f64, hi: f64) -> (f64, bool) {
    if hi <= lo {
        return (lo, v != lo);
    }
    let mut flipped = false;
    while v < lo || v > hi {
        if v > hi {
            v = 2.0 * hi - v;
        } else {
            v = 2.0 * lo - v;
        }
        flipped = !flipped;
    }
    (v.clamp(lo, hi), flipped)
}

/// One block of motion with explicit heading increments (one per user).
///
/// Each UE moves `step_length` along its current heading. A coordinate that
/// leaves the area is reflected across the violated boundary and the heading
/// is reflected with it (`pi - g` for x, `-g` for y). The increment is applied
/// after the move.
pub fn step_block_with(state: &TrajectoryState, config: &MobilityConfig, increments: &[f64]) -> TrajectoryState {
    let a = &config.service_area;
    let step = config.step_length;
    let mut next = state.clone();
    for k in 0..state.num_users() {
        let g = state.headings[k];
        let [x0, y0] = state.positions[k];
        let (x, fx) = mirror(x0 + step * g.cos(), a.x_min, a.x_max);
        let (y, fy) = mirror(y0 + step * g.sin(), a.y_min, a.y_max);
        let mut heading = g;
        if fx {
            heading = PI - heading;
        }
        if fy {
            heading = -heading;
        }
        next.positions[k] = [x, y];
        next.headings[k] = (heading + increments[k]).rem_euclid(TAU);
    }
    next.block_index += 1;
    next
}

pub fn step_block(state: &TrajectoryState, config: &MobilityConfig, rng: &mut Rng) -> TrajectoryState {
    let h = config.heading_perturbation;
    let increments: Vec<f64> = (0..state.num_users()).map(|_| uniform(rng, -h, h)).collect();
    step_block_with(state, config, &increments)
}

/// Direction cosines of a UE as seen from the RIS, and the distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisAngles {
    pub dircos_y: f64,
    pub dircos_z: f64,
    pub distance: f64,
}

pub fn aoa_to_ris(position: &Point3, geometry: &SystemGeometry) -> Result<RisAngles> {
    let r = &geometry.ris_position;
    let l = dist(position, r);
    if !(l > 0.0) {
        return Err(Error::Domain("UE coincides with the RIS".into()));
    }
    Ok(RisAngles { dircos_y: (position[1] - r[1]) / l, dircos_z: (position[2] - r[2]) / l, distance: l })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDistances {
    pub ue_ap: f64,
    pub ue_ris: f64,
    pub ap_ris: f64,
}

pub fn distances(position: &Point3, geometry: &SystemGeometry) -> LinkDistances {
    LinkDistances {
        ue_ap: dist(position, &geometry.ap_position),
        ue_ris: dist(position, &geometry.ris_position),
        ap_ris: geometry.ap_ris_distance(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn cfg_with_step(step: f64) -> MobilityConfig {
        MobilityConfig { step_length: step, ..MobilityConfig::default() }
    }

    #[test]
    fn paper_mobility_constants() {
        let c = MobilityConfig::default();
        assert!((c.max_doppler - 100.0 / 3.0).abs() < 1e-12);
        assert!((c.step_length - 0.15).abs() < 1e-12);
    }

    #[test]
    fn init_within_bounds_and_deterministic() {
        let c = MobilityConfig::default();
        let s = init_episode(&c, 50, &mut stream(3, &[1])).unwrap();
        for (p, g) in s.positions.iter().zip(&s.headings) {
            assert!(c.service_area.contains(p[0], p[1]));
            assert!((0.0..TAU).contains(g));
        }
        assert_eq!(s, init_episode(&c, 50, &mut stream(3, &[1])).unwrap());
    }

    #[test]
    fn degenerate_area_collapses() {
        let mut c = MobilityConfig::default();
        c.service_area.x_max = c.service_area.x_min;
        let s = init_episode(&c, 5, &mut stream(1, &[])).unwrap();
        assert!(s.positions.iter().all(|p| p[0] == 5.0));
    }

    #[test]
    fn invalid_area_rejected() {
        let mut c = MobilityConfig::default();
        c.service_area.x_max = 0.0;
        assert!(matches!(init_episode(&c, 1, &mut stream(1, &[])), Err(Error::Config(_))));
        assert!(init_episode(&MobilityConfig::default(), 0, &mut stream(1, &[])).is_err());
    }

    #[test]
    fn straight_step() {
        let c = cfg_with_step(0.15);
        let s = TrajectoryState { positions: vec![[20.0, 0.0]], headings: vec![0.0], block_index: 0 };
        let n = step_block_with(&s, &c, &[0.0]);
        assert_eq!(n.positions[0], [20.15, 0.0]);
        assert_eq!(n.block_index, 1);
    }

    #[test]
    fn zero_step_keeps_position() {
        let c = cfg_with_step(0.0);
        let s = TrajectoryState { positions: vec![[20.0, 3.0]], headings: vec![1.3], block_index: 0 };
        let n = step_block(&s, &c, &mut stream(0, &[]));
        assert_eq!(n.positions[0], [20.0, 3.0]);
    }

    #[test]
    fn mirror_at_x_boundary() {
        let c = cfg_with_step(0.15);
        let s = TrajectoryState { positions: vec![[44.95, 0.0]], headings: vec![0.0], block_index: 0 };
        let n = step_block_with(&s, &c, &[0.0]);
        assert!((n.positions[0][0] - 44.90).abs() < 1e-12);
        assert!((n.headings[0] - PI).abs() < 1e-12);
    }

    #[test]
    fn mirror_at_y_boundary_flips_heading_sign() {
        let c = cfg_with_step(0.15);
        let s = TrajectoryState { positions: vec![[20.0, 34.95]], headings: vec![PI / 2.0], block_index: 0 };
        let n = step_block_with(&s, &c, &[0.0]);
        assert!((n.positions[0][1] - 34.90).abs() < 1e-12);
        assert!((n.headings[0] - 1.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn ris_angles() {
        let g = SystemGeometry::default();
        let a = aoa_to_ris(&[0.0, 10.0, -20.0], &g).unwrap();
        let l = 500f64.sqrt();
        assert!((a.distance - l).abs() < 1e-12);
        assert!((a.dircos_y - 10.0 / l).abs() < 1e-15);
        assert!((a.dircos_z + 20.0 / l).abs() < 1e-15);
        let b = aoa_to_ris(&[0.0, 0.0, -20.0], &g).unwrap();
        assert_eq!((b.dircos_y, b.dircos_z), (0.0, -1.0));
        assert!(aoa_to_ris(&[0.0, 0.0, 0.0], &g).is_err());
    }

    #[test]
    fn link_distances() {
        let g = SystemGeometry::default();
        let d = distances(&[25.0, 0.0, -20.0], &g);
        assert!((d.ap_ris - 100.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((d.ue_ris - 1025f64.sqrt()).abs() < 1e-12);
        assert_eq!(distances(&g.ap_position, &g).ue_ap, 0.0);
    }
}
