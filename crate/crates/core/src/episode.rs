//! Episode generation: trajectories, block channels and every noise draw a
//! controller will consume, all derived from a single episode seed.

use serde::{Deserialize, Serialize};

use crate::baselines::{random_reflection, random_sensing};
use crate::channel::{assemble_channels, sample_static_paths, BlockChannels, ChannelParams, NlosState, StaticPaths};
use crate::error::{Error, Result};
use crate::geometry::{init_episode, step_block, MobilityConfig, SystemGeometry, TrajectoryState};
use crate::linalg::CVec;
use crate::pilot::{PilotConfig, PilotNoise, SensingMatrix};
use crate::rng::{label, stream};

/// Physical system in linear units (mW, meters, Hz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub geometry: SystemGeometry,
    pub mobility: MobilityConfig,
    pub channel: ChannelParams,
    pub pilot: PilotConfig,
    /// Data blocks `N` per frame.
    pub data_blocks: usize,
    /// Total downlink power budget `P_d`, mW.
    pub downlink_power: f64,
    /// Downlink noise power `sigma_d^2`, mW.
    pub downlink_noise: f64,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.geometry.validate(self.channel.ris_elements)?;
        self.mobility.service_area.validate()?;
        self.pilot.validate(self.channel.users)?;
        if self.data_blocks == 0 {
            return Err(Error::Config("data_blocks must be at least 1".into()));
        }
        if !(self.downlink_power > 0.0) || !(self.downlink_noise > 0.0) {
            return Err(Error::Config("downlink power and noise must be positive".into()));
        }
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.channel.users
    }

    pub fn antennas(&self) -> usize {
        self.channel.antennas
    }

    pub fn ris_elements(&self) -> usize {
        self.channel.ris_elements
    }

    pub fn sensing_blocks(&self) -> usize {
        self.pilot.sensing_blocks
    }
}

/// Everything that happens during one frame, independent of the controller.
#[derive(Debug, Clone)]
pub struct Frame {
    /// Block 0 carries pilots; blocks `1..=N` carry data.
    pub blocks: Vec<BlockChannels>,
    pub trajectories: Vec<TrajectoryState>,
    pub nlos: Vec<NlosState>,
    /// Unit-variance pilot noise, scaled by the receiver.
    pub noise: PilotNoise,
    /// Non-adaptive sensing draw used by the fixed-sensing variants.
    pub random_sensing: SensingMatrix,
    /// Random reflection used by the random-`w` baseline.
    pub random_w: CVec,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub seed: u64,
    pub paths: StaticPaths,
    pub frames: Vec<Frame>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Generates `frames` frames. The realization of frame `t` does not depend on
/// how many frames are requested, so longer episodes extend shorter ones.
pub fn generate_episode(sys: &SystemConfig, seed: u64, frames: usize) -> Result<Episode> {
    sys.validate()?;
    let (k, m, nr, l) = (sys.users(), sys.antennas(), sys.ris_elements(), sys.sensing_blocks());
    let paths = sample_static_paths(&mut stream(seed, &[label::PATHS]), &sys.geometry, &sys.channel)?;
    let mut traj = init_episode(&sys.mobility, k, &mut stream(seed, &[label::MOBILITY]))?;
    let mut nlos = NlosState::sample(&sys.channel, &mut stream(seed, &[label::NLOS]));
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames as u64 {
        let mut blocks = Vec::with_capacity(sys.data_blocks + 1);
        let mut trajectories = Vec::with_capacity(sys.data_blocks + 1);
        let mut states = Vec::with_capacity(sys.data_blocks + 1);
        for n in 0..=sys.data_blocks as u64 {
            if t > 0 || n > 0 {
                traj = step_block(&traj, &sys.mobility, &mut stream(seed, &[label::MOBILITY, t, n]));
                nlos = nlos.evolve(&mut stream(seed, &[label::NLOS, t, n]));
            }
            blocks.push(assemble_channels(&traj, sys.mobility.z_ue, &paths, &nlos, &sys.geometry, &sys.channel)?);
            trajectories.push(traj.clone());
            states.push(nlos.clone());
        }
        out.push(Frame {
            blocks,
            trajectories,
            nlos: states,
            noise: PilotNoise::sample(k, m, l, &mut stream(seed, &[label::PILOT_NOISE, t])),
            random_sensing: random_sensing(&mut stream(seed, &[label::SENSING, t]), nr, l),
            random_w: random_reflection(&mut stream(seed, &[label::REFLECTION, t]), nr),
        });
    }
    Ok(Episode { seed, paths, frames: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::desk_system;

    #[test]
    fn longer_episodes_extend_shorter_ones() {
        let sys = desk_system();
        let a = generate_episode(&sys, 3, 2).unwrap();
        let b = generate_episode(&sys, 3, 4).unwrap();
        for t in 0..2 {
            for n in 0..=sys.data_blocks {
                assert_eq!(a.frames[t].blocks[n].combined, b.frames[t].blocks[n].combined);
            }
            assert_eq!(a.frames[t].random_w, b.frames[t].random_w);
        }
    }

    #[test]
    fn ues_move_every_block() {
        let sys = desk_system();
        let e = generate_episode(&sys, 9, 2).unwrap();
        let p0 = e.frames[0].trajectories[0].positions[0];
        let p1 = e.frames[0].trajectories[1].positions[0];
        let step = ((p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2)).sqrt();
        assert!((step - sys.mobility.step_length).abs() < 1e-9 || step < sys.mobility.step_length);
        let last = e.frames[0].trajectories.last().unwrap().block_index;
        assert_eq!(e.frames[1].trajectories[0].block_index, last + 1);
    }
}
