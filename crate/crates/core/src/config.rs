//! Experiment configuration: TOML files layered over a named profile.
//!
//! Powers and noise densities are written in dBm and dBm/Hz and converted to
//! linear milliwatts exactly once, in [`ExperimentConfig::system_config`].

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::BcdOptions;
use crate::channel::{ChannelParams, PathLossModel};
use crate::episode::SystemConfig;
use crate::error::{Error, Result};
use crate::eval::GridSpec;
use crate::geometry::{MobilityConfig, Point3, ServiceArea, SystemGeometry};
use crate::net::{GnnInput, NetConfig, TrainConfig, Variant};
use crate::pilot::PilotConfig;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Noise power in mW from a density in dBm/Hz over `bandwidth_hz`.
pub fn noise_power_mw(density_dbm_per_hz: f64, bandwidth_hz: f64) -> f64 {
    dbm_to_mw(density_dbm_per_hz + 10.0 * bandwidth_hz.log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    PaperScale,
}

/// Physical system as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub antennas: usize,
    pub ris_elements: usize,
    pub ris_columns: usize,
    pub users: usize,
    pub num_paths: usize,
    pub rician_factor: f64,
    pub correlation: f64,
    pub sensing_blocks: usize,
    pub estimate_length: usize,
    pub data_blocks: usize,
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub uplink_power_dbm: f64,
    pub downlink_power_dbm: f64,
    pub uplink_noise_dbm_per_hz: f64,
    pub downlink_noise_dbm_per_hz: f64,
    pub ap_position: Point3,
    pub ris_position: Point3,
    pub service_area: ServiceArea,
    pub ue_height: f64,
    pub speed_mps: f64,
    pub heading_perturbation_deg: f64,
    pub pathloss: PathLossModel,
}

/// Evaluation plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub frames: usize,
    /// Replace network powers with the fixed-point solution at inference.
    pub refine: bool,
    pub include_bcd: bool,
    pub include_random_w: bool,
    pub bcd: BcdOptions,
    pub map: GridSpec,
    /// 1-based frames for which interpretation artifacts are written.
    pub map_frames: Vec<usize>,
    /// Points of the AP angle grid for beamformer responses.
    pub ap_angle_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub system: SystemSection,
    pub network: NetConfig,
    pub training: TrainConfig,
    pub evaluation: EvalConfig,
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        let area = ServiceArea { x_min: 5.0, x_max: 45.0, y_min: -35.0, y_max: 35.0 };
        Self {
            profile: Profile::Desk,
            seed: 0,
            system: SystemSection {
                antennas: 4,
                ris_elements: 16,
                ris_columns: 4,
                users: 2,
                num_paths: 8,
                rician_factor: 10.0,
                correlation: 0.9995,
                sensing_blocks: 2,
                estimate_length: 4,
                data_blocks: 3,
                carrier_frequency_hz: 1e9,
                bandwidth_hz: 1e7,
                uplink_power_dbm: 5.0,
                downlink_power_dbm: 10.0,
                uplink_noise_dbm_per_hz: -154.0,
                downlink_noise_dbm_per_hz: -160.0,
                ap_position: [100.0, -100.0, 0.0],
                ris_position: [0.0, 0.0, 0.0],
                service_area: area,
                ue_height: -20.0,
                speed_mps: 10.0,
                heading_perturbation_deg: 10.0,
                pathloss: PathLossModel::default(),
            },
            network: NetConfig {
                hidden: 64,
                node_dim: 64,
                encoder_hidden: vec![128],
                update_hidden: vec![64],
                layers: 2,
                gnn_input: GnnInput::Cell,
            },
            training: TrainConfig {
                variant: Variant::FullActive,
                frames: 8,
                episodes_per_epoch: 256,
                minibatch: 32,
                learning_rate: 1e-3,
                lr_decay: 0.5,
                lr_patience: 4,
                patience: 8,
                max_epochs: 20,
                validation_episodes: 128,
                grad_clip: 10.0,
                parallel: true,
            },
            evaluation: EvalConfig {
                episodes: 50,
                frames: 12,
                refine: true,
                include_bcd: true,
                include_random_w: true,
                bcd: BcdOptions { max_outer_iters: 10, rcg_iters_per_block: 20, ..BcdOptions::default() },
                map: GridSpec { x_min: 5.0, x_max: 45.0, y_min: -35.0, y_max: 35.0, resolution: 101 },
                map_frames: vec![1, 4, 8],
                ap_angle_points: 361,
            },
        }
    }

    pub fn paper_scale() -> Self {
        let mut c = Self::desk();
        c.profile = Profile::PaperScale;
        let s = &mut c.system;
        s.antennas = 8;
        s.ris_elements = 100;
        s.ris_columns = 10;
        s.users = 3;
        s.sensing_blocks = 3;
        s.estimate_length = 10;
        c.network = NetConfig {
            hidden: 512,
            node_dim: 512,
            encoder_hidden: vec![1024],
            update_hidden: vec![512],
            layers: 2,
            gnn_input: GnnInput::Cell,
        };
        c.training = TrainConfig {
            variant: Variant::FullActive,
            frames: 20,
            episodes_per_epoch: 6400,
            minibatch: 64,
            learning_rate: 1e-4,
            lr_decay: 0.5,
            lr_patience: 10,
            patience: 30,
            max_epochs: 1000,
            validation_episodes: 1000,
            grad_clip: 0.0,
            parallel: true,
        };
        c.evaluation.episodes = 1000;
        c.evaluation.frames = 40;
        c.evaluation.bcd = BcdOptions::default();
        c.evaluation.map_frames = vec![1, 10, 30];
        c
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::PaperScale => Self::paper_scale(),
        }
    }

    /// Parses TOML text; keys absent from the text keep the profile defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let profile = match user.get("profile") {
            None => Profile::Desk,
            Some(v) => v.clone().try_into::<Profile>().map_err(|e| Error::Config(format!("profile: {}", e.message())))?,
        };
        let mut base = toml::Value::try_from(Self::for_profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, toml::Value::Table(user));
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.system_config()?.validate()?;
        self.network.validate()?;
        self.training.validate()?;
        let e = &self.evaluation;
        if e.episodes == 0 || e.frames == 0 {
            return Err(Error::Config("evaluation episodes and frames must be positive".into()));
        }
        e.map.validate()?;
        if e.map_frames.iter().any(|&t| t == 0 || t > e.frames) {
            return Err(Error::Config(format!("map_frames must lie in 1..={}", e.frames)));
        }
        if e.ap_angle_points < 2 {
            return Err(Error::Config("ap_angle_points must be at least 2".into()));
        }
        Ok(())
    }

    /// Linear-unit system description.
    pub fn system_config(&self) -> Result<SystemConfig> {
        let s = &self.system;
        if !(s.carrier_frequency_hz > 0.0) || !(s.bandwidth_hz > 0.0) || !(s.speed_mps >= 0.0) {
            return Err(Error::Config("carrier_frequency_hz and bandwidth_hz must be positive, speed non-negative".into()));
        }
        if s.ris_columns == 0 {
            return Err(Error::Config("ris_columns must be positive".into()));
        }
        let geometry = SystemGeometry::new(s.carrier_frequency_hz, s.ap_position, s.ris_position, s.ris_columns);
        let mut mobility = MobilityConfig::from_speed(s.service_area, s.ue_height, s.speed_mps, s.carrier_frequency_hz);
        mobility.heading_perturbation = s.heading_perturbation_deg.to_radians();
        Ok(SystemConfig {
            geometry,
            mobility,
            channel: ChannelParams {
                antennas: s.antennas,
                ris_elements: s.ris_elements,
                users: s.users,
                num_paths: s.num_paths,
                rician_factor: s.rician_factor,
                correlation: s.correlation,
                pathloss: s.pathloss,
            },
            pilot: PilotConfig {
                sensing_blocks: s.sensing_blocks,
                pilot_length: s.users,
                estimate_length: s.estimate_length,
                uplink_power: dbm_to_mw(s.uplink_power_dbm),
                uplink_noise: noise_power_mw(s.uplink_noise_dbm_per_hz, s.bandwidth_hz),
            },
            data_blocks: s.data_blocks,
            downlink_power: dbm_to_mw(s.downlink_power_dbm),
            downlink_noise: noise_power_mw(s.downlink_noise_dbm_per_hz, s.bandwidth_hz),
        })
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let bytes = serde_json::to_vec(&value).expect("json value serializes");
        hex(&Sha256::digest(&bytes))
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_toml_str(&text)
}
