//! Small systems shared by unit tests.

use crate::config::ExperimentConfig;
use crate::episode::SystemConfig;

/// M=2, N_r=4, K=2, L=2, three data blocks.
pub fn tiny_system() -> SystemConfig {
    let mut cfg = ExperimentConfig::desk();
    let s = &mut cfg.system;
    s.antennas = 2;
    s.ris_elements = 4;
    s.ris_columns = 2;
    s.users = 2;
    s.num_paths = 2;
    s.sensing_blocks = 2;
    s.estimate_length = 2;
    s.data_blocks = 3;
    cfg.system_config().expect("tiny system is valid")
}

pub fn desk_system() -> SystemConfig {
    ExperimentConfig::desk().system_config().expect("desk system is valid")
}
