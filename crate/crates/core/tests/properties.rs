//! Randomized invariants of the controller and the beamforming toolbox.

use proptest::prelude::*;
use ristrack::beamforming::{fixed_point_power, sinr_and_rate, FixedPointOptions};
use ristrack::config::ExperimentConfig;
use ristrack::episode::{generate_episode, SystemConfig};
use ristrack::linalg::{cn_vec, CVec};
use ristrack::net::{rollout_eval, rollout_loss, Controller, Dims, Variant};
use ristrack::rng::stream;

fn small_config() -> ExperimentConfig {
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
    cfg.network.hidden = 8;
    cfg.network.node_dim = 8;
    cfg.network.encoder_hidden = vec![8];
    cfg.network.update_hidden = vec![8];
    cfg.network.layers = 2;
    cfg
}

fn setup(variant: Variant, seed: u64) -> (SystemConfig, Controller) {
    let cfg = small_config();
    let sys = cfg.system_config().unwrap();
    let ctrl = Controller::new(Dims::from_system(&sys), cfg.network.clone(), variant, seed).unwrap();
    (sys, ctrl)
}

fn unit_modulus_error(v: &CVec) -> f64 {
    v.iter().map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max)
}

fn variant() -> impl Strategy<Value = Variant> {
    proptest::sample::select(Variant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn decisions_are_feasible(v in variant(), weights in 0u64..1000, episode in 0u64..1000, refine: bool) {
        let (sys, ctrl) = setup(v, weights);
        let ep = generate_episode(&sys, episode, 3).unwrap();
        let trace = rollout_eval(&ctrl, &sys, &ep, 3, refine).unwrap();
        for f in &trace.frames {
            prop_assert!(unit_modulus_error(&f.w) < 1e-9);
            prop_assert_eq!(f.sensing.lifted_columns.len(), sys.sensing_blocks());
            for col in &f.sensing.lifted_columns {
                prop_assert!((col[0].re - 1.0).abs() < 1e-12 && col[0].im.abs() < 1e-12);
                prop_assert!(unit_modulus_error(&col.rows(1, col.len() - 1).into_owned()) < 1e-9);
            }
            let power = f.b.norm_squared();
            prop_assert!((power / sys.downlink_power - 1.0).abs() < 1e-6, "beamformer power {power}");
            prop_assert!(f.p.iter().all(|&p| p >= 0.0));
            prop_assert!(f.block_min_rates.iter().all(|r| r.is_finite() && *r >= 0.0));
        }
    }

    #[test]
    fn unrefined_inference_matches_training_rollout(v in variant(), weights in 0u64..1000, episode in 0u64..1000) {
        let (sys, ctrl) = setup(v, weights);
        let ep = generate_episode(&sys, episode, 3).unwrap();
        let eval = rollout_eval(&ctrl, &sys, &ep, 3, false).unwrap().frame_mean_min_rates();
        let train = rollout_loss(&ctrl, &sys, &ep, 3).unwrap().frame_min_rates;
        for (a, b) in eval.iter().zip(&train) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn fixed_point_balances_random_channels(m in 1usize..5, k in 1usize..4, seed in 0u64..10_000, power in 0.1f64..100.0) {
        let mut rng = stream(seed, &[0]);
        let h: Vec<CVec> = (0..k).map(|_| cn_vec(m, &mut rng)).collect();
        let a = fixed_point_power(&h, power, 1.0, FixedPointOptions::patient()).unwrap();
        prop_assert!((a.p.iter().sum::<f64>() / power - 1.0).abs() < 1e-9);
        let rep = sinr_and_rate(&h, &a.beamformers(), 1.0).unwrap();
        let (lo, hi) = rep.sinr.iter().fold((f64::MAX, 0.0f64), |(l, u), &s| (l.min(s), u.max(s)));
        prop_assert!((hi - lo) <= 1e-6 * hi.max(1e-12), "sinr spread {lo}..{hi}");
    }
}

#[test]
fn reuse_sensing_tracks_reflection_over_long_horizon() {
    let (sys, ctrl) = setup(Variant::ReuseWSensing, 3);
    let frames = 5 * small_config().training.frames;
    let ep = generate_episode(&sys, 11, frames).unwrap();
    let trace = rollout_eval(&ctrl, &sys, &ep, frames, true).unwrap();
    let nr = sys.ris_elements();
    for t in 1..frames {
        for col in &trace.frames[t].sensing.lifted_columns {
            assert!((col.rows(1, nr).into_owned() - &trace.frames[t - 1].w).norm() < 1e-12, "frame {t}");
        }
    }
}

#[test]
fn random_sensing_differs_between_frames() {
    let (sys, ctrl) = setup(Variant::FixedSensingRandom, 4);
    let ep = generate_episode(&sys, 12, 3).unwrap();
    let trace = rollout_eval(&ctrl, &sys, &ep, 3, true).unwrap();
    assert_ne!(trace.frames[0].sensing, trace.frames[1].sensing);
}

fn relabel_users(ep: &mut ristrack::episode::Episode) {
    for f in &mut ep.frames {
        for b in &mut f.blocks {
            b.h_d.reverse();
            b.h_r.reverse();
            b.combined.reverse();
            b.beta_d.reverse();
            b.beta_r.reverse();
        }
        f.noise.sensing.reverse();
        f.noise.estimate.reverse();
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn loss_ignores_user_order(v in variant(), weights in 0u64..1000, episode in 0u64..1000) {
        let (sys, ctrl) = setup(v, weights);
        let mut ep = generate_episode(&sys, episode, 3).unwrap();
        let before = rollout_loss(&ctrl, &sys, &ep, 3).unwrap();
        relabel_users(&mut ep);
        let after = rollout_loss(&ctrl, &sys, &ep, 3).unwrap();
        let (a, b) = (before.tape.value(before.loss).data[0], after.tape.value(after.loss).data[0]);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }
}
