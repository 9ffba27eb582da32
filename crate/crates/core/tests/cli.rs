//! End-to-end checks of the `ristrack` binary: exit codes and output layout.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[system]
antennas = 2
ris_elements = 4
ris_columns = 2
users = 2
num_paths = 2
sensing_blocks = 2
estimate_length = 2
data_blocks = 2
[network]
hidden = 8
node_dim = 8
encoder_hidden = [8]
update_hidden = [8]
layers = 1
[training]
frames = 2
episodes_per_epoch = 4
minibatch = 2
max_epochs = 1
validation_episodes = 2
[evaluation]
episodes = 2
frames = 3
map_frames = [1, 3]
ap_angle_points = 8
[evaluation.bcd]
max_outer_iters = 1
rcg_iters_per_block = 2
restarts = 1
[evaluation.map]
x_min = 5.0
x_max = 45.0
y_min = -35.0
y_max = 35.0
resolution = 5
"#;

fn ristrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ristrack")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn train_without_out_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = ristrack(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();

    let missing = ristrack(&["simulate", "--config", "/nonexistent/cfg.toml", "--out", out]);
    assert_eq!(code(&missing), 1);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[system]\nantennaz = 3\n").unwrap();
    let o = ristrack(&["simulate", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("antennaz"));

    let cfg = tiny_config(dir.path());
    let o = ristrack(&["train", "--config", cfg.to_str().unwrap(), "--variant", "telepathy", "--out", out]);
    assert_eq!(code(&o), 1);

    assert_eq!(code(&ristrack(&["frobnicate"])), 1);
    assert_eq!(code(&ristrack(&["--help"])), 0);
}

#[test]
fn interpret_writes_one_map_per_user_and_frame() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let train_out = dir.path().join("train");
    let o = ristrack(&["train", "--config", cfg, "--seed", "3", "--threads", "1", "--out", train_out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = train_out.join("checkpoint.bin");
    assert!(ckpt.exists() && train_out.join("history.csv").exists() && train_out.join("run_record.json").exists());

    let maps = dir.path().join("maps");
    let o = ristrack(&[
        "interpret",
        "--config",
        cfg,
        "--seed",
        "3",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        maps.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for t in [1, 3] {
        for k in 0..2 {
            let p = maps.join(format!("frame{t:03}_sinr_user{k}.npy"));
            let bytes = std::fs::read(&p).unwrap_or_else(|_| panic!("missing {}", p.display()));
            assert_eq!(&bytes[..6], b"\x93NUMPY");
            let header = 10 + u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
            assert_eq!(header % 64, 0);
            assert!(String::from_utf8_lossy(&bytes[10..header]).contains("(5, 5)"));
            assert_eq!(bytes.len(), header + 25 * 8);
        }
        assert!(!maps.join(format!("frame{t:03}_sinr_user2.npy")).exists());
        assert!(maps.join(format!("frame{t:03}_reflection_response.npy")).exists());
    }
    assert!(!maps.join("frame002_sinr_user0.npy").exists());
}

#[test]
fn dimension_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let train_out = dir.path().join("train");
    let o = ristrack(&["train", "--config", cfg.to_str().unwrap(), "--out", train_out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let other = dir.path().join("other.toml");
    std::fs::write(&other, TINY.replace("antennas = 2", "antennas = 3")).unwrap();
    let o = ristrack(&[
        "evaluate",
        "--config",
        other.to_str().unwrap(),
        "--checkpoint",
        train_out.join("checkpoint.bin").to_str().unwrap(),
        "--out",
        dir.path().join("eval").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn evaluate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let mut summaries = Vec::new();
    for rep in 0..2 {
        let out = dir.path().join(format!("base{rep}"));
        let o = ristrack(&["baseline", "--config", cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        summaries.push((std::fs::read(out.join("summary.csv")).unwrap(), std::fs::read(out.join("traces.csv")).unwrap()));
    }
    assert_eq!(summaries[0], summaries[1]);
    let text = String::from_utf8(summaries[0].0.clone()).unwrap();
    assert!(text.contains("bcd_perfect_csi") && text.contains("random_w_perfect_csi"));
}
