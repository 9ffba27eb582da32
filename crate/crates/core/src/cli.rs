//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 for user errors (bad flags, invalid config,
//! unreadable or incompatible checkpoints), 2 for internal failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{hex, load_config, ExperimentConfig};
use crate::episode::{generate_episode, SystemConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_suite, evaluation_episode_seed, interpret_episode, Method, SuiteResult};
use crate::net::{train, Controller, Dims};
use crate::npy::write_npy;

#[derive(Debug, Parser)]
#[command(name = "ristrack", version, about = "Active-sensing beam tracking for RIS-assisted multiuser downlink")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config layered over its profile's defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Controller checkpoint; `evaluate` accepts several.
    #[arg(long, global = true)]
    checkpoint: Vec<PathBuf>,
    /// Worker threads (1 gives strictly sequential execution).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dump mobility and channel-gain traces of evaluation episodes.
    Simulate,
    /// Train a controller and write the best checkpoint and the history.
    Train {
        /// Overrides `training.variant`.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Evaluate checkpoints against the model-based baselines.
    Evaluate,
    /// Run only the model-based baselines.
    Baseline,
    /// Write array responses and SINR maps for one evaluation episode.
    Interpret,
}

#[derive(Debug, Serialize)]
struct OutputFile {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunRecord {
    command: String,
    config_hash: String,
    code_version: String,
    seed: u64,
    started_unix_s: f64,
    finished_unix_s: f64,
    outputs: Vec<OutputFile>,
    metrics: Vec<(String, f64)>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

struct Output {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::read(self.dir.join(name))?;
        self.files.push(OutputFile { path: name.to_string(), sha256: hex(&Sha256::digest(&bytes)) });
        Ok(())
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.record(name)
    }

    fn npy(&mut self, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
        write_npy(&self.dir.join(name), shape, data)?;
        self.record(name)
    }
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.global.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| dispatch(&cli)),
            Err(e) => Err(Error::Config(format!("cannot build thread pool: {e}"))),
        },
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::UnknownMode(_) | Error::Checkpoint(_) | Error::Shape(_) => 1,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 1,
        _ => 2,
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::desk(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Command::Train { variant: Some(v) } = &cli.command {
        cfg.training.variant = v.parse()?;
    }
    cfg.validate()?;
    let out_dir = g.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))?;
    let sys = cfg.system_config()?;
    let started = now();
    let mut out = Output::new(out_dir)?;
    let (name, metrics) = match &cli.command {
        Command::Simulate => ("simulate", simulate(&cfg, &sys, &mut out)?),
        Command::Train { .. } => ("train", train_cmd(&cfg, &sys, &mut out)?),
        Command::Evaluate => {
            let ckpts = load_checkpoints(&g.checkpoint, &sys)?;
            ("evaluate", evaluate_cmd(&cfg, &sys, &ckpts, &mut out)?)
        }
        Command::Baseline => ("baseline", evaluate_cmd(&cfg, &sys, &[], &mut out)?),
        Command::Interpret => {
            let ckpts = load_checkpoints(&g.checkpoint, &sys)?;
            let ckpt = ckpts.first().ok_or_else(|| Error::Config("interpret needs --checkpoint".into()))?;
            ("interpret", interpret_cmd(&cfg, &sys, ckpt, &mut out)?)
        }
    };
    let record = RunRecord {
        command: name.into(),
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        started_unix_s: started,
        finished_unix_s: now(),
        outputs: out.files,
        metrics,
    };
    let json = serde_json::to_string_pretty(&record).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out_dir.join("run_record.json"), json)?;
    Ok(())
}

fn load_checkpoints(paths: &[PathBuf], sys: &SystemConfig) -> Result<Vec<Checkpoint>> {
    paths
        .iter()
        .map(|p| {
            let c = Checkpoint::load(p).map_err(|e| match e {
                Error::Io(io) => Error::Checkpoint(format!("cannot read {}: {io}", p.display())),
                other => other,
            })?;
            c.check_compatible(sys)?;
            Ok(c)
        })
        .collect()
}

fn simulate(cfg: &ExperimentConfig, sys: &SystemConfig, out: &mut Output) -> Result<Vec<(String, f64)>> {
    let ev = &cfg.evaluation;
    let mut csv = String::from("episode_seed,frame,block,user,x,y,heading,direct_gain_db,ris_gain_db,effective_norm_random_w\n");
    for i in 0..ev.episodes {
        let ep = generate_episode(sys, evaluation_episode_seed(cfg.seed, i), ev.frames)?;
        for (t, f) in ep.frames.iter().enumerate() {
            for (n, (blk, traj)) in f.blocks.iter().zip(&f.trajectories).enumerate() {
                let h = blk.effective(&f.random_w);
                for k in 0..sys.users() {
                    let [x, y] = traj.positions[k];
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.10e}",
                        ep.seed,
                        t + 1,
                        n,
                        k,
                        x,
                        y,
                        traj.headings[k],
                        20.0 * blk.beta_d[k].log10(),
                        20.0 * blk.beta_r[k].log10(),
                        h[k].norm()
                    );
                }
            }
        }
    }
    out.text("episodes.csv", &csv)?;
    Ok(vec![("episodes".into(), ev.episodes as f64)])
}

fn train_cmd(cfg: &ExperimentConfig, sys: &SystemConfig, out: &mut Output) -> Result<Vec<(String, f64)>> {
    let ctrl = Controller::new(Dims::from_system(sys), cfg.network.clone(), cfg.training.variant, cfg.seed)?;
    let outcome = train(ctrl, sys, &cfg.training, cfg.seed, &mut |r| {
        eprintln!("epoch {:>4}  train_loss {:>10.5}  val_min_rate {:>8.5}  lr {:.2e}", r.epoch, r.train_loss, r.val_min_rate, r.learning_rate);
    })?;
    out.text("history.csv", &outcome.history.to_csv())?;
    Checkpoint::new(outcome.controller, cfg.clone(), outcome.best_epoch, outcome.best_val_min_rate).save(&out.dir.join("checkpoint.bin"))?;
    out.record("checkpoint.bin")?;
    if let Some(msg) = &outcome.aborted {
        eprintln!("training aborted: {msg}; the best checkpoint so far was written");
    }
    Ok(vec![
        ("best_epoch".into(), outcome.best_epoch as f64),
        ("best_val_min_rate".into(), outcome.best_val_min_rate),
        ("aborted".into(), if outcome.aborted.is_some() { 1.0 } else { 0.0 }),
    ])
}

fn evaluate_cmd(cfg: &ExperimentConfig, sys: &SystemConfig, ckpts: &[Checkpoint], out: &mut Output) -> Result<Vec<(String, f64)>> {
    let ev = &cfg.evaluation;
    let mut methods = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for c in ckpts {
        let base = c.controller.variant.name().to_string();
        let mut label = base.clone();
        let mut i = 2;
        while labels.contains(&label) {
            label = format!("{base}_{i}");
            i += 1;
        }
        labels.push(label.clone());
        let refine = ev.refine && c.controller.variant.refines_by_default();
        methods.push(Method::Controller { label, controller: &c.controller, refine });
    }
    if ev.include_bcd {
        methods.push(Method::Bcd(ev.bcd.clone()));
    }
    if ev.include_random_w {
        methods.push(Method::RandomW);
    }
    if methods.is_empty() {
        return Err(Error::Config("nothing to evaluate: no checkpoints and all baselines disabled".into()));
    }
    let suite = evaluate_suite(&methods, sys, cfg.seed, ev.episodes, ev.frames, true)?;
    write_suite(&suite, out)?;
    Ok(suite_metrics(&suite))
}

fn write_suite(suite: &SuiteResult, out: &mut Output) -> Result<()> {
    out.text("summary.csv", &suite.summary_csv())?;
    out.text("traces.csv", &suite.traces_csv())?;
    out.text("failures.csv", &suite.failures_csv())
}

fn suite_metrics(suite: &SuiteResult) -> Vec<(String, f64)> {
    suite
        .methods
        .iter()
        .filter_map(|m| {
            let curve = suite.mean_curve(m)?;
            Some((format!("{m}_mean_min_rate"), curve.iter().sum::<f64>() / curve.len() as f64))
        })
        .collect()
}

fn interpret_cmd(cfg: &ExperimentConfig, sys: &SystemConfig, ckpt: &Checkpoint, out: &mut Output) -> Result<Vec<(String, f64)>> {
    let ev = &cfg.evaluation;
    if ev.map_frames.iter().any(|&t| t == 0) {
        return Err(Error::Config("evaluation.map_frames are 1-based".into()));
    }
    let last = ev.map_frames.iter().copied().max().unwrap_or(0);
    let ep = generate_episode(sys, evaluation_episode_seed(cfg.seed, 0), last)?;
    let refine = ev.refine && ckpt.controller.variant.refines_by_default();
    let arts = interpret_episode(&ckpt.controller, sys, &ep, &ev.map_frames, refine, &ev.map, ev.ap_angle_points)?;
    let grid = &ev.map;
    out.npy("grid_x.npy", &[grid.resolution], &grid.xs())?;
    out.npy("grid_y.npy", &[grid.resolution], &grid.ys())?;
    let mut pos = String::from("frame,user,x,y\n");
    let mut ap = String::from("frame,user,angle_rad,response\n");
    let mut metrics = Vec::new();
    for a in &arts {
        let t = a.frame;
        for (k, m) in a.sinr_maps.iter().enumerate() {
            out.npy(&format!("frame{t:03}_sinr_user{k}.npy"), &[m.rows, m.cols], &m.data)?;
        }
        let r = &a.reflection_response;
        out.npy(&format!("frame{t:03}_reflection_response.npy"), &[r.rows, r.cols], &r.data)?;
        for (l, m) in a.sensing_responses.iter().enumerate() {
            out.npy(&format!("frame{t:03}_sensing{l}_response.npy"), &[m.rows, m.cols], &m.data)?;
        }
        for (k, p) in a.positions.iter().enumerate() {
            let _ = writeln!(pos, "{t},{k},{:.6},{:.6}", p[0], p[1]);
        }
        for (k, curve) in a.ap_responses.iter().enumerate() {
            for (phi, v) in a.ap_angles.iter().zip(curve) {
                let _ = writeln!(ap, "{t},{k},{phi:.8},{v:.10e}");
            }
        }
        metrics.push((format!("frame{t}_min_rate"), a.min_rate));
    }
    out.text("positions.csv", &pos)?;
    out.text("ap_response.csv", &ap)?;
    Ok(metrics)
}
