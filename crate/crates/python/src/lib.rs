//! Python bindings: configuration, channel simulation, the max-min
//! beamforming toolbox, training, checkpoints and the evaluation suite.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ristrack::beamforming::{fixed_point_power as fp_power, sinr_and_rate as sr, FixedPointOptions};
use ristrack::checkpoint::Checkpoint;
use ristrack::config::ExperimentConfig;
use ristrack::episode::generate_episode;
use ristrack::eval::{evaluate_suite, Method};
use ristrack::net::{Controller as CoreController, Dims};
use ristrack::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        Error::Config(_) | Error::Domain(_) | Error::Shape(_) | Error::UnknownMode(_) | Error::Checkpoint(_) | Error::UnitModulus { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_cvec(v: &[Complex64]) -> DVector<Complex64> {
    DVector::from_column_slice(v)
}

/// Experiment configuration (system, network, training and evaluation).
#[pyclass(name = "ExperimentConfig", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    #[staticmethod]
    fn desk() -> Self {
        Self { inner: ExperimentConfig::desk() }
    }

    #[staticmethod]
    fn paper_scale() -> Self {
        Self { inner: ExperimentConfig::paper_scale() }
    }

    /// Parses TOML text layered over the profile defaults.
    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self { inner: ExperimentConfig::from_toml_str(text).map_err(to_py)? })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml_string().map_err(to_py)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    /// `(M, N_r, K, L)`.
    #[getter]
    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = &self.inner.system;
        (s.antennas, s.ris_elements, s.users, s.sensing_blocks)
    }

    /// Linear-scale powers `(P_u, P_d, sigma_u^2, sigma_d^2)` in mW.
    fn linear_powers(&self) -> PyResult<(f64, f64, f64, f64)> {
        let sys = self.inner.system_config().map_err(to_py)?;
        Ok((sys.pilot.uplink_power, sys.downlink_power, sys.pilot.uplink_noise, sys.downlink_noise))
    }
}

/// A trained or freshly initialized active-sensing controller.
#[pyclass(name = "Controller", from_py_object)]
#[derive(Clone)]
struct PyController {
    inner: CoreController,
    config: ExperimentConfig,
}

#[pymethods]
impl PyController {
    /// Untrained controller for `config`; `variant` defaults to the training variant.
    #[new]
    #[pyo3(signature = (config, variant=None, seed=0))]
    fn new(config: &PyConfig, variant: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg = config.inner.clone();
        let sys = cfg.system_config().map_err(to_py)?;
        let v = match variant {
            Some(s) => s.parse().map_err(to_py)?,
            None => cfg.training.variant,
        };
        let inner = CoreController::new(Dims::from_system(&sys), cfg.network.clone(), v, seed).map_err(to_py)?;
        Ok(Self { inner, config: cfg })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let c = Checkpoint::load(&path).map_err(to_py)?;
        Ok(Self { inner: c.controller, config: c.config })
    }

    #[pyo3(signature = (path, epoch=0, val_min_rate=f64::NAN))]
    fn save(&self, path: PathBuf, epoch: usize, val_min_rate: f64) -> PyResult<()> {
        Checkpoint::new(self.inner.clone(), self.config.clone(), epoch, val_min_rate).save(&path).map_err(to_py)
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.name().to_string()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.store.num_scalars()
    }

    #[getter]
    fn config(&self) -> PyConfig {
        PyConfig { inner: self.config.clone() }
    }

    /// Trains a copy of this controller and returns `(trained, history_rows)`.
    fn train(&self, config: &PyConfig) -> PyResult<(PyController, Vec<(usize, f64, f64, f64)>)> {
        let cfg = &config.inner;
        let sys = cfg.system_config().map_err(to_py)?;
        let mut tc = cfg.training.clone();
        tc.variant = self.inner.variant;
        let out = ristrack::net::train(self.inner.clone(), &sys, &tc, cfg.seed, &mut |_| {}).map_err(to_py)?;
        let rows = out.history.rows.iter().map(|r| (r.epoch, r.train_loss, r.val_min_rate, r.learning_rate)).collect();
        Ok((PyController { inner: out.controller, config: cfg.clone() }, rows))
    }
}

/// SINR-balancing power allocation; returns `(p, lambda, tau, sinr)`.
#[pyfunction]
#[pyo3(signature = (h, total_power, noise=1.0))]
fn fixed_point_power(h: Vec<Vec<Complex64>>, total_power: f64, noise: f64) -> PyResult<(Vec<f64>, Vec<f64>, f64, Vec<f64>)> {
    let hv: Vec<_> = h.iter().map(|x| to_cvec(x)).collect();
    let a = fp_power(&hv, total_power, noise, FixedPointOptions::default()).map_err(to_py)?;
    let rep = sr(&hv, &a.beamformers(), noise).map_err(to_py)?;
    Ok((a.p.clone(), a.lambda.clone(), a.tau, rep.sinr))
}

/// Per-user SINR and rate for channels `h[k]` and beamformer columns `b[k]`.
#[pyfunction]
#[pyo3(signature = (h, b, noise=1.0))]
fn sinr_and_rate(h: Vec<Vec<Complex64>>, b: Vec<Vec<Complex64>>, noise: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let hv: Vec<_> = h.iter().map(|x| to_cvec(x)).collect();
    let m = b.first().map_or(0, Vec::len);
    if b.iter().any(|c| c.len() != m) {
        return Err(PyValueError::new_err("beamformer columns differ in length"));
    }
    let bm = DMatrix::from_fn(m, b.len(), |i, j| b[j][i]);
    let rep = sr(&hv, &bm, noise).map_err(to_py)?;
    Ok((rep.sinr, rep.rate))
}

/// UE positions of one simulated episode, indexed `[frame][block][user] -> (x, y)`.
#[pyfunction]
fn simulate_positions(config: &PyConfig, seed: u64, frames: usize) -> PyResult<Vec<Vec<Vec<(f64, f64)>>>> {
    let sys = config.inner.system_config().map_err(to_py)?;
    let ep = generate_episode(&sys, seed, frames).map_err(to_py)?;
    Ok(ep.frames.iter().map(|f| f.trajectories.iter().map(|t| t.positions.iter().map(|p| (p[0], p[1])).collect()).collect()).collect())
}

/// Paired-seed evaluation. Returns `{method: per-frame mean min-rate}`.
#[pyfunction]
#[pyo3(signature = (config, controllers=Vec::new(), episodes=None, frames=None, include_baselines=true))]
fn evaluate(
    config: &PyConfig,
    controllers: Vec<PyController>,
    episodes: Option<usize>,
    frames: Option<usize>,
    include_baselines: bool,
) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let cfg = &config.inner;
    let sys = cfg.system_config().map_err(to_py)?;
    let ev = &cfg.evaluation;
    let mut methods: Vec<Method<'_>> = controllers
        .iter()
        .enumerate()
        .map(|(i, c)| Method::Controller {
            label: format!("{}_{i}", c.inner.variant.name()),
            controller: &c.inner,
            refine: ev.refine && c.inner.variant.refines_by_default(),
        })
        .collect();
    if include_baselines {
        methods.push(Method::Bcd(ev.bcd.clone()));
        methods.push(Method::RandomW);
    }
    let suite = evaluate_suite(&methods, &sys, cfg.seed, episodes.unwrap_or(ev.episodes), frames.unwrap_or(ev.frames), true).map_err(to_py)?;
    Ok(suite.methods.iter().filter_map(|m| Some((m.clone(), suite.mean_curve(m)?))).collect())
}

/// Runs the command-line interface with `args` (without the program name) and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    ristrack::cli::run_command(std::iter::once("ristrack".to_string()).chain(args))
}

#[pymodule]
fn pyristrack(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyController>()?;
    m.add_function(wrap_pyfunction!(fixed_point_power, m)?)?;
    m.add_function(wrap_pyfunction!(sinr_and_rate, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_positions, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
