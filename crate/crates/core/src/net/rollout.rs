//! Unrolling the controller over the frames of an episode.
//!
//! All downlink quantities are expressed in noise-normalized units: channels
//! are divided by `sigma_d`, so the downlink noise power is one while the
//! beamformers keep their physical power. Pilot observations are divided by
//! the standard deviation of the post-decorrelation pilot noise.

use crate::beamforming::{beamformers_from_duality, fixed_point_power, sinr_and_rate, FixedPointOptions};
use crate::channel::BlockChannels;
use crate::episode::{Episode, Frame, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{lift, CMat, CVec, C64};
use crate::pilot::SensingMatrix;
use crate::tape::{CVar, Gradients, Tape, Tensor, Var};

use super::model::{pairs_to_cvec, Controller, ControllerState};
use super::Variant;

/// Receiver scaling derived from the system configuration.
#[derive(Debug, Clone, Copy)]
struct Scales {
    /// Divisor applied to raw pilot observations.
    pilot_ref: f64,
    /// Pilot noise standard deviation relative to `pilot_ref`.
    pilot_noise: f64,
    /// `1 / sigma_d`.
    downlink: f64,
    /// Estimation noise standard deviation relative to `sigma_d`.
    estimate_noise: f64,
    total_power: f64,
}

impl Scales {
    fn new(sys: &SystemConfig) -> Self {
        let sd_p = sys.pilot.pilot_noise_variance().sqrt();
        let pilot_ref = if sd_p > 0.0 { sd_p } else { 1.0 };
        let sigma_d = sys.downlink_noise.sqrt();
        Self {
            pilot_ref,
            pilot_noise: sd_p / pilot_ref,
            downlink: 1.0 / sigma_d,
            estimate_noise: sys.pilot.estimate_noise_variance().sqrt() / sigma_d,
            total_power: sys.downlink_power,
        }
    }
}

/// `[A_1; ...; A_K] * scale` as a `KM x (N_r + 1)` complex constant.
fn stacked_channels(tape: &mut Tape, block: &BlockChannels, scale: f64) -> CVar {
    let m = block.combined[0].nrows();
    let cols = block.combined[0].ncols();
    let rows = m * block.combined.len();
    let mut re = Tensor::zeros(rows, cols);
    let mut im = Tensor::zeros(rows, cols);
    for (k, a) in block.combined.iter().enumerate() {
        for i in 0..m {
            for j in 0..cols {
                let x = a[(i, j)] * scale;
                *re.at_mut(k * m + i, j) = x.re;
                *im.at_mut(k * m + i, j) = x.im;
            }
        }
    }
    CVar { re: tape.constant(re), im: tape.constant(im) }
}

/// `(N_r + 1) x L` lifted sensing matrix from vector-major unit pairs.
fn lift_pairs(tape: &mut Tape, pairs: Var, nr: usize, l: usize) -> CVar {
    let re = tape.slice_cols(pairs, 0, 1);
    let im = tape.slice_cols(pairs, 1, 1);
    let re = tape.reshape(re, l, nr);
    let im = tape.reshape(im, l, nr);
    let re = tape.transpose(re);
    let im = tape.transpose(im);
    let one = tape.constant(Tensor::full(1, l, 1.0));
    let zero = tape.constant(Tensor::zeros(1, l));
    CVar { re: tape.concat_rows(&[one, re]), im: tape.concat_rows(&[zero, im]) }
}

fn sensing_pairs_constant(tape: &mut Tape, s: &SensingMatrix) -> Var {
    let nr = s.lifted_columns[0].len() - 1;
    let mut t = Tensor::zeros(nr * s.len(), 2);
    for (l, col) in s.lifted_columns.iter().enumerate() {
        for i in 0..nr {
            *t.at_mut(l * nr + i, 0) = col[i + 1].re;
            *t.at_mut(l * nr + i, 1) = col[i + 1].im;
        }
    }
    tape.constant(t)
}

/// Rows `x_k^T` of the `K x M` matrix obtained from `[A_k] x`.
fn per_user_rows(tape: &mut Tape, stacked: CVar, x: CVar, k: usize, m: usize) -> CVar {
    let y = tape.cmatmul(stacked, x);
    CVar { re: tape.reshape(y.re, k, m), im: tape.reshape(y.im, k, m) }
}

/// Encoded, normalized pilots `K x 2ML`.
fn receive_on_tape(tape: &mut Tape, frame: &Frame, lifted: CVar, sc: &Scales, k: usize, m: usize, l: usize) -> Var {
    let a = stacked_channels(tape, &frame.blocks[0], 1.0 / sc.pilot_ref);
    let y = tape.cmatmul(a, lifted);
    let mut nre = Tensor::zeros(k * m, l);
    let mut nim = Tensor::zeros(k * m, l);
    for (u, z) in frame.noise.sensing.iter().enumerate() {
        for i in 0..m {
            for j in 0..l {
                *nre.at_mut(u * m + i, j) = z[(i, j)].re * sc.pilot_noise;
                *nim.at_mut(u * m + i, j) = z[(i, j)].im * sc.pilot_noise;
            }
        }
    }
    let nre = tape.constant(nre);
    let nim = tape.constant(nim);
    let yre = tape.add(y.re, nre);
    let yim = tape.add(y.im, nim);
    let rows: Vec<Var> = (0..k)
        .map(|u| {
            let r = tape.slice_rows(yre, u * m, m);
            let i = tape.slice_rows(yim, u * m, m);
            let r = tape.transpose(r);
            let i = tape.transpose(i);
            let r = tape.reshape(r, l * m, 1);
            let i = tape.reshape(i, l * m, 1);
            let pairs = tape.concat_cols(&[r, i]);
            tape.reshape(pairs, 1, 2 * l * m)
        })
        .collect();
    tape.concat_rows(&rows)
}

fn lift_w(tape: &mut Tape, w_pairs: Var) -> CVar {
    let re = tape.slice_cols(w_pairs, 0, 1);
    let im = tape.slice_cols(w_pairs, 1, 1);
    let one = tape.scalar(1.0);
    let zero = tape.scalar(0.0);
    CVar { re: tape.concat_rows(&[one, re]), im: tape.concat_rows(&[zero, im]) }
}

/// Noise-normalized estimates `h_c,k^T` as rows of a `K x M` matrix.
fn estimate_on_tape(tape: &mut Tape, frame: &Frame, w_lift: CVar, sc: &Scales, k: usize, m: usize) -> CVar {
    let a = stacked_channels(tape, &frame.blocks[0], sc.downlink);
    let clean = per_user_rows(tape, a, w_lift, k, m);
    let mut nre = Tensor::zeros(k, m);
    let mut nim = Tensor::zeros(k, m);
    for (u, z) in frame.noise.estimate.iter().enumerate() {
        for i in 0..m {
            *nre.at_mut(u, i) = z[i].re * sc.estimate_noise;
            *nim.at_mut(u, i) = z[i].im * sc.estimate_noise;
        }
    }
    let nre = tape.constant(nre);
    let nim = tape.constant(nim);
    CVar { re: tape.add(clean.re, nre), im: tape.add(clean.im, nim) }
}

/// Beamformer rows `b_k^T` built from dual and primal powers with unit noise.
pub fn duality_beamformers_on_tape(tape: &mut Tape, rows: CVar, p: Var, lambda: Var) -> CVar {
    let m = tape.shape(rows.re).1;
    let pr = tape.mul_col(rows.re, lambda);
    let pi = tape.mul_col(rows.im, lambda);
    let prt = tape.transpose(pr);
    let pit = tape.transpose(pi);
    let a = tape.matmul(prt, rows.re);
    let b = tape.matmul(pit, rows.im);
    let eye = tape.constant(identity(m));
    let qre = tape.add(a, b);
    let qre = tape.add(qre, eye);
    let c = tape.matmul(pit, rows.re);
    let d = tape.matmul(prt, rows.im);
    let qim = tape.sub(c, d);
    let hre = tape.transpose(rows.re);
    let him = tape.transpose(rows.im);
    let x = tape.csolve(CVar { re: qre, im: qim }, CVar { re: hre, im: him });
    let n2 = tape.cabs2(x);
    let n2 = tape.sum_rows(n2);
    let n2 = tape.transpose(n2);
    let norm = tape.sqrt(n2);
    let amp = tape.sqrt(p);
    let gain = tape.div(amp, norm);
    let xre = tape.transpose(x.re);
    let xim = tape.transpose(x.im);
    CVar { re: tape.mul_col(xre, gain), im: tape.mul_col(xim, gain) }
}

/// Beamformer rows from interleaved head outputs, scaled to total power `total`.
fn direct_beamformers_on_tape(tape: &mut Tape, raw: Var, total: f64) -> CVar {
    let (k, two_m) = tape.shape(raw);
    let m = two_m / 2;
    let pairs = tape.reshape(raw, k * m, 2);
    let re = tape.slice_cols(pairs, 0, 1);
    let im = tape.slice_cols(pairs, 1, 1);
    let re = tape.reshape(re, k, m);
    let im = tape.reshape(im, k, m);
    let sq = tape.cabs2(CVar { re, im });
    let energy = tape.sum(sq);
    let energy = tape.add_const(energy, 1e-12);
    let inv = tape.sqrt(energy);
    let num = tape.scalar(total.sqrt());
    let gain = tape.div(num, inv);
    CVar { re: tape.mul_scalar(re, gain), im: tape.mul_scalar(im, gain) }
}

/// Per-user rates (`K x 1`) for channel rows `t` and beamformer rows `b`, unit noise.
pub fn rates_on_tape(tape: &mut Tape, t: CVar, b: CVar) -> Var {
    let k = tape.shape(t.re).0;
    let a = tape.matmul_t_vars(t.re, b.re);
    let c = tape.matmul_t_vars(t.im, b.im);
    let gre = tape.add(a, c);
    let d = tape.matmul_t_vars(t.re, b.im);
    let e = tape.matmul_t_vars(t.im, b.re);
    let gim = tape.sub(d, e);
    let power = tape.cabs2(CVar { re: gre, im: gim });
    let eye = tape.constant(identity(k));
    let diag = tape.mul(power, eye);
    let signal = tape.sum_cols(diag);
    let total = tape.sum_cols(power);
    let interference = tape.sub(total, signal);
    let denom = tape.add_const(interference, 1.0);
    let sinr = tape.div(signal, denom);
    let one_plus = tape.add_const(sinr, 1.0);
    let ln = tape.ln(one_plus);
    tape.scale(ln, std::f64::consts::LOG2_E)
}

fn identity(n: usize) -> Tensor {
    let mut t = Tensor::zeros(n, n);
    for i in 0..n {
        *t.at_mut(i, i) = 1.0;
    }
    t
}

impl Tape {
    /// `a * b^T`.
    fn matmul_t_vars(&mut self, a: Var, b: Var) -> Var {
        let bt = self.transpose(b);
        self.matmul(a, bt)
    }
}

/// Recurrent quantities carried from one frame to the next.
#[derive(Debug, Clone, Copy)]
struct Carry {
    h: Var,
    c: Var,
    v_pairs: Option<Var>,
    prev_w: Option<Var>,
}

#[derive(Debug, Clone)]
struct CarryValues {
    h: Tensor,
    c: Tensor,
    v_pairs: Option<Tensor>,
    prev_w: Option<Tensor>,
}

impl CarryValues {
    fn bind(&self, tape: &mut Tape) -> Carry {
        Carry {
            h: tape.constant(self.h.clone()),
            c: tape.constant(self.c.clone()),
            v_pairs: self.v_pairs.clone().map(|t| tape.constant(t)),
            prev_w: self.prev_w.clone().map(|t| tape.constant(t)),
        }
    }

    fn read(tape: &Tape, c: &Carry) -> Self {
        Self {
            h: tape.value(c.h).clone(),
            c: tape.value(c.c).clone(),
            v_pairs: c.v_pairs.map(|v| tape.value(v).clone()),
            prev_w: c.prev_w.map(|v| tape.value(v).clone()),
        }
    }
}

/// Tape handles produced while processing one frame.
#[derive(Debug, Clone, Copy)]
struct FrameVars {
    sensing: CVar,
    w_pairs: Var,
    w_lift: CVar,
    h_hat: CVar,
    p: Option<Var>,
    lambda: Option<Var>,
    b_rows: CVar,
}

impl Controller {
    /// Frame-0 pass on dummy pilots from the zero state.
    fn initial_carry(&self, tape: &mut Tape, total_power: f64) -> Carry {
        let h = tape.constant(Tensor::zeros(self.dims.users, self.net.hidden));
        let c = tape.constant(Tensor::zeros(self.dims.users, self.net.hidden));
        if !self.variant.uses_lstm() {
            return Carry { h, c, v_pairs: None, prev_w: None };
        }
        let x = tape.constant(self.dummy_pilots());
        let out = self.unit_forward(tape, h, c, x, total_power);
        Carry { h: out.h, c: out.c, v_pairs: out.v_pairs, prev_w: Some(out.w_pairs) }
    }

    fn sensing_for_frame(&self, tape: &mut Tape, carry: &Carry, frame: &Frame) -> Var {
        let l = self.dims.sensing_blocks;
        match self.variant {
            Variant::FullActive | Variant::NoRefinement | Variant::DirectBHead => carry.v_pairs.expect("sensing head output"),
            Variant::FixedSensingLearned => self.learned_sensing_pairs(tape).expect("learned sensing parameters"),
            Variant::ReuseWSensing => {
                let w = carry.prev_w.expect("previous reflection");
                tape.concat_rows(&vec![w; l])
            }
            Variant::FixedSensingRandom | Variant::NoLstmGnnOnly => sensing_pairs_constant(tape, &frame.random_sensing),
        }
    }

    fn frame_forward(&self, tape: &mut Tape, carry: Carry, frame: &Frame, sc: &Scales) -> (Carry, FrameVars) {
        let d = self.dims;
        let (k, m, nr, l) = (d.users, d.antennas, d.ris_elements, d.sensing_blocks);
        let pairs = self.sensing_for_frame(tape, &carry, frame);
        let sensing = lift_pairs(tape, pairs, nr, l);
        let x = receive_on_tape(tape, frame, sensing, sc, k, m, l);
        let out = self.unit_forward(tape, carry.h, carry.c, x, sc.total_power);
        let w_lift = lift_w(tape, out.w_pairs);
        let h_hat = estimate_on_tape(tape, frame, w_lift, sc, k, m);
        let b_rows = match out.b_direct {
            Some(raw) => direct_beamformers_on_tape(tape, raw, sc.total_power),
            None => duality_beamformers_on_tape(tape, h_hat, out.p.expect("powers"), out.lambda.expect("powers")),
        };
        let next = Carry { h: out.h, c: out.c, v_pairs: out.v_pairs, prev_w: Some(out.w_pairs) };
        (next, FrameVars { sensing, w_pairs: out.w_pairs, w_lift, h_hat, p: out.p, lambda: out.lambda, b_rows })
    }
}

/// Differentiable rollout over the first `frames` frames of `episode`.
pub struct RolloutTape {
    pub tape: Tape,
    pub loss: Var,
    /// Mean over data blocks of the minimum user rate, per frame.
    pub frame_min_rates: Vec<f64>,
}

/// Builds the training objective: the negative minimum user rate averaged
/// over frames and data blocks, with every step kept on the tape.
pub fn rollout_loss(ctrl: &Controller, sys: &SystemConfig, episode: &Episode, frames: usize) -> Result<RolloutTape> {
    check_episode(ctrl, sys, episode, frames)?;
    let sc = Scales::new(sys);
    let mut tape = Tape::new();
    let mut carry = ctrl.initial_carry(&mut tape, sc.total_power);
    let (k, m) = (ctrl.dims.users, ctrl.dims.antennas);
    let mut mins = Vec::new();
    let mut frame_min_rates = Vec::with_capacity(frames);
    for frame in &episode.frames[..frames] {
        let (next, fv) = ctrl.frame_forward(&mut tape, carry, frame, &sc);
        carry = next;
        let mut acc = 0.0;
        for block in &frame.blocks[1..] {
            let a = stacked_channels(&mut tape, block, sc.downlink);
            let t = per_user_rows(&mut tape, a, fv.w_lift, k, m);
            let rates = rates_on_tape(&mut tape, t, fv.b_rows);
            let mn = tape.min(rates);
            acc += tape.value(mn).data[0];
            mins.push(mn);
        }
        frame_min_rates.push(acc / (frame.blocks.len() - 1) as f64);
    }
    let all = tape.concat_rows(&mins);
    let total = tape.sum(all);
    let loss = tape.scale(total, -1.0 / mins.len() as f64);
    if !tape.value(loss).data[0].is_finite() {
        return Err(Error::NonFinite(format!("rollout loss for episode seed {}", episode.seed)));
    }
    Ok(RolloutTape { tape, loss, frame_min_rates })
}

/// Loss value and parameter gradients for one episode.
pub fn episode_gradients(ctrl: &Controller, sys: &SystemConfig, episode: &Episode, frames: usize) -> Result<(f64, Vec<Tensor>)> {
    let r = rollout_loss(ctrl, sys, episode, frames)?;
    let grads: Gradients = r.tape.backward(r.loss);
    let out = ctrl.store.tensors.iter().enumerate().map(|(i, t)| grads.param(i, t.shape())).collect();
    Ok((r.tape.value(r.loss).data[0], out))
}

fn check_episode(ctrl: &Controller, sys: &SystemConfig, episode: &Episode, frames: usize) -> Result<()> {
    if super::Dims::from_system(sys) != ctrl.dims {
        return Err(Error::Shape(format!(
            "controller built for {:?}, system has {:?}",
            ctrl.dims,
            super::Dims::from_system(sys)
        )));
    }
    if episode.frames.len() < frames {
        return Err(Error::Shape(format!("episode has {} frames, {frames} requested", episode.frames.len())));
    }
    Ok(())
}

/// Decisions and outcomes of one frame.
#[derive(Debug, Clone)]
pub struct FrameDecision {
    /// Sensing matrix used for this frame's pilots.
    pub sensing: SensingMatrix,
    pub w: CVec,
    /// Powers behind `b`; empty for a direct head without refinement.
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub network_p: Option<Vec<f64>>,
    pub network_lambda: Option<Vec<f64>>,
    pub refined: bool,
    /// Physical beamformers `M x K` (total power `P_d`).
    pub b: CMat,
    /// Noise-normalized estimated effective channels.
    pub h_hat: Vec<CVec>,
    /// Rates of every user in data blocks `1..=N`.
    pub block_rates: Vec<Vec<f64>>,
    pub block_min_rates: Vec<f64>,
}

impl FrameDecision {
    pub fn mean_min_rate(&self) -> f64 {
        self.block_min_rates.iter().sum::<f64>() / self.block_min_rates.len() as f64
    }
}

fn cvar_value(tape: &Tape, v: CVar) -> CMat {
    tape.complex_value(v)
}

/// Controller state for frame-by-frame inference.
#[derive(Debug, Clone)]
pub struct Session<'a> {
    ctrl: &'a Controller,
    carry: CarryValues,
    scales: Scales,
    pub frames_done: usize,
}

impl<'a> Session<'a> {
    /// Starts a session and runs the frame-0 dummy pass.
    pub fn new(ctrl: &'a Controller, sys: &SystemConfig) -> Result<Self> {
        if super::Dims::from_system(sys) != ctrl.dims {
            return Err(Error::Shape(format!("controller built for {:?}", ctrl.dims)));
        }
        let scales = Scales::new(sys);
        let mut tape = Tape::new();
        let carry = ctrl.initial_carry(&mut tape, scales.total_power);
        Ok(Self { ctrl, carry: CarryValues::read(&tape, &carry), scales, frames_done: 0 })
    }

    pub fn state(&self) -> ControllerState {
        ControllerState { h: self.carry.h.clone(), c: self.carry.c.clone() }
    }

    /// Processes one frame and returns its decisions and rates.
    pub fn step(&mut self, frame: &Frame, refine: bool) -> Result<FrameDecision> {
        let ctrl = self.ctrl;
        let mut tape = Tape::new();
        let carry = self.carry.bind(&mut tape);
        let (next, fv) = ctrl.frame_forward(&mut tape, carry, frame, &self.scales);
        let sensing_mat = cvar_value(&tape, fv.sensing);
        let sensing = SensingMatrix { lifted_columns: sensing_mat.column_iter().map(|c| c.into_owned()).collect() };
        let w = pairs_to_cvec(tape.value(fv.w_pairs));
        let hh = cvar_value(&tape, fv.h_hat);
        let h_hat: Vec<CVec> = hh.row_iter().map(|r| r.transpose()).collect();
        let network_p = fv.p.map(|v| tape.value(v).data.clone());
        let network_lambda = fv.lambda.map(|v| tape.value(v).data.clone());
        let (b, p, lambda) = if refine {
            let alloc = fixed_point_power(&h_hat, self.scales.total_power, 1.0, FixedPointOptions::patient())?;
            (alloc.beamformers(), alloc.p, alloc.lambda)
        } else {
            let rows = cvar_value(&tape, fv.b_rows);
            (rows.transpose(), network_p.clone().unwrap_or_default(), network_lambda.clone().unwrap_or_default())
        };
        let lifted = lift(&w);
        let mut block_rates = Vec::with_capacity(frame.blocks.len() - 1);
        let mut block_min_rates = Vec::with_capacity(frame.blocks.len() - 1);
        for block in &frame.blocks[1..] {
            let h: Vec<CVec> = block.combined.iter().map(|a| a * &lifted * C64::from(self.scales.downlink)).collect();
            let rep = sinr_and_rate(&h, &b, 1.0)?;
            block_min_rates.push(rep.min_rate);
            block_rates.push(rep.rate);
        }
        self.carry = CarryValues::read(&tape, &next);
        self.frames_done += 1;
        Ok(FrameDecision {
            sensing,
            w,
            p,
            lambda,
            network_p,
            network_lambda,
            refined: refine,
            b,
            h_hat,
            block_rates,
            block_min_rates,
        })
    }
}

/// One inference step; see [`Session::step`].
pub fn infer_frame(session: &mut Session<'_>, frame: &Frame, refine: bool) -> Result<FrameDecision> {
    session.step(frame, refine)
}

/// Inference trace of one episode.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub frames: Vec<FrameDecision>,
}

impl EpisodeTrace {
    /// Minimum user rate in data block `n` (1-based) of every frame.
    pub fn min_rate_at_block(&self, n: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.block_min_rates[n - 1]).collect()
    }

    pub fn frame_mean_min_rates(&self) -> Vec<f64> {
        self.frames.iter().map(FrameDecision::mean_min_rate).collect()
    }
}

/// Runs inference over the first `frames` frames of `episode`.
pub fn rollout_eval(ctrl: &Controller, sys: &SystemConfig, episode: &Episode, frames: usize, refine: bool) -> Result<EpisodeTrace> {
    check_episode(ctrl, sys, episode, frames)?;
    let mut session = Session::new(ctrl, sys)?;
    let frames = episode.frames[..frames].iter().map(|f| session.step(f, refine)).collect::<Result<Vec<_>>>()?;
    Ok(EpisodeTrace { seed: episode.seed, frames })
}

/// Duality-structured beamformers for noise-normalized estimates, computed without a tape.
pub fn beamformers_for_estimates(h_hat: &[CVec], p: &[f64], lambda: &[f64]) -> Result<CMat> {
    beamformers_from_duality(h_hat, lambda, p, 1.0)
}
