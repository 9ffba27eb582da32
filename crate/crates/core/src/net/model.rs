//! Network structure: shared-weight LSTM cells and the user/RIS graph network.

use serde::{Deserialize, Serialize};

use crate::episode::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{CMat, CVec, C64};
use crate::rng::{label, stream};
use crate::tape::{Tape, Tensor, Var};

use super::params::{glorot, Mlp, ParamStore};
use super::{GnnInput, NetConfig, Variant};

/// Problem dimensions a controller is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub antennas: usize,
    pub ris_elements: usize,
    pub users: usize,
    pub sensing_blocks: usize,
}

impl Dims {
    pub fn from_system(sys: &SystemConfig) -> Self {
        Self {
            antennas: sys.antennas(),
            ris_elements: sys.ris_elements(),
            users: sys.users(),
            sensing_blocks: sys.sensing_blocks(),
        }
    }

    /// Length `2 M L` of one user's encoded pilot matrix.
    pub fn pilot_features(&self) -> usize {
        2 * self.antennas * self.sensing_blocks
    }
}

/// Encodes `M x L` pilot matrices as rows of interleaved (re, im) pairs of
/// the column-major vectorization.
pub fn encode_pilots(y: &[CMat]) -> Tensor {
    let width = y.first().map_or(0, |m| 2 * m.len());
    let mut data = Vec::with_capacity(y.len() * width);
    for m in y {
        for x in m.iter() {
            data.push(x.re);
            data.push(x.im);
        }
    }
    Tensor::from_vec(y.len(), width, data)
}

/// Complex vector from `n x 2` (re, im) rows.
pub fn pairs_to_cvec(t: &Tensor) -> CVec {
    CVec::from_fn(t.rows, |i, _| C64::new(t.at(i, 0), t.at(i, 1)))
}

/// Stacked-gate LSTM shared by all user cells; gate order q, i, o, c.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lstm {
    pub input: usize,
    pub recurrent: usize,
    pub bias: usize,
    pub hidden: usize,
}

impl Lstm {
    fn new(store: &mut ParamStore, rng: &mut crate::rng::Rng, features: usize, hidden: usize) -> Self {
        let input = store.add("lstm.input", glorot(rng, features, 4 * hidden));
        let recurrent = store.add("lstm.recurrent", glorot(rng, hidden, 4 * hidden));
        let mut b = Tensor::zeros(1, 4 * hidden);
        b.data[..hidden].iter_mut().for_each(|x| *x = 1.0);
        let bias = store.add("lstm.bias", b);
        Self { input, recurrent, bias, hidden }
    }

    /// One step for every user row of `x`, `h`, `c`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var, c: Var) -> (Var, Var) {
        let d = self.hidden;
        let u = store.bind(tape, self.input);
        let w = store.bind(tape, self.recurrent);
        let b = store.bind(tape, self.bias);
        let zx = tape.matmul(x, u);
        let zh = tape.matmul(h, w);
        let z = tape.add(zx, zh);
        let z = tape.add_row(z, b);
        let zq = tape.slice_cols(z, 0, d);
        let zi = tape.slice_cols(z, d, d);
        let zo = tape.slice_cols(z, 2 * d, d);
        let zc = tape.slice_cols(z, 3 * d, d);
        let q = tape.sigmoid(zq);
        let i = tape.sigmoid(zi);
        let o = tape.sigmoid(zo);
        let g = tape.tanh(zc);
        let keep = tape.mul(q, c);
        let write = tape.mul(i, g);
        let c_new = tape.add(keep, write);
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc);
        (h_new, c_new)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct GnnLayer {
    f4: Mlp,
    f5: Mlp,
    f6: Mlp,
    f7: Mlp,
    f8: Mlp,
    f9: Mlp,
    fw: Mlp,
    fv: Mlp,
}

/// Graph network over `K` user nodes and the reflection and sensing nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gnn {
    f1: Mlp,
    f2: Mlp,
    f3: Mlp,
    layers: Vec<GnnLayer>,
    g1: Mlp,
    g2: Mlp,
    g3: Option<Mlp>,
}

/// Raw GNN outputs on the tape.
#[derive(Debug, Clone, Copy)]
pub struct GnnOutputs {
    /// `K x 2` (p slot, lambda slot) or `K x 2M` direct beamformer rows.
    pub user: Var,
    /// `N_r x 2` unit-modulus reflection pairs.
    pub w_pairs: Var,
    /// `N_r L x 2` unit-modulus sensing pairs, vector-major.
    pub v_pairs: Option<Var>,
}

impl Gnn {
    fn new(store: &mut ParamStore, rng: &mut crate::rng::Rng, net: &NetConfig, input: usize, dims: &Dims, variant: Variant) -> Self {
        let s = net.node_dim;
        let (eh, uh) = (&net.encoder_hidden, &net.update_hidden);
        let f1 = Mlp::new(store, rng, "gnn.f1", input, eh, s);
        let f2 = Mlp::new(store, rng, "gnn.f2", input, eh, s);
        let f3 = Mlp::new(store, rng, "gnn.f3", input, eh, s);
        let layers = (0..net.layers)
            .map(|l| {
                let n = |f: &str| format!("gnn.layer{l}.{f}");
                GnnLayer {
                    f4: Mlp::new(store, rng, &n("f4"), s, uh, s),
                    f5: Mlp::new(store, rng, &n("f5"), 4 * s, uh, s),
                    f6: Mlp::new(store, rng, &n("f6"), s, uh, s),
                    f7: Mlp::new(store, rng, &n("f7"), 2 * s, uh, s),
                    f8: Mlp::new(store, rng, &n("f8"), s, uh, s),
                    f9: Mlp::new(store, rng, &n("f9"), 2 * s, uh, s),
                    fw: Mlp::new(store, rng, &n("fw"), s, uh, s),
                    fv: Mlp::new(store, rng, &n("fv"), s, uh, s),
                }
            })
            .collect();
        let user_out = if variant == Variant::DirectBHead { 2 * dims.antennas } else { 2 };
        let g1 = Mlp::linear(store, rng, "gnn.g1", s, user_out);
        let g2 = Mlp::linear(store, rng, "gnn.g2", s, 2 * dims.ris_elements);
        let g3 = variant
            .has_sensing_head()
            .then(|| Mlp::linear(store, rng, "gnn.g3", s, 2 * dims.ris_elements * dims.sensing_blocks));
        Self { f1, f2, f3, layers, g1, g2, g3 }
    }

    /// Runs the graph network on per-user state rows `z` (`K x input`).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var, dims: &Dims) -> GnnOutputs {
        let k = tape.shape(z).0;
        let mut users = self.f1.forward(tape, store, z);
        let pooled = tape.mean_rows(z);
        let mut sw = self.f2.forward(tape, store, pooled);
        let mut sv = self.f3.forward(tape, store, pooled);
        let ones = tape.constant(Tensor::full(k, 1, 1.0));
        for layer in &self.layers {
            let nodes = tape.concat_rows(&[users, sw, sv]);
            let images = layer.f4.forward(tape, store, nodes);
            let others = tape.max_except(images, k);
            let fv = layer.fv.forward(tape, store, sv);
            let fw = layer.fw.forward(tape, store, sw);
            let fv_rows = tape.matmul(ones, fv);
            let fw_rows = tape.matmul(ones, fw);
            let user_in = tape.concat_cols(&[users, fv_rows, fw_rows, others]);
            let f6 = layer.f6.forward(tape, store, users);
            let f6_mean = tape.mean_rows(f6);
            let f8 = layer.f8.forward(tape, store, users);
            let f8_mean = tape.mean_rows(f8);
            let w_in = tape.concat_cols(&[fw, f6_mean]);
            let v_in = tape.concat_cols(&[fv, f8_mean]);
            users = layer.f5.forward(tape, store, user_in);
            sw = layer.f7.forward(tape, store, w_in);
            sv = layer.f9.forward(tape, store, v_in);
        }
        let user = self.g1.forward(tape, store, users);
        let w_raw = self.g2.forward(tape, store, sw);
        let w_raw = tape.reshape(w_raw, dims.ris_elements, 2);
        let w_pairs = tape.unit_rows(w_raw);
        let v_pairs = self.g3.as_ref().map(|g3| {
            let raw = g3.forward(tape, store, sv);
            let raw = tape.reshape(raw, dims.ris_elements * dims.sensing_blocks, 2);
            tape.unit_rows(raw)
        });
        GnnOutputs { user, w_pairs, v_pairs }
    }
}

/// Per-user hidden and cell states, `K x d` each.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub h: Tensor,
    pub c: Tensor,
}

impl ControllerState {
    pub fn zeros(users: usize, hidden: usize) -> Self {
        Self { h: Tensor::zeros(users, hidden), c: Tensor::zeros(users, hidden) }
    }
}

/// Output of one active-sensing unit on the tape.
#[derive(Debug, Clone, Copy)]
pub struct UnitOutputs {
    pub h: Var,
    pub c: Var,
    pub w_pairs: Var,
    pub v_pairs: Option<Var>,
    /// `K x 1` primal powers summing to `P_d`.
    pub p: Option<Var>,
    /// `K x 1` dual powers summing to `P_d`.
    pub lambda: Option<Var>,
    /// `K x 2M` beamformer rows for the direct head.
    pub b_direct: Option<Var>,
}

/// Trainable controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub dims: Dims,
    pub net: NetConfig,
    pub variant: Variant,
    pub store: ParamStore,
    lstm: Option<Lstm>,
    gnn: Gnn,
    learned_sensing: Option<usize>,
}

impl Controller {
    pub fn new(dims: Dims, net: NetConfig, variant: Variant, seed: u64) -> Result<Self> {
        net.validate()?;
        if dims.antennas == 0 || dims.ris_elements == 0 || dims.users == 0 || dims.sensing_blocks == 0 {
            return Err(Error::Config("controller dimensions must be positive".into()));
        }
        let mut rng = stream(seed, &[label::INIT]);
        let mut store = ParamStore::default();
        let features = dims.pilot_features();
        let lstm = variant.uses_lstm().then(|| Lstm::new(&mut store, &mut rng, features, net.hidden));
        let gnn_in = if variant.uses_lstm() { net.hidden } else { features };
        let gnn = Gnn::new(&mut store, &mut rng, &net, gnn_in, &dims, variant);
        let learned_sensing = (variant == Variant::FixedSensingLearned).then(|| {
            let phases = Tensor::from_vec(
                dims.sensing_blocks,
                dims.ris_elements,
                (0..dims.sensing_blocks * dims.ris_elements)
                    .map(|_| rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU))
                    .collect(),
            );
            store.add("sensing.phases", phases)
        });
        Ok(Self { dims, net, variant, store, lstm, gnn, learned_sensing })
    }

    pub fn initial_state(&self) -> ControllerState {
        ControllerState::zeros(self.dims.users, self.net.hidden)
    }

    /// Trainable sensing pairs (`N_r L x 2`) for the learned fixed-sensing variant.
    pub fn learned_sensing_pairs(&self, tape: &mut Tape) -> Option<Var> {
        let idx = self.learned_sensing?;
        let phases = self.store.bind(tape, idx);
        let n = self.dims.ris_elements * self.dims.sensing_blocks;
        let c = tape.cos(phases);
        let s = tape.sin(phases);
        let c = tape.reshape(c, n, 1);
        let s = tape.reshape(s, n, 1);
        Some(tape.concat_cols(&[c, s]))
    }

    /// LSTM update of every user followed by one GNN pass.
    pub fn unit_forward(&self, tape: &mut Tape, h: Var, c: Var, pilots: Var, total_power: f64) -> UnitOutputs {
        let (h, c, z) = match &self.lstm {
            Some(lstm) => {
                let (h, c) = lstm.step(tape, &self.store, pilots, h, c);
                let z = match self.net.gnn_input {
                    GnnInput::Cell => c,
                    GnnInput::Hidden => h,
                };
                (h, c, z)
            }
            None => (h, c, pilots),
        };
        let out = self.gnn.forward(tape, &self.store, z, &self.dims);
        let (p, lambda, b_direct) = if self.variant == Variant::DirectBHead {
            (None, None, Some(out.user))
        } else {
            let soft = tape.softmax_cols(out.user);
            let powers = tape.scale(soft, total_power);
            (Some(tape.slice_cols(powers, 0, 1)), Some(tape.slice_cols(powers, 1, 1)), None)
        };
        UnitOutputs { h, c, w_pairs: out.w_pairs, v_pairs: out.v_pairs, p, lambda, b_direct }
    }

    /// Dummy-pilot encoding: every entry of every pilot matrix equals one.
    pub fn dummy_pilots(&self) -> Tensor {
        let y: Vec<CMat> = (0..self.dims.users)
            .map(|_| CMat::from_element(self.dims.antennas, self.dims.sensing_blocks, C64::new(1.0, 0.0)))
            .collect();
        encode_pilots(&y)
    }
}

/// Numeric result of one unit evaluation.
#[derive(Debug, Clone)]
pub struct UnitValues {
    pub state: ControllerState,
    pub w: CVec,
    pub sensing_next: Option<Vec<CVec>>,
    pub p: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
}

impl Controller {
    /// Evaluates one unit on encoded pilots without keeping the tape.
    pub fn unit_values(&self, state: &ControllerState, pilots: &Tensor, total_power: f64) -> UnitValues {
        let mut tape = Tape::new();
        let h = tape.constant(state.h.clone());
        let c = tape.constant(state.c.clone());
        let x = tape.constant(pilots.clone());
        let out = self.unit_forward(&mut tape, h, c, x, total_power);
        let col = |t: &Tape, v: Option<Var>| v.map(|v| t.value(v).data.clone());
        let nr = self.dims.ris_elements;
        UnitValues {
            state: ControllerState { h: tape.value(out.h).clone(), c: tape.value(out.c).clone() },
            w: pairs_to_cvec(tape.value(out.w_pairs)),
            sensing_next: out.v_pairs.map(|v| {
                let all = pairs_to_cvec(tape.value(v));
                (0..self.dims.sensing_blocks).map(|l| all.rows(l * nr, nr).into_owned()).collect()
            }),
            p: col(&tape, out.p),
            lambda: col(&tape, out.lambda),
        }
    }
}
