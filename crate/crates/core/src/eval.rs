//! Interpretation artifacts (array responses and spatial SINR maps) and the
//! paired-seed evaluation suite.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{bcd_perfect_csi, fixed_w_perfect_csi, BcdOptions};
use crate::channel::{combine, steering_ap, steering_ris, user_links, ChannelParams, NlosState, StaticPaths};
use crate::episode::{generate_episode, Episode, SystemConfig};
use crate::error::{Error, Result};
use crate::geometry::{aoa_to_ris, Point3, SystemGeometry};
use crate::linalg::{lift, CMat, CVec, C64};
use crate::net::{rollout_eval, Controller};
use crate::rng::{label, path_seed};

/// Rectangular evaluation grid in the UE plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    /// Points per axis.
    pub resolution: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max || self.resolution < 2 {
            return Err(Error::Config(format!("invalid map grid {self:?}")));
        }
        Ok(())
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_min, self.x_max, self.resolution)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis(self.y_min, self.y_max, self.resolution)
    }

    pub fn cell(&self) -> (f64, f64) {
        let n = (self.resolution - 1) as f64;
        ((self.x_max - self.x_min) / n, (self.y_max - self.y_min) / n)
    }
}

/// Dense 2-D array, row index along `y`, column index along `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid2 {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    /// `(row, col)` of the largest entry.
    pub fn argmax(&self) -> (usize, usize) {
        let i = self.data.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i);
        (i / self.cols, i % self.cols)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `|d^H diag(v) a|` for a departure sum `d` and arrival steering `a`.
pub fn array_response_ris(departure_sum: &CVec, v: &CVec, arrival: &CVec) -> f64 {
    departure_sum.iter().zip(v).zip(arrival).map(|((d, x), a)| d.conj() * x * a).sum::<C64>().norm()
}

/// RIS response of `v` toward a point in space.
pub fn ris_response_at(paths: &StaticPaths, geometry: &SystemGeometry, v: &CVec, position: &Point3) -> Result<f64> {
    let dep = paths.ris_departure_sum(geometry, v.len())?;
    let ang = aoa_to_ris(position, geometry)?;
    let a = steering_ris(ang.dircos_y, ang.dircos_z, v.len(), geometry.ris_columns, geometry.ris_element_spacing, geometry.carrier_wavelength)?;
    Ok(array_response_ris(&dep, v, &a))
}

/// RIS response of `v` over every grid point at height `z`.
pub fn ris_response_map(paths: &StaticPaths, geometry: &SystemGeometry, v: &CVec, z: f64, grid: &GridSpec) -> Result<Grid2> {
    grid.validate()?;
    let dep = paths.ris_departure_sum(geometry, v.len())?;
    let (xs, ys) = (grid.xs(), grid.ys());
    let rows: Vec<Vec<f64>> = ys
        .par_iter()
        .map(|&y| {
            xs.iter()
                .map(|&x| {
                    let ang = aoa_to_ris(&[x, y, z], geometry)?;
                    let a = steering_ris(
                        ang.dircos_y,
                        ang.dircos_z,
                        v.len(),
                        geometry.ris_columns,
                        geometry.ris_element_spacing,
                        geometry.carrier_wavelength,
                    )?;
                    Ok(array_response_ris(&dep, v, &a))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(Grid2 { rows: ys.len(), cols: xs.len(), data: rows.concat() })
}

/// `|a_AP(phi)^H b|` over the angles `phis`.
pub fn array_response_ap(phis: &[f64], b: &CVec, geometry: &SystemGeometry) -> Vec<f64> {
    phis.iter()
        .map(|&phi| steering_ap(phi, b.len(), geometry.ap_element_spacing, geometry.carrier_wavelength).dotc(b).norm())
        .collect()
}

/// Channel state held fixed while a UE is moved across the map.
#[derive(Debug, Clone, Copy)]
pub struct MapContext<'a> {
    pub geometry: &'a SystemGeometry,
    pub params: &'a ChannelParams,
    pub z_ue: f64,
    /// AP-RIS channel of the reference block.
    pub g: &'a CMat,
    /// NLOS state of the reference block; user `k`'s map uses user `k`'s components.
    pub nlos: &'a NlosState,
}

/// SINR of user `k`'s beamformer at position `pos` with user `k`'s frozen NLOS.
pub fn sinr_at(ctx: &MapContext<'_>, k: usize, pos: &Point3, w: &CVec, b: &CMat, noise: f64) -> Result<f64> {
    let (h_d, h_r, _, _) = user_links(pos, &ctx.nlos.h_d_tilde[k], &ctx.nlos.h_r_tilde[k], ctx.geometry, ctx.params)?;
    let h = combine(&h_d, ctx.g, &h_r) * lift(w);
    let gains: Vec<f64> = b.column_iter().map(|bj| h.dotc(&bj).norm_sqr()).collect();
    let interference: f64 = gains.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, g)| g).sum();
    Ok(gains[k] / (interference + noise))
}

/// One SINR map per user over `grid`.
pub fn sinr_map(ctx: &MapContext<'_>, w: &CVec, b: &CMat, noise: f64, grid: &GridSpec) -> Result<Vec<Grid2>> {
    grid.validate()?;
    let (xs, ys) = (grid.xs(), grid.ys());
    (0..b.ncols())
        .map(|k| {
            let rows: Vec<Vec<f64>> = ys
                .par_iter()
                .map(|&y| xs.iter().map(|&x| sinr_at(ctx, k, &[x, y, ctx.z_ue], w, b, noise)).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?;
            Ok(Grid2 { rows: ys.len(), cols: xs.len(), data: rows.concat() })
        })
        .collect()
}

/// Interpretation artifacts for one frame of a controller run.
#[derive(Debug, Clone)]
pub struct FrameArtifacts {
    /// 1-based frame index.
    pub frame: usize,
    pub positions: Vec<[f64; 2]>,
    pub sinr_maps: Vec<Grid2>,
    pub reflection_response: Grid2,
    pub sensing_responses: Vec<Grid2>,
    pub ap_angles: Vec<f64>,
    pub ap_responses: Vec<Vec<f64>>,
    pub min_rate: f64,
}

/// Runs `ctrl` on `episode` and collects artifacts for the requested frames.
/// Maps use the first data block of each frame.
pub fn interpret_episode(
    ctrl: &Controller,
    sys: &SystemConfig,
    episode: &Episode,
    frames: &[usize],
    refine: bool,
    grid: &GridSpec,
    ap_points: usize,
) -> Result<Vec<FrameArtifacts>> {
    let last = frames.iter().copied().max().unwrap_or(0);
    let trace = rollout_eval(ctrl, sys, episode, last, refine)?;
    let ap_angles: Vec<f64> = (0..ap_points).map(|i| std::f64::consts::TAU * i as f64 / ap_points as f64).collect();
    frames
        .iter()
        .map(|&t| {
            let d = &trace.frames[t - 1];
            let f = &episode.frames[t - 1];
            let ctx = MapContext { geometry: &sys.geometry, params: &sys.channel, z_ue: sys.mobility.z_ue, g: &f.blocks[1].g, nlos: &f.nlos[1] };
            Ok(FrameArtifacts {
                frame: t,
                positions: f.trajectories[1].positions.clone(),
                sinr_maps: sinr_map(&ctx, &d.w, &d.b, sys.downlink_noise, grid)?,
                reflection_response: ris_response_map(&episode.paths, &sys.geometry, &d.w, sys.mobility.z_ue, grid)?,
                sensing_responses: d
                    .sensing
                    .lifted_columns
                    .iter()
                    .map(|c| ris_response_map(&episode.paths, &sys.geometry, &c.rows(1, c.len() - 1).into_owned(), sys.mobility.z_ue, grid))
                    .collect::<Result<_>>()?,
                ap_responses: d.b.column_iter().map(|bk| array_response_ap(&ap_angles, &bk.into_owned(), &sys.geometry)).collect(),
                ap_angles: ap_angles.clone(),
                min_rate: d.block_min_rates[0],
            })
        })
        .collect()
}

/// A method in the evaluation suite.
#[derive(Debug, Clone)]
pub enum Method<'a> {
    Controller { label: String, controller: &'a Controller, refine: bool },
    Bcd(BcdOptions),
    RandomW,
}

impl Method<'_> {
    pub fn label(&self) -> String {
        match self {
            Method::Controller { label, .. } => label.clone(),
            Method::Bcd(_) => "bcd_perfect_csi".into(),
            Method::RandomW => "random_w_perfect_csi".into(),
        }
    }
}

/// Per-frame metrics of one method on one episode, measured in data block 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTrace {
    pub method: String,
    pub episode_seed: u64,
    pub min_rate: Vec<f64>,
    pub user_rates: Vec<Vec<f64>>,
    pub ratio_to_bcd: Option<Vec<f64>>,
}

/// Noise-normalized combined channels of data block 1 of every frame.
fn normalized_block1(episode: &Episode, sys: &SystemConfig, frames: usize) -> Vec<Vec<CMat>> {
    let s = C64::from(1.0 / sys.downlink_noise.sqrt());
    episode.frames[..frames].iter().map(|f| f.blocks[1].combined.iter().map(|a| a * s).collect()).collect()
}

fn run_method(method: &Method<'_>, sys: &SystemConfig, episode: &Episode, frames: usize) -> Result<MetricsTrace> {
    let mut min_rate = Vec::with_capacity(frames);
    let mut user_rates = Vec::with_capacity(frames);
    match method {
        Method::Controller { controller, refine, .. } => {
            let trace = rollout_eval(controller, sys, episode, frames, *refine)?;
            for f in &trace.frames {
                min_rate.push(f.block_min_rates[0]);
                user_rates.push(f.block_rates[0].clone());
            }
        }
        Method::Bcd(opts) => {
            for combined in normalized_block1(episode, sys, frames) {
                let r = bcd_perfect_csi(&combined, sys.downlink_power, 1.0, opts)?;
                let rep = crate::beamforming::rates_through(&combined, &r.solution.w, &r.solution.b, 1.0)?;
                min_rate.push(rep.min_rate);
                user_rates.push(rep.rate);
            }
        }
        Method::RandomW => {
            for (combined, f) in normalized_block1(episode, sys, frames).iter().zip(&episode.frames) {
                let (sol, _) = fixed_w_perfect_csi(combined, &f.random_w, sys.downlink_power, 1.0)?;
                let rep = crate::beamforming::rates_through(combined, &sol.w, &sol.b, 1.0)?;
                min_rate.push(rep.min_rate);
                user_rates.push(rep.rate);
            }
        }
    }
    Ok(MetricsTrace { method: method.label(), episode_seed: episode.seed, min_rate, user_rates, ratio_to_bcd: None })
}

pub fn evaluation_episode_seed(root: u64, index: usize) -> u64 {
    path_seed(root, &[label::EVAL, index as u64])
}

/// Aggregated metric of one method in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub frame: usize,
    pub episodes: usize,
    pub mean_min_rate: f64,
    pub stderr: f64,
    pub ratio_to_bcd: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub methods: Vec<String>,
    pub frames: usize,
    /// `traces[m]` holds the successful episodes of method `m`.
    pub traces: Vec<Vec<MetricsTrace>>,
    /// Failed episodes per method.
    pub failures: Vec<usize>,
}

impl SuiteResult {
    pub fn summary(&self) -> Vec<SummaryRow> {
        let bcd = self.methods.iter().position(|m| m == "bcd_perfect_csi");
        let stats = |m: usize, t: usize| -> (usize, f64, f64) {
            let v: Vec<f64> = self.traces[m].iter().map(|tr| tr.min_rate[t]).collect();
            let n = v.len();
            if n == 0 {
                return (0, f64::NAN, f64::NAN);
            }
            let mean = v.iter().sum::<f64>() / n as f64;
            let var = if n > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
            (n, mean, (var / n as f64).sqrt())
        };
        let mut rows = Vec::new();
        for (m, name) in self.methods.iter().enumerate() {
            for t in 0..self.frames {
                let (n, mean, stderr) = stats(m, t);
                let ratio = bcd.map(|b| mean / stats(b, t).1);
                rows.push(SummaryRow { method: name.clone(), frame: t + 1, episodes: n, mean_min_rate: mean, stderr, ratio_to_bcd: ratio });
            }
        }
        rows
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("method,frame,episodes,mean_min_rate,stderr,ratio_to_bcd\n");
        for r in self.summary() {
            let ratio = r.ratio_to_bcd.map_or(String::new(), |x| format!("{x:.10e}"));
            let _ = writeln!(s, "{},{},{},{:.10e},{:.10e},{}", r.method, r.frame, r.episodes, r.mean_min_rate, r.stderr, ratio);
        }
        s
    }

    pub fn traces_csv(&self) -> String {
        let mut s = String::from("method,episode_seed,frame,min_rate,ratio_to_bcd,user_rates\n");
        for traces in &self.traces {
            for tr in traces {
                for t in 0..tr.min_rate.len() {
                    let ratio = tr.ratio_to_bcd.as_ref().map_or(String::new(), |r| format!("{:.10e}", r[t]));
                    let users: Vec<String> = tr.user_rates[t].iter().map(|r| format!("{r:.10e}")).collect();
                    let _ = writeln!(s, "{},{},{},{:.10e},{},{}", tr.method, tr.episode_seed, t + 1, tr.min_rate[t], ratio, users.join(";"));
                }
            }
        }
        s
    }

    pub fn failures_csv(&self) -> String {
        let mut s = String::from("method,failed_episodes\n");
        for (m, f) in self.methods.iter().zip(&self.failures) {
            let _ = writeln!(s, "{m},{f}");
        }
        s
    }

    pub fn method_traces(&self, label: &str) -> Option<&[MetricsTrace]> {
        self.methods.iter().position(|m| m == label).map(|i| self.traces[i].as_slice())
    }

    /// Mean over episodes of the per-frame min-rate for `label`.
    pub fn mean_curve(&self, label: &str) -> Option<Vec<f64>> {
        let tr = self.method_traces(label)?;
        Some((0..self.frames).map(|t| tr.iter().map(|x| x.min_rate[t]).sum::<f64>() / tr.len() as f64).collect())
    }
}

/// Evaluates every method on the same `episodes` episodes of `frames` frames.
pub fn evaluate_suite(methods: &[Method<'_>], sys: &SystemConfig, seed: u64, episodes: usize, frames: usize, parallel: bool) -> Result<SuiteResult> {
    let labels: Vec<String> = methods.iter().map(Method::label).collect();
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(Error::Config(format!("duplicate method label `{l}`")));
        }
    }
    let one = |i: usize| -> Result<Vec<Result<MetricsTrace>>> {
        let ep = generate_episode(sys, evaluation_episode_seed(seed, i), frames)?;
        Ok(methods.iter().map(|m| run_method(m, sys, &ep, frames)).collect())
    };
    let per_episode: Vec<Vec<Result<MetricsTrace>>> = if parallel {
        (0..episodes).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..episodes).map(one).collect::<Result<_>>()?
    };
    let bcd = labels.iter().position(|m| m == "bcd_perfect_csi");
    let mut traces = vec![Vec::new(); methods.len()];
    let mut failures = vec![0; methods.len()];
    for row in per_episode {
        let bcd_curve = bcd.and_then(|b| row[b].as_ref().ok().map(|t| t.min_rate.clone()));
        for (m, r) in row.into_iter().enumerate() {
            match r {
                Ok(mut t) => {
                    t.ratio_to_bcd = bcd_curve.as_ref().map(|b| t.min_rate.iter().zip(b).map(|(x, y)| x / y).collect());
                    traces[m].push(t);
                }
                Err(_) => failures[m] += 1,
            }
        }
    }
    Ok(SuiteResult { methods: labels, frames, traces, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamforming::sinr_and_rate;
    use crate::linalg::phasor;
    use crate::rng::stream;
    use crate::testing::tiny_system;
    use rand::Rng as _;

    #[test]
    fn ris_response_phase_alignment_bound() {
        let g = SystemGeometry::default();
        let mut rng = stream(1, &[]);
        let params = ChannelParams {
            antennas: 2,
            ris_elements: 100,
            users: 1,
            num_paths: 1,
            rician_factor: 10.0,
            correlation: 0.9995,
            pathloss: Default::default(),
        };
        let paths = crate::channel::sample_static_paths(&mut rng, &g, &params).unwrap();
        let pos = [20.0, 5.0, -20.0];
        let dep = paths.ris_departure_sum(&g, 100).unwrap();
        let ang = aoa_to_ris(&pos, &g).unwrap();
        let a = steering_ris(ang.dircos_y, ang.dircos_z, 100, 10, g.ris_element_spacing, g.carrier_wavelength).unwrap();
        let v = CVec::from_fn(100, |i, _| phasor((dep[i] * a[i].conj()).arg()));
        assert!((ris_response_at(&paths, &g, &v, &pos).unwrap() - 100.0).abs() < 1e-9);
        for _ in 0..20 {
            let r = CVec::from_fn(100, |_, _| phasor(rng.random_range(0.0..6.3)));
            let val = ris_response_at(&paths, &g, &r, &pos).unwrap();
            assert!(val <= 100.0 + 1e-9);
            let naive = (0..100).fold(C64::new(0.0, 0.0), |acc, i| acc + dep[i].conj() * r[i] * a[i]).norm();
            assert!((val - naive).abs() < 1e-10);
        }
    }

    #[test]
    fn ap_response_matched_steering() {
        let g = SystemGeometry::default();
        let (m, p, phi0) = (6, 2.0, 0.7);
        let b = steering_ap(phi0, m, g.ap_element_spacing, g.carrier_wavelength) * C64::from((p / m as f64).sqrt());
        let phis: Vec<f64> = (0..2001).map(|i| i as f64 * std::f64::consts::PI / 2000.0).collect();
        let curve = array_response_ap(&phis, &b, &g);
        let (imax, vmax) = curve.iter().enumerate().fold((0, 0.0), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        let at = array_response_ap(&[phi0], &b, &g)[0];
        assert!((at - (p * m as f64).sqrt()).abs() < 1e-9);
        assert!(vmax <= at + 1e-9 && (phis[imax] - phi0).abs() < 0.01);
        let single = array_response_ap(&phis[..5], &CVec::from_element(1, C64::new(0.6, 0.8)), &g);
        assert!(single.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn sinr_map_matches_true_user_sinr() {
        let sys = tiny_system();
        let ep = generate_episode(&sys, 2, 1).unwrap();
        let f = &ep.frames[0];
        let mut rng = stream(3, &[]);
        let w = crate::baselines::random_reflection(&mut rng, 4);
        let b = crate::linalg::cn_mat(2, 2, &mut rng) * C64::from(0.01);
        let ctx = MapContext { geometry: &sys.geometry, params: &sys.channel, z_ue: sys.mobility.z_ue, g: &f.blocks[1].g, nlos: &f.nlos[1] };
        let h = f.blocks[1].effective(&w);
        let rep = sinr_and_rate(&h, &b, sys.downlink_noise).unwrap();
        for k in 0..2 {
            let pos = f.trajectories[1].position3(k, sys.mobility.z_ue);
            let s = sinr_at(&ctx, k, &pos, &w, &b, sys.downlink_noise).unwrap();
            assert!((s - rep.sinr[k]).abs() <= 1e-9 * rep.sinr[k]);
        }
        let grid = GridSpec { x_min: 5.0, x_max: 45.0, y_min: -35.0, y_max: 35.0, resolution: 5 };
        let loud = sinr_map(&ctx, &w, &b, 1e30, &grid).unwrap();
        assert!(loud.iter().all(|m| m.max() < 1e-20));
    }

    #[test]
    fn suite_is_paired_and_reproducible() {
        let sys = tiny_system();
        let opts = BcdOptions { max_outer_iters: 3, rcg_iters_per_block: 5, ..Default::default() };
        let methods = [Method::Bcd(opts.clone()), Method::RandomW];
        let a = evaluate_suite(&methods, &sys, 4, 3, 2, true).unwrap();
        let b = evaluate_suite(&methods, &sys, 4, 3, 2, false).unwrap();
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.traces_csv(), b.traces_csv());
        for r in a.summary().iter().filter(|r| r.method == "bcd_perfect_csi") {
            assert_eq!(r.ratio_to_bcd, Some(1.0));
        }
        assert_eq!(a.failures, vec![0, 0]);
    }
}
