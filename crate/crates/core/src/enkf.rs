//! Stochastic ensemble Kalman filter over the control vector, cycled over
//! overlapping assimilation windows.
//!
//! A cycle starting at `t0` with window `[t0, t1]`:
//!
//! 1. each member applies its prior floodplain correction to its start state
//!    and runs the window, recording every diagnostic an observation needs;
//! 2. all observations in `(t0, t1]` are stacked and analysed at once;
//! 3. each member's start state is corrected with its analysed `dh`;
//! 4. members re-run from `t0` with the analysed controls up to the handoff
//!    time `t0 + slide` (or `t1` in the last window), where the next cycle
//!    picks up.
//!
//! A window without observations runs once, uncorrected, and hands off.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::ascii_grid::AsciiGrid;
use crate::domain::{ControlVector, FloodplainZone, Grid, N_KS, N_ZONES};
use crate::error::{Error, Result};
use crate::observation::{predict_observations, Observation, ObservationSet, Trajectory, WET_THRESHOLD};
use crate::seeding::{self, purpose};
use crate::swe::{DepthSnapshot, GaugeSeries, Model, ModelState, RecordPlan, TIME_EPS};
use crate::table;

/// Gaussian prior per control plus hard lower bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub ks_mean: [f64; N_KS],
    pub ks_std: [f64; N_KS],
    pub mu_mean: f64,
    pub mu_std: f64,
    pub dh_mean: [f64; N_ZONES],
    pub dh_std: [f64; N_ZONES],
    pub ks_min: f64,
    pub mu_min: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            ks_mean: [17.0, 45.0, 38.0, 38.0, 40.0, 40.0, 40.0],
            ks_std: [0.85, 2.25, 1.9, 1.9, 2.0, 2.0, 2.0],
            mu_mean: 1.0,
            mu_std: 0.06,
            dh_mean: [0.0; N_ZONES],
            dh_std: [0.25; N_ZONES],
            ks_min: 1.0,
            mu_min: 0.1,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let stds = self.ks_std.iter().chain([&self.mu_std]).chain(&self.dh_std);
        if stds.clone().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("prior std-devs must be finite and >= 0".into()));
        }
        if !(self.ks_min > 0.0) || !(self.mu_min > 0.0) {
            return Err(Error::Config("ks_min and mu_min must be positive".into()));
        }
        if self.ks_mean.iter().any(|&k| k < self.ks_min) || self.mu_mean < self.mu_min {
            return Err(Error::Config("prior means must respect the bounds".into()));
        }
        Ok(())
    }

    pub fn mean(&self) -> ControlVector {
        ControlVector {
            ks: self.ks_mean,
            mu: self.mu_mean,
            dh: self.dh_mean,
        }
    }

    pub fn clamp(&self, cv: &mut ControlVector) {
        for k in &mut cv.ks {
            *k = k.max(self.ks_min);
        }
        cv.mu = cv.mu.max(self.mu_min);
    }
}

/// Which parts of the control vector the analysis may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActiveControls {
    pub ks: bool,
    pub mu: bool,
    pub dh: bool,
}

impl ActiveControls {
    pub fn dim(&self) -> usize {
        self.ks as usize * N_KS + self.mu as usize + self.dh as usize * N_ZONES
    }

    pub fn any(&self) -> bool {
        self.ks || self.mu || self.dh
    }

    pub fn flatten(&self, cv: &ControlVector) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        if self.ks {
            x.extend_from_slice(&cv.ks);
        }
        if self.mu {
            x.push(cv.mu);
        }
        if self.dh {
            x.extend_from_slice(&cv.dh);
        }
        x
    }

    pub fn unflatten(&self, x: &[f64], cv: &mut ControlVector) {
        let mut it = x.iter().copied();
        if self.ks {
            cv.ks.iter_mut().for_each(|k| *k = it.next().unwrap());
        }
        if self.mu {
            cv.mu = it.next().unwrap();
        }
        if self.dh {
            cv.dh.iter_mut().for_each(|d| *d = it.next().unwrap());
        }
    }

    /// Variable names in flattening order.
    pub fn names(&self) -> Vec<String> {
        let mut n = Vec::new();
        if self.ks {
            n.extend((0..N_KS).map(|i| format!("ks{i}")));
        }
        if self.mu {
            n.push("mu".into());
        }
        if self.dh {
            n.extend((1..=N_ZONES).map(|i| format!("dh{i}")));
        }
        n
    }
}

pub const ALL_CONTROLS: ActiveControls = ActiveControls {
    ks: true,
    mu: true,
    dh: true,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CycleConfig {
    pub window_length: f64,
    pub window_slide: f64,
    pub active: ActiveControls,
    /// Multiplicative inflation of posterior anomalies (1 = none).
    pub inflation: f64,
    /// Stack WSR observations alongside gauges.
    pub use_wsr: bool,
    /// Assimilate gauge samples only at multiples of this interval (s).
    pub gauge_interval: f64,
    pub wet_threshold: f64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            window_length: 18.0 * 3600.0,
            window_slide: 12.0 * 3600.0,
            active: ActiveControls {
                ks: true,
                mu: true,
                dh: false,
            },
            inflation: 1.0,
            use_wsr: false,
            gauge_interval: 900.0,
            wet_threshold: WET_THRESHOLD,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_slide > 0.0 && self.window_slide <= self.window_length) {
            return Err(Error::Config(format!(
                "need 0 < window_slide <= window_length, got {} and {}",
                self.window_slide, self.window_length
            )));
        }
        if !(self.inflation >= 1.0) || !self.inflation.is_finite() {
            return Err(Error::Config(format!("inflation must be >= 1, got {}", self.inflation)));
        }
        if !(self.gauge_interval > 0.0) || !(self.wet_threshold > 0.0) {
            return Err(Error::Config("gauge_interval and wet_threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub controls: ControlVector,
    pub state: ModelState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<Member>,
    pub window_index: usize,
    pub rng_seed: u64,
}

impl Ensemble {
    /// Every member starts from a copy of `state`.
    pub fn new(controls: Vec<ControlVector>, state: ModelState, rng_seed: u64) -> Result<Self> {
        if controls.len() < 2 {
            return Err(Error::InvalidInput(format!("an ensemble needs at least 2 members, got {}", controls.len())));
        }
        let members = controls
            .into_iter()
            .map(|c| Member {
                controls: c,
                state: state.clone(),
            })
            .collect();
        Ok(Ensemble {
            members,
            window_index: 0,
            rng_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn controls(&self) -> Vec<ControlVector> {
        self.members.iter().map(|m| m.controls).collect()
    }
}

fn draw(rng: &mut impl rand::Rng, mean: f64, std: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + std * z
}

/// Independent Gaussian draws per variable, clipped to the bounds. Member
/// `i` depends only on `(seed, i)`.
pub fn draw_prior_ensemble(spec: &PriorSpec, n: usize, seed: u64) -> Result<Vec<ControlVector>> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("an ensemble needs at least 2 members, got {n}")));
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = seeding::stream(seed, &[purpose::PRIOR, i as u64]);
            let mut cv = spec.mean();
            for (k, (&m, &s)) in cv.ks.iter_mut().zip(spec.ks_mean.iter().zip(&spec.ks_std)) {
                *k = draw(&mut rng, m, s);
            }
            cv.mu = draw(&mut rng, spec.mu_mean, spec.mu_std);
            for (d, (&m, &s)) in cv.dh.iter_mut().zip(spec.dh_mean.iter().zip(&spec.dh_std)) {
                *d = draw(&mut rng, m, s);
            }
            spec.clamp(&mut cv);
            cv
        })
        .collect())
}

/// Fresh zero-information `dh` draws for one window.
pub fn redraw_dh(spec: &PriorSpec, controls: &mut [ControlVector], seed: u64, window: usize) {
    for (i, cv) in controls.iter_mut().enumerate() {
        let mut rng = seeding::stream(seed, &[purpose::DH_REDRAW, window as u64, i as u64]);
        for (d, (&m, &s)) in cv.dh.iter_mut().zip(spec.dh_mean.iter().zip(&spec.dh_std)) {
            *d = draw(&mut rng, m, s);
        }
    }
}

/// Shifts the depth of every wet cell in zone `k` by `dh[k]`, clamped at
/// zero. Dry cells stay dry.
pub fn apply_state_correction(state: &ModelState, dh: &[f64; N_ZONES], zones: &[FloodplainZone]) -> ModelState {
    let mut out = state.clone();
    for zone in zones {
        let d = dh[zone.zone_id - 1];
        if d == 0.0 {
            continue;
        }
        for i in zone.cells() {
            if out.h[i] > 0.0 {
                out.h[i] = (out.h[i] + d).max(0.0);
                if out.h[i] == 0.0 {
                    out.u[i] = 0.0;
                    out.v[i] = 0.0;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig {
    pub active: ActiveControls,
    pub inflation: f64,
    pub ks_min: f64,
    pub mu_min: f64,
}

impl AnalysisConfig {
    pub fn new(active: ActiveControls, inflation: f64, prior: &PriorSpec) -> Self {
        AnalysisConfig {
            active,
            inflation,
            ks_min: prior.ks_min,
            mu_min: prior.mu_min,
        }
    }
}

/// Stochastic EnKF update with observation perturbations drawn per member
/// from `seed`.
pub fn analysis(
    prior: &[ControlVector],
    predicted: &[Vec<f64>],
    obs: &[f64],
    obs_sigma: &[f64],
    cfg: &AnalysisConfig,
    seed: u64,
) -> Result<Vec<ControlVector>> {
    let eps: Vec<Vec<f64>> = (0..prior.len())
        .map(|i| {
            let mut rng = seeding::stream(seed, &[purpose::OBS_PERTURBATION, i as u64]);
            obs_sigma
                .iter()
                .map(|&s| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                })
                .collect::<Vec<f64>>()
        })
        .collect();
    analysis_with_perturbations(prior, predicted, obs, obs_sigma, &eps, cfg)
}

/// The update with explicit perturbations `eps[i]` for member `i`.
///
/// `x_a = x_b + C_xy (C_yy + R)^{-1} (y + eps - Hx_b)`, then inflation about
/// the posterior mean, then bounds.
pub fn analysis_with_perturbations(
    prior: &[ControlVector],
    predicted: &[Vec<f64>],
    obs: &[f64],
    obs_sigma: &[f64],
    eps: &[Vec<f64>],
    cfg: &AnalysisConfig,
) -> Result<Vec<ControlVector>> {
    let n = prior.len();
    let m = obs.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("analysis needs at least 2 members, got {n}")));
    }
    if m == 0 {
        return Err(Error::InvalidInput("analysis needs at least one observation".into()));
    }
    if predicted.len() != n || eps.len() != n || obs_sigma.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "{n} members, {} predictions, {} perturbation sets, {m} obs, {} sigmas",
            predicted.len(),
            eps.len(),
            obs_sigma.len()
        )));
    }
    if let Some(i) = (0..n).find(|&i| predicted[i].len() != m || eps[i].len() != m) {
        return Err(Error::DimensionMismatch(format!("member {i} does not provide {m} values")));
    }
    if obs_sigma.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidInput("observation std-devs must be positive".into()));
    }
    let d = cfg.active.dim();
    if d == 0 {
        return Ok(prior.to_vec());
    }

    let flat: Vec<Vec<f64>> = prior.iter().map(|c| cfg.active.flatten(c)).collect();
    let x = DMatrix::from_fn(d, n, |r, c| flat[c][r]);
    let hx = DMatrix::from_fn(m, n, |r, c| predicted[c][r]);
    let xa = anomalies(&x);
    let ya = anomalies(&hx);
    let scale = 1.0 / (n as f64 - 1.0);
    let cxy = &xa * ya.transpose() * scale;
    let mut s = &ya * ya.transpose() * scale;
    for (j, &sig) in obs_sigma.iter().enumerate() {
        s[(j, j)] += sig * sig;
    }
    let chol = s.cholesky().ok_or(Error::SingularCovariance)?;
    let y = DVector::from_column_slice(obs);
    let innov = DMatrix::from_fn(m, n, |r, c| y[r] + eps[c][r] - hx[(r, c)]);
    let post = &x + cxy * chol.solve(&innov);

    let post = if cfg.inflation != 1.0 {
        let mean = post.column_mean();
        DMatrix::from_fn(d, n, |r, c| mean[r] + cfg.inflation * (post[(r, c)] - mean[r]))
    } else {
        post
    };

    Ok((0..n)
        .map(|c| {
            let mut cv = prior[c];
            cfg.active.unflatten(post.column(c).as_slice(), &mut cv);
            for k in &mut cv.ks {
                *k = k.max(cfg.ks_min);
            }
            cv.mu = cv.mu.max(cfg.mu_min);
            cv
        })
        .collect())
}

fn anomalies(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = a.column_mean();
    let mut out = a.clone();
    for mut col in out.column_iter_mut() {
        col -= &mean;
    }
    out
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

/// Ensemble statistics of one control variable before and after analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStat {
    pub variable: String,
    pub prior_mean: f64,
    pub prior_std: f64,
    pub post_mean: f64,
    pub post_std: f64,
}

pub fn control_stats(active: ActiveControls, prior: &[ControlVector], post: &[ControlVector]) -> Vec<ControlStat> {
    let xb: Vec<Vec<f64>> = prior.iter().map(|c| active.flatten(c)).collect();
    let xa: Vec<Vec<f64>> = post.iter().map(|c| active.flatten(c)).collect();
    active
        .names()
        .into_iter()
        .enumerate()
        .map(|(j, variable)| {
            let (prior_mean, prior_std) = mean_std(xb.iter().map(|x| x[j]));
            let (post_mean, post_std) = mean_std(xa.iter().map(|x| x[j]));
            ControlStat {
                variable,
                prior_mean,
                prior_std,
                post_mean,
                post_std,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleDiagnostics {
    pub window_index: usize,
    pub t0: f64,
    pub t1: f64,
    pub n_gauge: usize,
    pub n_wsr: usize,
    /// False when the window held no observations and was only propagated.
    pub analysed: bool,
    pub controls: Vec<ControlStat>,
    /// Mean and RMS of `y - mean(Hx)` over gauge and WSR entries (NaN if none).
    pub gauge_innovation_mean: f64,
    pub gauge_innovation_rms: f64,
    pub wsr_innovation_mean: f64,
    pub wsr_innovation_rms: f64,
}

/// Ensemble-mean output of one cycle over its handoff segment.
#[derive(Debug, Clone)]
pub struct CycleOutput {
    pub diagnostics: CycleDiagnostics,
    pub mean: Trajectory,
}

/// Everything a cycled run needs besides the ensemble itself.
#[derive(Debug, Clone)]
pub struct Assimilator<'a> {
    pub model: &'a Model<'a>,
    pub zones: &'a [FloodplainZone],
    pub prior: &'a PriorSpec,
    pub observations: &'a ObservationSet,
    pub cycle: CycleConfig,
    /// Times at which ensemble-mean depth snapshots are kept.
    pub output_times: Vec<f64>,
    pub event_end: f64,
}

/// One member's pass over a window.
struct Pass {
    traj: Trajectory,
    end: ModelState,
}

impl<'a> Assimilator<'a> {
    /// Cycles from `t_start` to the end of the event.
    pub fn run(&self, ens: &mut Ensemble, t_start: f64) -> Result<(Vec<CycleDiagnostics>, Trajectory)> {
        self.cycle.validate()?;
        let stations = self.model.stations.iter().map(|s| s.name.clone()).collect();
        let mut mean = Trajectory {
            gauges: GaugeSeries::new(stations),
            snapshots: Vec::new(),
        };
        let mut diags = Vec::new();
        let mut t0 = t_start;
        while t0 < self.event_end - TIME_EPS {
            let out = self.run_cycle(ens, t0)?;
            mean.gauges.extend(&out.mean.gauges);
            mean.snapshots.extend(out.mean.snapshots);
            diags.push(out.diagnostics);
            t0 += self.cycle.window_slide;
        }
        Ok((diags, mean))
    }

    pub fn run_cycle(&self, ens: &mut Ensemble, t0: f64) -> Result<CycleOutput> {
        let cyc = &self.cycle;
        let window = ens.window_index;
        let t1 = (t0 + cyc.window_length).min(self.event_end);
        let last = t0 + cyc.window_slide >= self.event_end - TIME_EPS;
        let seg_end = if last { t1 } else { t0 + cyc.window_slide };

        let batch = self.observations.batch(t0, t1, cyc.use_wsr, cyc.gauge_interval);
        let analyse = !batch.is_empty() && cyc.active.any();

        if cyc.active.dh {
            let mut controls = ens.controls();
            redraw_dh(self.prior, &mut controls, ens.rng_seed, window);
            for (m, c) in ens.members.iter_mut().zip(controls) {
                m.controls = c;
            }
        }
        let prior_controls = ens.controls();

        let seg_times: Vec<f64> = self
            .output_times
            .iter()
            .copied()
            .filter(|&t| in_segment(t, t0, seg_end, last))
            .collect();
        let mut first_snaps: Vec<f64> = batch
            .iter()
            .filter(|o| matches!(o, Observation::Wsr(_)))
            .map(Observation::time)
            .collect();
        first_snaps.extend(&seg_times);
        first_snaps.sort_by(f64::total_cmp);
        first_snaps.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);
        let first_plan = RecordPlan {
            gauges: true,
            snapshot_times: first_snaps,
            handoff_time: (!last).then_some(seg_end),
        };

        let apply_prior_dh = analyse && cyc.active.dh;
        let first: Vec<Pass> = self.propagate(ens, &prior_controls, apply_prior_dh, t0, t1, &first_plan, window)?;

        let (posterior, passes, mut diagnostics) = if analyse {
            let predicted: Vec<Vec<f64>> = first
                .iter()
                .map(|p| predict_observations(&p.traj, self.zones, &batch, cyc.wet_threshold))
                .collect::<Result<_>>()?;
            let y: Vec<f64> = batch.iter().map(Observation::value).collect();
            let sigma: Vec<f64> = batch.iter().map(Observation::sigma).collect();
            let cfg = AnalysisConfig::new(cyc.active, cyc.inflation, self.prior);
            let key = seeding::derive(ens.rng_seed, &[window as u64]);
            let posterior = analysis(&prior_controls, &predicted, &y, &sigma, &cfg, key)?;

            let diag = innovation_diagnostics(&batch, &predicted, window, t0, t1);
            let plan = RecordPlan {
                gauges: true,
                snapshot_times: seg_times.clone(),
                handoff_time: None,
            };
            let rerun = self.propagate(ens, &posterior, cyc.active.dh, t0, seg_end, &plan, window)?;
            (posterior, rerun, diag)
        } else {
            let mut diag = innovation_diagnostics(&batch, &[], window, t0, t1);
            diag.analysed = false;
            (prior_controls.clone(), first, diag)
        };
        diagnostics.controls = control_stats(cyc.active, &prior_controls, &posterior);

        let mean = ensemble_mean(&passes, t0, seg_end, last, &seg_times);
        for ((m, c), p) in ens.members.iter_mut().zip(posterior).zip(passes) {
            m.controls = c;
            m.state = p.end;
        }
        ens.window_index += 1;
        Ok(CycleOutput { diagnostics, mean })
    }

    /// Runs every member over `[t0, t1]` in parallel; results keep member order.
    #[allow(clippy::too_many_arguments)]
    fn propagate(
        &self,
        ens: &Ensemble,
        controls: &[ControlVector],
        apply_dh: bool,
        t0: f64,
        t1: f64,
        plan: &RecordPlan,
        window: usize,
    ) -> Result<Vec<Pass>> {
        ens.members
            .par_iter()
            .zip(controls.par_iter())
            .enumerate()
            .map(|(i, (m, cv))| {
                let start = if apply_dh {
                    apply_state_correction(&m.state, &cv.dh, self.zones)
                } else {
                    m.state.clone()
                };
                let run = self
                    .model
                    .run_window(start, cv, t0, t1, plan)
                    .map_err(|e| Error::MemberDivergence {
                        member: i,
                        window,
                        source: Box::new(e),
                    })?;
                let end = run.handoff.unwrap_or(run.state);
                Ok(Pass {
                    traj: Trajectory {
                        gauges: run.gauges,
                        snapshots: run.snapshots,
                    },
                    end,
                })
            })
            .collect()
    }
}

fn in_segment(t: f64, lo: f64, hi: f64, inclusive: bool) -> bool {
    t >= lo - TIME_EPS && (t < hi - TIME_EPS || (inclusive && t <= hi + TIME_EPS))
}

fn ensemble_mean(passes: &[Pass], lo: f64, hi: f64, inclusive: bool, snap_times: &[f64]) -> Trajectory {
    let n = passes.len() as f64;
    let mut gauges = passes[0].traj.gauges.slice(lo, hi, inclusive);
    for s in 0..gauges.eta.len() {
        for (k, &t) in gauges.times.iter().enumerate() {
            gauges.eta[s][k] = passes
                .iter()
                .map(|p| {
                    let g = &p.traj.gauges;
                    g.eta[s][g.time_index(t).expect("members share recording times")]
                })
                .sum::<f64>()
                / n;
        }
    }
    let snapshots = snap_times
        .iter()
        .map(|&t| {
            let mut depth = vec![0.0; passes[0].end.len()];
            for p in passes {
                let snap = p.traj.snapshot(t).expect("members share snapshot times");
                for (d, &h) in depth.iter_mut().zip(&snap.depth) {
                    *d += h;
                }
            }
            depth.iter_mut().for_each(|d| *d /= n);
            DepthSnapshot { time: t, depth }
        })
        .collect();
    Trajectory { gauges, snapshots }
}

fn innovation_diagnostics(
    batch: &[Observation],
    predicted: &[Vec<f64>],
    window: usize,
    t0: f64,
    t1: f64,
) -> CycleDiagnostics {
    let n = predicted.len() as f64;
    let innov = |j: usize| batch[j].value() - predicted.iter().map(|p| p[j]).sum::<f64>() / n;
    let stats = |gauge: bool| -> (usize, f64, f64) {
        let idx: Vec<usize> = (0..batch.len())
            .filter(|&j| matches!(batch[j], Observation::Gauge(_)) == gauge)
            .collect();
        if idx.is_empty() || predicted.is_empty() {
            return (idx.len(), f64::NAN, f64::NAN);
        }
        let d: Vec<f64> = idx.iter().map(|&j| innov(j)).collect();
        let k = d.len() as f64;
        (
            idx.len(),
            d.iter().sum::<f64>() / k,
            (d.iter().map(|x| x * x).sum::<f64>() / k).sqrt(),
        )
    };
    let (n_gauge, gm, gr) = stats(true);
    let (n_wsr, wm, wr) = stats(false);
    CycleDiagnostics {
        window_index: window,
        t0,
        t1,
        n_gauge,
        n_wsr,
        analysed: true,
        controls: Vec::new(),
        gauge_innovation_mean: gm,
        gauge_innovation_rms: gr,
        wsr_innovation_mean: wm,
        wsr_innovation_rms: wr,
    }
}

const CONTROLS_HEADER: [&str; 6] = ["window_index", "variable", "prior_mean", "prior_std", "post_mean", "post_std"];
const INNOVATION_HEADER: [&str; 10] = [
    "window_index",
    "t0_s",
    "t1_s",
    "n_gauge",
    "n_wsr",
    "analysed",
    "gauge_innov_mean",
    "gauge_innov_rms",
    "wsr_innov_mean",
    "wsr_innov_rms",
];

pub fn write_control_diagnostics(path: &Path, diags: &[CycleDiagnostics]) -> Result<()> {
    let rows = diags.iter().flat_map(|d| {
        d.controls.iter().map(move |c| {
            vec![
                d.window_index.to_string(),
                c.variable.clone(),
                c.prior_mean.to_string(),
                c.prior_std.to_string(),
                c.post_mean.to_string(),
                c.post_std.to_string(),
            ]
        })
    });
    table::write(path, &CONTROLS_HEADER, rows)
}

/// Rows of a control diagnostics file as `(window_index, stat)`.
pub fn read_control_diagnostics(path: &Path) -> Result<Vec<(usize, ControlStat)>> {
    table::read(path, &CONTROLS_HEADER)?
        .iter()
        .map(|r| {
            Ok((
                table::field(path, r, 0)?,
                ControlStat {
                    variable: table::field(path, r, 1)?,
                    prior_mean: table::field(path, r, 2)?,
                    prior_std: table::field(path, r, 3)?,
                    post_mean: table::field(path, r, 4)?,
                    post_std: table::field(path, r, 5)?,
                },
            ))
        })
        .collect()
}

pub fn write_innovation_diagnostics(path: &Path, diags: &[CycleDiagnostics]) -> Result<()> {
    let rows = diags.iter().map(|d| {
        vec![
            d.window_index.to_string(),
            d.t0.to_string(),
            d.t1.to_string(),
            d.n_gauge.to_string(),
            d.n_wsr.to_string(),
            d.analysed.to_string(),
            d.gauge_innovation_mean.to_string(),
            d.gauge_innovation_rms.to_string(),
            d.wsr_innovation_mean.to_string(),
            d.wsr_innovation_rms.to_string(),
        ]
    });
    table::write(path, &INNOVATION_HEADER, rows)
}

const CHECKPOINT_META: &str = "ensemble.csv";
const CHECKPOINT_CONTROLS: &str = "controls.csv";

fn control_header() -> Vec<String> {
    let mut h = vec!["member".to_string()];
    h.extend(ALL_CONTROLS.names());
    h
}

/// Writes the ensemble as text: `ensemble.csv` (window index, seed, time),
/// `controls.csv` (one row per member) and `member_<i>_{h,u,v}.asc`.
pub fn write_checkpoint(dir: &Path, ens: &Ensemble, grid: &Grid) -> Result<()> {
    fs::create_dir_all(dir)?;
    let t = ens.members.first().map_or(0.0, |m| m.state.t);
    table::write(
        &dir.join(CHECKPOINT_META),
        &["window_index", "rng_seed", "members", "time_s"],
        [vec![
            ens.window_index.to_string(),
            ens.rng_seed.to_string(),
            ens.len().to_string(),
            t.to_string(),
        ]],
    )?;
    let header = control_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = ens.members.iter().enumerate().map(|(i, m)| {
        std::iter::once(i.to_string())
            .chain(ALL_CONTROLS.flatten(&m.controls).iter().map(f64::to_string))
            .collect()
    });
    table::write(&dir.join(CHECKPOINT_CONTROLS), &header, rows)?;
    for (i, m) in ens.members.iter().enumerate() {
        for (name, field) in [("h", &m.state.h), ("u", &m.state.u), ("v", &m.state.v)] {
            AsciiGrid::new(grid.ncols, grid.nrows, grid.cell_size, field.clone())?
                .write(&dir.join(format!("member_{i}_{name}.asc")))?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(dir: &Path, grid: &Grid) -> Result<Ensemble> {
    let meta_path = dir.join(CHECKPOINT_META);
    let meta = table::read(&meta_path, &["window_index", "rng_seed", "members", "time_s"])?;
    let row = meta.first().ok_or_else(|| Error::parse(&meta_path, "no data row"))?;
    let window_index: usize = table::field(&meta_path, row, 0)?;
    let rng_seed: u64 = table::field(&meta_path, row, 1)?;
    let n: usize = table::field(&meta_path, row, 2)?;
    let t: f64 = table::field(&meta_path, row, 3)?;

    let cpath = dir.join(CHECKPOINT_CONTROLS);
    let header = control_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = table::read(&cpath, &header)?;
    if rows.len() != n {
        return Err(Error::parse(&cpath, format!("expected {n} members, found {}", rows.len())));
    }
    let mut members = Vec::with_capacity(n);
    for (i, r) in rows.iter().enumerate() {
        let x: Vec<f64> = (1..header.len()).map(|j| table::field(&cpath, r, j)).collect::<Result<_>>()?;
        let mut controls = ControlVector {
            ks: [0.0; N_KS],
            mu: 0.0,
            dh: [0.0; N_ZONES],
        };
        ALL_CONTROLS.unflatten(&x, &mut controls);
        let field = |name: &str| -> Result<Vec<f64>> {
            let g = AsciiGrid::read(&dir.join(format!("member_{i}_{name}.asc")))?;
            if g.ncols != grid.ncols || g.nrows != grid.nrows {
                return Err(Error::DimensionMismatch(format!("member {i} {name} grid size")));
            }
            Ok(g.values)
        };
        let state = ModelState {
            h: field("h")?,
            u: field("u")?,
            v: field("v")?,
            t,
        };
        members.push(Member { controls, state });
    }
    Ok(Ensemble {
        members,
        window_index,
        rng_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BoundaryConfig, GaugeStation, Hydrograph, RatingCurve};
    use crate::observation::{GaugeObservation, WsrObservation};
    use crate::swe::SolverConfig;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn spec_zero_dh() -> PriorSpec {
        PriorSpec::default()
    }

    #[test]
    fn prior_sample_statistics_match_table() {
        let spec = spec_zero_dh();
        let draws = draw_prior_ensemble(&spec, 100_000, 42).unwrap();
        let (m, s) = mean_std(draws.iter().map(|c| c.ks[0]));
        assert!((m - 17.0).abs() < 0.02, "mean {m}");
        assert!((s / 0.85 - 1.0).abs() < 0.02, "std {s}");
        let (m, s) = mean_std(draws.iter().map(|c| c.mu));
        assert!((m - 1.0).abs() < 0.002 && (s / 0.06 - 1.0).abs() < 0.02);
        let (m, s) = mean_std(draws.iter().map(|c| c.dh[2]));
        assert!(m.abs() < 0.01 && (s / 0.25 - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_std_gives_the_mean_and_seed_fixes_draws() {
        let mut spec = PriorSpec::default();
        spec.ks_std[3] = 0.0;
        let a = draw_prior_ensemble(&spec, 20, 1).unwrap();
        assert!(a.iter().all(|c| c.ks[3] == 38.0));
        assert_eq!(a, draw_prior_ensemble(&spec, 20, 1).unwrap());
        assert_ne!(a, draw_prior_ensemble(&spec, 20, 2).unwrap());
        assert!(draw_prior_ensemble(&spec, 1, 1).is_err());
    }

    #[test]
    fn prior_draws_respect_bounds() {
        let spec = PriorSpec {
            mu_std: 5.0,
            ks_std: [30.0; N_KS],
            ..PriorSpec::default()
        };
        for c in draw_prior_ensemble(&spec, 2000, 3).unwrap() {
            assert!(c.mu >= 0.1 && c.ks.iter().all(|&k| k >= 1.0));
        }
    }

    fn zones_2x4() -> Vec<FloodplainZone> {
        (1..=N_ZONES)
            .map(|k| FloodplainZone::new(k, (0..10).map(|i| i / 2 == k - 1).collect(), 4.0))
            .collect()
    }

    #[test]
    fn state_correction_cases() {
        let zones = zones_2x4();
        let mut s = ModelState::dry(10, 0.0);
        s.h = vec![0.5, 0.0, 1.0, 0.2, 0.3, 0.3, 0.0, 0.0, 2.0, 0.1];
        s.u = vec![1.0; 10];
        assert_eq!(apply_state_correction(&s, &[0.0; N_ZONES], &zones), s);

        let c = apply_state_correction(&s, &[-10.0, 0.0, 0.0, 0.0, 0.0], &zones);
        assert_eq!(&c.h[..2], &[0.0, 0.0]);
        assert_eq!(c.u[0], 0.0);
        assert_eq!(&c.h[2..], &s.h[2..]);

        // Positive corrections never wet a dry cell.
        let dh = [0.4, -0.15, 0.2, 0.1, -0.05];
        let c = apply_state_correction(&s, &dh, &zones);
        assert_eq!(c.h[1], 0.0);
        for (k, z) in zones.iter().enumerate() {
            let expect: f64 = z.cells().filter(|&i| s.h[i] > 0.0).map(|i| (s.h[i] + dh[k]).max(0.0) * 4.0).sum();
            let got: f64 = z.cells().map(|i| c.h[i] * 4.0).sum();
            assert_relative_eq!(got, expect, max_relative = 1e-15);
        }
    }

    fn cfg_mu() -> AnalysisConfig {
        AnalysisConfig::new(
            ActiveControls {
                ks: false,
                mu: true,
                dh: false,
            },
            1.0,
            &PriorSpec::default(),
        )
    }

    fn mu_members(values: &[f64]) -> Vec<ControlVector> {
        values
            .iter()
            .map(|&mu| ControlVector {
                mu,
                ..PriorSpec::default().mean()
            })
            .collect()
    }

    #[test]
    fn scalar_update_matches_kalman_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let n = rng.random_range(2..40);
            let xb: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
            let a = rng.random_range(-3.0..3.0);
            let pred: Vec<Vec<f64>> = xb.iter().map(|&x| vec![a * x]).collect();
            let y = rng.random_range(-2.0..2.0);
            let so = rng.random_range(0.01..1.0);
            let eps: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-0.1..0.1)]).collect();

            let post = analysis_with_perturbations(&mu_members(&xb), &pred, &[y], &[so], &eps, &cfg_mu()).unwrap();

            let mean = xb.iter().sum::<f64>() / n as f64;
            let var = xb.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let gain = a * var / (a * a * var + so * so);
            for i in 0..n {
                let expect = (xb[i] + gain * (y + eps[i][0] - a * xb[i])).max(0.1);
                assert!((post[i].mu - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_spread_component_is_untouched() {
        let prior: Vec<ControlVector> = (0..6)
            .map(|i| ControlVector {
                mu: 1.0 + 0.01 * i as f64,
                ..PriorSpec::default().mean()
            })
            .collect();
        let pred: Vec<Vec<f64>> = prior.iter().map(|c| vec![c.mu * 2.0, c.mu]).collect();
        let cfg = AnalysisConfig::new(
            ActiveControls {
                ks: true,
                mu: true,
                dh: false,
            },
            1.0,
            &PriorSpec::default(),
        );
        let post = analysis(&prior, &pred, &[3.0, 1.2], &[0.1, 0.1], &cfg, 4).unwrap();
        for (a, b) in post.iter().zip(&prior) {
            assert_eq!(a.ks, b.ks);
            assert_ne!(a.mu, b.mu);
        }
    }

    #[test]
    fn huge_obs_error_leaves_prior() {
        let prior = mu_members(&[0.9, 1.0, 1.1, 1.05]);
        let pred: Vec<Vec<f64>> = prior.iter().map(|c| vec![c.mu * 10.0]).collect();
        let post = analysis(&prior, &pred, &[15.0], &[1e9], &cfg_mu(), 1).unwrap();
        for (a, b) in post.iter().zip(&prior) {
            assert_relative_eq!(a.mu, b.mu, max_relative = 1e-6);
        }
    }

    #[test]
    fn analysis_rejects_bad_shapes() {
        let prior = mu_members(&[0.9, 1.1]);
        let pred = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            analysis(&prior, &pred, &[1.0, 2.0], &[0.1, 0.1], &cfg_mu(), 0),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(analysis(&prior, &pred, &[], &[], &cfg_mu(), 0).is_err());
        assert!(analysis(&prior, &pred, &[1.0], &[0.0], &cfg_mu(), 0).is_err());
    }

    #[test]
    fn inflation_scales_posterior_anomalies() {
        let prior = mu_members(&[0.9, 1.0, 1.1, 1.2]);
        let pred: Vec<Vec<f64>> = prior.iter().map(|c| vec![c.mu]).collect();
        let eps = vec![vec![0.0]; 4];
        let plain = analysis_with_perturbations(&prior, &pred, &[1.0], &[0.1], &eps, &cfg_mu()).unwrap();
        let cfg = AnalysisConfig {
            inflation: 1.5,
            ..cfg_mu()
        };
        let inflated = analysis_with_perturbations(&prior, &pred, &[1.0], &[0.1], &eps, &cfg).unwrap();
        let (m0, s0) = mean_std(plain.iter().map(|c| c.mu));
        let (m1, s1) = mean_std(inflated.iter().map(|c| c.mu));
        assert_relative_eq!(m0, m1, max_relative = 1e-12);
        assert_relative_eq!(s1, 1.5 * s0, max_relative = 1e-12);
    }

    #[test]
    fn observed_combination_variance_shrinks() {
        let spec = PriorSpec::default();
        let cfg = AnalysisConfig::new(ALL_CONTROLS, 1.0, &spec);
        let obs_of = |c: &ControlVector| vec![c.mu * 10.0 + 0.05 * c.ks[1], c.ks[0] - c.dh[0]];
        let mut wins = 0;
        for seed in 0..20 {
            let prior = draw_prior_ensemble(&spec, 75, seed).unwrap();
            let pred: Vec<Vec<f64>> = prior.iter().map(obs_of).collect();
            let post = analysis(&prior, &pred, &[11.0, 16.5], &[0.05, 0.2], &cfg, seed).unwrap();
            let var = |cs: &[ControlVector]| mean_std(cs.iter().map(|c| obs_of(c)[0])).1;
            wins += (var(&post) <= var(&prior)) as usize;
        }
        assert_eq!(wins, 20);
    }

    #[test]
    fn permuting_members_permutes_the_update() {
        let spec = PriorSpec::default();
        let cfg = AnalysisConfig::new(ALL_CONTROLS, 1.0, &spec);
        let prior = draw_prior_ensemble(&spec, 12, 5).unwrap();
        let pred: Vec<Vec<f64>> = prior.iter().map(|c| vec![c.mu * 3.0, c.ks[2] * 0.1]).collect();
        let eps: Vec<Vec<f64>> = (0..12).map(|i| vec![0.01 * i as f64, -0.02 * i as f64]).collect();
        let post = analysis_with_perturbations(&prior, &pred, &[3.2, 3.9], &[0.05, 0.1], &eps, &cfg).unwrap();

        let perm: Vec<usize> = (0..12).rev().collect();
        let pick = |v: &[Vec<f64>]| perm.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let prior_p: Vec<ControlVector> = perm.iter().map(|&i| prior[i]).collect();
        let post_p =
            analysis_with_perturbations(&prior_p, &pick(&pred), &[3.2, 3.9], &[0.05, 0.1], &pick(&eps), &cfg).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for (a, b) in ALL_CONTROLS.flatten(&post_p[k]).iter().zip(ALL_CONTROLS.flatten(&post[i])) {
                assert_relative_eq!(*a, b, max_relative = 1e-10);
            }
        }
    }

    proptest! {
        #[test]
        fn analysed_controls_stay_in_bounds(seed in any::<u64>(), y in -50.0f64..50.0) {
            let spec = PriorSpec { mu_std: 2.0, ks_std: [20.0; N_KS], ..PriorSpec::default() };
            let prior = draw_prior_ensemble(&spec, 10, seed).unwrap();
            let pred: Vec<Vec<f64>> = prior.iter().map(|c| vec![c.mu * 5.0 + c.ks[0]]).collect();
            let cfg = AnalysisConfig::new(ALL_CONTROLS, 1.3, &spec);
            let post = analysis(&prior, &pred, &[y], &[0.01], &cfg, seed).unwrap();
            for c in post {
                prop_assert!(c.mu >= 0.1);
                prop_assert!(c.ks.iter().all(|&k| k >= 1.0));
            }
        }
    }

    // A tilted 24x24 basin draining from a constant inflow on the left edge
    // to a rating curve on the right edge.
    struct Toy {
        grid: Grid,
        boundary: BoundaryConfig,
        stations: Vec<GaugeStation>,
        zones: Vec<FloodplainZone>,
    }

    fn toy() -> Toy {
        let n = 24;
        let mut grid = Grid::flat(n, n, 20.0, 0.0).unwrap();
        for r in 0..n {
            for c in 0..n {
                grid.bed_elevation[r * n + c] = 0.01 * (n - c) as f64 + 0.002 * (r as f64 - 12.0).abs();
            }
        }
        let upstream: Vec<usize> = (8..16).map(|r| r * n).collect();
        let downstream: Vec<usize> = (0..n).map(|r| r * n + n - 1).collect();
        let boundary = BoundaryConfig {
            inflow_hydrograph: Hydrograph::new(vec![0.0, 7200.0], vec![4.0, 8.0]).unwrap(),
            rating_curve: RatingCurve::new(20.0, 0.0, 5.0 / 3.0).unwrap(),
            upstream_cells: upstream,
            downstream_cells: downstream,
        };
        let stations = vec![GaugeStation {
            name: "g".into(),
            cell_index: 12 * n + 12,
            obs_period: 300.0,
        }];
        let zones = (1..=N_ZONES)
            .map(|k| FloodplainZone::new(k, (0..n * n).map(|i| i % n == 4 * k && i / n < 6).collect(), 400.0))
            .collect();
        Toy {
            grid,
            boundary,
            stations,
            zones,
        }
    }

    fn toy_obs(t_end: f64, with_gauges: bool) -> ObservationSet {
        let mut set = ObservationSet::default();
        if with_gauges {
            let mut t = 300.0;
            while t <= t_end {
                set.gauges.push(GaugeObservation {
                    time: t,
                    station: "g".into(),
                    eta_obs: 0.25,
                    sigma: 0.02,
                });
                t += 300.0;
            }
            set.wsr.push(WsrObservation {
                time: 1800.0,
                zone_id: 1,
                wsr: 0.5,
                sigma: 0.1,
            });
        }
        set
    }

    fn cycle_cfg(active: ActiveControls) -> CycleConfig {
        CycleConfig {
            window_length: 1800.0,
            window_slide: 1200.0,
            active,
            use_wsr: true,
            gauge_interval: 300.0,
            ..CycleConfig::default()
        }
    }

    #[test]
    fn no_observations_equals_independent_free_runs() {
        let t = toy();
        let model = Model::new(&t.grid, &t.boundary, &t.stations, SolverConfig::default());
        let spec = PriorSpec::default();
        let obs = toy_obs(0.0, false);
        let asm = Assimilator {
            model: &model,
            zones: &t.zones,
            prior: &spec,
            observations: &obs,
            cycle: cycle_cfg(ALL_CONTROLS),
            output_times: vec![],
            event_end: 3600.0,
        };
        let controls = draw_prior_ensemble(&spec, 3, 7).unwrap();
        let start = ModelState::dry(t.grid.len(), 0.0);
        let mut ens = Ensemble::new(controls.clone(), start.clone(), 7).unwrap();
        let (diags, _) = asm.run(&mut ens, 0.0).unwrap();
        assert_eq!(diags.len(), 3);
        assert!(diags.iter().all(|d| !d.analysed));

        let plan = RecordPlan {
            gauges: true,
            ..RecordPlan::none()
        };
        for (m, cv) in ens.members.iter().zip(&controls) {
            let free = model.run_window(start.clone(), cv, 0.0, 3600.0, &plan).unwrap();
            assert_eq!(m.state.h, free.state.h);
            assert_eq!(m.state.u, free.state.u);
        }
    }

    #[test]
    fn zero_spread_ensemble_is_left_alone() {
        let t = toy();
        let model = Model::new(&t.grid, &t.boundary, &t.stations, SolverConfig::default());
        let spec = PriorSpec::default();
        let obs = toy_obs(3600.0, true);
        let active = ActiveControls {
            ks: true,
            mu: true,
            dh: false,
        };
        let asm = Assimilator {
            model: &model,
            zones: &t.zones,
            prior: &spec,
            observations: &obs,
            cycle: cycle_cfg(active),
            output_times: vec![1800.0],
            event_end: 3600.0,
        };
        let start = ModelState::dry(t.grid.len(), 0.0);
        let mut ens = Ensemble::new(vec![spec.mean(); 3], start, 1).unwrap();
        let out = asm.run_cycle(&mut ens, 0.0).unwrap();
        assert!(out.diagnostics.analysed);
        assert!(ens.controls().iter().all(|c| *c == spec.mean()));
        for s in &out.diagnostics.controls {
            assert_eq!(s.prior_mean, s.post_mean);
            assert_eq!(s.post_std, 0.0);
        }
    }

    #[test]
    fn cycle_updates_controls_and_reports_dh() {
        let t = toy();
        let model = Model::new(&t.grid, &t.boundary, &t.stations, SolverConfig::default());
        let spec = PriorSpec::default();
        let obs = toy_obs(3600.0, true);
        let asm = Assimilator {
            model: &model,
            zones: &t.zones,
            prior: &spec,
            observations: &obs,
            cycle: cycle_cfg(ALL_CONTROLS),
            output_times: vec![600.0, 1800.0, 3600.0],
            event_end: 3600.0,
        };
        let start = ModelState::dry(t.grid.len(), 0.0);
        let controls = draw_prior_ensemble(&spec, 8, 3).unwrap();
        let mut ens = Ensemble::new(controls.clone(), start, 3).unwrap();
        let (diags, mean) = asm.run(&mut ens, 0.0).unwrap();
        assert!(diags[0].analysed);
        assert_eq!(diags[0].n_gauge, 6);
        assert_eq!(diags[0].n_wsr, 1);
        let names: Vec<&str> = diags[0].controls.iter().map(|c| c.variable.as_str()).collect();
        assert!(names.contains(&"dh5") && names.contains(&"mu"));
        assert_ne!(ens.controls()[0].mu, controls[0].mu);
        // The stitched mean covers every gauge time once and each output time.
        let expect: Vec<f64> = (0..=12).map(|k| k as f64 * 300.0).collect();
        assert_eq!(mean.gauges.times, expect);
        let snap_times: Vec<f64> = mean.snapshots.iter().map(|s| s.time).collect();
        assert_eq!(snap_times, vec![600.0, 1800.0, 3600.0]);
    }

    #[test]
    fn cycling_is_deterministic() {
        let t = toy();
        let model = Model::new(&t.grid, &t.boundary, &t.stations, SolverConfig::default());
        let spec = PriorSpec::default();
        let obs = toy_obs(3600.0, true);
        let asm = Assimilator {
            model: &model,
            zones: &t.zones,
            prior: &spec,
            observations: &obs,
            cycle: cycle_cfg(ALL_CONTROLS),
            output_times: vec![],
            event_end: 3600.0,
        };
        let run = || {
            let mut ens = Ensemble::new(
                draw_prior_ensemble(&spec, 5, 2).unwrap(),
                ModelState::dry(t.grid.len(), 0.0),
                2,
            )
            .unwrap();
            let (d, m) = asm.run(&mut ens, 0.0).unwrap();
            (ens, d, m)
        };
        let (e1, d1, m1) = run();
        let (e2, d2, m2) = run();
        assert_eq!(e1, e2);
        assert_eq!(format!("{d1:?}"), format!("{d2:?}"));
        assert_eq!(m1, m2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let t = toy();
        let spec = PriorSpec::default();
        let mut state = ModelState::dry(t.grid.len(), 1234.5);
        state.h[3] = 0.123456789;
        state.u[3] = -0.1;
        let mut ens = Ensemble::new(draw_prior_ensemble(&spec, 3, 8).unwrap(), state, 8).unwrap();
        ens.window_index = 4;
        let dir = tempfile::tempdir().unwrap();
        write_checkpoint(dir.path(), &ens, &t.grid).unwrap();
        assert_eq!(read_checkpoint(dir.path(), &t.grid).unwrap(), ens);
    }

    #[test]
    fn diagnostics_files_round_trip() {
        let stats = vec![ControlStat {
            variable: "mu".into(),
            prior_mean: 1.0,
            prior_std: 0.06,
            post_mean: 1.08,
            post_std: 0.02,
        }];
        let d = CycleDiagnostics {
            window_index: 2,
            t0: 0.0,
            t1: 1.0,
            n_gauge: 1,
            n_wsr: 0,
            analysed: true,
            controls: stats.clone(),
            gauge_innovation_mean: 0.1,
            gauge_innovation_rms: 0.2,
            wsr_innovation_mean: f64::NAN,
            wsr_innovation_rms: f64::NAN,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write_control_diagnostics(&p, std::slice::from_ref(&d)).unwrap();
        assert_eq!(read_control_diagnostics(&p).unwrap(), vec![(2, stats[0].clone())]);
        write_innovation_diagnostics(&dir.path().join("i.csv"), &[d]).unwrap();
    }
}
