//! Experiment configuration: an INI file of `[section]` blocks with
//! `key = value` lines. Every key has a default; `print-config` dumps them.
//! Lists are comma-separated. Times given in hours carry an `_h` suffix.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::domain::{CatchmentSpec, HydrographShape, N_KS};
use crate::enkf::{ActiveControls, CycleConfig, PriorSpec};
use crate::error::{Error, Result};
use crate::observation::{ObservationSchedule, WET_THRESHOLD};
use crate::swe::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Free run: one member at the prior mean, no analysis.
    Fr,
    /// Gauges only; friction and inflow multiplier.
    Ida,
    /// Gauges and WSR; friction and inflow multiplier.
    Iwda,
    /// Gauges and WSR; friction, inflow multiplier and floodplain corrections.
    Ihda,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Fr, Mode::Ida, Mode::Iwda, Mode::Ihda];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fr => "fr",
            Mode::Ida => "ida",
            Mode::Iwda => "iwda",
            Mode::Ihda => "ihda",
        }
    }

    pub fn active(self) -> ActiveControls {
        ActiveControls {
            ks: self != Mode::Fr,
            mu: self != Mode::Fr,
            dh: self == Mode::Ihda,
        }
    }

    pub fn uses_wsr(self) -> bool {
        matches!(self, Mode::Iwda | Mode::Ihda)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}` (expected fr, ida, iwda or ihda)")))
    }
}

/// Controls and structural error of the synthetic truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSpec {
    pub ks: [f64; N_KS],
    pub mu: f64,
    /// Floodplain sink absent from the forecast model (m/s).
    pub leakage_rate: f64,
}

impl Default for TruthSpec {
    fn default() -> Self {
        let prior = PriorSpec::default();
        let mut ks = prior.ks_mean;
        // Two river segments rougher-than-calibrated by two prior std-devs.
        ks[2] += 2.0 * prior.ks_std[2];
        ks[5] += 2.0 * prior.ks_std[5];
        TruthSpec {
            ks,
            mu: 1.1,
            leakage_rate: 5.0e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub catchment: CatchmentSpec,
    pub hydrograph: HydrographShape,
    /// Constant-inflow spin-up before t = 0 (s).
    pub spinup: f64,
    pub solver: SolverConfig,
    pub prior: PriorSpec,
    pub truth: TruthSpec,
    pub window_length: f64,
    pub window_slide: f64,
    pub inflation: f64,
    pub gauge_interval: f64,
    pub sigma_wl: f64,
    pub sigma_wsr: f64,
    pub wet_threshold: f64,
    pub overpass_times: Vec<f64>,
    pub obs_seed: u64,
    pub mode: Mode,
    pub members: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

const HOUR: f64 = 3600.0;

impl Default for ExperimentConfig {
    fn default() -> Self {
        let cycle = CycleConfig::default();
        ExperimentConfig {
            catchment: CatchmentSpec::default(),
            hydrograph: HydrographShape::default(),
            spinup: 48.0 * HOUR,
            solver: SolverConfig::default(),
            prior: PriorSpec::default(),
            truth: TruthSpec::default(),
            window_length: cycle.window_length,
            window_slide: cycle.window_slide,
            // Keeps ensemble spread alive across windows; the truth's hidden sink
            // otherwise collapses mu onto a biased value.
            inflation: 1.5,
            gauge_interval: cycle.gauge_interval,
            sigma_wl: 0.05,
            sigma_wsr: 0.05,
            wet_threshold: WET_THRESHOLD,
            overpass_times: [10.0, 18.0, 22.0, 26.0, 31.0, 38.0, 46.0, 54.0, 58.0, 64.0, 74.0]
                .iter()
                .map(|h| h * HOUR)
                .collect(),
            obs_seed: 2024,
            mode: Mode::Ihda,
            members: 75,
            seed: 1,
            out_dir: PathBuf::from("floodda_out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!("config file {} not found", path.display())));
        }
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses INI text on top of the defaults; unknown sections or keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
        let mut c = ExperimentConfig::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, value) in props.iter() {
                c.set(section, key, value)
                    .map_err(|e| Error::Config(format!("[{section}] {key}: {e}")))?;
            }
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> std::result::Result<(), String> {
        let cs = &mut self.catchment;
        let hy = &mut self.hydrograph;
        let so = &mut self.solver;
        let pr = &mut self.prior;
        match (section, key) {
            ("catchment", "ncols") => cs.ncols = num(v)?,
            ("catchment", "nrows") => cs.nrows = num(v)?,
            ("catchment", "cell_size") => cs.cell_size = num(v)?,
            ("catchment", "valley_slope") => cs.valley_slope = num(v)?,
            ("catchment", "cross_slope") => cs.cross_slope = num(v)?,
            ("catchment", "outlet_elevation") => cs.outlet_elevation = num(v)?,
            ("catchment", "channel_depth") => cs.channel_depth = num(v)?,
            ("catchment", "channel_width") => cs.channel_width = num(v)?,
            ("catchment", "dyke_height") => cs.dyke_height = num(v)?,
            ("catchment", "ridge_freeboard") => cs.ridge_freeboard = num(v)?,
            ("catchment", "meander_amplitude") => cs.meander_amplitude = num(v)?,
            ("catchment", "meander_wavelength") => cs.meander_wavelength = num(v)?,
            ("catchment", "dyke_start_col") => cs.dyke_start_col = num(v)?,
            ("catchment", "zone_width") => cs.zone_width = num(v)?,
            ("catchment", "inflow_half_width") => cs.inflow_half_width = num(v)?,
            ("catchment", "rating_ks") => cs.rating_ks = num(v)?,
            ("catchment", "gauge_positions") => cs.gauge_positions = array(v)?,
            ("catchment", "gauge_period") => cs.gauge_period = num(v)?,

            ("hydrograph", "base_flow") => hy.base_flow = num(v)?,
            ("hydrograph", "peak_times_h") => set_pulses(hy, v, |p, x| p.0 = x * HOUR)?,
            ("hydrograph", "peak_amplitudes") => set_pulses(hy, v, |p, x| p.1 = x)?,
            ("hydrograph", "peak_widths") => set_pulses(hy, v, |p, x| p.2 = x)?,
            ("hydrograph", "duration_h") => hy.duration = num::<f64>(v)? * HOUR,
            ("hydrograph", "knot_interval") => hy.knot_interval = num(v)?,
            ("hydrograph", "spinup_h") => self.spinup = num::<f64>(v)? * HOUR,

            ("solver", "cfl_number") => so.cfl_number = num(v)?,
            ("solver", "drying_threshold") => so.drying_threshold = num(v)?,
            ("solver", "gravity") => so.gravity = num(v)?,
            ("solver", "max_dt") => so.max_dt = num(v)?,
            ("solver", "max_inflow_velocity") => so.max_inflow_velocity = num(v)?,

            ("prior", "ks_mean") => pr.ks_mean = array(v)?,
            ("prior", "ks_std") => pr.ks_std = array(v)?,
            ("prior", "mu_mean") => pr.mu_mean = num(v)?,
            ("prior", "mu_std") => pr.mu_std = num(v)?,
            ("prior", "dh_mean") => pr.dh_mean = array(v)?,
            ("prior", "dh_std") => pr.dh_std = array(v)?,
            ("prior", "ks_min") => pr.ks_min = num(v)?,
            ("prior", "mu_min") => pr.mu_min = num(v)?,

            ("truth", "ks") => self.truth.ks = array(v)?,
            ("truth", "mu") => self.truth.mu = num(v)?,
            ("truth", "leakage_rate") => self.truth.leakage_rate = num(v)?,

            ("cycle", "window_length_h") => self.window_length = num::<f64>(v)? * HOUR,
            ("cycle", "window_slide_h") => self.window_slide = num::<f64>(v)? * HOUR,
            ("cycle", "inflation") => self.inflation = num(v)?,
            ("cycle", "gauge_interval") => self.gauge_interval = num(v)?,

            ("observations", "sigma_wl") => self.sigma_wl = num(v)?,
            ("observations", "sigma_wsr") => self.sigma_wsr = num(v)?,
            ("observations", "wet_threshold") => self.wet_threshold = num(v)?,
            ("observations", "overpass_h") => {
                self.overpass_times = list::<f64>(v)?.into_iter().map(|h| h * HOUR).collect()
            }
            ("observations", "seed") => self.obs_seed = num(v)?,

            ("experiment", "mode") => self.mode = v.parse().map_err(|e: Error| e.to_string())?,
            ("experiment", "members") => self.members = num(v)?,
            ("experiment", "seed") => self.seed = num(v)?,
            ("experiment", "out") => self.out_dir = PathBuf::from(v.trim()),
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.prior.validate()?;
        self.cycle(Mode::Ihda).validate()?;
        if !(self.spinup >= 0.0) {
            return Err(Error::Config("spinup_h must be >= 0".into()));
        }
        if self.members < 2 {
            return Err(Error::Config(format!("members must be >= 2, got {}", self.members)));
        }
        if self.truth.ks.iter().any(|&k| !(k > 0.0)) || !(self.truth.mu > 0.0) || !(self.truth.leakage_rate >= 0.0) {
            return Err(Error::Config("truth ks and mu must be positive, leakage_rate >= 0".into()));
        }
        if !(self.sigma_wl > 0.0) || !(self.sigma_wsr > 0.0) {
            return Err(Error::Config("observation std-devs must be > 0".into()));
        }
        let end = self.hydrograph.duration;
        if let Some(t) = self.overpass_times.iter().find(|&&t| !(t > 0.0 && t <= end)) {
            return Err(Error::Config(format!("overpass time {} h lies outside the event", t / HOUR)));
        }
        if self.hydrograph.pulses.is_empty() {
            return Err(Error::Config("the hydrograph needs at least one peak".into()));
        }
        Ok(())
    }

    pub fn cycle(&self, mode: Mode) -> CycleConfig {
        CycleConfig {
            window_length: self.window_length,
            window_slide: self.window_slide,
            active: mode.active(),
            inflation: self.inflation,
            use_wsr: mode.uses_wsr(),
            gauge_interval: self.gauge_interval,
            wet_threshold: self.wet_threshold,
        }
    }

    pub fn schedule(&self) -> ObservationSchedule {
        ObservationSchedule {
            gauge_period: self.catchment.gauge_period,
            overpass_times: self.overpass_times.clone(),
            sigma_wl: self.sigma_wl,
            sigma_wsr: self.sigma_wsr,
            wet_threshold: self.wet_threshold,
        }
    }

    /// The full configuration as INI text that [`ExperimentConfig::parse`]
    /// reads back unchanged.
    pub fn to_ini(&self) -> String {
        let c = &self.catchment;
        let h = &self.hydrograph;
        let s = &self.solver;
        let p = &self.prior;
        let mut o = String::new();
        let hours = |v: &[f64]| join(&v.iter().map(|t| t / HOUR).collect::<Vec<_>>());
        let _ = writeln!(o, "[catchment]");
        let _ = writeln!(o, "ncols = {}\nnrows = {}\ncell_size = {}", c.ncols, c.nrows, c.cell_size);
        let _ = writeln!(o, "valley_slope = {}\ncross_slope = {}", c.valley_slope, c.cross_slope);
        let _ = writeln!(o, "outlet_elevation = {}\nchannel_depth = {}", c.outlet_elevation, c.channel_depth);
        let _ = writeln!(o, "channel_width = {}\ndyke_height = {}", c.channel_width, c.dyke_height);
        let _ = writeln!(o, "ridge_freeboard = {}", c.ridge_freeboard);
        let _ = writeln!(o, "meander_amplitude = {}\nmeander_wavelength = {}", c.meander_amplitude, c.meander_wavelength);
        let _ = writeln!(o, "dyke_start_col = {}\nzone_width = {}", c.dyke_start_col, c.zone_width);
        let _ = writeln!(o, "inflow_half_width = {}\nrating_ks = {}", c.inflow_half_width, c.rating_ks);
        let _ = writeln!(o, "gauge_positions = {}\ngauge_period = {}", join(&c.gauge_positions), c.gauge_period);

        let _ = writeln!(o, "\n[hydrograph]\nbase_flow = {}", h.base_flow);
        let peaks: Vec<f64> = h.pulses.iter().map(|p| p.0).collect();
        let _ = writeln!(o, "peak_times_h = {}", hours(&peaks));
        let _ = writeln!(o, "peak_amplitudes = {}", join(&h.pulses.iter().map(|p| p.1).collect::<Vec<_>>()));
        let _ = writeln!(o, "peak_widths = {}", join(&h.pulses.iter().map(|p| p.2).collect::<Vec<_>>()));
        let _ = writeln!(o, "duration_h = {}\nknot_interval = {}", h.duration / HOUR, h.knot_interval);
        let _ = writeln!(o, "spinup_h = {}", self.spinup / HOUR);

        let _ = writeln!(o, "\n[solver]\ncfl_number = {}\ndrying_threshold = {}", s.cfl_number, s.drying_threshold);
        let _ = writeln!(o, "gravity = {}\nmax_dt = {}", s.gravity, s.max_dt);
        let _ = writeln!(o, "max_inflow_velocity = {}", s.max_inflow_velocity);

        let _ = writeln!(o, "\n[prior]\nks_mean = {}\nks_std = {}", join(&p.ks_mean), join(&p.ks_std));
        let _ = writeln!(o, "mu_mean = {}\nmu_std = {}", p.mu_mean, p.mu_std);
        let _ = writeln!(o, "dh_mean = {}\ndh_std = {}", join(&p.dh_mean), join(&p.dh_std));
        let _ = writeln!(o, "ks_min = {}\nmu_min = {}", p.ks_min, p.mu_min);

        let t = &self.truth;
        let _ = writeln!(o, "\n[truth]\nks = {}\nmu = {}\nleakage_rate = {}", join(&t.ks), t.mu, t.leakage_rate);

        let _ = writeln!(o, "\n[cycle]\nwindow_length_h = {}", self.window_length / HOUR);
        let _ = writeln!(o, "window_slide_h = {}\ninflation = {}", self.window_slide / HOUR, self.inflation);
        let _ = writeln!(o, "gauge_interval = {}", self.gauge_interval);

        let _ = writeln!(o, "\n[observations]\nsigma_wl = {}\nsigma_wsr = {}", self.sigma_wl, self.sigma_wsr);
        let _ = writeln!(o, "wet_threshold = {}", self.wet_threshold);
        let _ = writeln!(o, "overpass_h = {}\nseed = {}", hours(&self.overpass_times), self.obs_seed);

        let _ = writeln!(o, "\n[experiment]\nmode = {}\nmembers = {}", self.mode.as_str(), self.members);
        let _ = writeln!(o, "seed = {}\nout = {}", self.seed, self.out_dir.display());
        o
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.trim().parse().map_err(|e| format!("`{}`: {e}", v.trim()))
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(num).collect()
}

fn array<const N: usize>(v: &str) -> std::result::Result<[f64; N], String> {
    let xs: Vec<f64> = list(v)?;
    xs.try_into().map_err(|xs: Vec<f64>| format!("expected {N} values, got {}", xs.len()))
}

/// Writes one component of every pulse, growing the pulse list as needed.
fn set_pulses(
    hy: &mut HydrographShape,
    v: &str,
    put: impl Fn(&mut (f64, f64, f64), f64),
) -> std::result::Result<(), String> {
    let xs: Vec<f64> = list(v)?;
    hy.pulses.resize(xs.len(), (HOUR, 0.0, 0.1));
    for (p, x) in hy.pulses.iter_mut().zip(xs) {
        put(p, x);
    }
    Ok(())
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}
