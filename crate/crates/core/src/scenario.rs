//! Scenario files and end-to-end experiment runs.
//!
//! A scenario is a TOML document with an `experiment` selector, a `seed`
//! and optional sections (`nv`, `odmr`, `protocol`, `sensitivity`,
//! `transient`, `sweep`, `coherence`) whose omitted keys take the fixture
//! defaults below.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coherence::{
    fit_coherence_with, hahn_signal, hyperfine_triplet, ramsey_signal, CoherenceFit, CoherenceKind,
    CoherenceModel, FitOptions,
};
use crate::demod::PhaseConfig;
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_frames, CsvTable, FrameStackHeader};
use crate::lockin::{
    calibrate_slope, derive_seed, simulate_frames, AcquisitionProtocol, Calibration, Excitation,
    DR_CONTRAST_SHARE, NO_DRIFT,
};
use crate::movie::Constant;
use crate::nv::{
    alignment_spectrum_positions, resonance_pair, Alignment, NvConfiguration, ResonancePair,
    GYROMAGNETIC_RATIO, ZERO_FIELD_SPLITTING,
};
use crate::odmr::{contrast_enhancement, dr_spectrum, spectrum, OdmrModel, Scheme, HYPERFINE_SPLITTING};
use crate::sensitivity::{
    calibrate_photon_rate, eta_map, roi_statistics, volume_normalize, Histogram, Roi, RoiStatistics,
    NT_PER_T, NT_UM15_PER_T_M15,
};
use crate::transient::{
    calibrate_field_coefficient, delay_estimate, peak_snr, run_transient_experiment, LrCircuit,
    PulseTrain, TransientSetup, TransientTrace,
};

/// Environment variable naming the directory searched for scenario files.
pub const CONFIG_DIR_ENV: &str = "QDM_CONFIG_DIR";

const FIG4: &str = include_str!("../../../scenarios/fig4.cfg");
const FIG5: &str = include_str!("../../../scenarios/fig5.cfg");

/// Scenario files shipped with the crate.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "fig4.cfg" | "fig4" => Some(FIG4),
        "fig5.cfg" | "fig5" => Some(FIG5),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    OdmrSweep,
    SensitivityMap,
    Transient,
    CoherenceFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resonance {
    Single,
    Double,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NvSection {
    pub alignment: Alignment,
    /// T.
    pub bias_field: f64,
    /// Index of the probed NV axis.
    pub axis: usize,
    pub d0: f64,
    pub gamma: f64,
}

impl Default for NvSection {
    fn default() -> Self {
        Self {
            alignment: Alignment::Axis001,
            bias_field: 3e-3,
            axis: 0,
            d0: ZERO_FIELD_SPLITTING,
            gamma: GYROMAGNETIC_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdmrSection {
    pub linewidth: f64,
    pub contrast: f64,
    pub hf: f64,
    pub scheme: Scheme,
    pub resonance: Resonance,
    /// Per-transition contrast kept when both transitions are driven.
    pub dr_share: f64,
    /// Carrier minus resonance for each drive, Hz.
    pub drive_offsets: Vec<f64>,
}

impl Default for OdmrSection {
    fn default() -> Self {
        Self {
            linewidth: 1e6,
            contrast: 0.02,
            hf: HYPERFINE_SPLITTING,
            scheme: Scheme::TripleTone,
            resonance: Resonance::Double,
            dr_share: DR_CONTRAST_SHARE,
            drive_offsets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    pub f_mod: f64,
    pub n_cyc: u32,
    pub mod_depth: f64,
    pub phases: PhaseConfig,
    pub photon_rate: f64,
    pub width: usize,
    pub height: usize,
    pub pixel_pitch: f64,
    pub layer_thickness: f64,
    /// Zero or negative for flat illumination.
    pub beam_fwhm: f64,
    pub shot_noise: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        let p = AcquisitionProtocol::default();
        Self {
            f_mod: p.f_mod,
            n_cyc: p.n_cyc,
            mod_depth: p.mod_depth,
            phases: PhaseConfig::FieldMode,
            photon_rate: p.photon_rate,
            width: p.width,
            height: p.height,
            pixel_pitch: p.pixel_pitch,
            layer_thickness: p.layer_thickness,
            beam_fwhm: p.beam_fwhm.unwrap_or(0.0),
            shot_noise: p.shot_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySection {
    pub n_frames: usize,
    /// Applied field in crystal coordinates, T.
    pub test_field: [f64; 3],
    /// ROI-mean η the photon rate is tuned to, T/√Hz; 0 keeps `photon_rate`.
    pub target_eta: f64,
    /// Pixels; 0 uses 0.45·min(width, height).
    pub roi_radius: f64,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        Self {
            n_frames: 110,
            test_field: [0.0, 0.0, 0.0],
            target_eta: 0.0,
            roi_radius: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransientSection {
    pub n_frames: usize,
    pub inductance: f64,
    pub resistance: f64,
    /// Peak field along the probed axis, T; sets the coil constant.
    pub peak_field: f64,
    /// Coil field direction in crystal coordinates.
    pub field_direction: [f64; 3],
    pub period: f64,
    pub polarity_flip_window: f64,
    pub vertex_times: [f64; 4],
    pub amplitude: f64,
    /// Central-pixel η the photon rate is tuned to, T/√Hz; 0 keeps `photon_rate`.
    pub target_eta: f64,
}

impl Default for TransientSection {
    fn default() -> Self {
        let c = LrCircuit::default();
        let p = PulseTrain::default();
        Self {
            n_frames: 200,
            inductance: c.inductance,
            resistance: c.resistance,
            peak_field: 4e-6,
            field_direction: [0.0, 0.0, 1.0],
            period: p.period,
            polarity_flip_window: p.polarity_flip_window,
            vertex_times: p.vertex_times,
            amplitude: p.amplitude,
            target_eta: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Full sweep width around the probed f1, Hz.
    pub span: f64,
    pub points: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            span: 20e6,
            points: 801,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoherenceSection {
    pub kind: CoherenceKind,
    /// Two-column CSV (tau_s, signal). Synthetic data is generated when absent.
    pub input: Option<PathBuf>,
    pub c0: f64,
    pub t2_star: f64,
    pub t2: f64,
    pub stretch_p: f64,
    pub detuning_hz: f64,
    pub noise: f64,
    pub points: usize,
    pub max_tau: f64,
}

impl Default for CoherenceSection {
    fn default() -> Self {
        Self {
            kind: CoherenceKind::Hahn,
            input: None,
            c0: 0.01,
            t2_star: 1.6e-6,
            t2: 19.3e-6,
            stretch_p: 1.2,
            detuning_hz: 0.0,
            noise: 1e-4,
            points: 60,
            max_tau: 30e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub nv: NvSection,
    #[serde(default)]
    pub odmr: OdmrSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub sensitivity: SensitivitySection,
    #[serde(default)]
    pub transient: TransientSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub coherence: CoherenceSection,
}

impl Scenario {
    /// Scenario for `experiment` with every section at its defaults.
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            seed: 0,
            nv: NvSection::default(),
            odmr: OdmrSection::default(),
            protocol: ProtocolSection::default(),
            sensitivity: SensitivitySection::default(),
            transient: TransientSection::default(),
            sweep: SweepSection::default(),
            coherence: CoherenceSection::default(),
        }
    }
}

/// Locates a scenario: the path itself, then the config directory from
/// [`CONFIG_DIR_ENV`].
pub fn resolve_config(path: &Path) -> Option<PathBuf> {
    if path.exists() {
        return Some(path.to_path_buf());
    }
    if path.is_relative() {
        if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                return Some(candidate);
            }
        }
    }
    None
}

/// Reads and validates a scenario. Falls back to the bundled fixtures for
/// `fig4.cfg` / `fig5.cfg` when no such file is found.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    match resolve_config(path) {
        Some(found) => {
            let text = fs::read_to_string(&found)
                .map_err(|e| Error::Io(e).context(format!("reading {}", found.display())))?;
            parse_scenario(&text, &found)
        }
        None => match path.file_name().and_then(|n| n.to_str()).and_then(bundled) {
            Some(text) => parse_scenario(text, path),
            None => Err(Error::Input(format!(
                "scenario {} not found (also looked in ${CONFIG_DIR_ENV})",
                path.display()
            ))),
        },
    }
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|s| line_column(text, s.start))
            .unwrap_or((1, 1));
        Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    scenario.validate()?;
    Ok(scenario)
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let nv = self.nv_configuration()?;
        if self.nv.axis >= 4 {
            return Err(Error::Validation(format!("nv.axis must be 0..=3, got {}", self.nv.axis)));
        }
        resonance_pair(&nv, self.nv.axis)?;
        self.line_template()?;
        let o = &self.odmr;
        if !(o.dr_share > 0.0 && o.dr_share <= 1.0) {
            return Err(Error::Validation(format!("odmr.dr_share must lie in (0, 1], got {}", o.dr_share)));
        }
        let drives = self.drive_count();
        if !o.drive_offsets.is_empty() && o.drive_offsets.len() != drives {
            return Err(Error::Validation(format!(
                "odmr.drive_offsets has {} entries for {drives} drives",
                o.drive_offsets.len()
            )));
        }
        if let Some(off) = o.drive_offsets.iter().find(|d| d.abs() > 5.0 * o.linewidth) {
            return Err(Error::Validation(format!(
                "drive offset {off} Hz is more than 5 linewidths from its resonance"
            )));
        }
        self.acquisition_protocol().validate()?;
        match self.experiment {
            Experiment::SensitivityMap => {
                if self.sensitivity.n_frames < 2 {
                    return Err(Error::Validation(format!(
                        "sensitivity.n_frames must be at least 2, got {}",
                        self.sensitivity.n_frames
                    )));
                }
            }
            Experiment::Transient => {
                if self.transient.n_frames == 0 {
                    return Err(Error::Validation("transient.n_frames must be positive".into()));
                }
                self.pulse_train().validate()?;
                if !(self.transient.peak_field > 0.0) {
                    return Err(Error::Validation("transient.peak_field must be positive".into()));
                }
            }
            Experiment::OdmrSweep => {
                if self.sweep.points < 2 || !(self.sweep.span > 0.0) {
                    return Err(Error::Validation("sweep needs at least 2 points over a positive span".into()));
                }
            }
            Experiment::CoherenceFit => {
                let c = &self.coherence;
                if c.input.is_none() && (c.points < 8 || !(c.max_tau > 0.0) || c.noise < 0.0) {
                    return Err(Error::Validation(
                        "synthetic coherence data needs at least 8 points, max_tau > 0 and noise >= 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn nv_configuration(&self) -> Result<NvConfiguration> {
        let bias = self.nv.alignment.direction() * self.nv.bias_field;
        NvConfiguration::new(self.nv.d0, self.nv.gamma, bias)
    }

    pub fn resonance(&self) -> Result<ResonancePair> {
        resonance_pair(&self.nv_configuration()?, self.nv.axis)
    }

    /// Line shape with `omega0 = 0`, to be placed on a resonance.
    pub fn line_template(&self) -> Result<OdmrModel> {
        let o = &self.odmr;
        OdmrModel::new(0.0, o.linewidth, o.contrast, o.hf, o.scheme)
    }

    fn drive_count(&self) -> usize {
        match self.odmr.resonance {
            Resonance::Single => 1,
            Resonance::Double => 2,
        }
    }

    pub fn excitation(&self) -> Result<Excitation> {
        let pair = self.resonance()?;
        let template = self.line_template()?;
        let mut ex = match self.odmr.resonance {
            Resonance::Single => Excitation::single_resonance(pair, &template, self.nv.gamma),
            Resonance::Double => {
                Excitation::double_resonance(pair, &template, self.nv.gamma, self.odmr.dr_share)
            }
        };
        for (d, off) in ex.drives.iter_mut().zip(&self.odmr.drive_offsets) {
            d.offset = *off;
        }
        Ok(ex)
    }

    /// Acquisition protocol with the seed expanded for frame synthesis.
    pub fn acquisition_protocol(&self) -> AcquisitionProtocol {
        let p = &self.protocol;
        let phi2 = match p.phases {
            PhaseConfig::FieldMode => PI,
            PhaseConfig::TemperatureMode => 0.0,
        };
        AcquisitionProtocol {
            f_mod: p.f_mod,
            mod_depth: p.mod_depth,
            n_cyc: p.n_cyc,
            phi1: 0.0,
            phi2,
            photon_rate: p.photon_rate,
            width: p.width,
            height: p.height,
            pixel_pitch: p.pixel_pitch,
            layer_thickness: p.layer_thickness,
            beam_fwhm: (p.beam_fwhm > 0.0).then_some(p.beam_fwhm),
            seed: derive_seed(self.seed, "acquisition"),
            shot_noise: p.shot_noise,
        }
    }

    pub fn pulse_train(&self) -> PulseTrain {
        let t = &self.transient;
        let duration = t.n_frames as f64 * self.protocol.n_cyc as f64 / self.protocol.f_mod;
        PulseTrain {
            amplitude: t.amplitude,
            period: t.period,
            polarity_flip_window: t.polarity_flip_window,
            vertex_times: t.vertex_times,
            n_periods: ((duration / t.period).ceil() as usize).max(1),
        }
    }

    pub fn sensitivity_roi(&self) -> Roi {
        let mut roi = Roi::centered(self.protocol.width, self.protocol.height);
        if self.sensitivity.roi_radius > 0.0 {
            roi.radius = self.sensitivity.roi_radius;
        }
        roi
    }

    /// Change in |B_NV| on the probed axis per unit field along `direction`.
    pub fn projection_of(&self, direction: [f64; 3]) -> Result<f64> {
        let nv = self.nv_configuration()?;
        let d = Vector3::from(direction);
        let n = d.norm();
        if !(n > 0.0) {
            return Err(Error::Validation("field direction must be non-zero".into()));
        }
        let unit = d / n;
        // small-step derivative of |B·axis| along the unit direction
        let h = 1e-9;
        let up = nv.projected_change(self.nv.axis, &(unit * h))?;
        let down = nv.projected_change(self.nv.axis, &(unit * -h))?;
        Ok((up - down) / (2.0 * h))
    }
}

/// Named scalar results of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub experiment: Experiment,
    pub seed: u64,
    pub artifacts: Vec<PathBuf>,
    pub summary: Vec<(String, f64)>,
}

impl RunReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: Experiment,
    seed: u64,
    version: &'a str,
    wall_time_s: f64,
    artifacts: Vec<String>,
    summary: &'a [(String, f64)],
}

/// Runs the scenario's experiment, writing artifacts and `manifest.json`
/// into `out_dir`.
pub fn run_scenario(scenario: &Scenario, out_dir: &Path) -> Result<RunReport> {
    scenario.validate()?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::Io(e).context(format!("creating {}", out_dir.display())))?;
    let start = Instant::now();
    let (artifacts, summary) = match scenario.experiment {
        Experiment::OdmrSweep => run_sweep(scenario, out_dir).map_err(|e| e.context("odmr sweep"))?,
        Experiment::SensitivityMap => {
            run_sensitivity(scenario, out_dir).map_err(|e| e.context("sensitivity map"))?
        }
        Experiment::Transient => run_transient(scenario, out_dir).map_err(|e| e.context("transient"))?,
        Experiment::CoherenceFit => {
            run_coherence(scenario, out_dir).map_err(|e| e.context("coherence fit"))?
        }
    };
    let manifest = Manifest {
        experiment: scenario.experiment,
        seed: scenario.seed,
        version: env!("CARGO_PKG_VERSION"),
        wall_time_s: start.elapsed().as_secs_f64(),
        artifacts: artifacts
            .iter()
            .map(|p| p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()))
            .collect(),
        summary: &summary,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Input(e.to_string()))?;
    write_atomic(&out_dir.join("manifest.json"), &json)?;
    Ok(RunReport {
        experiment: scenario.experiment,
        seed: scenario.seed,
        artifacts,
        summary,
    })
}

type Outputs = (Vec<PathBuf>, Vec<(String, f64)>);

/// One of the three sweep curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepCurve {
    /// Single resonance, single tone.
    Sr,
    /// Single resonance, hyperfine-resolved triple tone.
    SrHf,
    /// Double resonance with triple tones on both transitions.
    DrHf,
}

struct SweepModels {
    single: OdmrModel,
    triple: OdmrModel,
    partner: OdmrModel,
}

impl SweepModels {
    fn new(scenario: &Scenario) -> Result<Self> {
        let pair = scenario.resonance()?;
        let t = scenario.line_template()?;
        let single = OdmrModel { omega0: pair.f1, scheme: Scheme::SingleTone, ..t };
        let triple = OdmrModel { scheme: Scheme::TripleTone, ..single };
        let partner = OdmrModel { omega0: pair.f2, ..triple }.mirrored_about(pair.midpoint());
        Ok(Self { single, triple, partner })
    }

    fn eval(&self, curve: SweepCurve, omega: f64) -> f64 {
        match curve {
            SweepCurve::Sr => spectrum(&self.single, omega),
            SweepCurve::SrHf => spectrum(&self.triple, omega),
            SweepCurve::DrHf => dr_spectrum(&self.triple, &self.partner, omega).fluorescence,
        }
    }
}

fn sweep_axis(scenario: &Scenario) -> Result<impl Iterator<Item = f64>> {
    let f1 = scenario.resonance()?.f1;
    let s = scenario.sweep.clone();
    if s.points < 2 || !(s.span > 0.0) {
        return Err(Error::Validation("sweep needs at least 2 points over a positive span".into()));
    }
    Ok((0..s.points).map(move |k| f1 - 0.5 * s.span + s.span * k as f64 / (s.points - 1) as f64))
}

/// All three sweep curves around f1 of the probed axis.
pub fn sweep_table(scenario: &Scenario) -> Result<CsvTable> {
    let models = SweepModels::new(scenario)?;
    let mut table = CsvTable::new(&["omega_hz", "sr", "sr_hf", "dr_hf"])?;
    for omega in sweep_axis(scenario)? {
        table.row(&[
            omega,
            models.eval(SweepCurve::Sr, omega),
            models.eval(SweepCurve::SrHf, omega),
            models.eval(SweepCurve::DrHf, omega),
        ])?;
    }
    Ok(table)
}

/// A single sweep curve as (omega_hz, fluorescence).
pub fn sweep_curve_table(scenario: &Scenario, curve: SweepCurve) -> Result<CsvTable> {
    let models = SweepModels::new(scenario)?;
    let mut table = CsvTable::new(&["omega_hz", "fluorescence"])?;
    for omega in sweep_axis(scenario)? {
        table.row(&[omega, models.eval(curve, omega)])?;
    }
    Ok(table)
}

pub fn positions_table(nv: &NvConfiguration) -> Result<CsvTable> {
    let mut table = CsvTable::new(&["axis_index", "f1_hz", "f2_hz"])?;
    for (k, p) in alignment_spectrum_positions(nv)?.iter().enumerate() {
        table.indexed_row(&[k], &[p.f1, p.f2])?;
    }
    Ok(table)
}

fn run_sweep(s: &Scenario, out: &Path) -> Result<Outputs> {
    let sweep = out.join("odmr.csv");
    sweep_table(s)?.write_to(&sweep)?;
    let positions = out.join("positions.csv");
    positions_table(&s.nv_configuration()?)?.write_to(&positions)?;
    let summary = vec![(
        "contrast_enhancement".into(),
        contrast_enhancement(s.odmr.linewidth, s.odmr.hf)?,
    )];
    Ok((vec![sweep, positions], summary))
}

/// Protocol with the photon rate tuned to `target` over `roi` when requested.
fn tuned_protocol(s: &Scenario, ex: &Excitation, roi: &Roi, target: f64) -> Result<AcquisitionProtocol> {
    let mut p = s.acquisition_protocol();
    if target > 0.0 {
        p.photon_rate = calibrate_photon_rate(&p, ex, roi, target)?;
    }
    Ok(p)
}

/// Results of the sensitivity-map pipeline, kept in memory.
pub struct SensitivityRun {
    pub protocol: AcquisitionProtocol,
    pub calibration: Calibration,
    pub frames: Vec<crate::lockin::LockInFrame>,
    pub map: crate::sensitivity::SensitivityMap,
    pub eta_stats: RoiStatistics,
    pub eta_v_stats: RoiStatistics,
}

pub fn sensitivity_pipeline(s: &Scenario) -> Result<SensitivityRun> {
    let ex = s.excitation()?;
    let roi = s.sensitivity_roi();
    let protocol = tuned_protocol(s, &ex, &roi, s.sensitivity.target_eta)?;
    let calibration = calibrate_slope(&protocol, &ex)?;
    let nv = s.nv_configuration()?;
    let shift = nv.projected_change(s.nv.axis, &Vector3::from(s.sensitivity.test_field))?;
    let field = Constant(shift);
    let frames: Vec<_> = simulate_frames(&protocol, &ex, &field, &NO_DRIFT, s.sensitivity.n_frames)?.collect();
    let eta = eta_map(&frames, &calibration, protocol.frame_duration())?;
    let mut map = volume_normalize(eta, protocol.pixel_pitch, protocol.layer_thickness)?;
    map.roi = roi;
    let eta_stats = roi_statistics(&map.eta, &roi)?;
    let eta_v_stats = roi_statistics(&map.eta_v, &roi)?;
    Ok(SensitivityRun {
        protocol,
        calibration,
        frames,
        map,
        eta_stats,
        eta_v_stats,
    })
}

/// Map CSV: x, y, η (nT/√Hz), η_V (nT·µm^1.5/√Hz).
pub fn map_table(map: &crate::sensitivity::SensitivityMap) -> Result<CsvTable> {
    let mut table = CsvTable::new(&["x", "y", "eta_nT_per_rtHz", "etaV_nT_um15_per_rtHz"])?;
    for ((y, x), e) in map.eta.indexed_iter() {
        table.indexed_row(&[x, y], &[e * NT_PER_T, map.eta_v[[y, x]] * NT_UM15_PER_T_M15])?;
    }
    Ok(table)
}

/// Histogram CSV with bin edges scaled by `unit`.
pub fn histogram_table(h: &Histogram, unit: f64) -> Result<CsvTable> {
    let mut table = CsvTable::new(&["bin", "lo", "hi", "count"])?;
    for (k, c) in h.counts.iter().enumerate() {
        let lo = h.lo + k as f64 * h.bin_width;
        table.indexed_row(&[k], &[lo * unit, (lo + h.bin_width) * unit, *c as f64])?;
    }
    Ok(table)
}

pub fn calibration_text(cal: &Calibration) -> Result<String> {
    toml::to_string(cal).map_err(|e| Error::Input(format!("serialising calibration: {e}")))
}

pub fn load_calibration(path: &Path) -> Result<Calibration> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(e).context(format!("reading {}", path.display())))?;
    toml::from_str(&text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_column(&text, s.start)).unwrap_or((1, 1));
        Error::Parse {
            path: path.to_path_buf(),
            line,
            column,
            message: e.message().to_string(),
        }
    })
}

fn run_sensitivity(s: &Scenario, out: &Path) -> Result<Outputs> {
    let run = sensitivity_pipeline(s)?;
    let p = &run.protocol;
    let frames_path = out.join("frames.nvlf");
    let header = FrameStackHeader {
        width: p.width as u16,
        height: p.height as u16,
        n_frames: run.frames.len() as u32,
        f_mod: p.f_mod,
        n_cyc: p.n_cyc,
    };
    write_frames(&frames_path, &header, &run.frames)?;
    let cal_path = out.join("calibration.cfg");
    write_atomic(&cal_path, calibration_text(&run.calibration)?.as_bytes())?;
    let map_path = out.join("map.csv");
    map_table(&run.map)?.write_to(&map_path)?;
    let hist_path = out.join("hist.csv");
    histogram_table(&run.eta_stats.histogram, NT_PER_T)?.write_to(&hist_path)?;
    let summary = vec![
        ("photon_rate".into(), p.photon_rate),
        ("roi_pixels".into(), run.eta_stats.pixels as f64),
        ("roi_mean_eta_nT_per_rtHz".into(), run.eta_stats.mean * NT_PER_T),
        ("roi_mode_eta_nT_per_rtHz".into(), run.eta_stats.mode() * NT_PER_T),
        ("roi_skewness".into(), run.eta_stats.skewness),
        ("roi_mean_etaV_nT_um15_per_rtHz".into(), run.eta_v_stats.mean * NT_UM15_PER_T_M15),
        ("alpha_counts_per_hz".into(), run.calibration.alpha),
    ];
    Ok((vec![frames_path, cal_path, map_path, hist_path], summary))
}

pub fn transient_setup(s: &Scenario) -> Result<TransientSetup> {
    let t = &s.transient;
    let excitation = s.excitation()?;
    let projection = s.projection_of(t.field_direction)?;
    let pulse = s.pulse_train();
    let mut circuit = LrCircuit {
        inductance: t.inductance,
        resistance: t.resistance,
        field_coefficient: 1.0,
    };
    circuit.field_coefficient = calibrate_field_coefficient(&circuit, &pulse, projection, t.peak_field)?;
    let centre = Roi {
        cx: (s.protocol.width / 2) as f64,
        cy: (s.protocol.height / 2) as f64,
        radius: 0.5,
    };
    let protocol = tuned_protocol(s, &excitation, &centre, t.target_eta)?;
    Ok(TransientSetup {
        circuit,
        pulse,
        protocol,
        excitation,
        projection,
        n_frames: t.n_frames,
    })
}

pub fn trace_table(trace: &TransientTrace) -> Result<CsvTable> {
    let mut table = CsvTable::new(&[
        "t_s",
        "voltage_V",
        "true_current_A",
        "true_field_T",
        "reconstructed_field_T",
    ])?;
    for k in 0..trace.times.len() {
        table.row(&[
            trace.times[k],
            trace.voltage[k],
            trace.current[k],
            trace.true_field[k],
            trace.reconstructed_field[k],
        ])?;
    }
    Ok(table)
}

fn run_transient(s: &Scenario, out: &Path) -> Result<Outputs> {
    let setup = transient_setup(s)?;
    let trace = run_transient_experiment(&setup)?;
    let path = out.join("trace.csv");
    trace_table(&trace)?.write_to(&path)?;
    let delay = delay_estimate(&trace, &setup.pulse)?;
    let summary = vec![
        ("photon_rate".into(), setup.protocol.photon_rate),
        ("field_coefficient_T_per_A".into(), setup.circuit.field_coefficient),
        ("noise_std_T".into(), trace.noise_std),
        ("peak_snr".into(), peak_snr(&trace)),
        ("delay_s".into(), delay),
    ];
    Ok((vec![path], summary))
}

/// Noisy synthetic decay curve for the coherence section.
pub fn synthetic_coherence(c: &CoherenceSection, hf: f64, seed: u64) -> Result<Vec<(f64, f64)>> {
    let model = CoherenceModel {
        c0: c.c0,
        t2_star: c.t2_star,
        t2: c.t2,
        stretch_p: c.stretch_p,
        hyperfine_freqs: hyperfine_triplet(c.detuning_hz, hf),
    };
    model.validate()?;
    let noise = Normal::new(0.0, c.noise).map_err(|e| Error::Validation(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..c.points)
        .map(|k| {
            let tau = c.max_tau * k as f64 / (c.points - 1) as f64;
            let clean = match c.kind {
                CoherenceKind::Ramsey => ramsey_signal(&model, tau),
                CoherenceKind::Hahn => hahn_signal(&model, tau),
            };
            (tau, clean + noise.sample(&mut rng))
        })
        .collect())
}

/// Human-readable fit summary.
pub fn coherence_report(fit: &CoherenceFit) -> String {
    let m = &fit.model;
    let e = &fit.errors;
    let mut out = String::new();
    match fit.kind {
        CoherenceKind::Ramsey => {
            out.push_str("kind = \"ramsey\"\n");
            out.push_str(&format!("c0 = {:.6e}  # ± {:.3e}\n", m.c0, e.c0));
            out.push_str(&format!("t2_star_s = {:.6e}  # ± {:.3e}\n", m.t2_star, e.t2_star));
            out.push_str(&format!("hf_hz = {:.6e}  # ± {:.3e}\n", m.hyperfine_freqs[2] / (2.0 * PI) - m.hyperfine_freqs[1] / (2.0 * PI), e.hf));
            out.push_str(&format!("detuning_hz = {:.6e}  # ± {:.3e}\n", m.hyperfine_freqs[1] / (2.0 * PI), e.detuning));
        }
        CoherenceKind::Hahn => {
            out.push_str("kind = \"hahn\"\n");
            out.push_str(&format!("c0 = {:.6e}  # ± {:.3e}\n", m.c0, e.c0));
            out.push_str(&format!("t2_s = {:.6e}  # ± {:.3e}\n", m.t2, e.t2));
            out.push_str(&format!("stretch_p = {:.6e}  # ± {:.3e}\n", m.stretch_p, e.stretch_p));
        }
    }
    out.push_str(&format!("residual_norm = {:.6e}\n", fit.residual_norm));
    out.push_str(&format!("iterations = {}\n", fit.iterations));
    out
}

fn run_coherence(s: &Scenario, out: &Path) -> Result<Outputs> {
    let c = &s.coherence;
    let samples = match &c.input {
        Some(path) => crate::io::read_numeric_csv(path, 2)?
            .into_iter()
            .map(|r| (r[0], r[1]))
            .collect(),
        None => synthetic_coherence(c, s.odmr.hf, derive_seed(s.seed, "coherence"))?,
    };
    let options = FitOptions {
        detuning_hz: c.detuning_hz,
        hf_hz: s.odmr.hf,
        ..FitOptions::default()
    };
    let fit = fit_coherence_with(&samples, c.kind, &options)?;
    let path = out.join("fit.txt");
    write_atomic(&path, coherence_report(&fit).as_bytes())?;
    let summary = match c.kind {
        CoherenceKind::Ramsey => vec![("t2_star_s".into(), fit.model.t2_star)],
        CoherenceKind::Hahn => vec![
            ("t2_s".into(), fit.model.t2),
            ("stretch_p".into(), fit.model.stretch_p),
        ],
    };
    Ok((vec![path], summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!("experiment = \"odmr_sweep\"\nseed = 1\n{extra}")
    }

    #[test]
    fn bundled_fixtures_load() {
        let s4 = load_scenario(Path::new("fig4.cfg")).unwrap();
        assert_eq!(s4.experiment, Experiment::SensitivityMap);
        assert_eq!(s4.protocol.f_mod, 2.5e3);
        assert_eq!(s4.protocol.n_cyc, 22);
        let s5 = load_scenario(Path::new("fig5.cfg")).unwrap();
        assert_eq!(s5.experiment, Experiment::Transient);
        let (_, rate) = crate::lockin::frame_timing(&s5.acquisition_protocol());
        assert!((rate - 2500.0).abs() < 1e-9);
        assert_eq!(s5.transient.n_frames, 200);
    }

    #[test]
    fn defaults_follow_fixture_values() {
        let s = parse_scenario(&minimal(""), Path::new("m.cfg")).unwrap();
        assert_eq!(s.nv.d0, 2.87e9);
        assert_eq!(s.odmr.hf, 2.16e6);
        assert_eq!(s.protocol.mod_depth, 300e3);
        assert_eq!(s.protocol.pixel_pitch, 0.54e-6);
        assert_eq!(s.protocol.layer_thickness, 40e-6);
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let err = parse_scenario("", Path::new("empty.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn parse_errors_carry_position() {
        let text = minimal("[protocol]\nf_mod = \"fast\"\n");
        match parse_scenario(&text, Path::new("bad.cfg")).unwrap_err() {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 4);
                assert!(column > 1);
            }
            other => panic!("unexpected {other}"),
        }
        let unknown = minimal("[protocol]\nf_mood = 1.0\n");
        assert!(matches!(parse_scenario(&unknown, Path::new("u.cfg")), Err(Error::Parse { line: 4, .. })));
    }

    #[test]
    fn zero_frames_fail_validation() {
        let text = "experiment = \"transient\"\n[transient]\nn_frames = 0\n";
        assert!(matches!(parse_scenario(text, Path::new("z.cfg")), Err(Error::Validation(_))));
        let text = "experiment = \"sensitivity_map\"\n[sensitivity]\nn_frames = 0\n";
        assert!(matches!(parse_scenario(text, Path::new("z.cfg")), Err(Error::Validation(_))));
    }

    #[test]
    fn far_drive_offsets_fail_validation() {
        let text = minimal("[odmr]\ndrive_offsets = [0.0, 6e6]\n");
        assert!(matches!(parse_scenario(&text, Path::new("o.cfg")), Err(Error::Validation(_))));
    }

    #[test]
    fn projection_along_001_is_one_over_root_three() {
        let s = parse_scenario(&minimal(""), Path::new("m.cfg")).unwrap();
        let p = s.projection_of([0.0, 0.0, 1.0]).unwrap();
        assert!((p - 1.0 / 3f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn sweep_run_writes_artifacts_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = parse_scenario(&minimal("[sweep]\npoints = 11\n"), Path::new("m.cfg")).unwrap();
        s.seed = 9;
        let report = run_scenario(&s, dir.path()).unwrap();
        assert_eq!(report.artifacts.len(), 2);
        let manifest: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["seed"], 9);
        assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
        let rows = crate::io::read_numeric_csv(&dir.path().join("odmr.csv"), 4).unwrap();
        assert_eq!(rows.len(), 11);
    }

    #[test]
    fn coherence_run_recovers_t2() {
        let dir = tempfile::tempdir().unwrap();
        let s = parse_scenario("experiment = \"coherence_fit\"\nseed = 4\n", Path::new("c.cfg")).unwrap();
        let report = run_scenario(&s, dir.path()).unwrap();
        assert!((report.get("t2_s").unwrap() / 19.3e-6 - 1.0).abs() < 0.05);
    }

    #[test]
    fn errors_name_the_experiment() {
        let dir = tempfile::tempdir().unwrap();
        let text = "experiment = \"coherence_fit\"\n[coherence]\ninput = \"/nonexistent/data.csv\"\n";
        let s = parse_scenario(text, Path::new("c.cfg")).unwrap();
        let err = run_scenario(&s, dir.path()).unwrap_err();
        assert!(err.to_string().starts_with("coherence fit"), "{err}");
    }

    #[test]
    fn calibration_round_trips_through_text() {
        let s = parse_scenario(
            &minimal("[protocol]\nwidth = 3\nheight = 3\n"),
            Path::new("m.cfg"),
        )
        .unwrap();
        let cal = calibrate_slope(&s.acquisition_protocol(), &s.excitation().unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.cfg");
        fs::write(&path, calibration_text(&cal).unwrap()).unwrap();
        assert_eq!(load_calibration(&path).unwrap(), cal);
    }
}
