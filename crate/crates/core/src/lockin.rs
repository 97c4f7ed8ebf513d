//! Frame-based lock-in camera acquisition.
//!
//! Each modulation period is split into four equal windows integrated in the
//! order I⁺, Q⁺, I⁻, Q⁻. Every MW source is square-wave frequency modulated
//! by ±`mod_depth/2` around its carrier; with phase 0 the "+" half period is
//! centred on the I⁺ window, so Q carries only quadrature leakage. A frame
//! sums `n_cyc` cycles and reports `I = I⁺ − I⁻`, `Q = Q⁺ − Q⁻` per pixel.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::movie::{Constant, FieldMovie, Waveform};
use crate::nv::ResonancePair;
use crate::odmr::OdmrModel;

/// Per-transition contrast kept when two MW sources share one amplifier.
///
/// With both transitions driven each source gets part of the fixed output
/// power; 2/3 reproduces the expected 4/3 sensitivity gain of double
/// resonance over single resonance in the shot-noise limit.
pub const DR_CONTRAST_SHARE: f64 = 2.0 / 3.0;

const WINDOWS: usize = 4;

/// Gaussian illumination profile centred on the field of view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamProfile {
    /// Intensity FWHM, metres. `None` means uniform illumination.
    pub fwhm: Option<f64>,
    pub pixel_pitch: f64,
    pub width: usize,
    pub height: usize,
}

impl BeamProfile {
    /// Relative intensity at pixel (x, y), 1 at the centre.
    pub fn weight(&self, x: usize, y: usize) -> f64 {
        match self.fwhm {
            None => 1.0,
            Some(fwhm) => {
                let dx = (x as f64 - (self.width as f64 - 1.0) / 2.0) * self.pixel_pitch;
                let dy = (y as f64 - (self.height as f64 - 1.0) / 2.0) * self.pixel_pitch;
                (-4.0 * std::f64::consts::LN_2 * (dx * dx + dy * dy) / (fwhm * fwhm)).exp()
            }
        }
    }

    pub fn weights(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.height, self.width), |(y, x)| self.weight(x, y))
    }

    pub fn center(&self) -> (usize, usize) {
        (self.width / 2, self.height / 2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionProtocol {
    /// Modulation frequency, Hz.
    pub f_mod: f64,
    /// Peak-to-peak frequency excursion, Hz.
    pub mod_depth: f64,
    pub n_cyc: u32,
    /// Modulation phases of MW1 and MW2, radians.
    pub phi1: f64,
    pub phi2: f64,
    /// Detected photons per second per pixel at the beam centre.
    pub photon_rate: f64,
    pub width: usize,
    pub height: usize,
    /// Metres.
    pub pixel_pitch: f64,
    /// Metres.
    pub layer_thickness: f64,
    /// Illumination FWHM, metres; `None` for flat illumination.
    pub beam_fwhm: Option<f64>,
    pub seed: u64,
    /// Poisson sampling on; off yields expected counts.
    pub shot_noise: bool,
}

impl Default for AcquisitionProtocol {
    fn default() -> Self {
        Self {
            f_mod: 2.5e3,
            mod_depth: 300e3,
            n_cyc: 22,
            phi1: 0.0,
            phi2: PI,
            photon_rate: 1e9,
            width: 85,
            height: 85,
            pixel_pitch: 0.54e-6,
            layer_thickness: 40e-6,
            beam_fwhm: Some(40e-6),
            seed: 0,
            shot_noise: true,
        }
    }
}

impl AcquisitionProtocol {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("f_mod", self.f_mod),
            ("mod_depth", self.mod_depth),
            ("photon_rate", self.photon_rate),
            ("pixel_pitch", self.pixel_pitch),
            ("layer_thickness", self.layer_thickness),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_cyc < 1 {
            return Err(Error::Validation("n_cyc must be at least 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("frame must have at least one pixel".into()));
        }
        if self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return Err(Error::Validation("frame dimensions exceed 65535".into()));
        }
        if let Some(f) = self.beam_fwhm {
            if !(f > 0.0) {
                return Err(Error::Validation(format!("beam_fwhm must be positive, got {f}")));
            }
        }
        Ok(())
    }

    pub fn frame_duration(&self) -> f64 {
        frame_timing(self).0
    }

    pub fn cycle_period(&self) -> f64 {
        1.0 / self.f_mod
    }

    pub fn beam(&self) -> BeamProfile {
        BeamProfile {
            fwhm: self.beam_fwhm,
            pixel_pitch: self.pixel_pitch,
            width: self.width,
            height: self.height,
        }
    }

    /// Pixel volume, m³.
    pub fn pixel_volume(&self) -> f64 {
        self.pixel_pitch * self.pixel_pitch * self.layer_thickness
    }

    fn phase(&self, drive: usize) -> f64 {
        if drive == 0 {
            self.phi1
        } else {
            self.phi2
        }
    }
}

/// Frame duration (s) and frame rate (Hz).
pub fn frame_timing(protocol: &AcquisitionProtocol) -> (f64, f64) {
    let duration = protocol.n_cyc as f64 / protocol.f_mod;
    (duration, protocol.f_mod / protocol.n_cyc as f64)
}

/// One modulated MW source and the transition it addresses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drive {
    /// Transition line shape at the operating point (`omega0` = resonance).
    pub line: OdmrModel,
    /// Carrier minus resonance, Hz.
    pub offset: f64,
    /// −1 for the ms=−1 transition (f1), +1 for ms=+1 (f2).
    pub field_sign: f64,
}

/// The set of MW drives plus the gyromagnetic ratio that maps field to shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub drives: Vec<Drive>,
    pub gamma: f64,
}

impl Excitation {
    /// MW1 on f1 only.
    pub fn single_resonance(pair: ResonancePair, template: &OdmrModel, gamma: f64) -> Self {
        Self {
            drives: vec![Drive {
                line: OdmrModel {
                    omega0: pair.f1,
                    ..*template
                },
                offset: 0.0,
                field_sign: -1.0,
            }],
            gamma,
        }
    }

    /// MW1 on f1 and MW2 on f2, each with `share` of the template contrast.
    pub fn double_resonance(
        pair: ResonancePair,
        template: &OdmrModel,
        gamma: f64,
        share: f64,
    ) -> Self {
        let line = |omega0| OdmrModel {
            omega0,
            contrast: template.contrast * share,
            ..*template
        };
        Self {
            drives: vec![
                Drive {
                    line: line(pair.f1),
                    offset: 0.0,
                    field_sign: -1.0,
                },
                Drive {
                    line: line(pair.f2),
                    offset: 0.0,
                    field_sign: 1.0,
                },
            ],
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.drives.is_empty() || self.drives.len() > 2 {
            return Err(Error::Validation(format!(
                "one or two MW drives supported, got {}",
                self.drives.len()
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Validation("gamma must be positive".into()));
        }
        for d in &self.drives {
            d.line.validate()?;
        }
        Ok(())
    }

    /// Total fractional fluorescence loss with each drive in modulation state
    /// `states[k]` (±1), field change `field` (T) and splitting drift `delta_d` (Hz).
    pub fn total_dip(&self, states: &[f64], mod_depth: f64, field: f64, delta_d: f64) -> f64 {
        self.drives
            .iter()
            .zip(states)
            .map(|(d, s)| {
                let shift = d.field_sign * self.gamma * field + delta_d;
                d.line.dip_at_detuning(d.offset + s * 0.5 * mod_depth - shift)
            })
            .sum()
    }
}

/// Normalised fluorescence for the given modulation states.
pub fn instantaneous_fluorescence(
    excitation: &Excitation,
    states: &[f64],
    mod_depth: f64,
    field: f64,
    delta_d: f64,
) -> f64 {
    1.0 - excitation.total_dip(states, mod_depth, field, delta_d)
}

/// Interval of constant modulation state inside one integration window.
#[derive(Debug, Clone, PartialEq)]
struct Segment {
    window: usize,
    /// Fraction of the window.
    weight: f64,
    states: [f64; 2],
}

/// Splits one modulation period at window boundaries and modulation edges.
fn window_schedule(protocol: &AcquisitionProtocol, n_drives: usize) -> Vec<Segment> {
    // Drive k is in its "+" state while cos(2π u − π/4 − φ_k) ≥ 0, u = t/P.
    let state = |k: usize, u: f64| {
        if (TAU * u - FRAC_PI_4 - protocol.phase(k)).cos() >= 0.0 {
            1.0
        } else {
            -1.0
        }
    };
    let mut cuts: Vec<f64> = (0..=WINDOWS).map(|w| w as f64 / WINDOWS as f64).collect();
    for k in 0..n_drives {
        for edge in [-FRAC_PI_2, FRAC_PI_2] {
            let u = ((FRAC_PI_4 + protocol.phase(k) + edge) / TAU).rem_euclid(1.0);
            cuts.push(u);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut segments = Vec::new();
    for pair in cuts.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a < 1e-12 {
            continue;
        }
        let mid = 0.5 * (a + b);
        let window = ((mid * WINDOWS as f64).floor() as usize).min(WINDOWS - 1);
        let mut states = [0.0; 2];
        for (k, s) in states.iter_mut().enumerate().take(n_drives) {
            *s = state(k, mid);
        }
        segments.push(Segment {
            window,
            weight: (b - a) * WINDOWS as f64,
            states,
        });
    }
    segments
}

/// Expected dip per window for one cycle, time-weighted over its segments.
fn cycle_window_dips(
    excitation: &Excitation,
    schedule: &[Segment],
    mod_depth: f64,
    fields: &[f64; WINDOWS],
    delta_d: &[f64; WINDOWS],
) -> [f64; WINDOWS] {
    let n = excitation.drives.len();
    let mut dips = [0.0; WINDOWS];
    for seg in schedule {
        let w = seg.window;
        dips[w] += seg.weight * excitation.total_dip(&seg.states[..n], mod_depth, fields[w], delta_d[w]);
    }
    dips
}

/// Per-pixel planes from one camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LockInFrame {
    /// I⁺ − I⁻ accumulated counts, indexed `[row, column]`.
    pub i_plane: Array2<f64>,
    pub q_plane: Array2<f64>,
    pub frame_index: usize,
    /// Start of the frame, s.
    pub timestamp: f64,
}

/// Lazily generated, index-ordered frame sequence.
pub struct FrameStream<'a> {
    protocol: &'a AcquisitionProtocol,
    excitation: &'a Excitation,
    field: &'a dyn FieldMovie,
    delta_d: &'a dyn Waveform,
    schedule: Vec<Segment>,
    beam: Array2<f64>,
    next: usize,
    n_frames: usize,
}

/// Simulates `n_frames` camera frames of the lock-in protocol.
///
/// Fails up front if either movie ends before the acquisition does.
pub fn simulate_frames<'a>(
    protocol: &'a AcquisitionProtocol,
    excitation: &'a Excitation,
    field: &'a dyn FieldMovie,
    delta_d: &'a dyn Waveform,
    n_frames: usize,
) -> Result<FrameStream<'a>> {
    protocol.validate()?;
    excitation.validate()?;
    let required = n_frames as f64 * protocol.frame_duration();
    let available = field.end_time().min(delta_d.end_time());
    // last window midpoint sampled is 1/8 period before the end
    if available < required - 0.125 * protocol.cycle_period() - 1e-12 {
        return Err(Error::MovieTooShort {
            available,
            required,
        });
    }
    Ok(FrameStream {
        protocol,
        excitation,
        field,
        delta_d,
        schedule: window_schedule(protocol, excitation.drives.len()),
        beam: protocol.beam().weights(),
        next: 0,
        n_frames,
    })
}

impl FrameStream<'_> {
    fn window_times(&self, frame: usize, cycle: u32) -> [f64; WINDOWS] {
        let p = self.protocol.cycle_period();
        let t0 = frame as f64 * self.protocol.frame_duration() + cycle as f64 * p;
        std::array::from_fn(|w| t0 + (w as f64 + 0.5) * p / WINDOWS as f64)
    }

    /// Sum over the frame's cycles of the window-averaged dip, per pixel.
    fn dip_sums(&self, frame: usize) -> [Array2<f64>; WINDOWS] {
        let (h, w) = (self.protocol.height, self.protocol.width);
        let depth = self.protocol.mod_depth;
        let cycles: Vec<([f64; WINDOWS], [f64; WINDOWS])> = (0..self.protocol.n_cyc)
            .map(|c| {
                let times = self.window_times(frame, c);
                (times, times.map(|t| self.delta_d.value(t)))
            })
            .collect();

        if self.field.is_uniform() {
            let mut total = [0.0; WINDOWS];
            for (times, dd) in &cycles {
                let fields = times.map(|t| self.field.field(t, 0, 0));
                let dips = cycle_window_dips(self.excitation, &self.schedule, depth, &fields, dd);
                for k in 0..WINDOWS {
                    total[k] += dips[k];
                }
            }
            return total.map(|v| Array2::from_elem((h, w), v));
        }

        let mut planes: [Array2<f64>; WINDOWS] = std::array::from_fn(|_| Array2::zeros((h, w)));
        let rows: Vec<Vec<[f64; WINDOWS]>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| {
                        let mut total = [0.0; WINDOWS];
                        let mut memo: Option<([f64; WINDOWS], [f64; WINDOWS], [f64; WINDOWS])> = None;
                        for (times, dd) in &cycles {
                            let fields = times.map(|t| self.field.field(t, x, y));
                            let dips = match memo {
                                Some((f, d, v)) if f == fields && d == *dd => v,
                                _ => {
                                    let v = cycle_window_dips(
                                        self.excitation,
                                        &self.schedule,
                                        depth,
                                        &fields,
                                        dd,
                                    );
                                    memo = Some((fields, *dd, v));
                                    v
                                }
                            };
                            for k in 0..WINDOWS {
                                total[k] += dips[k];
                            }
                        }
                        total
                    })
                    .collect()
            })
            .collect();
        for (y, row) in rows.iter().enumerate() {
            for (x, sums) in row.iter().enumerate() {
                for k in 0..WINDOWS {
                    planes[k][[y, x]] = sums[k];
                }
            }
        }
        planes
    }

    fn render(&self, frame: usize) -> LockInFrame {
        let protocol = self.protocol;
        let window_time = protocol.cycle_period() / WINDOWS as f64;
        let cycles = protocol.n_cyc as f64;
        let dips = self.dip_sums(frame);
        let (h, w) = (protocol.height, protocol.width);
        let mut i_plane = Array2::zeros((h, w));
        let mut q_plane = Array2::zeros((h, w));

        let rows: Vec<(usize, Vec<(f64, f64)>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let row = (0..w)
                    .map(|x| {
                        let exposure = protocol.photon_rate * self.beam[[y, x]] * window_time;
                        let d: [f64; WINDOWS] = std::array::from_fn(|k| dips[k][[y, x]]);
                        if !protocol.shot_noise {
                            // (n − D⁺)E − (n − D⁻)E, kept in dip form for precision
                            return (exposure * (d[2] - d[0]), exposure * (d[3] - d[1]));
                        }
                        let mut rng = pixel_rng(protocol.seed, frame, y * w + x);
                        let counts: [f64; WINDOWS] = std::array::from_fn(|k| {
                            poisson(&mut rng, exposure * (cycles - d[k]))
                        });
                        (counts[0] - counts[2], counts[1] - counts[3])
                    })
                    .collect();
                (y, row)
            })
            .collect();
        for (y, row) in rows {
            for (x, (i, q)) in row.into_iter().enumerate() {
                i_plane[[y, x]] = i;
                q_plane[[y, x]] = q;
            }
        }
        LockInFrame {
            i_plane,
            q_plane,
            frame_index: frame,
            timestamp: frame as f64 * protocol.frame_duration(),
        }
    }
}

impl Iterator for FrameStream<'_> {
    type Item = LockInFrame;

    fn next(&mut self) -> Option<LockInFrame> {
        if self.next >= self.n_frames {
            return None;
        }
        let frame = self.render(self.next);
        self.next += 1;
        Some(frame)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.n_frames - self.next;
        (n, Some(n))
    }
}

impl ExactSizeIterator for FrameStream<'_> {}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream per (seed, frame, pixel): results do not depend on
/// how pixels are scheduled across threads.
fn pixel_rng(seed: u64, frame: usize, pixel: usize) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed) ^ splitmix((frame as u64) << 32 | 0x5EED) ^ pixel as u64);
    ChaCha8Rng::seed_from_u64(splitmix(key))
}

/// Derives a module-specific seed from a scenario seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(splitmix(seed), |acc, b| splitmix(acc ^ b as u64))
}

// The four windows of every cycle are independent Poisson counts, so the
// frame total of each window is Poisson with the summed mean.
fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean)
        .expect("finite positive mean")
        .sample(rng)
}

/// Expected (noiseless) I and Q of one frame at constant field and drift,
/// for a pixel receiving `photon_rate`.
pub fn expected_lockin(
    protocol: &AcquisitionProtocol,
    excitation: &Excitation,
    field: f64,
    delta_d: f64,
    photon_rate: f64,
) -> (f64, f64) {
    let schedule = window_schedule(protocol, excitation.drives.len());
    let dips = cycle_window_dips(
        excitation,
        &schedule,
        protocol.mod_depth,
        &[field; WINDOWS],
        &[delta_d; WINDOWS],
    );
    let exposure = photon_rate * protocol.n_cyc as f64 * protocol.cycle_period() / WINDOWS as f64;
    (exposure * (dips[2] - dips[0]), exposure * (dips[3] - dips[1]))
}

/// Expected per-frame variance of I from shot noise at a pixel.
pub fn expected_i_variance(
    protocol: &AcquisitionProtocol,
    excitation: &Excitation,
    field: f64,
    delta_d: f64,
    photon_rate: f64,
) -> f64 {
    let schedule = window_schedule(protocol, excitation.drives.len());
    let dips = cycle_window_dips(
        excitation,
        &schedule,
        protocol.mod_depth,
        &[field; WINDOWS],
        &[delta_d; WINDOWS],
    );
    let exposure = photon_rate * protocol.n_cyc as f64 * protocol.cycle_period() / WINDOWS as f64;
    exposure * ((1.0 - dips[0]) + (1.0 - dips[2]))
}

/// Phase relation between the two MW modulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseConfig {
    /// |φ1 − φ2| = π: common-mode shifts cancel, field adds.
    #[serde(rename = "field")]
    FieldMode,
    /// φ1 = φ2: field cancels, common-mode shifts add.
    #[serde(rename = "temperature")]
    TemperatureMode,
}

impl PhaseConfig {
    pub fn from_phases(phi1: f64, phi2: f64) -> Result<Self> {
        let d = (phi1 - phi2).rem_euclid(TAU);
        if (d - PI).abs() < 1e-9 {
            Ok(PhaseConfig::FieldMode)
        } else if d < 1e-9 || (TAU - d) < 1e-9 {
            Ok(PhaseConfig::TemperatureMode)
        } else {
            Err(Error::Validation(format!(
                "phase difference {d} rad is neither 0 nor π"
            )))
        }
    }
}

/// Lock-in slope α (counts per Hz of line shift, at the beam centre) with
/// the context needed to convert I back to physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    /// Number of driven transitions (1 = single resonance, 2 = double).
    pub transitions: u32,
    pub mode: PhaseConfig,
    pub gamma: f64,
    /// Peak photon rate the slope was measured at.
    pub photon_rate: f64,
    /// Peak-to-peak modulation depth of the calibrated protocol, Hz.
    pub mod_depth: f64,
    pub beam: BeamProfile,
}

impl Calibration {
    /// α at pixel (x, y), scaled by the local illumination.
    pub fn alpha_at(&self, x: usize, y: usize) -> f64 {
        self.alpha * self.beam.weight(x, y)
    }

    /// dI/dΔB (FieldMode) or dI/dΔD (TemperatureMode) at a pixel.
    pub fn gain_at(&self, x: usize, y: usize) -> f64 {
        let per_hz = self.transitions as f64 * self.alpha_at(x, y);
        match self.mode {
            PhaseConfig::FieldMode => per_hz * self.gamma,
            PhaseConfig::TemperatureMode => per_hz,
        }
    }
}

/// Two-sided step used for the numerical slope, tesla.
pub const CALIBRATION_STEP: f64 = 100e-9;

/// Differentiates the noiseless lock-in output at the operating point.
pub fn calibrate_slope(protocol: &AcquisitionProtocol, excitation: &Excitation) -> Result<Calibration> {
    calibrate_slope_with_step(protocol, excitation, CALIBRATION_STEP)
}

pub fn calibrate_slope_with_step(
    protocol: &AcquisitionProtocol,
    excitation: &Excitation,
    step: f64,
) -> Result<Calibration> {
    protocol.validate()?;
    excitation.validate()?;
    let transitions = excitation.drives.len() as u32;
    let mode = if transitions == 1 {
        PhaseConfig::FieldMode
    } else {
        PhaseConfig::from_phases(protocol.phi1, protocol.phi2)?
    };
    let gamma = excitation.gamma;
    let rate = protocol.photon_rate;
    let i_at = |b: f64, dd: f64| expected_lockin(protocol, excitation, b, dd, rate).0;
    let dhz = gamma * step;
    let (slope_per_hz, scale) = match mode {
        PhaseConfig::FieldMode => {
            let di_db = (i_at(step, 0.0) - i_at(-step, 0.0)) / (2.0 * step);
            (di_db / (transitions as f64 * gamma), di_db.abs() * step)
        }
        PhaseConfig::TemperatureMode => {
            let di_dd = (i_at(0.0, dhz) - i_at(0.0, -dhz)) / (2.0 * dhz);
            (di_dd / transitions as f64, di_dd.abs() * dhz)
        }
    };
    let exposure = rate * protocol.frame_duration();
    if !(scale > 1e-12 * exposure) {
        return Err(Error::Calibration(format!(
            "lock-in slope vanishes (|dI| = {scale:.3e} counts per step); drive off resonance?"
        )));
    }
    Ok(Calibration {
        alpha: slope_per_hz,
        transitions,
        mode,
        gamma,
        photon_rate: rate,
        mod_depth: protocol.mod_depth,
        beam: protocol.beam(),
    })
}

/// Collects a stream into frames, keeping only the I planes if asked.
pub fn collect_frames(stream: FrameStream<'_>) -> Vec<LockInFrame> {
    stream.collect()
}

/// Mean of the I plane along both axes, for quick diagnostics.
pub fn plane_mean(plane: &Array2<f64>) -> f64 {
    plane.mean_axis(Axis(0)).and_then(|m| m.mean()).unwrap_or(0.0)
}

/// Shorthand for a zero-drift waveform.
pub const NO_DRIFT: Constant = Constant(0.0);
