//! Shot-noise sensitivity limits, empirical per-pixel sensitivity from frame
//! series, volume normalisation and region statistics.

use std::f64::consts::SQRT_2;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::demod::PhaseConfig;
use crate::error::{Error, Result};
use crate::lockin::{expected_i_variance, AcquisitionProtocol, Calibration, Excitation, LockInFrame};
use crate::nv::GYROMAGNETIC_RATIO;

/// T/√Hz → nT/√Hz.
pub const NT_PER_T: f64 = 1e9;
/// T·m^1.5/√Hz → nT·µm^1.5/√Hz.
pub const NT_UM15_PER_T_M15: f64 = 1e18;

/// Cost of square-wave lock-in detection over the ideal CW bound for a
/// single Lorentzian driven at its steepest points: only the two in-phase
/// quarter windows carry signal, halving the effective photon budget.
pub const LOCKIN_PENALTY: f64 = SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotNoiseInputs {
    /// FWHM, Hz.
    pub linewidth: f64,
    pub contrast: f64,
    /// Detected photons per second.
    pub photon_rate: f64,
    /// h/(g_e µ_B), T·s.
    pub planck_over_gmu: f64,
}

impl ShotNoiseInputs {
    pub fn new(linewidth: f64, contrast: f64, photon_rate: f64) -> Result<Self> {
        let inputs = Self {
            linewidth,
            contrast,
            photon_rate,
            planck_over_gmu: 1.0 / GYROMAGNETIC_RATIO,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("linewidth", self.linewidth),
            ("contrast", self.contrast),
            ("photon_rate", self.photon_rate),
            ("planck_over_gmu", self.planck_over_gmu),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Shot-noise-limited CW sensitivity, T/√Hz.
pub fn eta_cw(inputs: &ShotNoiseInputs) -> f64 {
    4.0 / (3.0 * 3f64.sqrt()) * inputs.planck_over_gmu * inputs.linewidth
        / (inputs.contrast * inputs.photon_rate.sqrt())
}

/// Sensitivity from repeated measurements: `std · √frame_duration`.
pub fn eta_from_series(series: &[f64], frame_duration: f64) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 frames for a standard deviation, got {}",
            series.len()
        )));
    }
    if !(frame_duration > 0.0) {
        return Err(Error::Input(format!("frame duration must be positive, got {frame_duration}")));
    }
    Ok(std_dev(series) * frame_duration.sqrt())
}

/// Per-pixel η (T/√Hz, or Hz/√Hz in temperature mode) from a frame series.
pub fn eta_map(frames: &[LockInFrame], calibration: &Calibration, frame_duration: f64) -> Result<Array2<f64>> {
    if frames.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 frames for a standard deviation, got {}",
            frames.len()
        )));
    }
    if calibration.alpha == 0.0 {
        return Err(Error::Calibration("lock-in slope is zero".into()));
    }
    let dim = frames[0].i_plane.dim();
    if frames.iter().any(|f| f.i_plane.dim() != dim) {
        return Err(Error::Input("frames differ in size".into()));
    }
    let mut eta = Array2::zeros(dim);
    Zip::indexed(&mut eta).par_for_each(|(y, x), out| {
        let gain = calibration.gain_at(x, y);
        let series: Vec<f64> = frames.iter().map(|f| f.i_plane[[y, x]] / gain).collect();
        *out = std_dev(&series) * frame_duration.sqrt();
    });
    Ok(eta)
}

/// Circular region in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

impl Roi {
    /// Centred circle of radius 0.45·min(width, height).
    pub fn centered(width: usize, height: usize) -> Self {
        Self {
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            radius: 0.45 * width.min(height) as f64,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 - self.cx;
        let dy = y as f64 - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMap {
    /// T/√Hz.
    pub eta: Array2<f64>,
    /// T·m^1.5/√Hz.
    pub eta_v: Array2<f64>,
    pub roi: Roi,
    /// m³.
    pub pixel_volume: f64,
}

/// Attaches `η_V = η·√V` with `V = pitch²·thickness` and a default ROI.
pub fn volume_normalize(eta: Array2<f64>, pixel_pitch: f64, layer_thickness: f64) -> Result<SensitivityMap> {
    if !(pixel_pitch > 0.0 && layer_thickness > 0.0) {
        return Err(Error::Input(format!(
            "pixel pitch and layer thickness must be positive, got {pixel_pitch} and {layer_thickness}"
        )));
    }
    if let Some(bad) = eta.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Input(format!("sensitivity entries must be positive, found {bad}")));
    }
    let pixel_volume = pixel_pitch * pixel_pitch * layer_thickness;
    let root_v = pixel_volume.sqrt();
    let eta_v = eta.mapv(|e| e * root_v);
    let (h, w) = eta.dim();
    Ok(SensitivityMap {
        eta,
        eta_v,
        roi: Roi::centered(w, h),
        pixel_volume,
    })
}

/// Equal-width histogram over `[lo, lo + bin_width·counts.len()]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub const BINS: usize = 50;

    pub fn new(values: &[f64]) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Self {
                lo,
                bin_width: 0.0,
                counts: vec![values.len()],
            };
        }
        let bin_width = (hi - lo) / Self::BINS as f64;
        let mut counts = vec![0; Self::BINS];
        for v in values {
            let k = (((v - lo) / bin_width) as usize).min(Self::BINS - 1);
            counts[k] += 1;
        }
        Self { lo, bin_width, counts }
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lo + (bin as f64 + 0.5) * self.bin_width
    }

    /// Centre of the most populated bin.
    pub fn mode(&self) -> f64 {
        let (k, _) = self
            .counts
            .iter()
            .enumerate()
            .max_by_key(|(k, c)| (**c, std::cmp::Reverse(*k)))
            .expect("histogram has at least one bin");
        self.center(k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiStatistics {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub pixels: usize,
    pub histogram: Histogram,
}

impl RoiStatistics {
    pub fn mode(&self) -> f64 {
        self.histogram.mode()
    }
}

pub fn roi_statistics(map: &Array2<f64>, roi: &Roi) -> Result<RoiStatistics> {
    let values: Vec<f64> = map
        .indexed_iter()
        .filter(|((y, x), _)| roi.contains(*x, *y))
        .map(|(_, v)| *v)
        .collect();
    if values.is_empty() {
        return Err(Error::Input(format!("ROI {roi:?} contains no pixel centres")));
    }
    let n = values.len() as f64;
    let mean = pairwise_sum(&values) / n;
    let dev2: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let dev3: Vec<f64> = values.iter().map(|v| (v - mean).powi(3)).collect();
    let m2 = pairwise_sum(&dev2) / n;
    let m3 = pairwise_sum(&dev3) / n;
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    Ok(RoiStatistics {
        mean,
        std: m2.sqrt(),
        skewness,
        pixels: values.len(),
        histogram: Histogram::new(&values),
    })
}

/// Summation whose rounding error grows as log n and whose result does not
/// depend on how a caller chunks the work.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    (pairwise_sum(&dev) / (n - 1.0)).sqrt()
}

/// Expected shot-noise η at a pixel, from the noiseless count variance and
/// the calibrated gain.
pub fn predicted_eta(
    protocol: &AcquisitionProtocol,
    excitation: &Excitation,
    calibration: &Calibration,
    x: usize,
    y: usize,
) -> f64 {
    let rate = protocol.photon_rate * protocol.beam().weight(x, y);
    let sigma_i = expected_i_variance(protocol, excitation, 0.0, 0.0, rate).sqrt();
    sigma_i / calibration.gain_at(x, y) * protocol.frame_duration().sqrt()
}

/// Photon rate at the beam centre that brings the predicted ROI-mean η to
/// `target` (T/√Hz). η scales as R^{-1/2} at every pixel, so one evaluation
/// at the current rate suffices.
pub fn calibrate_photon_rate(
    protocol: &AcquisitionProtocol,
    excitation: &Excitation,
    roi: &Roi,
    target: f64,
) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::Input(format!("target sensitivity must be positive, got {target}")));
    }
    let cal = crate::lockin::calibrate_slope(protocol, excitation)?;
    if cal.mode != PhaseConfig::FieldMode {
        return Err(Error::Calibration("photon-rate calibration needs field mode".into()));
    }
    let etas: Vec<f64> = (0..protocol.height)
        .flat_map(|y| (0..protocol.width).map(move |x| (x, y)))
        .filter(|(x, y)| roi.contains(*x, *y))
        .map(|(x, y)| predicted_eta(protocol, excitation, &cal, x, y))
        .collect();
    if etas.is_empty() {
        return Err(Error::Input("ROI contains no pixels".into()));
    }
    let mean = pairwise_sum(&etas) / etas.len() as f64;
    Ok(protocol.photon_rate * (mean / target).powi(2))
}
