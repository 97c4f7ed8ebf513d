//! Double-resonance signal algebra and conversion of lock-in counts to
//! field or zero-field-splitting shifts.
//!
//! With the two transitions at `f1 = D − γB` and `f2 = D + γB`, the lock-in
//! responses are `S1 = α(ΔD − γΔB)` and `S2 = α(ΔD + γΔB)`. Driving them in
//! antiphase records `S2 − S1 = 2αγΔB`; in phase, `S1 + S2 = 2αΔD`.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lockin::{Calibration, LockInFrame};

pub use crate::lockin::PhaseConfig;

/// Lock-in outputs of the two transitions with their common slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrSignal {
    /// Counts at f1.
    pub s1: f64,
    /// Counts at f2.
    pub s2: f64,
    /// Counts per Hz of line shift.
    pub alpha: f64,
    pub phase_config: PhaseConfig,
}

impl DrSignal {
    pub fn new(s1: f64, s2: f64, alpha: f64, phase_config: PhaseConfig) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            s1,
            s2,
            alpha,
            phase_config,
        })
    }

    /// Responses produced by a field change `delta_b` (T) and splitting
    /// change `delta_d` (Hz).
    pub fn from_shifts(
        alpha: f64,
        gamma: f64,
        delta_b: f64,
        delta_d: f64,
        phase_config: PhaseConfig,
    ) -> Result<Self> {
        Self::new(
            alpha * (delta_d - gamma * delta_b),
            alpha * (delta_d + gamma * delta_b),
            alpha,
            phase_config,
        )
    }

    /// What a single lock-in sees when both sources share one modulation.
    pub fn lock_in(&self) -> f64 {
        match self.phase_config {
            PhaseConfig::FieldMode => self.s2 - self.s1,
            PhaseConfig::TemperatureMode => self.s1 + self.s2,
        }
    }

    /// Recovered ΔB (T) in field mode or ΔD (Hz) in temperature mode.
    pub fn recover(&self, gamma: f64) -> f64 {
        match self.phase_config {
            PhaseConfig::FieldMode => self.lock_in() / (2.0 * self.alpha * gamma),
            PhaseConfig::TemperatureMode => self.lock_in() / (2.0 * self.alpha),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha == 0.0 || !alpha.is_finite() {
        return Err(Error::Calibration(format!(
            "lock-in slope is {alpha}; calibrate before demodulating"
        )));
    }
    Ok(())
}

/// Per-pixel demodulated map.
#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    /// Tesla in field mode, Hz in temperature mode; indexed `[row, column]`.
    pub values: Array2<f64>,
    pub mode: PhaseConfig,
    /// Pixels whose implied line shift exceeds a quarter of the modulation
    /// depth, where the linear conversion is no longer accurate.
    pub large_signal_pixels: usize,
}

/// Converts one frame's I plane using the calibrated slope.
pub fn demodulate(frame: &LockInFrame, calibration: &Calibration) -> Result<Demodulated> {
    check_alpha(calibration.alpha)?;
    let (h, w) = frame.i_plane.dim();
    if (calibration.beam.height, calibration.beam.width) != (h, w) {
        return Err(Error::Input(format!(
            "calibration is for {}x{} pixels, frame is {w}x{h}",
            calibration.beam.width, calibration.beam.height
        )));
    }
    let mut values = Array2::zeros((h, w));
    Zip::indexed(&mut values)
        .and(&frame.i_plane)
        .par_for_each(|(y, x), out, &i| *out = i / calibration.gain_at(x, y));
    let limit = calibration.mod_depth / 4.0;
    let shift_hz = |v: f64| match calibration.mode {
        PhaseConfig::FieldMode => (v * calibration.gamma).abs(),
        PhaseConfig::TemperatureMode => v.abs(),
    };
    let large_signal_pixels = values.iter().filter(|v| shift_hz(**v) >= limit).count();
    Ok(Demodulated {
        values,
        mode: calibration.mode,
        large_signal_pixels,
    })
}

/// Demodulated time series of one pixel across frames.
pub fn pixel_series(
    frames: &[LockInFrame],
    calibration: &Calibration,
    x: usize,
    y: usize,
) -> Result<Vec<f64>> {
    check_alpha(calibration.alpha)?;
    let gain = calibration.gain_at(x, y);
    frames
        .iter()
        .map(|f| {
            f.i_plane
                .get((y, x))
                .map(|i| i / gain)
                .ok_or_else(|| Error::Input(format!("pixel ({x}, {y}) outside frame")))
        })
        .collect()
}

/// Minimum series length for a noise-floor comparison.
pub const MIN_GAIN_FRAMES: usize = 100;

/// Ratio of single- to double-resonance noise floors (sample standard
/// deviations of demodulated series in the same units).
pub fn dr_gain_estimate(sr_series: &[f64], dr_series: &[f64]) -> Result<f64> {
    if sr_series.len() != dr_series.len() {
        return Err(Error::Input(format!(
            "series lengths differ: {} single-resonance vs {} double-resonance",
            sr_series.len(),
            dr_series.len()
        )));
    }
    if sr_series.len() < MIN_GAIN_FRAMES {
        return Err(Error::Input(format!(
            "need at least {MIN_GAIN_FRAMES} samples, got {}",
            sr_series.len()
        )));
    }
    let dr = sample_std(dr_series);
    if !(dr > 0.0) {
        return Err(Error::Input("double-resonance series has no spread".into()));
    }
    Ok(sample_std(sr_series) / dr)
}

pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lockin::{
        calibrate_slope, expected_lockin, simulate_frames, AcquisitionProtocol, Excitation,
        DR_CONTRAST_SHARE, NO_DRIFT,
    };
    use crate::movie::{Constant, FieldMovie, StaticMap, Sum};
    use crate::nv::{resonance_pair, Alignment, NvConfiguration};
    use crate::odmr::{OdmrModel, Scheme, HYPERFINE_SPLITTING};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const GAMMA: f64 = 28e9;

    fn line() -> OdmrModel {
        OdmrModel::new(0.0, 1e6, 0.02, HYPERFINE_SPLITTING, Scheme::TripleTone).unwrap()
    }

    fn dr() -> Excitation {
        let pair = resonance_pair(&NvConfiguration::aligned(Alignment::Axis001, 3e-3), 0).unwrap();
        Excitation::double_resonance(pair, &line(), GAMMA, DR_CONTRAST_SHARE)
    }

    fn sr() -> Excitation {
        let pair = resonance_pair(&NvConfiguration::aligned(Alignment::Axis001, 3e-3), 0).unwrap();
        Excitation::single_resonance(pair, &line(), GAMMA)
    }

    fn protocol(phi2: f64, shot_noise: bool) -> AcquisitionProtocol {
        AcquisitionProtocol {
            width: 3,
            height: 3,
            phi2,
            beam_fwhm: None,
            shot_noise,
            seed: 5,
            ..AcquisitionProtocol::default()
        }
    }

    fn demod_once(p: &AcquisitionProtocol, ex: &Excitation, field: &dyn FieldMovie, dd: f64) -> Demodulated {
        let cal = calibrate_slope(p, ex).unwrap();
        let frame = simulate_frames(p, ex, field, &Constant(dd), 1).unwrap().next().unwrap();
        demodulate(&frame, &cal).unwrap()
    }

    #[test]
    fn algebra_round_trip() {
        for cfg in [PhaseConfig::FieldMode, PhaseConfig::TemperatureMode] {
            let s = DrSignal::from_shifts(3.5, GAMMA, 4e-6, 10e3, cfg).unwrap();
            let expected = match cfg {
                PhaseConfig::FieldMode => 4e-6,
                PhaseConfig::TemperatureMode => 10e3,
            };
            assert!((s.recover(GAMMA) / expected - 1.0).abs() < 1e-12);
        }
        let s = DrSignal::from_shifts(2.0, GAMMA, 1e-6, 0.0, PhaseConfig::FieldMode).unwrap();
        assert!((s.lock_in() - 2.0 * 2.0 * GAMMA * 1e-6).abs() < 1e-6);
        assert!(matches!(
            DrSignal::new(1.0, 1.0, 0.0, PhaseConfig::FieldMode),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn field_mode_round_trip() {
        let p = protocol(PI, false);
        let b = 100e-9;
        let out = demod_once(&p, &dr(), &Constant(b), 0.0);
        for v in out.values.iter() {
            assert!((v / b - 1.0).abs() < 1e-3, "{v}");
        }
        assert_eq!(out.large_signal_pixels, 0);
        assert_eq!(out.mode, PhaseConfig::FieldMode);
    }

    #[test]
    fn four_microtesla_follows_line_shape() {
        // the lock-in response is the finite-difference of the line shape,
        // which compresses at shifts comparable to the modulation depth
        let p = protocol(PI, false);
        let ex = dr();
        let b = 4e-6;
        let out = demod_once(&p, &ex, &Constant(b), 0.0);
        let cal = calibrate_slope(&p, &ex).unwrap();
        let (i, _) = expected_lockin(&p, &ex, b, 0.0, p.photon_rate);
        let oracle = i / (2.0 * cal.alpha * GAMMA);
        assert!((out.values[[1, 1]] / oracle - 1.0).abs() < 1e-12);
        assert!(out.values[[1, 1]] < b && out.values[[1, 1]] > 0.85 * b);
    }

    #[test]
    fn common_mode_shift_is_rejected_in_field_mode() {
        let p = protocol(PI, false);
        let out = demod_once(&p, &dr(), &Constant(0.0), 10e3);
        assert!(out.values.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn temperature_mode_recovers_splitting_shift() {
        let p = protocol(0.0, false);
        let out = demod_once(&p, &dr(), &Constant(0.0), 10e3);
        for v in out.values.iter() {
            assert!((v / 10e3 - 1.0).abs() < 1e-3, "{v}");
        }
        assert_eq!(out.mode, PhaseConfig::TemperatureMode);
        // field is rejected in phase
        let out = demod_once(&p, &dr(), &Constant(1e-6), 0.0);
        assert!(out.values.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn shot_noise_common_mode_stays_within_noise() {
        let p = protocol(PI, true);
        let ex = dr();
        let cal = calibrate_slope(&p, &ex).unwrap();
        let frames: Vec<_> = simulate_frames(&p, &ex, &Constant(0.0), &Constant(10e3), 200)
            .unwrap()
            .collect();
        let series = pixel_series(&frames, &cal, 1, 1).unwrap();
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let sigma = sample_std(&series);
        assert!(mean.abs() < 4.0 * sigma / (series.len() as f64).sqrt());
    }

    #[test]
    fn linear_in_small_fields() {
        let p = protocol(PI, false);
        let ex = dr();
        let a = StaticMap(Array2::from_shape_fn((3, 3), |(y, x)| (x as f64 - y as f64) * 0.05e-9));
        let b = StaticMap(Array2::from_shape_fn((3, 3), |(y, x)| 0.1e-9 + (x * y) as f64 * 0.03e-9));
        let sum = Sum(&a, &b);
        let da = demod_once(&p, &ex, &a, 0.0).values;
        let db = demod_once(&p, &ex, &b, 0.0).values;
        let dsum = demod_once(&p, &ex, &sum, 0.0).values;
        for ((s, x), y) in dsum.iter().zip(&da).zip(&db) {
            assert!((s - (x + y)).abs() <= 1e-9 * s.abs().max(1e-12), "{s} vs {}", x + y);
        }
    }

    #[test]
    fn reversing_polarity_negates_map() {
        let p = protocol(PI, false);
        let ex = dr();
        let map = Array2::from_shape_fn((3, 3), |(y, x)| (1 + x + 2 * y) as f64 * 0.4e-6);
        let pos = demod_once(&p, &ex, &StaticMap(map.clone()), 0.0).values;
        let neg = demod_once(&p, &ex, &StaticMap(-map), 0.0).values;
        assert_eq!(pos, -neg);
    }

    #[test]
    fn large_shifts_are_flagged() {
        let p = protocol(PI, false);
        // γ·3 µT = 84 kHz ≥ 75 kHz
        let out = demod_once(&p, &dr(), &Constant(3e-6), 0.0);
        assert_eq!(out.large_signal_pixels, 9);
    }

    #[test]
    fn missing_calibration() {
        let p = protocol(PI, false);
        let ex = dr();
        let mut cal = calibrate_slope(&p, &ex).unwrap();
        cal.alpha = 0.0;
        let frame = simulate_frames(&p, &ex, &Constant(0.0), &NO_DRIFT, 1).unwrap().next().unwrap();
        assert!(matches!(demodulate(&frame, &cal), Err(Error::Calibration(_))));
    }

    #[test]
    fn gain_estimate_contracts() {
        let xs: Vec<f64> = (0..150).map(|k| ((k * 37) % 11) as f64).collect();
        assert_eq!(dr_gain_estimate(&xs, &xs).unwrap(), 1.0);
        assert!(matches!(dr_gain_estimate(&xs, &xs[..149]), Err(Error::Input(_))));
        assert!(matches!(dr_gain_estimate(&xs[..50], &xs[..50]), Err(Error::Input(_))));
    }

    fn pooled(p: &AcquisitionProtocol, ex: &Excitation, frames: usize) -> Vec<f64> {
        let cal = calibrate_slope(p, ex).unwrap();
        simulate_frames(p, ex, &Constant(0.0), &NO_DRIFT, frames)
            .unwrap()
            .flat_map(|f| demodulate(&f, &cal).unwrap().values.into_iter().collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn double_resonance_beats_single_by_four_thirds() {
        let p = protocol(PI, true);
        let ratio = dr_gain_estimate(&pooled(&p, &sr(), 500), &pooled(&p, &dr(), 500)).unwrap();
        assert!((ratio / (4.0 / 3.0) - 1.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn dr_with_dead_transition_degenerates_to_sr() {
        let p = protocol(PI, true);
        let single = sr();
        let mut dead = Excitation::double_resonance(
            resonance_pair(&NvConfiguration::aligned(Alignment::Axis001, 3e-3), 0).unwrap(),
            &line(),
            GAMMA,
            1.0,
        );
        dead.drives[1].line.contrast = 1e-9;
        let ratio = dr_gain_estimate(&pooled(&p, &single, 300), &pooled(&p, &dead, 300)).unwrap();
        assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn drift_barely_moves_field_output(dd in -100e3f64..100e3, b in -50e-9f64..50e-9) {
            let p = protocol(PI, false);
            let ex = dr();
            let with = demod_once(&p, &ex, &Constant(b), dd).values[[0, 0]];
            let without = demod_once(&p, &ex, &Constant(b), 0.0).values[[0, 0]];
            prop_assert!((with - without).abs() < 0.01 * dd.abs() / GAMMA + 1e-18);
        }

        #[test]
        fn field_barely_moves_temperature_output(b in -3.5e-6f64..3.5e-6, dd in -1e3f64..1e3) {
            let p = protocol(0.0, false);
            let ex = dr();
            let with = demod_once(&p, &ex, &Constant(b), dd).values[[0, 0]];
            let without = demod_once(&p, &ex, &Constant(0.0), dd).values[[0, 0]];
            prop_assert!((with - without).abs() < 0.01 * GAMMA * b.abs() + 1e-9);
        }
    }
}
