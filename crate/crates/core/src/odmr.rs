//! Lorentzian ODMR line shapes with nitrogen hyperfine structure.
//!
//! A single MW tone at `omega` sees three hyperfine lines at `omega0 + p*HF`,
//! `p in {-1, 0, 1}`. Mixing the carrier with an RF tone at HF adds sidebands
//! at `omega + q*HF`, so every tone/line pair contributes one Lorentzian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ¹⁴N hyperfine splitting, Hz.
pub const HYPERFINE_SPLITTING: f64 = 2.16e6;

/// MW excitation of one transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    SingleTone,
    /// Carrier plus ±HF sidebands.
    TripleTone,
}

impl Scheme {
    fn tone_offsets(self) -> &'static [f64] {
        match self {
            Scheme::SingleTone => &[0.0],
            Scheme::TripleTone => &[-1.0, 0.0, 1.0],
        }
    }
}

/// Line shape of one ODMR transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdmrModel {
    /// Line centre (central hyperfine line), Hz.
    pub omega0: f64,
    /// Full width at half maximum of each hyperfine line, Hz.
    pub linewidth: f64,
    /// Dip depth of one fully resonant tone/line pair.
    pub contrast: f64,
    pub hf: f64,
    pub scheme: Scheme,
}

impl OdmrModel {
    pub fn new(omega0: f64, linewidth: f64, contrast: f64, hf: f64, scheme: Scheme) -> Result<Self> {
        let model = Self {
            omega0,
            linewidth,
            contrast,
            hf,
            scheme,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.linewidth > 0.0) {
            return Err(Error::Validation(format!(
                "linewidth must be positive, got {}",
                self.linewidth
            )));
        }
        if !(self.contrast > 0.0 && self.contrast < 1.0) {
            return Err(Error::Validation(format!(
                "contrast must lie in (0, 1), got {}",
                self.contrast
            )));
        }
        if !(self.hf > 0.0) {
            return Err(Error::Validation(format!(
                "hyperfine splitting must be positive, got {}",
                self.hf
            )));
        }
        Ok(())
    }

    /// Fractional fluorescence loss for a drive at `detuning` from `omega0`.
    pub fn dip_at_detuning(&self, detuning: f64) -> f64 {
        // even in the detuning; fold first so ±x agree bit for bit
        let detuning = detuning.abs();
        let w2 = self.linewidth * self.linewidth;
        let mut sum = 0.0;
        for &q in self.scheme.tone_offsets() {
            for p in [-1.0, 0.0, 1.0] {
                let d = detuning + (q - p) * self.hf;
                sum += w2 / (w2 + 4.0 * d * d);
            }
        }
        self.contrast * sum
    }

    pub fn dip(&self, omega: f64) -> f64 {
        self.dip_at_detuning(omega - self.omega0)
    }

    /// Same line mirrored about `center`, as seen by a drive swept in the
    /// opposite direction.
    pub fn mirrored_about(&self, center: f64) -> Self {
        Self {
            omega0: 2.0 * center - self.omega0,
            ..*self
        }
    }

    pub fn with_contrast(&self, contrast: f64) -> Self {
        Self { contrast, ..*self }
    }
}

/// Normalised fluorescence of one transition driven at `omega`.
pub fn spectrum(model: &OdmrModel, omega: f64) -> f64 {
    1.0 - model.dip(omega)
}

/// On-resonance dip of triple-tone over single-tone driving.
///
/// Equals 3 for resolved lines; blending of the sidebands with neighbouring
/// hyperfine lines lowers it to a minimum of about 2.70 near
/// `linewidth ≈ 2.1 * hf`, after which it climbs back toward 3.
pub fn contrast_enhancement(linewidth: f64, hf: f64) -> Result<f64> {
    if !(linewidth > 0.0) {
        return Err(Error::Input(format!(
            "linewidth must be positive, got {linewidth}"
        )));
    }
    let single = OdmrModel {
        omega0: 0.0,
        linewidth,
        contrast: 0.5,
        hf,
        scheme: Scheme::SingleTone,
    };
    let triple = OdmrModel {
        scheme: Scheme::TripleTone,
        ..single
    };
    Ok(triple.dip(0.0) / single.dip(0.0))
}

/// Location and value of the smallest achievable enhancement.
pub fn minimum_enhancement(hf: f64) -> (f64, f64) {
    let f = |x: f64| contrast_enhancement(x * hf, hf).expect("positive linewidth");
    // Unimodal on this bracket.
    let (mut a, mut b) = (0.5, 10.0);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    while b - a > 1e-10 {
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    let x = 0.5 * (a + b);
    (x * hf, f(x))
}

/// Linewidth on the resolved-line branch (below the minimum) at which the
/// enhancement equals `target`.
pub fn enhancement_linewidth(target: f64, hf: f64) -> Result<f64> {
    let (w_min, ratio_min) = minimum_enhancement(hf);
    if !(target > ratio_min && target < 3.0) {
        return Err(Error::OutOfModel(format!(
            "enhancement {target} is unreachable; the line-shape model spans ({ratio_min:.4}, 3) \
             with its minimum at linewidth {w_min:.4e} Hz"
        )));
    }
    let f = |w: f64| contrast_enhancement(w, hf).expect("positive linewidth") - target;
    let (mut lo, mut hi) = (1e-6 * hf, w_min);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fluorescence under double resonance, with an overlap flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrSample {
    pub fluorescence: f64,
    /// Line centres closer than one linewidth; the additive model is suspect.
    pub overlapping: bool,
}

/// Both transitions driven at once; dips add (valid for small contrast).
pub fn dr_spectrum(model_f1: &OdmrModel, model_f2: &OdmrModel, omega: f64) -> DrSample {
    let overlapping = (model_f1.omega0 - model_f2.omega0).abs()
        < model_f1.linewidth.max(model_f2.linewidth);
    DrSample {
        fluorescence: 1.0 - model_f1.dip(omega) - model_f2.dip(omega),
        overlapping,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(scheme: Scheme, linewidth: f64) -> OdmrModel {
        OdmrModel::new(2.87e9, linewidth, 0.01, HYPERFINE_SPLITTING, scheme).unwrap()
    }

    #[test]
    fn single_tone_on_resonance_value() {
        // Three Lorentzians at 0 and ±HF, evaluated by hand.
        let x = 2.16f64;
        let oracle = 1.0 - 0.01 * (1.0 + 2.0 / (1.0 + 4.0 * x * x));
        let m = model(Scheme::SingleTone, 1e6);
        assert!((spectrum(&m, 2.87e9) - oracle).abs() < 1e-15);
        assert!((spectrum(&m, 2.87e9) - (1.0 - 0.011017)).abs() < 1e-6);
    }

    #[test]
    fn far_detuned_limit_is_unity() {
        let m = model(Scheme::SingleTone, 1e6);
        assert!((spectrum(&m, 2.87e9 + 1e12) - 1.0).abs() < 1e-12);
        assert!((spectrum(&m, 2.87e9 - 1e12) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn triple_tone_narrow_lines_reach_three_times_contrast() {
        let m = model(Scheme::TripleTone, 1e3);
        assert!((spectrum(&m, 2.87e9) - (1.0 - 0.03)).abs() < 1e-7);
    }

    #[test]
    fn enhancement_limits_and_reference_value() {
        assert!((contrast_enhancement(1e-3, HYPERFINE_SPLITTING).unwrap() - 3.0).abs() < 1e-6);
        let x = 2.16f64;
        let oracle = (3.0 + 4.0 / (1.0 + 4.0 * x * x) + 2.0 / (1.0 + 16.0 * x * x))
            / (1.0 + 2.0 / (1.0 + 4.0 * x * x));
        let r = contrast_enhancement(1e6, HYPERFINE_SPLITTING).unwrap();
        assert!((r - oracle).abs() < 1e-12);
        assert!((r - 2.93).abs() < 0.005);
    }

    #[test]
    fn enhancement_has_a_floor_near_2_7() {
        let (w, r) = minimum_enhancement(HYPERFINE_SPLITTING);
        assert!((r - 2.699).abs() < 1e-3, "min ratio {r}");
        assert!((w / HYPERFINE_SPLITTING - 2.1).abs() < 0.2);
        // brute-force grid agrees
        let grid_min = (1..4000)
            .map(|i| contrast_enhancement(i as f64 * 5e3, HYPERFINE_SPLITTING).unwrap())
            .fold(f64::MAX, f64::min);
        assert!((grid_min - r).abs() < 1e-5);
    }

    #[test]
    fn enhancement_root_search() {
        let w = enhancement_linewidth(2.9, HYPERFINE_SPLITTING).unwrap();
        assert!((contrast_enhancement(w, HYPERFINE_SPLITTING).unwrap() - 2.9).abs() < 1e-9);
        let err = enhancement_linewidth(2.4, HYPERFINE_SPLITTING).unwrap_err();
        assert!(matches!(err, Error::OutOfModel(_)));
    }

    #[test]
    fn zero_linewidth_is_an_input_error() {
        assert!(contrast_enhancement(0.0, HYPERFINE_SPLITTING).is_err());
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(OdmrModel::new(2.87e9, 0.0, 0.01, 2.16e6, Scheme::SingleTone).is_err());
        assert!(OdmrModel::new(2.87e9, 1e6, 1.0, 2.16e6, Scheme::SingleTone).is_err());
        assert!(OdmrModel::new(2.87e9, 1e6, 0.01, 0.0, Scheme::SingleTone).is_err());
    }

    #[test]
    fn coincident_dr_lines_double_the_dip() {
        let m = model(Scheme::TripleTone, 1e6);
        let dr = dr_spectrum(&m, &m, m.omega0);
        assert!(dr.overlapping);
        let single_dip = 1.0 - spectrum(&m, m.omega0);
        assert!(((1.0 - dr.fluorescence) - 2.0 * single_dip).abs() < 1e-15);
    }

    #[test]
    fn separated_dr_lines_reduce_to_one_transition() {
        let m1 = OdmrModel::new(2.82e9, 1e6, 0.02, 2.16e6, Scheme::TripleTone).unwrap();
        let m2 = OdmrModel { omega0: 3.2e9, ..m1 };
        let dr = dr_spectrum(&m1, &m2, m1.omega0);
        assert!(!dr.overlapping);
        assert!((dr.fluorescence - spectrum(&m1, m1.omega0)).abs() < 1e-6);
    }

    #[test]
    fn dr_hf_is_deeper_than_sr_hf() {
        let d0 = 2.87e9;
        let m1 = OdmrModel::new(2.82e9, 1e6, 0.02, 2.16e6, Scheme::TripleTone).unwrap();
        let m2 = OdmrModel { omega0: 2.92e9, ..m1 };
        // MW2 sweeps mirrored about d0, so both transitions share the drive axis
        let dr = dr_spectrum(&m1, &m2.mirrored_about(d0), m1.omega0);
        assert!(1.0 - dr.fluorescence > 1.0 - spectrum(&m1, m1.omega0));
    }

    #[test]
    fn triple_never_exceeds_three_times_single() {
        for i in 1..400 {
            let w = i as f64 * 25e3;
            let r = contrast_enhancement(w, HYPERFINE_SPLITTING).unwrap();
            assert!(r <= 3.0 + 1e-12);
        }
    }

    #[test]
    fn enhancement_decreases_on_resolved_branch() {
        // monotone from resolved lines down to the blending minimum
        let (w_min, _) = minimum_enhancement(HYPERFINE_SPLITTING);
        let mut prev = f64::MAX;
        let n = 500;
        for i in 1..=n {
            let w = w_min * i as f64 / n as f64;
            let r = contrast_enhancement(w, HYPERFINE_SPLITTING).unwrap();
            assert!(r < prev);
            prev = r;
        }
    }

    proptest! {
        #[test]
        fn prop_spectrum_bounded_symmetric_and_minimal_at_center(
            w in 1e4f64..1e7, c in 1e-3f64..0.05, x in 0.0f64..2e7,
            triple in any::<bool>(),
        ) {
            let scheme = if triple { Scheme::TripleTone } else { Scheme::SingleTone };
            let m = OdmrModel::new(2.87e9, w, c, HYPERFINE_SPLITTING, scheme).unwrap();
            let plus = spectrum(&m, m.omega0 + x);
            let minus = spectrum(&m, m.omega0 - x);
            prop_assert!(plus <= 1.0);
            prop_assert!((plus - minus).abs() < 1e-12);
            prop_assert!(spectrum(&m, m.omega0) <= plus + 1e-15);
        }
    }
}
