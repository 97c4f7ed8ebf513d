//! Ramsey (free-induction) and Hahn-echo decay models and their fits.

use std::f64::consts::{E, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, CurveModel, LmOptions};
use crate::odmr::HYPERFINE_SPLITTING;

const MAX_STRETCH: f64 = 3.0;
const MIN_STRETCH: f64 = 1e-3;

/// Fitted or synthesised coherence parameters. Times in seconds, beat
/// frequencies in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherenceModel {
    pub c0: f64,
    pub t2_star: f64,
    pub t2: f64,
    pub stretch_p: f64,
    pub hyperfine_freqs: Vec<f64>,
}

impl CoherenceModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0) {
            return Err(Error::Validation(format!("c0 must be positive, got {}", self.c0)));
        }
        if !(self.t2_star > 0.0 && self.t2 > 0.0) {
            return Err(Error::Validation("coherence times must be positive".into()));
        }
        if !(self.stretch_p > 0.0 && self.stretch_p <= MAX_STRETCH) {
            return Err(Error::Validation(format!(
                "stretch exponent must lie in (0, 3], got {}",
                self.stretch_p
            )));
        }
        Ok(())
    }
}

/// Hyperfine triplet `2π (detuning + i·hf)`, `i ∈ {-1, 0, 1}`, in rad/s.
pub fn hyperfine_triplet(detuning_hz: f64, hf_hz: f64) -> Vec<f64> {
    [-1.0, 0.0, 1.0]
        .iter()
        .map(|i| TAU * (detuning_hz + i * hf_hz))
        .collect()
}

pub fn ramsey_signal(model: &CoherenceModel, tau: f64) -> f64 {
    let beats: f64 = model.hyperfine_freqs.iter().map(|w| (w * tau).cos()).sum();
    model.c0 * (-tau / model.t2_star).exp() * beats
}

pub fn hahn_signal(model: &CoherenceModel, tau: f64) -> f64 {
    model.c0 * (-(2.0 * tau / model.t2).powf(model.stretch_p)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoherenceKind {
    Ramsey,
    Hahn,
}

/// Starting point for the Ramsey beat pattern.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Drive detuning, Hz. Refined only when non-zero (the beat pattern is
    /// even in the detuning, so its derivative vanishes at zero).
    pub detuning_hz: f64,
    pub hf_hz: f64,
    pub lm: LmOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            detuning_hz: 0.0,
            hf_hz: HYPERFINE_SPLITTING,
            lm: LmOptions::default(),
        }
    }
}

/// One-sigma parameter errors; entries not fitted for the kind are zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoherenceErrors {
    pub c0: f64,
    pub t2_star: f64,
    pub t2: f64,
    pub stretch_p: f64,
    pub hf: f64,
    pub detuning: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoherenceFit {
    pub kind: CoherenceKind,
    pub model: CoherenceModel,
    pub errors: CoherenceErrors,
    /// sqrt of the sum of squared residuals.
    pub residual_norm: f64,
    pub iterations: usize,
}

// Parameters: c0, T (scaled), splitting (rad per scaled time), [detuning].
struct RamseyCurve {
    fit_detuning: bool,
    detuning: f64,
}

impl RamseyCurve {
    fn beats(&self, p: &[f64]) -> [f64; 3] {
        let det = if self.fit_detuning { p[3] } else { self.detuning };
        [det - p[2], det, det + p[2]]
    }
}

impl CurveModel for RamseyCurve {
    fn n_params(&self) -> usize {
        if self.fit_detuning {
            4
        } else {
            3
        }
    }

    fn eval(&self, p: &[f64], x: f64, g: &mut [f64]) -> f64 {
        let env = (-x / p[1]).exp();
        let w = self.beats(p);
        let cos_sum: f64 = w.iter().map(|w| (w * x).cos()).sum();
        let s = [(w[0] * x).sin(), (w[1] * x).sin(), (w[2] * x).sin()];
        let f = p[0] * env * cos_sum;
        g[0] = env * cos_sum;
        g[1] = f * x / (p[1] * p[1]);
        g[2] = p[0] * env * x * (s[0] - s[2]);
        if self.fit_detuning {
            g[3] = -p[0] * env * x * (s[0] + s[1] + s[2]);
        }
        f
    }

    fn project(&self, p: &mut [f64]) {
        p[1] = p[1].max(1e-9);
    }
}

// Parameters: c0, T2 (scaled), p.
struct HahnCurve;

impl CurveModel for HahnCurve {
    fn n_params(&self) -> usize {
        3
    }

    fn eval(&self, p: &[f64], x: f64, g: &mut [f64]) -> f64 {
        let u = 2.0 * x / p[1];
        let up = if u > 0.0 { u.powf(p[2]) } else { 0.0 };
        let env = (-up).exp();
        let f = p[0] * env;
        g[0] = env;
        g[1] = f * p[2] * up / p[1];
        g[2] = if u > 0.0 { -f * up * u.ln() } else { 0.0 };
        f
    }

    fn project(&self, p: &mut [f64]) {
        p[1] = p[1].max(1e-9);
        p[2] = p[2].clamp(MIN_STRETCH, MAX_STRETCH);
    }
}

fn check_samples(samples: &[(f64, f64)]) -> Result<()> {
    if samples.len() < 8 {
        return Err(Error::Input(format!(
            "need at least 8 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|(t, v)| !t.is_finite() || !v.is_finite() || *t < 0.0) {
        return Err(Error::Input("samples must be finite with tau >= 0".into()));
    }
    let (lo, hi) = samples
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), (_, v)| (lo.min(*v), hi.max(*v)));
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()) {
        return Err(Error::RankDeficient(
            "samples are constant; decay parameters are unidentifiable".into(),
        ));
    }
    Ok(())
}

pub fn fit_coherence(samples: &[(f64, f64)], kind: CoherenceKind) -> Result<CoherenceFit> {
    fit_coherence_with(samples, kind, &FitOptions::default())
}

pub fn fit_coherence_with(
    samples: &[(f64, f64)],
    kind: CoherenceKind,
    options: &FitOptions,
) -> Result<CoherenceFit> {
    check_samples(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let scale = sorted.last().map(|s| s.0).unwrap_or(1.0);
    if !(scale > 0.0) {
        return Err(Error::Input("samples must span a positive delay range".into()));
    }
    let xs: Vec<f64> = sorted.iter().map(|s| s.0 / scale).collect();
    let ys: Vec<f64> = sorted.iter().map(|s| s.1).collect();

    let fit = match kind {
        CoherenceKind::Ramsey => fit_ramsey(&xs, &ys, scale, options)?,
        CoherenceKind::Hahn => fit_hahn(&xs, &ys, scale, options)?,
    };

    let decay = match kind {
        CoherenceKind::Ramsey => fit.model.t2_star,
        CoherenceKind::Hahn => fit.model.t2 / 2.0,
    };
    if scale < decay {
        return Err(Error::Input(format!(
            "samples span {scale:.3e} s, less than one decay constant ({decay:.3e} s)"
        )));
    }
    Ok(fit)
}

fn fit_ramsey(xs: &[f64], ys: &[f64], scale: f64, options: &FitOptions) -> Result<CoherenceFit> {
    let detuning = TAU * options.detuning_hz * scale;
    let split = TAU * options.hf_hz * scale;
    let curve = RamseyCurve {
        fit_detuning: options.detuning_hz != 0.0,
        detuning,
    };

    // Envelope start: log grid over T, c0 solved linearly for each.
    let c0_first = ys[0] / 3.0;
    let mut best = (f64::MAX, c0_first, 1.0);
    for i in 0..=120 {
        let t = 10f64.powf(-2.5 + 3.5 * i as f64 / 120.0);
        let basis: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let w = [detuning - split, detuning, detuning + split];
                (-x / t).exp() * w.iter().map(|w| (w * x).cos()).sum::<f64>()
            })
            .collect();
        let bb: f64 = basis.iter().map(|b| b * b).sum();
        if bb == 0.0 {
            continue;
        }
        let c0 = basis.iter().zip(ys).map(|(b, y)| b * y).sum::<f64>() / bb;
        let cost: f64 = basis.iter().zip(ys).map(|(b, y)| (c0 * b - y).powi(2)).sum();
        if cost < best.0 {
            best = (cost, c0, t);
        }
    }
    let mut p0 = vec![best.1, best.2, split];
    if curve.fit_detuning {
        p0.push(detuning);
    }
    let rep = levenberg_marquardt(&curve, xs, ys, &p0, options.lm).map_err(|e| unscale_error(e, scale))?;
    let p = &rep.params;
    let se = &rep.std_errors;
    let det = if curve.fit_detuning { p[3] } else { detuning };
    let model = CoherenceModel {
        c0: p[0],
        t2_star: p[1] * scale,
        t2: f64::INFINITY,
        stretch_p: 1.0,
        hyperfine_freqs: vec![(det - p[2]) / scale, det / scale, (det + p[2]) / scale],
    };
    Ok(CoherenceFit {
        kind: CoherenceKind::Ramsey,
        model,
        errors: CoherenceErrors {
            c0: se[0],
            t2_star: se[1] * scale,
            t2: 0.0,
            stretch_p: 0.0,
            hf: se[2] / (TAU * scale),
            detuning: if curve.fit_detuning { se[3] / (TAU * scale) } else { 0.0 },
        },
        residual_norm: rep.cost.sqrt(),
        iterations: rep.iterations,
    })
}

fn fit_hahn(xs: &[f64], ys: &[f64], scale: f64, options: &FitOptions) -> Result<CoherenceFit> {
    let c0 = ys[0];
    let target = c0 / E;
    // T2 from the first 1/e crossing (in 2τ), else extrapolated from the tail.
    let mut t2 = None;
    for w in xs.windows(2).zip(ys.windows(2)) {
        let ((x0, x1), (y0, y1)) = ((w.0[0], w.0[1]), (w.1[0], w.1[1]));
        if y0 >= target && y1 < target {
            let frac = if y0 != y1 { (y0 - target) / (y0 - y1) } else { 0.0 };
            t2 = Some(2.0 * (x0 + frac * (x1 - x0)));
            break;
        }
    }
    let t2 = t2.unwrap_or_else(|| {
        let (x, y) = (xs[xs.len() - 1], ys[ys.len() - 1]);
        let ratio = (c0 / y.max(1e-300)).ln();
        if ratio > 0.0 {
            2.0 * x / ratio
        } else {
            4.0 * x
        }
    });
    let rep = levenberg_marquardt(&HahnCurve, xs, ys, &[c0, t2, 1.0], options.lm)
        .map_err(|e| unscale_error(e, scale))?;
    let p = &rep.params;
    let se = &rep.std_errors;
    Ok(CoherenceFit {
        kind: CoherenceKind::Hahn,
        model: CoherenceModel {
            c0: p[0],
            t2_star: f64::INFINITY,
            t2: p[1] * scale,
            stretch_p: p[2],
            hyperfine_freqs: Vec::new(),
        },
        errors: CoherenceErrors {
            c0: se[0],
            t2_star: 0.0,
            t2: se[1] * scale,
            stretch_p: se[2],
            hf: 0.0,
            detuning: 0.0,
        },
        residual_norm: rep.cost.sqrt(),
        iterations: rep.iterations,
    })
}

fn unscale_error(e: Error, scale: f64) -> Error {
    match e {
        Error::NonConvergence {
            iterations,
            mut best,
            cost,
        } => {
            if best.len() > 1 {
                best[1] *= scale;
            }
            Error::NonConvergence {
                iterations,
                best,
                cost,
            }
        }
        other => other,
    }
}
