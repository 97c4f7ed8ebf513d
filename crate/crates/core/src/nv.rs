//! NV-centre geometry and the secular resonance model.
//!
//! The four NV symmetry axes of the diamond lattice are the ⟨111⟩ family in the
//! crystal frame, with ⟨001⟩ along z. Only the field component along an axis
//! enters the resonance frequencies:
//!
//! ```text
//! f1 = D - gamma * |B_NV|     (ms = 0 <-> ms = -1)
//! f2 = D + gamma * |B_NV|     (ms = 0 <-> ms = +1)
//! ```
//!
//! with `D = D0 + dD` the (temperature dependent) zero-field splitting and
//! `gamma` the gyromagnetic ratio in Hz/T.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zero-field splitting at room temperature, Hz.
pub const ZERO_FIELD_SPLITTING: f64 = 2.87e9;
/// NV electron gyromagnetic ratio, Hz/T.
pub const GYROMAGNETIC_RATIO: f64 = 28e9;

const UNIT_TOL: f64 = 1e-12;

/// Returns the four NV symmetry axes, normalised, in the crystal frame.
pub fn nv_axes() -> [Vector3<f64>; 4] {
    let s = 1.0 / 3f64.sqrt();
    [
        Vector3::new(s, s, s),
        Vector3::new(s, -s, -s),
        Vector3::new(-s, s, -s),
        Vector3::new(-s, -s, s),
    ]
}

/// Signed projection of `field` (tesla) onto a unit `axis`.
pub fn project_field(field: &Vector3<f64>, axis: &Vector3<f64>) -> Result<f64> {
    let norm = axis.norm();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::Contract(format!(
            "projection axis must be unit norm, got |axis| = {norm}"
        )));
    }
    Ok(field.dot(axis))
}

/// Direction of the bias field in the crystal frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Along z: equal projection on all four axes.
    #[serde(rename = "001")]
    Axis001,
    /// Along the first NV axis.
    #[serde(rename = "111")]
    Axis111,
}

impl Alignment {
    pub fn direction(self) -> Vector3<f64> {
        match self {
            Alignment::Axis001 => Vector3::z(),
            Alignment::Axis111 => nv_axes()[0],
        }
    }
}

/// Diamond and bias-field geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct NvConfiguration {
    d0: f64,
    gamma: f64,
    bias_field: Vector3<f64>,
    axes: [Vector3<f64>; 4],
}

impl NvConfiguration {
    pub fn new(d0: f64, gamma: f64, bias_field: Vector3<f64>) -> Result<Self> {
        Self::with_axes(d0, gamma, bias_field, nv_axes())
    }

    /// Builds a configuration with an explicit (possibly rotated) axis set.
    pub fn with_axes(
        d0: f64,
        gamma: f64,
        bias_field: Vector3<f64>,
        axes: [Vector3<f64>; 4],
    ) -> Result<Self> {
        if !(d0 > 0.0) {
            return Err(Error::Validation(format!("d0 must be positive, got {d0}")));
        }
        if !(gamma > 0.0) {
            return Err(Error::Validation(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        for (i, a) in axes.iter().enumerate() {
            if (a.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::Validation(format!("axis {i} is not unit norm")));
            }
            for (j, b) in axes.iter().enumerate().skip(i + 1) {
                if (a.dot(b) + 1.0 / 3.0).abs() > UNIT_TOL {
                    return Err(Error::Validation(format!(
                        "axes {i} and {j} are not tetrahedral (dot = {})",
                        a.dot(b)
                    )));
                }
            }
        }
        Ok(Self {
            d0,
            gamma,
            bias_field,
            axes,
        })
    }

    /// Fixture constants with a bias of `magnitude` tesla along `alignment`.
    pub fn aligned(alignment: Alignment, magnitude: f64) -> Self {
        Self::new(
            ZERO_FIELD_SPLITTING,
            GYROMAGNETIC_RATIO,
            alignment.direction() * magnitude,
        )
        .expect("default constants are valid")
    }

    pub fn d0(&self) -> f64 {
        self.d0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn bias_field(&self) -> &Vector3<f64> {
        &self.bias_field
    }

    pub fn axes(&self) -> &[Vector3<f64>; 4] {
        &self.axes
    }

    /// Signed bias projections on all four axes.
    pub fn projections(&self) -> [f64; 4] {
        self.axes.map(|a| self.bias_field.dot(&a))
    }

    /// Change of `|B_NV|` on `axis_index` caused by adding `extra` to the bias.
    ///
    /// This is the quantity that shifts the resonance pair; for a test field
    /// parallel to a ⟨001⟩ bias it is the same on all four axes.
    pub fn projected_change(&self, axis_index: usize, extra: &Vector3<f64>) -> Result<f64> {
        let axis = self.axis(axis_index)?;
        let before = self.bias_field.dot(axis).abs();
        let after = (self.bias_field + extra).dot(axis).abs();
        Ok(after - before)
    }

    fn axis(&self, axis_index: usize) -> Result<&Vector3<f64>> {
        self.axes.get(axis_index).ok_or_else(|| {
            Error::Input(format!("axis index {axis_index} out of range 0..4"))
        })
    }
}

/// The two ODMR transition frequencies of one NV orientation, Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonancePair {
    pub f1: f64,
    pub f2: f64,
}

impl ResonancePair {
    /// Resonances for splitting `d` and projected field magnitude `b_proj`.
    pub fn from_projection(d: f64, gamma: f64, b_proj: f64) -> Result<Self> {
        let shift = gamma * b_proj.abs();
        let f1 = d - shift;
        if f1 <= 0.0 {
            return Err(Error::OutOfModel(format!(
                "f1 = {f1:.6e} Hz is not positive; field {b_proj:.3e} T too large for the secular model"
            )));
        }
        Ok(Self { f1, f2: d + shift })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.f1 + self.f2)
    }

    pub fn splitting(&self) -> f64 {
        self.f2 - self.f1
    }
}

/// Resonance pair of one NV orientation under the configured bias.
pub fn resonance_pair(config: &NvConfiguration, axis_index: usize) -> Result<ResonancePair> {
    let axis = config.axis(axis_index)?;
    let b_proj = project_field(&config.bias_field, axis)?;
    ResonancePair::from_projection(config.d0, config.gamma, b_proj)
}

/// Resonance pairs of all four orientations, indexed by axis.
pub fn alignment_spectrum_positions(config: &NvConfiguration) -> Result<Vec<ResonancePair>> {
    (0..4).map(|i| resonance_pair(config, i)).collect()
}

/// Collapses degenerate pairs (within `tol` Hz) into distinct lines, with multiplicity.
pub fn distinct_pairs(pairs: &[ResonancePair], tol: f64) -> Vec<(ResonancePair, usize)> {
    let mut out: Vec<(ResonancePair, usize)> = Vec::new();
    for p in pairs {
        match out
            .iter_mut()
            .find(|(q, _)| (q.f1 - p.f1).abs() <= tol && (q.f2 - p.f2).abs() <= tol)
        {
            Some((_, n)) => *n += 1,
            None => out.push((*p, 1)),
        }
    }
    out
}
