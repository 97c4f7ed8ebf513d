//! Time-dependent inputs to the frame simulator.
//!
//! A [`FieldMovie`] gives the change of the projected field `ΔB_NV` (tesla)
//! per pixel; a [`Waveform`] gives a spatially uniform scalar such as the
//! zero-field-splitting drift `ΔD` (Hz).

use ndarray::Array2;

pub trait Waveform: Sync {
    fn value(&self, t: f64) -> f64;
    /// Last time at which the waveform is defined.
    fn end_time(&self) -> f64 {
        f64::INFINITY
    }
}

pub trait FieldMovie: Sync {
    /// Projected field change at time `t` for pixel column `x`, row `y`.
    fn field(&self, t: f64, x: usize, y: usize) -> f64;
    fn end_time(&self) -> f64 {
        f64::INFINITY
    }
    /// True when every pixel sees the same field at all times.
    fn is_uniform(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constant(pub f64);

impl Waveform for Constant {
    fn value(&self, _t: f64) -> f64 {
        self.0
    }
}

impl FieldMovie for Constant {
    fn field(&self, _t: f64, _x: usize, _y: usize) -> f64 {
        self.0
    }
    fn is_uniform(&self) -> bool {
        true
    }
}

/// Uniformly sampled waveform, linearly interpolated between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<f64>,
}

impl Sampled {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>) -> Self {
        assert!(dt > 0.0, "sample spacing must be positive");
        assert!(!values.is_empty(), "waveform needs at least one sample");
        Self { t0, dt, values }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|i| self.t0 + i as f64 * self.dt)
    }
}

impl Waveform for Sampled {
    fn value(&self, t: f64) -> f64 {
        let last = self.values.len() - 1;
        let u = (t - self.t0) / self.dt;
        if u <= 0.0 {
            return self.values[0];
        }
        let i = u.floor() as usize;
        if i >= last {
            return self.values[last];
        }
        let frac = u - i as f64;
        self.values[i] + frac * (self.values[i + 1] - self.values[i])
    }

    fn end_time(&self) -> f64 {
        self.t0 + (self.values.len() - 1) as f64 * self.dt
    }
}

/// Same waveform on every pixel.
#[derive(Debug, Clone)]
pub struct Uniform<W>(pub W);

impl<W: Waveform> FieldMovie for Uniform<W> {
    fn field(&self, t: f64, _x: usize, _y: usize) -> f64 {
        self.0.value(t)
    }
    fn end_time(&self) -> f64 {
        self.0.end_time()
    }
    fn is_uniform(&self) -> bool {
        true
    }
}

/// Time-independent field map, indexed `[row, column]`.
#[derive(Debug, Clone)]
pub struct StaticMap(pub Array2<f64>);

impl FieldMovie for StaticMap {
    fn field(&self, _t: f64, x: usize, y: usize) -> f64 {
        self.0[[y, x]]
    }
}

/// Pointwise sum of two movies.
pub struct Sum<'a>(pub &'a dyn FieldMovie, pub &'a dyn FieldMovie);

impl FieldMovie for Sum<'_> {
    fn field(&self, t: f64, x: usize, y: usize) -> f64 {
        self.0.field(t, x, y) + self.1.field(t, x, y)
    }
    fn end_time(&self) -> f64 {
        self.0.end_time().min(self.1.end_time())
    }
    fn is_uniform(&self) -> bool {
        self.0.is_uniform() && self.1.is_uniform()
    }
}

/// A movie multiplied by a constant.
pub struct Scaled<'a>(pub f64, pub &'a dyn FieldMovie);

impl FieldMovie for Scaled<'_> {
    fn field(&self, t: f64, x: usize, y: usize) -> f64 {
        self.0 * self.1.field(t, x, y)
    }
    fn end_time(&self) -> f64 {
        self.1.end_time()
    }
    fn is_uniform(&self) -> bool {
        self.1.is_uniform()
    }
}
