//! Lock-in wide-field NV-diamond magnetometry: spin physics, ODMR spectra,
//! camera acquisition with shot noise, double-resonance demodulation,
//! sensitivity analysis and LR-coil transient reconstruction.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coherence;
pub mod demod;
pub mod error;
pub mod fit;
pub mod io;
pub mod lockin;
pub mod movie;
pub mod nv;
pub mod odmr;
pub mod scenario;
pub mod sensitivity;
pub mod transient;

pub use error::{Error, Result};
