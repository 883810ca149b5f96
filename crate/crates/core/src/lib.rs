//! Desk-scale digital twin of a magnetically actuated fiber laser scanner.
//!
//! The crate is organized along the signal path of the device:
//!
//! * [`magnetics`]: coil fields and dipole force/torque primitives.
//! * [`plant`]: per-axis second-order fiber dynamics and the projection onto
//!   the target plane.
//! * [`control`]: DAC quantization, tablet mapping, scan waveforms, trajectory
//!   replay and the operating-mode machine.
//! * [`vision`]: synthetic camera frames and red-channel spot detection.
//! * [`metrics`]: trajectories and the closest-distance error metrics.
//! * [`harness`]: the characterization experiments, teleoperation sessions
//!   and session persistence.

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod harness;
pub mod magnetics;
pub mod metrics;
pub mod plant;
pub mod vision;

pub use error::{Error, Result};

/// Control tick rate of the current driver, in Hz.
pub const CONTROL_RATE_HZ: f64 = 4000.0;

/// Control tick period, in seconds.
pub const CONTROL_DT_S: f64 = 1.0 / CONTROL_RATE_HZ;
