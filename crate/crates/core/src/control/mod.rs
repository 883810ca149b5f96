//! Current commands and the tablet/scan/replay command sources.
//!
//! The driver exposes 4096 DAC levels per axis over `[-2047, 2048]`, mapped
//! linearly onto ±0.165 A. Everything that reaches the plant goes through
//! [`CurrentCommand`], so saturation is enforced in one place.

mod mode;
mod replay;
mod waveform;

pub use mode::{set_mode, ModeController, OperatingMode, PoseMailbox, ReplayPlan, RAMP_DOWN_S, REST_SPEED_MM_S};
pub use replay::{inverse_command, replay_trajectory, ReplayStream};
pub use waveform::{waveform_sample, ScanAxis, ScanWaveform};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coil driver current limit, A.
pub const MAX_CURRENT_A: f64 = 0.165;
pub const MIN_LEVEL: i32 = -2047;
pub const MAX_LEVEL: i32 = 2048;
/// Tablet-to-level scale of the aligned mapping matrix.
pub const DEFAULT_MAPPING_SCALE: f64 = 2047.0;
/// Current represented by one DAC level, A.
pub const AMPS_PER_LEVEL: f64 = MAX_CURRENT_A / 2047.0;

/// Round half away from zero and clamp into the DAC range.
pub fn quantize_level(ideal_level: f64) -> i32 {
    if ideal_level.is_nan() {
        return 0;
    }
    ideal_level.round().clamp(f64::from(MIN_LEVEL), f64::from(MAX_LEVEL)) as i32
}

/// DAC level closest to the analog current `amps`.
pub fn quantize_amps(amps: f64) -> i32 {
    quantize_level(amps / AMPS_PER_LEVEL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct Levels {
    pub x: i32,
    pub y: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CurrentCommand {
    pub level_x: i32,
    pub level_y: i32,
    pub amps_x: f64,
    pub amps_y: f64,
}

impl CurrentCommand {
    pub const ZERO: CurrentCommand = CurrentCommand {
        level_x: 0,
        level_y: 0,
        amps_x: 0.0,
        amps_y: 0.0,
    };

    /// Command from raw levels; levels outside the DAC range saturate.
    pub fn from_levels(level_x: i32, level_y: i32) -> Self {
        let lx = level_x.clamp(MIN_LEVEL, MAX_LEVEL);
        let ly = level_y.clamp(MIN_LEVEL, MAX_LEVEL);
        Self {
            level_x: lx,
            level_y: ly,
            amps_x: level_to_amps(lx),
            amps_y: level_to_amps(ly),
        }
    }

    /// Command closest to the requested analog currents.
    pub fn from_amps(amps_x: f64, amps_y: f64) -> Self {
        Self::from_levels(quantize_amps(amps_x), quantize_amps(amps_y))
    }

    pub fn levels(&self) -> Levels {
        Levels {
            x: self.level_x,
            y: self.level_y,
        }
    }

    pub fn amps(&self) -> [f64; 2] {
        [self.amps_x, self.amps_y]
    }
}

/// Analog current of a DAC level. The top level (+2048) lies one LSB past the
/// driver limit and saturates there.
pub fn level_to_amps(level: i32) -> f64 {
    (f64::from(level) * AMPS_PER_LEVEL).clamp(-MAX_CURRENT_A, MAX_CURRENT_A)
}

/// Absolute stylus position on the tablet, each axis in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabletPose {
    pub x: f64,
    pub y: f64,
    pub t_s: f64,
}

impl TabletPose {
    /// Pose with components clamped into `[-1, 1]`.
    pub fn new(x: f64, y: f64, t_s: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && t_s.is_finite()) {
            return Err(Error::Domain(format!("tablet pose must be finite, got ({x}, {y}) at {t_s}")));
        }
        Ok(Self {
            x: x.clamp(-1.0, 1.0),
            y: y.clamp(-1.0, 1.0),
            t_s,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingMatrix {
    pub c11: f64,
    pub c12: f64,
    pub c21: f64,
    pub c22: f64,
}

impl MappingMatrix {
    /// Diagonal matrix for aligned tablet, screen and scanner frames.
    pub fn aligned(c: f64) -> Self {
        Self {
            c11: c,
            c12: 0.0,
            c21: 0.0,
            c22: c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.c11, self.c12, self.c21, self.c22].iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("mapping matrix entries must be finite".into()))
        }
    }
}

impl Default for MappingMatrix {
    fn default() -> Self {
        Self::aligned(DEFAULT_MAPPING_SCALE)
    }
}

/// Tablet position to quantized coil currents through the mapping matrix.
pub fn map_tablet(pose: &TabletPose, m: &MappingMatrix) -> CurrentCommand {
    let (px, py) = (pose.x.clamp(-1.0, 1.0), pose.y.clamp(-1.0, 1.0));
    let lx = quantize_level(m.c11 * px + m.c12 * py);
    let ly = quantize_level(m.c21 * px + m.c22 * py);
    CurrentCommand::from_levels(lx, ly)
}

/// Bounds how fast the commanded level may move on each axis. Keeps jumps of
/// an absolute-position stylus from ringing the fiber past the soft clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct SlewLimiter {
    max_step: f64,
    level: [f64; 2],
}

impl SlewLimiter {
    pub fn new(max_levels_per_tick: f64) -> Result<Self> {
        if !(max_levels_per_tick > 0.0) {
            return Err(Error::Config(format!(
                "slew limit must be > 0 levels/tick, got {max_levels_per_tick}"
            )));
        }
        Ok(Self {
            max_step: max_levels_per_tick,
            level: [0.0; 2],
        })
    }

    pub fn apply(&mut self, target: CurrentCommand) -> CurrentCommand {
        let goal = [f64::from(target.level_x), f64::from(target.level_y)];
        for (l, g) in self.level.iter_mut().zip(goal) {
            *l += (g - *l).clamp(-self.max_step, self.max_step);
        }
        CurrentCommand::from_levels(quantize_level(self.level[0]), quantize_level(self.level[1]))
    }
}
