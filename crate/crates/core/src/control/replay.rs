use serde::{Deserialize, Serialize};

use super::{quantize_level, CurrentCommand, AMPS_PER_LEVEL};
use crate::error::{Error, Result};
use crate::metrics::Trajectory;
use crate::plant::PlantParams;
use crate::CONTROL_RATE_HZ;

/// Open-loop command stream for a repeated trajectory. Every pass emits the
/// same precomputed command sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStream {
    pass: Vec<CurrentCommand>,
    passes: u32,
    next: usize,
}

impl ReplayStream {
    /// Commands in one pass.
    pub fn pass_commands(&self) -> &[CurrentCommand] {
        &self.pass
    }

    pub fn passes(&self) -> u32 {
        self.passes
    }

    pub fn total_len(&self) -> usize {
        self.pass.len() * self.passes as usize
    }

    /// Index of the next command to be emitted.
    pub fn position(&self) -> usize {
        self.next
    }

    pub fn is_finished(&self) -> bool {
        self.next >= self.total_len()
    }
}

impl Iterator for ReplayStream {
    type Item = CurrentCommand;

    fn next(&mut self) -> Option<CurrentCommand> {
        if self.is_finished() {
            return None;
        }
        let c = self.pass[self.next % self.pass.len()];
        self.next += 1;
        Some(c)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.total_len() - self.next;
        (n, Some(n))
    }
}

impl ExactSizeIterator for ReplayStream {}

/// Command for a static spot position, inverting the nominal plant gain.
pub fn inverse_command(x_mm: f64, y_mm: f64, params: &PlantParams) -> CurrentCommand {
    let per_level = params.optics_scale * params.dc_gain_mm_per_a * AMPS_PER_LEVEL;
    CurrentCommand::from_levels(quantize_level(x_mm / per_level), quantize_level(y_mm / per_level))
}

/// Feedforward command stream that traverses `traj` once every `1/rate_hz`
/// seconds, `passes` times. The trajectory's time span is stretched onto one
/// pass and resampled on the control grid.
pub fn replay_trajectory(traj: &Trajectory, passes: u32, rate_hz: f64, params: &PlantParams) -> Result<ReplayStream> {
    params.validate()?;
    if traj.is_empty() {
        return Err(Error::Validation("replay trajectory is empty".into()));
    }
    if passes == 0 {
        return Err(Error::Validation("replay needs at least one pass".into()));
    }
    if !(rate_hz.is_finite() && rate_hz > 0.0 && rate_hz <= CONTROL_RATE_HZ) {
        return Err(Error::Config(format!(
            "replay rate must lie in (0, {CONTROL_RATE_HZ}] Hz, got {rate_hz}"
        )));
    }
    let limit = params.workspace_halfwidth_mm;
    for s in traj.samples() {
        if s.x_mm.abs() > limit || s.y_mm.abs() > limit {
            return Err(Error::Validation(format!(
                "waypoint ({:.4}, {:.4}) mm at t = {} s lies outside the ±{limit} mm workspace",
                s.x_mm, s.y_mm, s.t_s
            )));
        }
    }
    let n = (CONTROL_RATE_HZ / rate_hz).round().max(1.0) as usize;
    let t0 = traj.samples()[0].t_s;
    let span = traj.duration();
    let pass = (0..n)
        .map(|k| {
            let t = t0 + span * k as f64 / n as f64;
            let (x, y) = traj.position_at(t).expect("non-empty trajectory");
            inverse_command(x, y, params)
        })
        .collect();
    Ok(ReplayStream { pass, passes, next: 0 })
}
