use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::quantize_level;
use super::{map_tablet, replay_trajectory, waveform_sample, CurrentCommand, MappingMatrix, ReplayStream, ScanWaveform, TabletPose};
use crate::error::{Error, Result};
use crate::metrics::Trajectory;
use crate::plant::PlantParams;
use crate::{CONTROL_DT_S, CONTROL_RATE_HZ};

/// Duration of the linear ramp to zero current on leaving a mode.
pub const RAMP_DOWN_S: f64 = 0.05;

/// Tip speed below which the plant counts as settled enough to start a
/// replay, mm/s.
pub const REST_SPEED_MM_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayPlan {
    pub trajectory: Trajectory,
    pub passes: u32,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OperatingMode {
    #[default]
    Idle,
    HighSpeedScan(ScanWaveform),
    TrajectoryReplay(ReplayPlan),
    Teleoperation(MappingMatrix),
}

impl OperatingMode {
    pub fn name(&self) -> &'static str {
        match self {
            OperatingMode::Idle => "idle",
            OperatingMode::HighSpeedScan(_) => "high_speed_scan",
            OperatingMode::TrajectoryReplay(_) => "trajectory_replay",
            OperatingMode::Teleoperation(_) => "teleoperation",
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self, OperatingMode::Idle)
    }

    fn validate(&self) -> Result<()> {
        match self {
            OperatingMode::Idle => Ok(()),
            OperatingMode::HighSpeedScan(w) => w.validate(),
            OperatingMode::Teleoperation(m) => m.validate(),
            OperatingMode::TrajectoryReplay(p) => {
                if p.passes == 0 || p.trajectory.is_empty() || !(p.rate_hz > 0.0) {
                    Err(Error::Validation("replay needs a trajectory, passes ≥ 1 and rate > 0".into()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Transition rule of the mode machine. Active modes are only left through
/// idle; asking for one active mode while another runs is a busy error.
pub fn set_mode(current: &OperatingMode, requested: OperatingMode) -> Result<OperatingMode> {
    requested.validate()?;
    match (current, &requested) {
        (_, OperatingMode::Idle) | (OperatingMode::Idle, _) => Ok(requested),
        (cur, req) => Err(Error::Busy(format!(
            "cannot switch from {} to {}; stop the active mode first",
            cur.name(),
            req.name()
        ))),
    }
}

/// Most-recent-wins slot for tablet poses. Older poses (by timestamp) never
/// replace newer ones.
#[derive(Debug, Default)]
pub struct PoseMailbox {
    slot: Mutex<Option<TabletPose>>,
}

impl PoseMailbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns `false` if the pose was older than the one already waiting.
    pub fn post(&self, pose: TabletPose) -> bool {
        let mut slot = self.slot.lock().unwrap_or_else(|e| e.into_inner());
        match *slot {
            Some(ref held) if held.t_s > pose.t_s => false,
            _ => {
                *slot = Some(pose);
                true
            }
        }
    }

    pub fn take(&self) -> Option<TabletPose> {
        self.slot.lock().unwrap_or_else(|e| e.into_inner()).take()
    }
}

#[derive(Debug, Clone)]
struct Ramp {
    from: [i32; 2],
    tick: usize,
}

/// The control tick's state: active mode, ramp-down, replay cursor and the
/// held teleoperation command.
#[derive(Debug)]
pub struct ModeController {
    params: PlantParams,
    mode: OperatingMode,
    mode_ticks: u64,
    last: CurrentCommand,
    ramp: Option<Ramp>,
    replay: Option<ReplayStream>,
    mailbox: PoseMailbox,
    last_pose_t: Option<f64>,
}

fn ramp_ticks() -> usize {
    (RAMP_DOWN_S * CONTROL_RATE_HZ).round() as usize
}

impl ModeController {
    pub fn new(params: PlantParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            mode: OperatingMode::Idle,
            mode_ticks: 0,
            last: CurrentCommand::ZERO,
            ramp: None,
            replay: None,
            mailbox: PoseMailbox::new(),
            last_pose_t: None,
        })
    }

    pub fn mode(&self) -> &OperatingMode {
        &self.mode
    }

    pub fn last_command(&self) -> CurrentCommand {
        self.last
    }

    pub fn is_ramping(&self) -> bool {
        self.ramp.is_some()
    }

    pub fn replay_in_progress(&self) -> bool {
        self.replay.as_ref().is_some_and(|r| !r.is_finished())
    }

    /// Replay progress as `(emitted, total)` commands.
    pub fn replay_progress(&self) -> Option<(usize, usize)> {
        self.replay.as_ref().map(|r| (r.position(), r.total_len()))
    }

    /// Request a mode change. `plant_speed_mm_s` is the current tip speed,
    /// checked before a replay may start.
    pub fn request(&mut self, requested: OperatingMode, plant_speed_mm_s: f64) -> Result<()> {
        if !requested.is_idle() && self.ramp.is_some() {
            return Err(Error::Busy("currents are still ramping down".into()));
        }
        let next = set_mode(&self.mode, requested)?;
        let replay = match &next {
            OperatingMode::TrajectoryReplay(plan) => {
                if !(plant_speed_mm_s.abs() < REST_SPEED_MM_S) {
                    return Err(Error::Busy(format!(
                        "plant still moving at {plant_speed_mm_s:.3} mm/s; replay needs < {REST_SPEED_MM_S} mm/s"
                    )));
                }
                Some(replay_trajectory(&plan.trajectory, plan.passes, plan.rate_hz, &self.params)?)
            }
            _ => None,
        };
        if next.is_idle() {
            if !self.mode.is_idle() {
                self.start_ramp();
            }
        } else {
            self.replay = replay;
            self.last_pose_t = None;
        }
        self.mode = next;
        self.mode_ticks = 0;
        Ok(())
    }

    fn start_ramp(&mut self) {
        let l = self.last.levels();
        self.ramp = (l.x != 0 || l.y != 0).then_some(Ramp { from: [l.x, l.y], tick: 0 });
        self.replay = None;
    }

    /// Deposit a tablet pose for the next tick.
    pub fn post_pose(&self, pose: TabletPose) -> bool {
        self.mailbox.post(pose)
    }

    /// Produce the command for the next control tick.
    pub fn tick(&mut self) -> CurrentCommand {
        let cmd = match &self.mode {
            OperatingMode::Idle => match self.ramp.as_mut() {
                Some(r) => {
                    r.tick += 1;
                    let n = ramp_ticks();
                    let u = 1.0 - r.tick as f64 / n as f64;
                    let c = CurrentCommand::from_levels(quantize_level(f64::from(r.from[0]) * u), quantize_level(f64::from(r.from[1]) * u));
                    if r.tick >= n {
                        self.ramp = None;
                    }
                    c
                }
                None => CurrentCommand::ZERO,
            },
            OperatingMode::HighSpeedScan(w) => waveform_sample(w, self.mode_ticks as f64 * CONTROL_DT_S),
            OperatingMode::TrajectoryReplay(_) => match self.replay.as_mut().and_then(|r| r.next()) {
                Some(c) => c,
                None => {
                    self.mode = OperatingMode::Idle;
                    self.start_ramp();
                    return self.tick();
                }
            },
            OperatingMode::Teleoperation(m) => {
                if let Some(pose) = self.mailbox.take() {
                    if self.last_pose_t.is_none_or(|t| pose.t_s >= t) {
                        self.last_pose_t = Some(pose.t_s);
                        map_tablet(&pose, m)
                    } else {
                        self.last
                    }
                } else {
                    // Stylus lifted or no new pose: hold.
                    self.last
                }
            }
        };
        self.mode_ticks += 1;
        self.last = cmd;
        cmd
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ScanAxis;

    fn scan() -> OperatingMode {
        OperatingMode::HighSpeedScan(ScanWaveform::new(368.0, 48.0, ScanAxis::X).unwrap())
    }

    fn replay() -> OperatingMode {
        OperatingMode::TrajectoryReplay(ReplayPlan {
            trajectory: Trajectory::from_points(&[(0.0, 0.0), (0.5, 0.5)], 0.5).unwrap(),
            passes: 2,
            rate_hz: 10.0,
        })
    }

    #[test]
    fn idle_accepts_any_mode() {
        let m = set_mode(&OperatingMode::Idle, OperatingMode::Teleoperation(MappingMatrix::default())).unwrap();
        assert_eq!(m.name(), "teleoperation");
    }

    #[test]
    fn active_to_active_is_busy() {
        assert!(matches!(set_mode(&scan(), replay()), Err(Error::Busy(_))));
        assert!(set_mode(&scan(), OperatingMode::Idle).unwrap().is_idle());
    }

    #[test]
    fn scan_then_replay_needs_stop_and_ramp() {
        let mut c = ModeController::new(PlantParams::default()).unwrap();
        c.request(scan(), 0.0).unwrap();
        for _ in 0..21 {
            c.tick();
        }
        assert_ne!(c.last_command(), CurrentCommand::ZERO);
        assert!(matches!(c.request(replay(), 0.0), Err(Error::Busy(_))));
        c.request(OperatingMode::Idle, 0.0).unwrap();
        assert!(matches!(c.request(replay(), 0.0), Err(Error::Busy(_))));
        let start = c.last_command().levels().x.abs();
        let mut prev = start;
        let mut ticks = 0;
        while c.is_ramping() {
            let l = c.tick().levels().x.abs();
            assert!(l <= prev);
            prev = l;
            ticks += 1;
        }
        assert_eq!(ticks, 200);
        assert_eq!(c.last_command(), CurrentCommand::ZERO);
        assert!(matches!(c.request(replay(), 50.0), Err(Error::Busy(_))));
        c.request(replay(), 0.0).unwrap();
        assert!(c.replay_in_progress());
    }

    #[test]
    fn replay_returns_to_idle_when_done() {
        let mut c = ModeController::new(PlantParams::default()).unwrap();
        c.request(replay(), 0.0).unwrap();
        assert_eq!(c.replay_progress(), Some((0, 800)));
        for _ in 0..800 {
            c.tick();
        }
        c.tick();
        assert!(c.mode().is_idle());
        for _ in 0..250 {
            c.tick();
        }
        assert_eq!(c.last_command(), CurrentCommand::ZERO);
    }

    #[test]
    fn teleop_holds_last_command() {
        let mut c = ModeController::new(PlantParams::default()).unwrap();
        c.request(OperatingMode::Teleoperation(MappingMatrix::default()), 0.0).unwrap();
        assert_eq!(c.tick(), CurrentCommand::ZERO);
        c.post_pose(TabletPose::new(0.5, -0.25, 0.1).unwrap());
        let held = c.tick();
        assert_eq!(held.levels().x, 1024);
        for _ in 0..100 {
            assert_eq!(c.tick(), held);
        }
    }

    #[test]
    fn mailbox_keeps_most_recent() {
        let mb = PoseMailbox::new();
        assert!(mb.post(TabletPose::new(0.1, 0.0, 1.0).unwrap()));
        assert!(mb.post(TabletPose::new(0.2, 0.0, 2.0).unwrap()));
        assert!(!mb.post(TabletPose::new(0.3, 0.0, 1.5).unwrap()));
        assert_eq!(mb.take().unwrap().x, 0.2);
        assert!(mb.take().is_none());
    }
}
