use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rig::{CameraConfig, Observation, Rig};
use super::session::{SessionLog, SessionMeta, SessionReport};
use super::shapes::{resample_uniform, TargetShape};
use crate::control::{CurrentCommand, MappingMatrix, ModeController, OperatingMode, SlewLimiter, TabletPose, AMPS_PER_LEVEL};
use crate::error::{Error, Result};
use crate::metrics::{Trajectory, MOTION_THRESHOLD_MM};
use crate::plant::PlantParams;
use crate::{CONTROL_DT_S, CONTROL_RATE_HZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeleopConfig {
    pub params: PlantParams,
    pub mapping: MappingMatrix,
    pub camera: CameraConfig,
    /// Fastest commanded spot motion, mm/s.
    pub max_slew_mm_s: f64,
    /// Rate of spot telemetry sent to the client, Hz.
    pub telemetry_hz: f64,
    /// Recording continues this long after the last pose, s.
    pub tail_s: f64,
    /// A session with no pose for this long ends as partial, s.
    pub timeout_s: f64,
    /// Scoring starts once the spot comes this close to the start of the
    /// shape, mm.
    pub arrival_radius_mm: f64,
    pub motion_threshold_mm: f64,
    pub save_frames: bool,
    pub seed: u64,
}

impl Default for TeleopConfig {
    fn default() -> Self {
        Self {
            params: PlantParams::calibrated(),
            mapping: MappingMatrix::default(),
            camera: CameraConfig::video(),
            max_slew_mm_s: 20.0,
            telemetry_hz: 60.0,
            tail_s: 0.25,
            timeout_s: 5.0,
            arrival_radius_mm: 0.1,
            motion_threshold_mm: MOTION_THRESHOLD_MM,
            save_frames: false,
            seed: 1,
        }
    }
}

impl TeleopConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.mapping.validate()?;
        self.camera.ticks_per_frame()?;
        if !(self.telemetry_hz > 0.0 && self.telemetry_hz <= CONTROL_RATE_HZ) {
            return Err(Error::Config(format!("telemetry rate must lie in (0, {CONTROL_RATE_HZ}] Hz")));
        }
        if !(self.max_slew_mm_s > 0.0) {
            return Err(Error::Config("slew limit must be positive".into()));
        }
        if !(self.tail_s >= 0.0 && self.timeout_s > 0.0 && self.arrival_radius_mm > 0.0 && self.motion_threshold_mm > 0.0) {
            return Err(Error::Config("session timing and radii must be positive".into()));
        }
        Ok(())
    }

    /// Target-plane displacement of a unit tablet deflection, mm.
    pub fn mm_per_pose_unit(&self) -> f64 {
        self.mapping.c11 * self.mm_per_level()
    }

    fn mm_per_level(&self) -> f64 {
        AMPS_PER_LEVEL * self.params.dc_gain_mm_per_a * self.params.optics_scale
    }

    pub fn slew_levels_per_tick(&self) -> f64 {
        self.max_slew_mm_s / self.mm_per_level() / CONTROL_RATE_HZ
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Control tick at which the pose was ingested.
    pub tick: u64,
    pub t_s: f64,
    pub x: f64,
    pub y: f64,
    /// Client timestamp.
    pub client_t_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub tick: u64,
    pub t_s: f64,
    pub level_x: i32,
    pub level_y: i32,
    pub amps_x: f64,
    pub amps_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub tick: u64,
    pub t_s: f64,
    pub x_mm: f64,
    pub y_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Completed,
    Timeout,
    Disconnected,
    Aborted(String),
}

impl EndReason {
    pub fn is_partial(&self) -> bool {
        *self != EndReason::Completed
    }
}

/// Teleoperation pipeline for one session: mode controller in
/// teleoperation, plant, video camera, telemetry decimation and recording.
#[derive(Debug)]
pub struct TeleopEngine {
    config: TeleopConfig,
    shape: TargetShape,
    controller: ModeController,
    slew: SlewLimiter,
    rig: Rig,
    poses: Vec<PoseRecord>,
    commands: Vec<CommandRecord>,
    telemetry: Vec<TelemetryRecord>,
    trajectory: Trajectory,
    end_at_tick: Option<u64>,
    ended: Option<EndReason>,
}

impl TeleopEngine {
    /// `session_dir` is only used to store frames when enabled.
    pub fn new(shape: TargetShape, config: TeleopConfig, session_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let mut controller = ModeController::new(config.params.clone())?;
        controller.request(OperatingMode::Teleoperation(config.mapping), 0.0)?;
        let mut rig = Rig::new(config.params.clone(), config.camera.clone(), Observation::Camera, config.seed)?;
        if let (true, Some(dir)) = (config.save_frames, session_dir) {
            rig.save_frames_to(&dir.join("frames"))?;
        }
        Ok(Self {
            slew: SlewLimiter::new(config.slew_levels_per_tick())?,
            config,
            shape,
            controller,
            rig,
            poses: Vec::new(),
            commands: Vec::new(),
            telemetry: Vec::new(),
            trajectory: Trajectory::new(),
            end_at_tick: None,
            ended: None,
        })
    }

    pub fn shape(&self) -> &TargetShape {
        &self.shape
    }

    pub fn config(&self) -> &TeleopConfig {
        &self.config
    }

    pub fn tick_count(&self) -> u64 {
        self.rig.tick()
    }

    pub fn time_s(&self) -> f64 {
        self.rig.time_s()
    }

    pub fn ended(&self) -> Option<&EndReason> {
        self.ended.as_ref()
    }

    pub fn poses(&self) -> &[PoseRecord] {
        &self.poses
    }

    /// Record a pose and hand it to the control tick. Takes effect on the
    /// next call to [`TeleopEngine::tick`].
    pub fn ingest(&mut self, pose: TabletPose) -> Result<()> {
        if self.ended.is_some() {
            return Err(Error::Sequencing("session has ended".into()));
        }
        let pose = TabletPose::new(pose.x, pose.y, pose.t_s)?;
        self.poses.push(PoseRecord {
            tick: self.rig.tick(),
            t_s: self.rig.time_s(),
            x: pose.x,
            y: pose.y,
            client_t_s: pose.t_s,
        });
        self.controller.post_pose(pose);
        Ok(())
    }

    /// Ask the session to finish after the configured tail.
    pub fn request_end(&mut self) {
        let tail = (self.config.tail_s * CONTROL_RATE_HZ).round() as u64;
        let last = self.poses.last().map_or(0, |p| p.tick);
        self.end_at_tick.get_or_insert((last + tail).max(self.rig.tick()));
    }

    /// Finish at a given tick regardless of the tail.
    pub fn end_at(&mut self, tick: u64) {
        self.end_at_tick = Some(tick.max(self.rig.tick()));
    }

    /// End immediately, e.g. on disconnect or a fault.
    pub fn abort(&mut self, reason: EndReason) {
        self.ended.get_or_insert(reason);
    }

    /// Run one control tick. Returns a telemetry record when one is due.
    pub fn tick(&mut self) -> Result<Option<TelemetryRecord>> {
        if self.ended.is_some() {
            return Ok(None);
        }
        let last_input = self.poses.last().map_or(0, |p| p.tick);
        let timeout = (self.config.timeout_s * CONTROL_RATE_HZ).round() as u64;
        if self.end_at_tick.is_none() && self.rig.tick() > last_input + timeout {
            self.ended = Some(EndReason::Timeout);
            return Ok(None);
        }
        if self.end_at_tick.is_some_and(|t| self.rig.tick() >= t) {
            self.ended = Some(EndReason::Completed);
            return Ok(None);
        }
        let cmd = self.slew.apply(self.controller.tick());
        if self
            .commands
            .last()
            .is_none_or(|c| (c.level_x, c.level_y) != (cmd.level_x, cmd.level_y))
        {
            self.commands.push(command_record(self.rig.tick(), &cmd));
        }
        let observed = match self.rig.step(cmd.amps()) {
            Ok(o) => o,
            Err(e) => {
                self.ended = Some(EndReason::Aborted(e.to_string()));
                return Err(e);
            }
        };
        if let Some(obs) = observed {
            obs.append_to(&mut self.trajectory)?;
        }
        let k = self.rig.tick();
        let hz = self.config.telemetry_hz;
        let due = ((k as f64) * hz / CONTROL_RATE_HZ).floor() > (((k - 1) as f64) * hz / CONTROL_RATE_HZ).floor();
        if !due {
            return Ok(None);
        }
        let s = self.rig.plant().spot()?;
        let rec = TelemetryRecord {
            tick: k,
            t_s: self.rig.time_s(),
            x_mm: s.x_mm,
            y_mm: s.y_mm,
        };
        self.telemetry.push(rec);
        Ok(Some(rec))
    }

    /// Close the session and score it.
    pub fn finish(mut self) -> Result<SessionLog> {
        let reason = self.ended.take().unwrap_or(EndReason::Disconnected);
        let report = SessionReport::evaluate(&self.shape, &self.config, &self.trajectory, reason.clone())?;
        let meta = SessionMeta::new(self.shape.clone(), self.config.clone(), reason, self.rig.tick())?;
        Ok(SessionLog {
            meta,
            poses: self.poses,
            commands: self.commands,
            telemetry: self.telemetry,
            trajectory: self.trajectory,
            frames: self.rig.frame_refs().to_vec(),
            report,
        })
    }
}

fn command_record(tick: u64, c: &CurrentCommand) -> CommandRecord {
    CommandRecord {
        tick,
        t_s: tick as f64 * CONTROL_DT_S,
        level_x: c.level_x,
        level_y: c.level_y,
        amps_x: c.amps_x,
        amps_y: c.amps_y,
    }
}

/// Run a whole session offline, delivering each pose on the control tick
/// nearest its timestamp.
pub fn run_teleop_session(
    shape: &TargetShape,
    poses: &[TabletPose],
    config: &TeleopConfig,
    session_dir: Option<&Path>,
) -> Result<SessionLog> {
    let scheduled: Vec<(u64, TabletPose)> = poses
        .iter()
        .map(|p| ((p.t_s * CONTROL_RATE_HZ).round().max(0.0) as u64, *p))
        .collect();
    run_scheduled_session(shape, &scheduled, config, session_dir)
}

/// Like [`run_teleop_session`] with explicit ingest ticks.
pub fn run_scheduled_session(
    shape: &TargetShape,
    poses: &[(u64, TabletPose)],
    config: &TeleopConfig,
    session_dir: Option<&Path>,
) -> Result<SessionLog> {
    run_scheduled_session_until(shape, poses, config, None, session_dir)
}

/// Scheduled session that stops at a recorded tick with a recorded reason,
/// used to reproduce a logged session.
pub fn run_scheduled_session_until(
    shape: &TargetShape,
    poses: &[(u64, TabletPose)],
    config: &TeleopConfig,
    stop: Option<(u64, EndReason)>,
    session_dir: Option<&Path>,
) -> Result<SessionLog> {
    if poses.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Sequencing("scripted poses must be in time order".into()));
    }
    let mut engine = TeleopEngine::new(shape.clone(), config.clone(), session_dir)?;
    let mut next = 0;
    while engine.ended().is_none() {
        while next < poses.len() && poses[next].0 <= engine.tick_count() {
            engine.ingest(poses[next].1)?;
            next += 1;
        }
        if next == poses.len() {
            match &stop {
                None => engine.request_end(),
                Some((t, EndReason::Completed)) => engine.end_at(*t),
                Some(_) => {}
            }
        }
        if let Some((t, reason)) = &stop {
            if *reason != EndReason::Completed && engine.tick_count() >= *t {
                engine.abort(reason.clone());
                break;
            }
        }
        engine.tick()?;
    }
    engine.finish()
}

/// Parameters of a scripted operator that traces a shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTrace {
    /// Constant offset along the left-hand normal of the centerline, mm.
    pub offset_mm: f64,
    /// Cosine-eased approach from the origin to the start, s.
    pub lead_in_s: f64,
    pub dwell_s: f64,
    pub trace_s: f64,
    pub rate_hz: f64,
}

impl Default for ScriptedTrace {
    fn default() -> Self {
        Self {
            offset_mm: 0.0,
            lead_in_s: 0.5,
            dwell_s: 0.5,
            trace_s: 8.0,
            rate_hz: 100.0,
        }
    }
}

/// Pose stream of an operator following the (offset) centerline at
/// constant speed.
pub fn scripted_poses(shape: &TargetShape, script: &ScriptedTrace, config: &TeleopConfig) -> Result<Vec<TabletPose>> {
    if !(script.rate_hz > 0.0 && script.trace_s > 0.0 && script.lead_in_s >= 0.0 && script.dwell_s >= 0.0) {
        return Err(Error::Config("scripted trace needs positive rate and duration".into()));
    }
    let pts = &shape.polyline_mm;
    let n = pts.len();
    let path: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let (a, b) = (pts[i.saturating_sub(1)], pts[(i + 1).min(n - 1)]);
            let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
            let len = tx.hypot(ty);
            (pts[i][0] - script.offset_mm * ty / len, pts[i][1] + script.offset_mm * tx / len)
        })
        .collect();
    let scale = config.mm_per_pose_unit();
    let dt = 1.0 / script.rate_hz;
    let mut poses = Vec::new();
    let mut push = |t: f64, (x, y): (f64, f64)| TabletPose::new(x / scale, y / scale, t).map(|p| poses.push(p));
    let start = path[0];
    let lead = (script.lead_in_s * script.rate_hz).round() as usize;
    for k in 0..lead {
        let u = 0.5 - 0.5 * (PI * k as f64 / lead as f64).cos();
        push(k as f64 * dt, (u * start.0, u * start.1))?;
    }
    let dwell = (script.dwell_s * script.rate_hz).round() as usize;
    for k in 0..dwell {
        push((lead + k) as f64 * dt, start)?;
    }
    let steps = (script.trace_s * script.rate_hz).round().max(1.0) as usize;
    for (k, p) in resample_uniform(&path, steps + 1).into_iter().enumerate() {
        push((lead + dwell + k) as f64 * dt, p)?;
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ShapeId, TargetShape};
    use crate::metrics::point_distance;

    fn t3() -> TargetShape {
        TargetShape::standard(ShapeId::T3).unwrap()
    }

    #[test]
    fn pose_scale_matches_workspace_edge() {
        assert!((TeleopConfig::default().mm_per_pose_unit() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn telemetry_is_decimated_to_sixty_hertz() {
        let cfg = TeleopConfig::default();
        let mut e = TeleopEngine::new(t3(), cfg, None).unwrap();
        let mut n = 0;
        for k in 0..40_000 {
            if k % 4000 == 0 {
                e.ingest(TabletPose::new(0.0, 0.0, k as f64 / 4000.0).unwrap()).unwrap();
            }
            if e.tick().unwrap().is_some() {
                n += 1;
            }
        }
        assert!(e.ended().is_none());
        assert_eq!(n, 600);
    }

    #[test]
    fn pose_takes_effect_on_the_next_tick() {
        let mut e = TeleopEngine::new(t3(), TeleopConfig::default(), None).unwrap();
        e.tick().unwrap();
        e.ingest(TabletPose::new(0.5, 0.0, 0.0).unwrap()).unwrap();
        e.tick().unwrap();
        // First slew-limited step towards level 1024.
        let c = e.commands.last().unwrap();
        assert_eq!((c.tick, c.level_x), (1, 5));
    }

    #[test]
    fn full_deflection_settles_at_the_workspace_edge() {
        let mut e = TeleopEngine::new(t3(), TeleopConfig::default(), None).unwrap();
        e.ingest(TabletPose::new(1.0, 0.0, 0.0).unwrap()).unwrap();
        let mut peak = 0.0f64;
        for _ in 0..2000 {
            if let Some(t) = e.tick().unwrap() {
                peak = peak.max(t.x_mm);
            }
        }
        let s = e.rig.plant().spot().unwrap();
        assert!((s.x_mm - 2.0).abs() < 0.02 && s.y_mm.abs() < 1e-9, "{s:?}");
        assert!(peak < 2.1, "{peak}");
    }

    #[test]
    fn silence_times_out_as_partial() {
        let mut e = TeleopEngine::new(t3(), TeleopConfig::default(), None).unwrap();
        e.ingest(TabletPose::new(0.1, 0.1, 0.0).unwrap()).unwrap();
        for _ in 0..(5.0 * CONTROL_RATE_HZ) as usize + 2 {
            e.tick().unwrap();
        }
        assert_eq!(e.ended(), Some(&EndReason::Timeout));
        let log = e.finish().unwrap();
        assert!(log.meta.partial);
    }

    #[test]
    fn scripted_stream_shape() {
        let cfg = TeleopConfig::default();
        let p = scripted_poses(&t3(), &ScriptedTrace::default(), &cfg).unwrap();
        assert_eq!(p.len(), 50 + 50 + 801);
        assert_eq!((p[0].x, p[0].y), (0.0, 0.0));
        let last = p.last().unwrap();
        assert!((last.x * 2.0 - 1.5).abs() < 1e-9 && (last.y * 2.0 - 1.0).abs() < 1e-9);
        assert!(p.windows(2).all(|w| w[1].t_s > w[0].t_s));
    }

    #[test]
    fn offset_is_perpendicular() {
        let cfg = TeleopConfig::default();
        let script = ScriptedTrace {
            offset_mm: 0.039,
            ..ScriptedTrace::default()
        };
        let p = scripted_poses(&t3(), &script, &cfg).unwrap();
        let centre = t3().centerline().unwrap();
        for pose in &p[100..] {
            let (x, y) = (pose.x * 2.0, pose.y * 2.0);
            let d = centre
                .points()
                .map(|(cx, cy)| point_distance(x, y, cx, cy))
                .fold(f64::INFINITY, f64::min);
            assert!((d - 0.039).abs() < 0.005, "{d}");
        }
    }
}
