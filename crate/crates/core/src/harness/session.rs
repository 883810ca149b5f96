use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::shapes::{ShapeId, TargetShape};
use super::teleop::{run_scheduled_session_until, CommandRecord, EndReason, PoseRecord, TelemetryRecord, TeleopConfig};
use crate::control::TabletPose;
use crate::error::{Error, Result};
use crate::metrics::{execution_time, point_distance, tracking_report, Densify, ErrorReport, ExecutionTime, Trajectory};

pub const SESSION_FORMAT: u32 = 1;

/// SHA-256 of the canonical JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

/// Pretty JSON with a trailing newline, the form every report is stored in.
pub fn to_json_file_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

/// Result of one experiment run as written to disk: what was run, with which
/// seed, and what came out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord<C, R> {
    pub experiment: String,
    pub config: C,
    pub config_hash: String,
    pub seed: u64,
    pub report: R,
}

impl<C: Serialize, R: Serialize> ExperimentRecord<C, R> {
    pub fn new(experiment: &str, config: C, seed: u64, report: R) -> Result<Self> {
        Ok(Self {
            experiment: experiment.to_string(),
            config_hash: config_hash(&config)?,
            config,
            seed,
            report,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_file_string(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub format: u32,
    pub shape: TargetShape,
    pub config: TeleopConfig,
    /// Hash over `shape` and `config`.
    pub config_hash: String,
    pub seed: u64,
    pub end_reason: EndReason,
    pub partial: bool,
    /// Control ticks run before the session closed.
    pub ticks: u64,
}

impl SessionMeta {
    pub fn new(shape: TargetShape, config: TeleopConfig, end_reason: EndReason, ticks: u64) -> Result<Self> {
        Ok(Self {
            format: SESSION_FORMAT,
            config_hash: config_hash(&(&shape, &config))?,
            seed: config.seed,
            partial: end_reason.is_partial(),
            shape,
            config,
            end_reason,
            ticks,
        })
    }

    pub fn verify(&self) -> Result<()> {
        if self.format != SESSION_FORMAT {
            return Err(Error::Validation(format!("unsupported session format {}", self.format)));
        }
        let h = config_hash(&(&self.shape, &self.config))?;
        if h != self.config_hash {
            return Err(Error::Validation(format!(
                "config hash mismatch: stored {}, computed {h}",
                self.config_hash
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub shape: ShapeId,
    pub end_reason: EndReason,
    pub partial: bool,
    pub frames: usize,
    pub gaps: usize,
    /// Scored span: from the spot's arrival at the start of the shape to the
    /// end of the recording.
    pub window_start_s: Option<f64>,
    pub window_end_s: Option<f64>,
    /// Distance to the centerline; absent when the spot never reached the
    /// start of the shape.
    pub tracking: Option<ErrorReport>,
    pub execution_time: Option<ExecutionTime>,
    pub inside_band_fraction: Option<f64>,
}

impl SessionReport {
    pub fn evaluate(shape: &TargetShape, config: &TeleopConfig, trajectory: &Trajectory, end_reason: EndReason) -> Result<Self> {
        let start = shape.polyline_mm[0];
        let arrival = trajectory
            .samples()
            .iter()
            .find(|s| point_distance(s.x_mm, s.y_mm, start[0], start[1]) <= config.arrival_radius_mm)
            .map(|s| s.t_s);
        let end = trajectory.samples().last().map(|s| s.t_s);
        let mut report = Self {
            shape: shape.id,
            partial: end_reason.is_partial(),
            end_reason,
            frames: trajectory.len() + trajectory.gaps().len(),
            gaps: trajectory.gaps().len(),
            window_start_s: arrival,
            window_end_s: end,
            tracking: None,
            execution_time: None,
            inside_band_fraction: None,
        };
        if let (Some(a), Some(e)) = (arrival, end) {
            let scored = trajectory.window(a, e);
            let tracking = tracking_report(&scored, &shape.centerline()?, Densify::default())?;
            let inside = tracking.errors_mm.iter().filter(|&&d| d <= shape.band_halfwidth_mm).count();
            report.inside_band_fraction = Some(inside as f64 / tracking.n_samples as f64);
            report.execution_time = Some(execution_time(&scored, config.motion_threshold_mm)?);
            report.tracking = Some(tracking);
        }
        Ok(report)
    }

    pub fn rmse_mm(&self) -> Option<f64> {
        self.tracking.as_ref().map(|t| t.rmse_mm)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "shape {}  end {:?}  frames {} ({} gaps)",
            self.shape, self.end_reason, self.frames, self.gaps
        );
        match (&self.tracking, &self.execution_time) {
            (Some(t), Some(e)) => {
                s += &format!(
                    "\n{}\nexecution time {:.2} s, {:.1}% inside band",
                    t.summary(),
                    e.seconds,
                    self.inside_band_fraction.unwrap_or(0.0) * 100.0
                );
            }
            _ => s += "\nspot never reached the start of the shape",
        }
        s
    }
}

/// Everything recorded during a teleoperation session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub meta: SessionMeta,
    pub poses: Vec<PoseRecord>,
    pub commands: Vec<CommandRecord>,
    pub telemetry: Vec<TelemetryRecord>,
    /// Camera detections, with gaps.
    pub trajectory: Trajectory,
    /// Saved frame files under `frames/`.
    pub frames: Vec<String>,
    pub report: SessionReport,
}

impl SessionLog {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("meta.json"), to_json_file_string(&self.meta)?)?;
        write_records(&dir.join("poses.csv"), &self.poses)?;
        write_records(&dir.join("commands.csv"), &self.commands)?;
        write_records(&dir.join("spots.csv"), &self.telemetry)?;
        self.trajectory.save(&dir.join("trajectory.csv"))?;
        fs::write(dir.join("report.json"), to_json_file_string(&self.report)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: SessionMeta = read_json(&dir.join("meta.json"))?;
        meta.verify()?;
        let frames_dir = dir.join("frames");
        let mut frames = Vec::new();
        if frames_dir.is_dir() {
            for e in fs::read_dir(&frames_dir)? {
                let name = e?.file_name().to_string_lossy().into_owned();
                if name.ends_with(".ppm") {
                    frames.push(name);
                }
            }
            frames.sort();
        }
        Ok(Self {
            poses: read_records(&dir.join("poses.csv"))?,
            commands: read_records(&dir.join("commands.csv"))?,
            telemetry: read_records(&dir.join("spots.csv"))?,
            trajectory: Trajectory::load(&dir.join("trajectory.csv"))?,
            report: read_json(&dir.join("report.json"))?,
            frames,
            meta,
        })
    }

    /// Score the recorded trajectory again.
    pub fn evaluate(&self) -> Result<SessionReport> {
        SessionReport::evaluate(&self.meta.shape, &self.meta.config, &self.trajectory, self.meta.end_reason.clone())
    }

    /// Run the simulation again from the configuration and logged poses.
    pub fn rerun(&self) -> Result<SessionLog> {
        let poses: Vec<(u64, TabletPose)> = self
            .poses
            .iter()
            .map(|p| {
                (
                    p.tick,
                    TabletPose {
                        x: p.x,
                        y: p.y,
                        t_s: p.client_t_s,
                    },
                )
            })
            .collect();
        let mut config = self.meta.config.clone();
        config.save_frames = false;
        run_scheduled_session_until(
            &self.meta.shape,
            &poses,
            &config,
            Some((self.meta.ticks, self.meta.end_reason.clone())),
            None,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCheck {
    pub stored: SessionReport,
    pub recomputed: SessionReport,
}

impl SessionCheck {
    pub fn matches(&self) -> bool {
        self.stored == self.recomputed
    }
}

/// Load a session directory and score it again.
pub fn evaluate_session_dir(dir: &Path) -> Result<SessionCheck> {
    let log = SessionLog::load(dir)?;
    Ok(SessionCheck {
        recomputed: log.evaluate()?,
        stored: log.report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_teleop_session, scripted_poses, ScriptedTrace};

    fn short_session() -> (TargetShape, SessionLog) {
        let shape = TargetShape::standard(ShapeId::T3).unwrap();
        let cfg = TeleopConfig::default();
        let script = ScriptedTrace {
            trace_s: 1.0,
            ..ScriptedTrace::default()
        };
        let poses = scripted_poses(&shape, &script, &cfg).unwrap();
        let log = run_teleop_session(&shape, &poses, &cfg, None).unwrap();
        (shape, log)
    }

    #[test]
    fn save_load_round_trip() {
        let (_, log) = short_session();
        let dir = tempfile::tempdir().unwrap();
        log.save(dir.path()).unwrap();
        let back = SessionLog::load(dir.path()).unwrap();
        assert_eq!(back.meta, log.meta);
        assert_eq!(back.poses, log.poses);
        assert_eq!(back.commands, log.commands);
        assert_eq!(back.telemetry, log.telemetry);
        assert_eq!(back.report, log.report);
        assert!(evaluate_session_dir(dir.path()).unwrap().matches());
    }

    #[test]
    fn rerun_reproduces_the_report() {
        let (_, log) = short_session();
        assert!(!log.meta.partial);
        let again = log.rerun().unwrap();
        assert_eq!(again.report, log.report);
        assert_eq!(again.commands, log.commands);
    }

    #[test]
    fn tampered_config_is_detected() {
        let (_, log) = short_session();
        let dir = tempfile::tempdir().unwrap();
        log.save(dir.path()).unwrap();
        let p = dir.path().join("meta.json");
        let text = fs::read_to_string(&p)
            .unwrap()
            .replacen("\"telemetry_hz\": 60.0", "\"telemetry_hz\": 61.0", 1);
        fs::write(&p, text).unwrap();
        assert!(matches!(SessionLog::load(dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn experiment_records_are_stable() {
        let a = ExperimentRecord::new("demo", (1, 2.5), 3, vec![0.1, 0.2]).unwrap();
        let b = ExperimentRecord::new("demo", (1, 2.5), 3, vec![0.1, 0.2]).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.config_hash.len(), 64);
    }
}
