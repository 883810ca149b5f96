use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Trajectory, TrajectorySample};
use crate::plant::{Plant, PlantParams};
use crate::vision::{detect_spot, render_frame, DetectionConfig, FrameGeometry};
use crate::{CONTROL_DT_S, CONTROL_RATE_HZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraConfig {
    pub geometry: FrameGeometry,
    pub detection: DetectionConfig,
    pub fps: f64,
}

impl CameraConfig {
    /// High-speed camera used for characterization runs.
    pub fn high_speed() -> Self {
        Self {
            geometry: FrameGeometry::default(),
            detection: DetectionConfig::default(),
            fps: 1000.0,
        }
    }

    /// Video-rate camera used during teleoperation.
    pub fn video() -> Self {
        Self {
            fps: 25.0,
            ..Self::high_speed()
        }
    }

    /// Control ticks between frames; the frame rate must divide the control
    /// rate.
    pub fn ticks_per_frame(&self) -> Result<u64> {
        let r = CONTROL_RATE_HZ / self.fps;
        if !(r.is_finite() && r >= 1.0 && (r - r.round()).abs() < 1e-9) {
            return Err(Error::Config(format!(
                "camera rate {} fps must divide the {CONTROL_RATE_HZ} Hz control rate",
                self.fps
            )));
        }
        Ok(r.round() as u64)
    }
}

/// Where spot positions come from: the simulated camera, or the plant
/// state itself (used for calibration and as a reference).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    #[default]
    Camera,
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observed {
    Spot(TrajectorySample),
    Missing(f64),
}

impl Observed {
    pub fn t_s(&self) -> f64 {
        match self {
            Observed::Spot(s) => s.t_s,
            Observed::Missing(t) => *t,
        }
    }

    pub fn append_to(&self, traj: &mut Trajectory) -> Result<()> {
        match *self {
            Observed::Spot(s) => traj.push(s),
            Observed::Missing(t) => traj.push_gap(t),
        }
    }
}

/// Plant plus camera, advanced one control tick at a time.
#[derive(Debug, Clone)]
pub struct Rig {
    plant: Plant,
    camera: CameraConfig,
    ticks_per_frame: u64,
    observation: Observation,
    seed: u64,
    tick: u64,
    frames_taken: u64,
    frame_dir: Option<PathBuf>,
    frame_refs: Vec<String>,
}

impl Rig {
    pub fn new(params: PlantParams, camera: CameraConfig, observation: Observation, seed: u64) -> Result<Self> {
        let ticks_per_frame = camera.ticks_per_frame()?;
        camera.geometry.validate()?;
        camera.detection.validate()?;
        Ok(Self {
            plant: Plant::new(params)?,
            camera,
            ticks_per_frame,
            observation,
            seed,
            tick: 0,
            frames_taken: 0,
            frame_dir: None,
            frame_refs: Vec::new(),
        })
    }

    /// Save every rendered frame as a PPM fixture under `dir`.
    pub fn save_frames_to(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.frame_dir = Some(dir.to_path_buf());
        Ok(())
    }

    /// File names of saved frames, relative to the frame directory.
    pub fn frame_refs(&self) -> &[String] {
        &self.frame_refs
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time_s(&self) -> f64 {
        self.tick as f64 * CONTROL_DT_S
    }

    pub fn ticks_per_frame(&self) -> u64 {
        self.ticks_per_frame
    }

    /// Advance one control tick; returns a frame observation when one is
    /// due on this tick.
    pub fn step(&mut self, currents: [f64; 2]) -> Result<Option<Observed>> {
        self.plant.step(currents)?;
        self.tick += 1;
        if self.tick.is_multiple_of(self.ticks_per_frame) {
            self.observe().map(Some)
        } else {
            Ok(None)
        }
    }

    /// Advance one control tick without taking any frame.
    pub fn advance(&mut self, currents: [f64; 2]) -> Result<()> {
        self.plant.step(currents)?;
        self.tick += 1;
        Ok(())
    }

    /// Take a frame of the current state now.
    pub fn observe(&mut self) -> Result<Observed> {
        let t_s = self.time_s();
        let mut spot = self.plant.spot()?;
        spot.t_s = t_s;
        if self.observation == Observation::Truth {
            return Ok(Observed::Spot(TrajectorySample::new(t_s, spot.x_mm, spot.y_mm)));
        }
        let frame_seed = self.seed ^ self.frames_taken.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let index = self.frames_taken;
        self.frames_taken += 1;
        let frame = match render_frame(&spot, &self.camera.geometry, frame_seed) {
            Ok(f) => f,
            Err(Error::OutOfFrame { .. }) => return Ok(Observed::Missing(t_s)),
            Err(e) => return Err(e),
        };
        if let Some(dir) = &self.frame_dir {
            let name = format!("frame_{index:06}.ppm");
            frame.save_fixture(&dir.join(&name))?;
            self.frame_refs.push(name);
        }
        match detect_spot(&frame, &self.camera.detection) {
            Ok(d) => Ok(Observed::Spot(TrajectorySample::new(t_s, d.x_mm, d.y_mm))),
            Err(Error::NoSpot) => Ok(Observed::Missing(t_s)),
            Err(e) => Err(e),
        }
    }
}
