//! Experiments and sessions.

mod calibrate;
mod linearity;
mod repeatability;
mod rig;
mod session;
mod shapes;
mod teleop;
mod workspace;

pub use calibrate::{
    calibrate, calibrated_noise, fit_current_noise, fit_damping_ratio, reference_eight, Calibration, CalibrationTargets,
    CALIBRATED_CURRENT_NOISE_A, CALIBRATION_NOISE_SEED,
};
pub use linearity::{
    line_amplitude_levels, measure_line_scan, run_linearity_sweep, LinearityConfig, LinearityPoint, LinearityReport, STABLE_RMSE_MM,
};
pub use repeatability::{run_repeatability, CurrentNoise, PassSummary, RepeatabilityConfig, RepeatabilityRun};
pub use rig::{CameraConfig, Observation, Observed, Rig};
pub use session::{
    config_hash, evaluate_session_dir, to_json_file_string, ExperimentRecord, SessionCheck, SessionLog, SessionMeta, SessionReport,
    SESSION_FORMAT,
};
pub use shapes::{figure_eight, resample_uniform, ShapeId, ShapeSpec, TargetShape, DEFAULT_BAND_HALFWIDTH_MM};
pub use teleop::{
    run_scheduled_session, run_scheduled_session_until, run_teleop_session, scripted_poses, CommandRecord, EndReason, PoseRecord,
    ScriptedTrace, TelemetryRecord, TeleopConfig, TeleopEngine,
};
pub use workspace::{default_grid, fit_linear, run_workspace_map, AxisFit, LinearFit, WorkspaceConfig, WorkspacePoint, WorkspaceReport};
