//! Synthetic camera frames of the target plane and red-channel spot
//! detection.

mod detect;
mod frame;

pub use detect::{detect_spot, track_sequence, Connectivity, DetectionConfig, SpotDetection};
pub use frame::{pixel_scale_from_calibration, render_frame, Frame, FrameGeometry, DEFAULT_UM_PER_PX};
