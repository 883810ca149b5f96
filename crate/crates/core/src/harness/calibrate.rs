use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::linearity::{measure_line_scan, LinearityConfig};
use super::repeatability::{run_repeatability, CurrentNoise, RepeatabilityConfig};
use super::rig::Observation;
use super::shapes::figure_eight;
use crate::error::{Error, Result};
use crate::metrics::Trajectory;
use crate::plant::PlantParams;

/// Per-tick current noise fitted so that a 10-pass figure-eight replay at
/// 1 Hz repeats to 21 µm mean RMSE. Reproduced by [`fit_current_noise`].
pub const CALIBRATED_CURRENT_NOISE_A: f64 = 0.004_622_736_911_198_6;

/// Seed of the noise realization the calibration was fitted on.
pub const CALIBRATION_NOISE_SEED: u64 = 7;

/// The figure eight used for repeatability: 1.5 mm wide, 3 mm tall.
pub fn reference_eight() -> Result<Trajectory> {
    figure_eight(1.5, 3.0, 1000)
}

pub fn calibrated_noise() -> CurrentNoise {
    CurrentNoise {
        std_a: CALIBRATED_CURRENT_NOISE_A,
        seed: CALIBRATION_NOISE_SEED,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub stable_frequency_hz: f64,
    pub line_mm: f64,
    pub stable_rmse_mm: f64,
    pub repeat_rmse_mm: f64,
    pub repeat_passes: u32,
    pub repeat_rate_hz: f64,
    pub noise_seed: u64,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        Self {
            stable_frequency_hz: 48.0,
            line_mm: 0.72,
            stable_rmse_mm: 0.05,
            repeat_rmse_mm: 0.021,
            repeat_passes: 10,
            repeat_rate_hz: 1.0,
            noise_seed: CALIBRATION_NOISE_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub targets: CalibrationTargets,
    pub params: PlantParams,
    pub line_rmse_at_target_mm: f64,
    pub current_noise_std_a: f64,
    pub repeat_rmse_mm: f64,
}

impl Calibration {
    /// Plant configuration file with the fitted values and how they were
    /// obtained as comments.
    pub fn ledger(&self) -> String {
        let t = &self.targets;
        let mut s = String::new();
        let _ = writeln!(s, "# Calibration ledger");
        let _ = writeln!(
            s,
            "# damping_ratio: line scan of {} mm at {} Hz deviates {:.2} µm RMS from its fit (target {} µm)",
            t.line_mm,
            t.stable_frequency_hz,
            self.line_rmse_at_target_mm * 1000.0,
            t.stable_rmse_mm * 1000.0
        );
        let _ = writeln!(
            s,
            "# current_noise_std_a = {:.6e}: {} passes at {} Hz repeat to {:.2} µm mean RMSE (target {} µm, seed {})",
            self.current_noise_std_a,
            t.repeat_passes,
            t.repeat_rate_hz,
            self.repeat_rmse_mm * 1000.0,
            t.repeat_rmse_mm * 1000.0,
            t.noise_seed
        );
        s += &self.params.to_kv_string();
        s
    }
}

/// Find `x` in `[lo, hi]` with `f(x) = 0` for increasing `f`.
fn bisect(mut lo: f64, mut hi: f64, iterations: usize, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if !(flo <= 0.0 && fhi >= 0.0) {
        return Err(Error::Domain(format!(
            "calibration target is not bracketed by [{lo}, {hi}] (residuals {flo:.3e}, {fhi:.3e})"
        )));
    }
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if f(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn truth_line_config() -> LinearityConfig {
    LinearityConfig {
        observation: Observation::Truth,
        ..LinearityConfig::default()
    }
}

/// Damping ratio at which the line scan reaches the RMSE bound exactly at
/// the target frequency. Uses plant positions, not camera frames.
///
/// The RMSE at a fixed frequency is not monotone in the damping ratio; above
/// about 0.3 it falls again as the resonance flattens out. The search is kept
/// to the lightly damped branch.
pub fn fit_damping_ratio(base: &PlantParams, t: &CalibrationTargets) -> Result<f64> {
    let cfg = truth_line_config();
    bisect(0.05, 0.25, 40, |z| {
        let p = PlantParams {
            damping_ratio: z,
            ..base.clone()
        };
        Ok(measure_line_scan(t.stable_frequency_hz, t.line_mm, &p, &cfg)?.rmse_mm - t.stable_rmse_mm)
    })
}

fn truth_repeat_rmse(params: &PlantParams, t: &CalibrationTargets, std_a: f64) -> Result<f64> {
    let cfg = RepeatabilityConfig {
        passes: t.repeat_passes,
        rate_hz: t.repeat_rate_hz,
        noise: Some(CurrentNoise { std_a, seed: t.noise_seed }),
        observation: Observation::Truth,
        ..RepeatabilityConfig::default()
    };
    Ok(run_repeatability(&reference_eight()?, params, &cfg)?.0.mean_rmse_mm)
}

/// Current noise level at which repeatability reaches the target RMSE.
pub fn fit_current_noise(params: &PlantParams, t: &CalibrationTargets) -> Result<f64> {
    bisect(1e-6, 0.03, 30, |s| Ok(truth_repeat_rmse(params, t, s)? - t.repeat_rmse_mm))
}

/// Fit damping, then noise, starting from `base`.
pub fn calibrate(base: &PlantParams, t: &CalibrationTargets) -> Result<Calibration> {
    let z = fit_damping_ratio(base, t)?;
    let params = PlantParams {
        damping_ratio: z,
        ..base.clone()
    };
    let line = measure_line_scan(t.stable_frequency_hz, t.line_mm, &params, &truth_line_config())?;
    let std_a = fit_current_noise(&params, t)?;
    let repeat = truth_repeat_rmse(&params, t, std_a)?;
    Ok(Calibration {
        targets: t.clone(),
        params,
        line_rmse_at_target_mm: line.rmse_mm,
        current_noise_std_a: std_a,
        repeat_rmse_mm: repeat,
    })
}
