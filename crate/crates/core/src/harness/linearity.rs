use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use super::rig::{CameraConfig, Observation, Rig};
use crate::control::{waveform_sample, ScanAxis, ScanWaveform, AMPS_PER_LEVEL};
use crate::error::{Error, Result};
use crate::metrics::{average_speed, deviation_from_linearity, format_length, Trajectory};
use crate::plant::PlantParams;
use crate::CONTROL_RATE_HZ;

/// RMSE bound below which a scan frequency counts as stable, mm.
pub const STABLE_RMSE_MM: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityConfig {
    /// Direction of the scanned line, radians from +x.
    pub angle_rad: f64,
    /// Time allowed for the start-up transient before capture, s.
    pub settle_s: f64,
    pub min_periods: u32,
    pub min_capture_s: f64,
    pub stable_rmse_mm: f64,
    /// Resolution of the stable-limit refinement, Hz; 0 disables it.
    pub refine_step_hz: f64,
    pub camera: CameraConfig,
    pub observation: Observation,
    pub seed: u64,
}

impl Default for LinearityConfig {
    fn default() -> Self {
        Self {
            angle_rad: FRAC_PI_4,
            settle_s: 0.5,
            min_periods: 2,
            min_capture_s: 0.2,
            stable_rmse_mm: STABLE_RMSE_MM,
            refine_step_hz: 0.1,
            camera: CameraConfig::high_speed(),
            observation: Observation::Camera,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityPoint {
    pub frequency_hz: f64,
    pub rmse_mm: f64,
    pub max_error_mm: f64,
    pub average_speed_mm_s: f64,
    pub n_samples: usize,
    pub gaps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub line_mm: f64,
    pub amplitude_levels: f64,
    pub natural_frequency_hz: f64,
    pub points: Vec<LinearityPoint>,
    /// RMSE never decreases with frequency up to the natural frequency.
    pub monotone_below_natural: bool,
    /// Largest frequency whose RMSE stays under the bound, with every lower
    /// swept frequency also under it.
    pub stable_limit_hz: Option<f64>,
    /// Extra measurements taken while refining the stable limit.
    pub refinement: Vec<LinearityPoint>,
}

impl LinearityReport {
    pub fn table(&self) -> String {
        let mut s = String::from("  f [Hz]        RMSE         max   speed [mm/s]\n");
        for p in &self.points {
            s += &format!(
                "{:>8.1} {:>11} {:>11} {:>14.2}\n",
                p.frequency_hz,
                format_length(p.rmse_mm),
                format_length(p.max_error_mm),
                p.average_speed_mm_s
            );
        }
        match self.stable_limit_hz {
            Some(f) => s += &format!("stable limit: {f:.1} Hz\n"),
            None => s += "stable limit: none\n",
        }
        s += &format!(
            "monotone up to {:.0} Hz: {}\n",
            self.natural_frequency_hz, self.monotone_below_natural
        );
        s
    }
}

/// DAC amplitude along the scan direction for a line of `line_mm` end to end.
pub fn line_amplitude_levels(line_mm: f64, params: &PlantParams) -> f64 {
    line_mm / 2.0 / (params.optics_scale * params.dc_gain_mm_per_a * AMPS_PER_LEVEL)
}

/// Drive one sinusoidal line scan and score its straightness.
pub fn measure_line_scan(frequency_hz: f64, line_mm: f64, params: &PlantParams, cfg: &LinearityConfig) -> Result<LinearityPoint> {
    let w = ScanWaveform::new(
        line_amplitude_levels(line_mm, params),
        frequency_hz,
        ScanAxis::Pair { angle_rad: cfg.angle_rad },
    )?;
    let mut rig = Rig::new(params.clone(), cfg.camera.clone(), cfg.observation, cfg.seed)?;
    let settle = (cfg.settle_s * CONTROL_RATE_HZ).round() as u64;
    let tpf = rig.ticks_per_frame();
    let settle = settle.div_ceil(tpf) * tpf;
    let periods = f64::from(cfg.min_periods).max((cfg.min_capture_s * frequency_hz).ceil());
    let capture = (periods / frequency_hz * CONTROL_RATE_HZ).round() as u64;
    let mut traj = Trajectory::new();
    for k in 0..settle + capture {
        let c = waveform_sample(&w, k as f64 / CONTROL_RATE_HZ);
        if k < settle {
            rig.advance(c.amps())?;
        } else if let Some(obs) = rig.step(c.amps())? {
            obs.append_to(&mut traj)?;
        }
    }
    let r = deviation_from_linearity(&traj)?;
    Ok(LinearityPoint {
        frequency_hz,
        rmse_mm: r.rmse_mm,
        max_error_mm: r.max_error_mm,
        average_speed_mm_s: average_speed(&traj)?,
        n_samples: r.n_samples,
        gaps: traj.gaps().len(),
    })
}

/// RMSE-versus-frequency curve of a line scan and its stability limit.
pub fn run_linearity_sweep(frequencies: &[f64], line_mm: f64, params: &PlantParams, cfg: &LinearityConfig) -> Result<LinearityReport> {
    if frequencies.is_empty() {
        return Err(Error::Config("no sweep frequencies given".into()));
    }
    if let Some(f) = frequencies.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
        return Err(Error::Config(format!("sweep frequency must be > 0, got {f}")));
    }
    if !(line_mm > 0.0 && line_mm / 2.0 <= params.workspace_halfwidth_mm) {
        return Err(Error::Config(format!("line of {line_mm} mm does not fit the workspace")));
    }
    let mut freqs = frequencies.to_vec();
    freqs.sort_by(f64::total_cmp);
    freqs.dedup();
    let points = freqs
        .iter()
        .map(|&f| measure_line_scan(f, line_mm, params, cfg))
        .collect::<Result<Vec<_>>>()?;

    let fn_hz = params.natural_frequency_hz;
    let below: Vec<&LinearityPoint> = points.iter().filter(|p| p.frequency_hz <= fn_hz).collect();
    let monotone_below_natural = below.windows(2).all(|w| w[1].rmse_mm >= w[0].rmse_mm);

    let first_unstable = points.iter().position(|p| p.rmse_mm >= cfg.stable_rmse_mm);
    let mut refinement = Vec::new();
    let stable_limit_hz = match first_unstable {
        None => points.last().map(|p| p.frequency_hz),
        Some(0) => None,
        Some(i) => {
            let (mut lo, mut hi) = (points[i - 1].frequency_hz, points[i].frequency_hz);
            if cfg.refine_step_hz > 0.0 {
                while hi - lo > cfg.refine_step_hz * (1.0 + 1e-9) {
                    let mid = 0.5 * (lo + hi);
                    let p = measure_line_scan(mid, line_mm, params, cfg)?;
                    if p.rmse_mm < cfg.stable_rmse_mm {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    refinement.push(p);
                }
            }
            Some(lo)
        }
    };
    Ok(LinearityReport {
        line_mm,
        amplitude_levels: line_amplitude_levels(line_mm, params),
        natural_frequency_hz: fn_hz,
        points,
        monotone_below_natural,
        stable_limit_hz,
        refinement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn amplitude_for_the_reference_line() {
        let a = line_amplitude_levels(0.72, &PlantParams::default());
        assert!((a - 368.46).abs() < 0.01);
    }

    #[test]
    fn slow_scan_is_straight_and_has_the_expected_speed() {
        let params = PlantParams::calibrated();
        let cfg = LinearityConfig::default();
        let p = measure_line_scan(1.0, 0.72, &params, &cfg).unwrap();
        assert!(p.rmse_mm < 0.002);
        assert!((p.average_speed_mm_s - 1.44).abs() / 1.44 < 0.02, "{}", p.average_speed_mm_s);
        assert_eq!(p.n_samples, 2000);
    }

    #[test]
    fn bad_sweeps_are_rejected() {
        let p = PlantParams::default();
        let c = LinearityConfig::default();
        assert!(run_linearity_sweep(&[], 0.72, &p, &c).is_err());
        assert!(run_linearity_sweep(&[0.0], 0.72, &p, &c).is_err());
        assert!(run_linearity_sweep(&[5.0], 5.0, &p, &c).is_err());
    }
}
