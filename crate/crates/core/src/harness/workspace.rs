use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::rig::{CameraConfig, Observation, Observed, Rig};
use crate::control::{quantize_level, CurrentCommand, MAX_LEVEL, MIN_LEVEL};
use crate::error::{Error, Result};
use crate::plant::PlantParams;
use crate::CONTROL_RATE_HZ;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceConfig {
    /// Cosine ramp between consecutive grid points, s.
    pub move_s: f64,
    /// Hold time before the frame is taken, s.
    pub dwell_s: f64,
    pub camera: CameraConfig,
    pub seed: u64,
}

impl Default for WorkspaceConfig {
    fn default() -> Self {
        Self {
            move_s: 0.2,
            dwell_s: 0.3,
            camera: CameraConfig::high_speed(),
            seed: 1,
        }
    }
}

/// The reference point followed by the 5×5 grid over the full current
/// range, skipping the repeated origin.
pub fn default_grid() -> Vec<CurrentCommand> {
    let levels = [-2047, -1024, 0, 1024, 2047];
    let mut grid = vec![CurrentCommand::ZERO];
    for &ly in levels.iter().rev() {
        for &lx in &levels {
            if (lx, ly) != (0, 0) {
                grid.push(CurrentCommand::from_levels(lx, ly));
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspacePoint {
    pub level_x: i32,
    pub level_y: i32,
    pub amps_x: f64,
    pub amps_y: f64,
    /// Detected spot, mm.
    pub detected_mm: Option<[f64; 2]>,
    /// Plant position at the moment of capture, mm.
    pub truth_mm: Option<[f64; 2]>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn fit_linear(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return Err(Error::Validation("linear fit needs at least two (x, y) pairs".into()));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::Validation("linear fit needs at least two distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(&x, &y)| (y - slope * x - intercept).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    /// Current-to-detected-position fit, mm/A.
    pub detected: LinearFit,
    /// Plant-position slopes over the non-negative and non-positive halves.
    pub truth_slope_pos: f64,
    pub truth_slope_neg: f64,
    /// `|pos − neg| / mean`.
    pub symmetry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceReport {
    pub points: Vec<WorkspacePoint>,
    pub span_x_mm: f64,
    pub span_y_mm: f64,
    /// Absent when the grid does not vary the axis current.
    pub x: Option<AxisFit>,
    pub y: Option<AxisFit>,
    pub failures: usize,
}

impl WorkspaceReport {
    pub fn table(&self) -> String {
        let mut s = String::from(" level_x  level_y   I_x [A]   I_y [A]    x [mm]    y [mm]\n");
        for p in &self.points {
            match p.detected_mm {
                Some([x, y]) => {
                    s += &format!(
                        "{:>8} {:>8} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
                        p.level_x, p.level_y, p.amps_x, p.amps_y, x, y
                    )
                }
                None => {
                    s += &format!(
                        "{:>8} {:>8} {:>9.4} {:>9.4}  failed: {}\n",
                        p.level_x,
                        p.level_y,
                        p.amps_x,
                        p.amps_y,
                        p.error.as_deref().unwrap_or("no spot")
                    )
                }
            }
        }
        for (name, f) in [("x", &self.x), ("y", &self.y)] {
            let Some(f) = f else { continue };
            s += &format!(
                "{name}: slope {:.4} mm/A  R² {:.6}  +/- slope symmetry {:.2e}\n",
                f.detected.slope, f.detected.r_squared, f.symmetry
            );
        }
        s += &format!("span {:.3} × {:.3} mm\n", self.span_x_mm, self.span_y_mm);
        s
    }
}

fn ticks(seconds: f64) -> u64 {
    (seconds * CONTROL_RATE_HZ).round() as u64
}

/// Step the plant through each grid command, let it settle and take one
/// frame per point.
pub fn run_workspace_map(grid: &[CurrentCommand], params: &PlantParams, cfg: &WorkspaceConfig) -> Result<WorkspaceReport> {
    if grid.is_empty() {
        return Err(Error::Validation("workspace grid is empty".into()));
    }
    if !(cfg.move_s >= 0.0 && cfg.dwell_s > 0.0) {
        return Err(Error::Config("workspace move time must be ≥ 0 and dwell > 0".into()));
    }
    for c in grid {
        if !(MIN_LEVEL..=MAX_LEVEL).contains(&c.level_x) || !(MIN_LEVEL..=MAX_LEVEL).contains(&c.level_y) {
            return Err(Error::Validation(format!("grid command {c:?} is outside the DAC range")));
        }
    }
    let mut rig = Rig::new(params.clone(), cfg.camera.clone(), Observation::Camera, cfg.seed)?;
    let mut prev = CurrentCommand::ZERO;
    let mut points = Vec::with_capacity(grid.len());
    let (move_ticks, dwell_ticks) = (ticks(cfg.move_s), ticks(cfg.dwell_s));
    for target in grid {
        let outcome = (|| -> Result<(Option<[f64; 2]>, [f64; 2])> {
            for k in 1..=move_ticks {
                let u = 0.5 - 0.5 * (PI * k as f64 / move_ticks as f64).cos();
                let lx = f64::from(prev.level_x) + u * f64::from(target.level_x - prev.level_x);
                let ly = f64::from(prev.level_y) + u * f64::from(target.level_y - prev.level_y);
                let c = CurrentCommand::from_levels(quantize_level(lx), quantize_level(ly));
                rig.advance(c.amps())?;
            }
            for _ in 0..dwell_ticks {
                rig.advance(target.amps())?;
            }
            let truth = rig.plant().spot()?;
            let detected = match rig.observe()? {
                Observed::Spot(s) => Some([s.x_mm, s.y_mm]),
                Observed::Missing(_) => None,
            };
            Ok((detected, [truth.x_mm, truth.y_mm]))
        })();
        prev = *target;
        let mut p = WorkspacePoint {
            level_x: target.level_x,
            level_y: target.level_y,
            amps_x: target.amps_x,
            amps_y: target.amps_y,
            detected_mm: None,
            truth_mm: None,
            error: None,
        };
        match outcome {
            Ok((detected, truth)) => {
                p.detected_mm = detected;
                p.truth_mm = Some(truth);
                if detected.is_none() {
                    p.error = Some(Error::NoSpot.to_string());
                }
            }
            Err(e) => p.error = Some(e.to_string()),
        }
        points.push(p);
    }

    let axis_fit = |axis: usize| -> Result<AxisFit> {
        let amps = |p: &WorkspacePoint| if axis == 0 { p.amps_x } else { p.amps_y };
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().filter_map(|p| p.detected_mm.map(|d| (amps(p), d[axis]))).unzip();
        let detected = fit_linear(&xs, &ys)?;
        let half = |positive: bool| -> Result<f64> {
            let (xs, ys): (Vec<f64>, Vec<f64>) = points
                .iter()
                .filter(|p| if positive { amps(p) >= 0.0 } else { amps(p) <= 0.0 })
                .filter_map(|p| p.truth_mm.map(|d| (amps(p), d[axis])))
                .unzip();
            Ok(fit_linear(&xs, &ys)?.slope)
        };
        let (pos, neg) = (half(true)?, half(false)?);
        Ok(AxisFit {
            detected,
            truth_slope_pos: pos,
            truth_slope_neg: neg,
            symmetry: (pos - neg).abs() / (0.5 * (pos + neg)).abs(),
        })
    };
    let span = |axis: usize| {
        let vals = points.iter().filter_map(|p| p.detected_mm.map(|d| d[axis]));
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    };
    Ok(WorkspaceReport {
        span_x_mm: span(0),
        span_y_mm: span(1),
        x: axis_fit(0).ok(),
        y: axis_fit(1).ok(),
        failures: points.iter().filter(|p| p.detected_mm.is_none()).count(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_reference_plus_24_points() {
        let g = default_grid();
        assert_eq!(g.len(), 25);
        assert_eq!(g[0], CurrentCommand::ZERO);
        assert_eq!(g.iter().filter(|c| **c == CurrentCommand::ZERO).count(), 1);
    }

    #[test]
    fn hand_fit() {
        let f = fit_linear(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(fit_linear(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn origin_only_grid() {
        let r = run_workspace_map(&[CurrentCommand::ZERO], &PlantParams::default(), &WorkspaceConfig::default()).unwrap();
        assert_eq!(r.points.len(), 1);
        let [x, y] = r.points[0].detected_mm.unwrap();
        assert!(x.abs() < 1e-6 && y.abs() < 1e-6);
        assert!(r.x.is_none() && r.y.is_none());
    }

    #[test]
    fn failing_points_are_reported_and_the_rest_continue() {
        let params = PlantParams {
            optics_scale: 1.6,
            ..PlantParams::default()
        };
        let r = run_workspace_map(&default_grid(), &params, &WorkspaceConfig::default()).unwrap();
        assert!(r.failures > 0);
        assert!(r.points.iter().any(|p| p.detected_mm.is_some()));
    }
}
