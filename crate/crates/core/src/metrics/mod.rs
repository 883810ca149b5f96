//! Trajectory error metrics: closest-distance error against a target,
//! RMSE, maximum error, deviation from a fitted line, pass-to-pass
//! repeatability and execution time.
//!
//! All lengths are millimeters internally; [`format_length`] switches to
//! micrometers for display below 1 mm.

mod trajectory;

pub use trajectory::{point_distance, Trajectory, TrajectorySample};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arc-length spacing used to densify target polylines, mm.
pub const DENSIFY_SPACING_MM: f64 = 0.005;

/// Default displacement that counts as motion for [`execution_time`], mm.
pub const MOTION_THRESHOLD_MM: f64 = 0.05;

/// How the target of [`pointwise_error`] is sampled before the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Densify {
    /// Use the target samples as given.
    Off,
    /// Subdivide every polyline segment so that consecutive points are at
    /// most this far apart, mm.
    Spacing(f64),
}

impl Default for Densify {
    fn default() -> Self {
        Densify::Spacing(DENSIFY_SPACING_MM)
    }
}

/// Resample a polyline so that no two consecutive points are more than
/// `spacing` apart. Original vertices are kept.
pub fn densify_polyline(points: &[(f64, f64)], spacing: f64) -> Result<Vec<(f64, f64)>> {
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::Config(format!("densification spacing must be > 0, got {spacing}")));
    }
    let mut out = Vec::with_capacity(points.len());
    let Some(&first) = points.first() else {
        return Ok(out);
    };
    out.push(first);
    for w in points.windows(2) {
        let ((ax, ay), (bx, by)) = (w[0], w[1]);
        let len = point_distance(ax, ay, bx, by);
        let parts = (len / spacing).ceil().max(1.0) as usize;
        for k in 1..parts {
            let u = k as f64 / parts as f64;
            out.push((ax + u * (bx - ax), ay + u * (by - ay)));
        }
        out.push((bx, by));
    }
    Ok(out)
}

/// Uniform-grid index for exact nearest-point queries.
struct PointGrid<'a> {
    points: &'a [(f64, f64)],
    origin: (f64, f64),
    cell: f64,
    nx: i64,
    ny: i64,
    /// `starts[c]..starts[c + 1]` indexes `order` for cell `c`.
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [(f64, f64)]) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let (w, h) = ((x1 - x0).max(0.0), (y1 - y0).max(0.0));
        // Roughly two points per cell on average.
        let area = (w * h).max(1e-18);
        let mut cell = (2.0 * area / points.len() as f64).sqrt();
        cell = cell.max(w.max(h) / 1024.0).max(1e-9);
        let nx = ((w / cell).floor() as i64 + 1).max(1);
        let ny = ((h / cell).floor() as i64 + 1).max(1);
        let mut counts = vec![0usize; (nx * ny) as usize + 1];
        let cell_of = |x: f64, y: f64| -> usize {
            let cx = (((x - x0) / cell).floor() as i64).clamp(0, nx - 1);
            let cy = (((y - y0) / cell).floor() as i64).clamp(0, ny - 1);
            (cy * nx + cx) as usize
        };
        for &(x, y) in points {
            counts[cell_of(x, y) + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut order = vec![0usize; points.len()];
        for (i, &(x, y)) in points.iter().enumerate() {
            let c = cell_of(x, y);
            order[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            points,
            origin: (x0, y0),
            cell,
            nx,
            ny,
            starts,
            order,
        }
    }

    fn nearest_distance(&self, qx: f64, qy: f64) -> f64 {
        let qcx = ((qx - self.origin.0) / self.cell).floor() as i64;
        let qcy = ((qy - self.origin.1) / self.cell).floor() as i64;
        // Chebyshev distance from the query cell to the occupied index range.
        let gap_x = (-qcx).max(qcx - (self.nx - 1)).max(0);
        let gap_y = (-qcy).max(qcy - (self.ny - 1)).max(0);
        let r0 = gap_x.max(gap_y);
        let r_max = r0 + self.nx.max(self.ny) + 1;
        let mut best = f64::INFINITY;
        let mut r = r0;
        while r <= r_max {
            // Anything outside ring r is at least r cells away.
            if best <= (r as f64 - 1.0).max(0.0) * self.cell && r > r0 {
                break;
            }
            let y_lo = (qcy - r).max(0);
            let y_hi = (qcy + r).min(self.ny - 1);
            for cy in y_lo..=y_hi {
                let on_edge_row = (cy - qcy).abs() == r;
                let x_lo = (qcx - r).max(0);
                let x_hi = (qcx + r).min(self.nx - 1);
                let mut cx = x_lo;
                while cx <= x_hi {
                    let c = (cy * self.nx + cx) as usize;
                    for &i in &self.order[self.starts[c]..self.starts[c + 1]] {
                        let (px, py) = self.points[i];
                        let d = point_distance(qx, qy, px, py);
                        if d < best {
                            best = d;
                        }
                    }
                    // Interior rows only need the two ring columns.
                    if on_edge_row || cx == qcx + r {
                        cx += 1;
                    } else {
                        cx = (qcx + r).max(cx + 1);
                    }
                }
            }
            r += 1;
        }
        best
    }
}

/// Closest distance from each executed sample to the (densified) target.
/// Gap frames carry no sample and contribute nothing.
pub fn pointwise_error(executed: &Trajectory, target: &Trajectory, densify: Densify) -> Result<Vec<f64>> {
    if executed.is_empty() || target.is_empty() {
        return Err(Error::Validation("pointwise error needs non-empty trajectories".into()));
    }
    let raw: Vec<(f64, f64)> = target.points().collect();
    let pts = match densify {
        Densify::Off => raw,
        Densify::Spacing(s) => densify_polyline(&raw, s)?,
    };
    let grid = PointGrid::new(&pts);
    Ok(executed.points().map(|(x, y)| grid.nearest_distance(x, y)).collect())
}

pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::Validation("RMSE of an empty error set".into()));
    }
    let sum_sq: f64 = errors.iter().map(|e| e * e).sum();
    Ok((sum_sq / errors.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub errors_mm: Vec<f64>,
    pub rmse_mm: f64,
    pub max_error_mm: f64,
    pub n_samples: usize,
}

impl ErrorReport {
    pub fn from_errors(errors: Vec<f64>) -> Result<Self> {
        let rmse_mm = rmse(&errors)?;
        let max_error_mm = errors.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            n_samples: errors.len(),
            errors_mm: errors,
            rmse_mm,
            max_error_mm,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary(&self) -> String {
        format!(
            "RMSE {}  max {}  (N = {})",
            format_length(self.rmse_mm),
            format_length(self.max_error_mm),
            self.n_samples
        )
    }
}

/// Closest-distance error report of `executed` against `target`.
pub fn tracking_report(executed: &Trajectory, target: &Trajectory, densify: Densify) -> Result<ErrorReport> {
    ErrorReport::from_errors(pointwise_error(executed, target, densify)?)
}

/// Total-least-squares line through a point cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub centroid: (f64, f64),
    /// Unit direction of the line.
    pub direction: (f64, f64),
}

impl LineFit {
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        let (nx, ny) = (-self.direction.1, self.direction.0);
        (nx * (x - self.centroid.0) + ny * (y - self.centroid.1)).abs()
    }
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::Validation("line fit needs at least two points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx + syy == 0.0 {
        return Err(Error::Validation("all points coincide; line is undefined".into()));
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Ok(LineFit {
        centroid: (mx, my),
        direction: (theta.cos(), theta.sin()),
    })
}

/// Perpendicular residuals of the samples about their TLS line.
pub fn deviation_from_linearity(traj: &Trajectory) -> Result<ErrorReport> {
    let pts: Vec<(f64, f64)> = traj.points().collect();
    if pts.len() < 3 {
        return Err(Error::Validation(format!(
            "deviation from linearity needs at least 3 samples, got {}",
            pts.len()
        )));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let span = point_distance(x0, y0, x1, y1);
    if span <= 0.01 {
        return Err(Error::Validation(format!(
            "samples span {span:.6} mm; at least 0.01 mm is required for a line fit"
        )));
    }
    let line = fit_line(&pts)?;
    ErrorReport::from_errors(pts.iter().map(|&(x, y)| line.distance(x, y)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityReport {
    /// Reports for passes 2..n against pass 1.
    pub passes: Vec<ErrorReport>,
    pub mean_rmse_mm: f64,
    /// Sample standard deviation of the per-pass RMSE.
    pub std_rmse_mm: f64,
}

/// Pass 1 is the reference; every later pass is scored against it.
pub fn repeatability(passes: &[Trajectory]) -> Result<RepeatabilityReport> {
    repeatability_with(passes, Densify::default())
}

pub fn repeatability_with(passes: &[Trajectory], densify: Densify) -> Result<RepeatabilityReport> {
    if passes.len() < 2 {
        return Err(Error::Validation(format!(
            "repeatability needs at least 2 passes, got {}",
            passes.len()
        )));
    }
    let reference = &passes[0];
    let reports = passes[1..]
        .iter()
        .map(|p| tracking_report(p, reference, densify))
        .collect::<Result<Vec<_>>>()?;
    let n = reports.len() as f64;
    let mean = reports.iter().map(|r| r.rmse_mm).sum::<f64>() / n;
    let std = if reports.len() > 1 {
        (reports.iter().map(|r| (r.rmse_mm - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RepeatabilityReport {
        passes: reports,
        mean_rmse_mm: mean,
        std_rmse_mm: std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTime {
    pub seconds: f64,
    /// No measurable motion: nothing left the rest positions, or the motion
    /// fit inside a single frame.
    pub no_motion: bool,
    pub start_s: Option<f64>,
    pub end_s: Option<f64>,
}

/// Time from the first sample that leaves the initial rest position to the
/// last sample that has not yet reached the final rest position.
pub fn execution_time(traj: &Trajectory, motion_threshold_mm: f64) -> Result<ExecutionTime> {
    let s = traj.samples();
    let (Some(first), Some(last)) = (s.first(), s.last()) else {
        return Err(Error::Validation("execution time of an empty trajectory".into()));
    };
    let start = s.iter().find(|p| p.distance_to(first) > motion_threshold_mm).map(|p| p.t_s);
    let end = s.iter().rev().find(|p| p.distance_to(last) > motion_threshold_mm).map(|p| p.t_s);
    Ok(match (start, end) {
        (Some(a), Some(b)) if b > a => ExecutionTime {
            seconds: b - a,
            no_motion: false,
            start_s: Some(a),
            end_s: Some(b),
        },
        (a, b) => ExecutionTime {
            seconds: 0.0,
            no_motion: true,
            start_s: a,
            end_s: b,
        },
    })
}

/// Path length per unit time over the trajectory, mm/s.
pub fn average_speed(traj: &Trajectory) -> Result<f64> {
    let d = traj.duration();
    if traj.len() < 2 || d <= 0.0 {
        return Err(Error::Validation("average speed needs two samples spanning time".into()));
    }
    Ok(traj.path_length() / d)
}

/// Display a length given in mm, in µm below 1 mm.
pub fn format_length(mm: f64) -> String {
    if mm.abs() < 1.0 {
        format!("{:.1} µm", mm * 1000.0)
    } else {
        format!("{mm:.3} mm")
    }
}

/// One row of a batch report over many trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub trial: u32,
    pub subject: String,
    pub rmse_um: f64,
    pub max_um: f64,
    pub time_s: f64,
}

pub fn write_batch_csv<W: Write>(rows: &[BatchRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(["trial", "subject", "rmse_um", "max_um", "time_s"])?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
