use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{point_distance, Trajectory};

/// Default halfwidth of the band drawn around each target, mm.
pub const DEFAULT_BAND_HALFWIDTH_MM: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShapeId {
    T1,
    T2,
    T3,
    T4,
    T5,
}

impl ShapeId {
    pub const ALL: [ShapeId; 5] = [ShapeId::T1, ShapeId::T2, ShapeId::T3, ShapeId::T4, ShapeId::T5];
}

impl fmt::Display for ShapeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ShapeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T1" => Ok(ShapeId::T1),
            "T2" => Ok(ShapeId::T2),
            "T3" => Ok(ShapeId::T3),
            "T4" => Ok(ShapeId::T4),
            "T5" => Ok(ShapeId::T5),
            _ => Err(Error::Config(format!("unknown shape {s:?}; expected T1..T5"))),
        }
    }
}

/// Generator parameters of the target shapes, all in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    /// Cubic Bézier through four control points.
    Bezier {
        control: [[f64; 2]; 4],
    },
    /// Circular arc, angles in radians counterclockwise from +x.
    Arc {
        center: [f64; 2],
        radius: f64,
        start_rad: f64,
        end_rad: f64,
    },
    Line {
        from: [f64; 2],
        to: [f64; 2],
    },
}

impl ShapeSpec {
    pub fn default_for(id: ShapeId) -> Self {
        match id {
            ShapeId::T1 => ShapeSpec::Bezier {
                control: [[-1.5, 0.0], [-0.5, 1.5], [0.5, -1.5], [1.5, 0.0]],
            },
            ShapeId::T4 => ShapeSpec::Bezier {
                control: [[0.0, -1.5], [1.5, -0.5], [-1.5, 0.5], [0.0, 1.5]],
            },
            ShapeId::T2 => ShapeSpec::Arc {
                center: [0.3, 0.0],
                radius: 1.2,
                start_rad: PI / 3.0,
                end_rad: 5.0 * PI / 3.0,
            },
            ShapeId::T5 => ShapeSpec::Arc {
                center: [0.0, -0.3],
                radius: 1.2,
                start_rad: -PI / 6.0,
                end_rad: 7.0 * PI / 6.0,
            },
            ShapeId::T3 => ShapeSpec::Line {
                from: [-1.5, -1.0],
                to: [1.5, 1.0],
            },
        }
    }

    fn point(&self, u: f64) -> (f64, f64) {
        match self {
            ShapeSpec::Bezier { control: [p0, p1, p2, p3] } => {
                let v = 1.0 - u;
                let (a, b, c, d) = (v * v * v, 3.0 * v * v * u, 3.0 * v * u * u, u * u * u);
                (
                    a * p0[0] + b * p1[0] + c * p2[0] + d * p3[0],
                    a * p0[1] + b * p1[1] + c * p2[1] + d * p3[1],
                )
            }
            ShapeSpec::Arc {
                center,
                radius,
                start_rad,
                end_rad,
            } => {
                let th = start_rad + u * (end_rad - start_rad);
                (center[0] + radius * th.cos(), center[1] + radius * th.sin())
            }
            ShapeSpec::Line { from, to } => (from[0] + u * (to[0] - from[0]), from[1] + u * (to[1] - from[1])),
        }
    }
}

/// A target trajectory with the band the operator has to stay in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetShape {
    pub id: ShapeId,
    pub spec: ShapeSpec,
    pub band_halfwidth_mm: f64,
    /// Centerline resampled at uniform arc length.
    pub polyline_mm: Vec<[f64; 2]>,
}

impl TargetShape {
    pub fn standard(id: ShapeId) -> Result<Self> {
        Self::new(id, ShapeSpec::default_for(id), DEFAULT_BAND_HALFWIDTH_MM, 400, 2.0)
    }

    /// Build from generator parameters, checking that the band stays inside
    /// the `±halfwidth_mm` workspace.
    pub fn new(id: ShapeId, spec: ShapeSpec, band_halfwidth_mm: f64, points: usize, workspace_halfwidth_mm: f64) -> Result<Self> {
        if !(band_halfwidth_mm > 0.0) || points < 2 {
            return Err(Error::Config("shape needs a positive band and at least two points".into()));
        }
        let raw: Vec<(f64, f64)> = (0..=4000).map(|k| spec.point(k as f64 / 4000.0)).collect();
        let polyline: Vec<[f64; 2]> = resample_uniform(&raw, points).into_iter().map(|(x, y)| [x, y]).collect();
        let limit = workspace_halfwidth_mm - band_halfwidth_mm;
        if let Some(p) = polyline.iter().find(|p| p[0].abs() > limit || p[1].abs() > limit) {
            return Err(Error::Geometry(format!(
                "shape {id} point ({:.3}, {:.3}) mm puts its band outside the workspace",
                p[0], p[1]
            )));
        }
        Ok(Self {
            id,
            spec,
            band_halfwidth_mm,
            polyline_mm: polyline,
        })
    }

    pub fn centerline(&self) -> Result<Trajectory> {
        let pts: Vec<(f64, f64)> = self.polyline_mm.iter().map(|p| (p[0], p[1])).collect();
        Trajectory::from_points(&pts, 1.0)
    }

    pub fn length_mm(&self) -> f64 {
        self.polyline_mm
            .windows(2)
            .map(|w| point_distance(w[0][0], w[0][1], w[1][0], w[1][1]))
            .sum()
    }
}

/// Resample a polyline to `n` points at equal arc-length spacing.
pub fn resample_uniform(points: &[(f64, f64)], n: usize) -> Vec<(f64, f64)> {
    if points.len() < 2 || n < 2 {
        return points.iter().copied().take(n.max(1)).collect();
    }
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    for w in points.windows(2) {
        let last = *cum.last().unwrap_or(&0.0);
        cum.push(last + point_distance(w[0].0, w[0].1, w[1].0, w[1].1));
    }
    let total = *cum.last().unwrap_or(&0.0);
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let u = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (points[seg], points[seg + 1]);
        out.push((a.0 + u * (b.0 - a.0), a.1 + u * (b.1 - a.1)));
    }
    out
}

/// Figure-eight `x = (w/2)·sin 2s, y = (h/2)·sin s` starting at the
/// origin, resampled at constant speed over one unit of time.
pub fn figure_eight(width_mm: f64, height_mm: f64, n: usize) -> Result<Trajectory> {
    if !(width_mm > 0.0 && height_mm > 0.0) || n < 3 {
        return Err(Error::Config("figure eight needs positive size and at least 3 points".into()));
    }
    let raw: Vec<(f64, f64)> = (0..=8000)
        .map(|k| {
            let s = TAU * k as f64 / 8000.0;
            (width_mm / 2.0 * (2.0 * s).sin(), height_mm / 2.0 * s.sin())
        })
        .collect();
    let pts = resample_uniform(&raw, n + 1);
    Trajectory::from_points(&pts, 1.0 / n as f64)
}
