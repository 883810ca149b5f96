use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use super::Frame;
use crate::error::{Error, Result};
use crate::metrics::{Trajectory, TrajectorySample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Red-channel threshold as a fraction of full scale.
    pub threshold: f64,
    pub connectivity: Connectivity,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            connectivity: Connectivity::Eight,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold > 0.0 && self.threshold < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("threshold must lie in (0, 1), got {}", self.threshold)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotDetection {
    pub x_mm: f64,
    pub y_mm: f64,
    pub pixel_count: usize,
    /// Share of all above-threshold pixels that belong to the chosen component.
    pub confidence: f64,
    /// Bounding-box width and height of the component, mm.
    pub extent_mm: (f64, f64),
}

struct Component {
    count: usize,
    sum_w: f64,
    sum_wc: f64,
    sum_wr: f64,
    bbox: (usize, usize, usize, usize),
}

/// Locate the laser spot: threshold the red channel, label connected
/// components in scan order and take the intensity-weighted centroid of the
/// largest one. Weights are the red level above the threshold, so pixels
/// entering or leaving the component at its rim move the centroid
/// continuously.
pub fn detect_spot(frame: &Frame, cfg: &DetectionConfig) -> Result<SpotDetection> {
    cfg.validate()?;
    frame.validate()?;
    let (w, h) = (frame.width, frame.height);
    let thr = cfg.threshold * 255.0;
    let above: Vec<bool> = frame.data.chunks_exact(3).map(|p| f64::from(p[0]) > thr).collect();
    let total = above.iter().filter(|&&a| a).count();
    if total == 0 {
        return Err(Error::NoSpot);
    }

    let neighbours: &[(isize, isize)] = match cfg.connectivity {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };
    let mut visited = vec![false; w * h];
    let mut stack = Vec::new();
    let mut best: Option<Component> = None;
    for start in 0..w * h {
        if !above[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut comp = Component {
            count: 0,
            sum_w: 0.0,
            sum_wc: 0.0,
            sum_wr: 0.0,
            bbox: (usize::MAX, usize::MAX, 0, 0),
        };
        while let Some(i) = stack.pop() {
            let (col, row) = (i % w, i / w);
            let weight = f64::from(frame.data[i * 3]) - thr;
            comp.count += 1;
            comp.sum_w += weight;
            comp.sum_wc += weight * col as f64;
            comp.sum_wr += weight * row as f64;
            comp.bbox = (
                comp.bbox.0.min(col),
                comp.bbox.1.min(row),
                comp.bbox.2.max(col),
                comp.bbox.3.max(row),
            );
            for &(dc, dr) in neighbours {
                let (nc, nr) = (col as isize + dc, row as isize + dr);
                if nc < 0 || nr < 0 || nc >= w as isize || nr >= h as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if above[j] && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        // Strictly larger only, so ties keep the earliest component.
        if best.as_ref().is_none_or(|b| comp.count > b.count) {
            best = Some(comp);
        }
    }
    let c = best.ok_or(Error::NoSpot)?;
    let geom = frame.geometry();
    let (x_mm, y_mm) = geom.pixel_to_plane(c.sum_wc / c.sum_w, c.sum_wr / c.sum_w);
    let s = geom.mm_per_px();
    Ok(SpotDetection {
        x_mm,
        y_mm,
        pixel_count: c.count,
        confidence: c.count as f64 / total as f64,
        extent_mm: ((c.bbox.2 - c.bbox.0 + 1) as f64 * s, (c.bbox.3 - c.bbox.1 + 1) as f64 * s),
    })
}

/// Detect the spot in every frame. Frames without a spot become gaps.
pub fn track_sequence<I>(frames: I, cfg: &DetectionConfig) -> Result<Trajectory>
where
    I: IntoIterator,
    I::Item: Borrow<Frame>,
{
    cfg.validate()?;
    let mut traj = Trajectory::new();
    for f in frames {
        let f = f.borrow();
        match detect_spot(f, cfg) {
            Ok(d) => traj.push(TrajectorySample::new(f.t_s, d.x_mm, d.y_mm))?,
            Err(Error::NoSpot) => traj.push_gap(f.t_s)?,
            Err(e) => return Err(e),
        }
    }
    Ok(traj)
}
