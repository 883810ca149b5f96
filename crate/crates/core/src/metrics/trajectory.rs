use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t_s: f64,
    pub x_mm: f64,
    pub y_mm: f64,
}

impl TrajectorySample {
    pub fn new(t_s: f64, x_mm: f64, y_mm: f64) -> Self {
        Self { t_s, x_mm, y_mm }
    }

    pub fn distance_to(&self, other: &TrajectorySample) -> f64 {
        point_distance(self.x_mm, self.y_mm, other.x_mm, other.y_mm)
    }
}

/// Euclidean distance in the target plane. Every metric goes through this so
/// that alternative search strategies produce bit-identical minima.
#[inline]
pub fn point_distance(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let dx = ax - bx;
    let dy = ay - by;
    (dx * dx + dy * dy).sqrt()
}

/// Time-stamped spot positions on the target plane, plus the timestamps of
/// frames in which no spot was found.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    samples: Vec<TrajectorySample>,
    gaps: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    t_s: f64,
    x_mm: Option<f64>,
    y_mm: Option<f64>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<TrajectorySample>) -> Result<Self> {
        let mut t = Self::new();
        for s in samples {
            t.push(s)?;
        }
        Ok(t)
    }

    /// Build from `(x, y)` points spaced `dt` seconds apart starting at 0.
    pub fn from_points(points: &[(f64, f64)], dt: f64) -> Result<Self> {
        Self::from_samples(
            points
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| TrajectorySample::new(i as f64 * dt, x, y))
                .collect(),
        )
    }

    fn last_time(&self) -> Option<f64> {
        let s = self.samples.last().map(|s| s.t_s);
        let g = self.gaps.last().copied();
        match (s, g) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }

    fn check_time(&self, t_s: f64) -> Result<()> {
        if !t_s.is_finite() {
            return Err(Error::Validation(format!("timestamp must be finite, got {t_s}")));
        }
        if let Some(last) = self.last_time() {
            if t_s <= last {
                return Err(Error::Sequencing(format!(
                    "timestamps must increase strictly: {t_s} follows {last}"
                )));
            }
        }
        Ok(())
    }

    pub fn push(&mut self, s: TrajectorySample) -> Result<()> {
        self.check_time(s.t_s)?;
        if !(s.x_mm.is_finite() && s.y_mm.is_finite()) {
            return Err(Error::Validation(format!("non-finite position at t = {}", s.t_s)));
        }
        self.samples.push(s);
        Ok(())
    }

    pub fn push_gap(&mut self, t_s: f64) -> Result<()> {
        self.check_time(t_s)?;
        self.gaps.push(t_s);
        Ok(())
    }

    pub fn samples(&self) -> &[TrajectorySample] {
        &self.samples
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples.iter().map(|s| (s.x_mm, s.y_mm))
    }

    /// Samples (not gaps) with `start <= t < end`.
    pub fn window(&self, start: f64, end: f64) -> Trajectory {
        Trajectory {
            samples: self.samples.iter().copied().filter(|s| s.t_s >= start && s.t_s < end).collect(),
            gaps: self.gaps.iter().copied().filter(|&t| t >= start && t < end).collect(),
        }
    }

    /// Copy with every sample moved by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Trajectory {
        Trajectory {
            samples: self
                .samples
                .iter()
                .map(|s| TrajectorySample::new(s.t_s, s.x_mm + dx, s.y_mm + dy))
                .collect(),
            gaps: self.gaps.clone(),
        }
    }

    /// Polyline length through the samples, mm.
    pub fn path_length(&self) -> f64 {
        self.samples.windows(2).map(|w| w[0].distance_to(&w[1])).sum()
    }

    pub fn duration(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.t_s - a.t_s,
            _ => 0.0,
        }
    }

    /// Position at time `t` by linear interpolation, clamped to the ends.
    pub fn position_at(&self, t: f64) -> Option<(f64, f64)> {
        let s = &self.samples;
        let first = s.first()?;
        let last = s.last()?;
        if t <= first.t_s {
            return Some((first.x_mm, first.y_mm));
        }
        if t >= last.t_s {
            return Some((last.x_mm, last.y_mm));
        }
        let i = s.partition_point(|p| p.t_s <= t);
        let (a, b) = (&s[i - 1], &s[i]);
        let u = (t - a.t_s) / (b.t_s - a.t_s);
        Some((a.x_mm + u * (b.x_mm - a.x_mm), a.y_mm + u * (b.y_mm - a.y_mm)))
    }

    /// CSV with header `t_s,x_mm,y_mm`; gap rows leave the coordinates empty.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut gi = 0;
        let mut rows = Vec::with_capacity(self.samples.len() + self.gaps.len());
        for s in &self.samples {
            while gi < self.gaps.len() && self.gaps[gi] < s.t_s {
                rows.push(CsvRow {
                    t_s: self.gaps[gi],
                    x_mm: None,
                    y_mm: None,
                });
                gi += 1;
            }
            rows.push(CsvRow {
                t_s: s.t_s,
                x_mm: Some(s.x_mm),
                y_mm: Some(s.y_mm),
            });
        }
        rows.extend(self.gaps[gi..].iter().map(|&t| CsvRow {
            t_s: t,
            x_mm: None,
            y_mm: None,
        }));
        if rows.is_empty() {
            out.write_record(["t_s", "x_mm", "y_mm"])?;
        }
        for r in rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t_s", "x_mm", "y_mm"] {
            return Err(Error::Parse(format!("expected header t_s,x_mm,y_mm, got {headers:?}")));
        }
        let mut t = Trajectory::new();
        for row in rdr.deserialize() {
            let row: CsvRow = row?;
            match (row.x_mm, row.y_mm) {
                (Some(x), Some(y)) => t.push(TrajectorySample::new(row.t_s, x, y))?,
                (None, None) => t.push_gap(row.t_s)?,
                _ => return Err(Error::Parse(format!("row at t = {} has only one coordinate", row.t_s))),
            }
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamps_must_increase() {
        let mut t = Trajectory::new();
        t.push(TrajectorySample::new(0.0, 0.0, 0.0)).unwrap();
        assert!(matches!(t.push(TrajectorySample::new(0.0, 1.0, 0.0)), Err(Error::Sequencing(_))));
        t.push_gap(0.1).unwrap();
        assert!(matches!(t.push(TrajectorySample::new(0.05, 1.0, 0.0)), Err(Error::Sequencing(_))));
        assert!(t.push(TrajectorySample::new(0.2, f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn csv_keeps_gaps() {
        let mut t = Trajectory::new();
        t.push(TrajectorySample::new(0.0, 0.5, -0.25)).unwrap();
        t.push_gap(0.04).unwrap();
        t.push(TrajectorySample::new(0.08, 0.125, 1.0)).unwrap();
        t.push_gap(0.12).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,x_mm,y_mm\n0.0,0.5,-0.25\n0.04,,\n"));
        assert_eq!(Trajectory::read_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn csv_rejects_bad_input() {
        assert!(Trajectory::read_csv("a,b,c\n1,2,3\n".as_bytes()).is_err());
        assert!(Trajectory::read_csv("t_s,x_mm,y_mm\n1,2,3\n0.5,2,3\n".as_bytes()).is_err());
        assert!(Trajectory::read_csv("t_s,x_mm,y_mm\n1,2,\n".as_bytes()).is_err());
    }

    #[test]
    fn interpolation() {
        let t = Trajectory::from_points(&[(0.0, 0.0), (1.0, 2.0)], 1.0).unwrap();
        assert_eq!(t.position_at(0.25), Some((0.25, 0.5)));
        assert_eq!(t.position_at(-1.0), Some((0.0, 0.0)));
        assert_eq!(t.position_at(3.0), Some((1.0, 2.0)));
        assert_eq!(Trajectory::new().position_at(0.0), None);
    }
}
