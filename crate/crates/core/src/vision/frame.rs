use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::plant::SpotSample;

/// Pixel scale of the reference camera calibration: 41 pixels per mm.
pub const DEFAULT_UM_PER_PX: f64 = 1000.0 / 41.0;

/// Pixel scale implied by a calibration run of `pixels` pixels across a
/// known `length_mm`, in µm per pixel.
pub fn pixel_scale_from_calibration(pixels: f64, length_mm: f64) -> Result<f64> {
    if !(pixels > 0.0 && length_mm > 0.0 && pixels.is_finite() && length_mm.is_finite()) {
        return Err(Error::Config(format!(
            "calibration needs a positive pixel count and length, got {pixels} px over {length_mm} mm"
        )));
    }
    Ok(length_mm * 1000.0 / pixels)
}

/// Camera geometry and rendering options. The optical axis passes through
/// the center pixel; image rows grow downward while plane y grows upward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub width: usize,
    pub height: usize,
    pub um_per_px: f64,
    /// Background level of all three channels.
    pub background: u8,
    /// Standard deviation of additive per-pixel noise, in 8-bit counts.
    pub noise_std: f64,
}

impl Default for FrameGeometry {
    fn default() -> Self {
        Self {
            width: 241,
            height: 241,
            um_per_px: DEFAULT_UM_PER_PX,
            background: 16,
            noise_std: 0.0,
        }
    }
}

impl FrameGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("frame must be at least 1×1 px".into()));
        }
        if !(self.um_per_px.is_finite() && self.um_per_px > 0.0) {
            return Err(Error::Config(format!("pixel scale must be > 0, got {}", self.um_per_px)));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config(format!("noise std must be ≥ 0, got {}", self.noise_std)));
        }
        Ok(())
    }

    pub fn mm_per_px(&self) -> f64 {
        self.um_per_px / 1000.0
    }

    fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    /// Fractional pixel coordinates `(col, row)` of a plane point.
    pub fn plane_to_pixel(&self, x_mm: f64, y_mm: f64) -> (f64, f64) {
        let (cx, cy) = self.center();
        let s = self.mm_per_px();
        (cx + x_mm / s, cy - y_mm / s)
    }

    pub fn pixel_to_plane(&self, col: f64, row: f64) -> (f64, f64) {
        let (cx, cy) = self.center();
        let s = self.mm_per_px();
        ((col - cx) * s, (cy - row) * s)
    }
}

/// An 8-bit RGB image of the target plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
    pub t_s: f64,
    pub um_per_px: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    t_s: f64,
    um_per_px: f64,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<u8>, t_s: f64, um_per_px: f64) -> Result<Self> {
        let f = Self {
            width,
            height,
            data,
            t_s,
            um_per_px,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn filled(geom: &FrameGeometry, t_s: f64, rgb: [u8; 3]) -> Result<Self> {
        geom.validate()?;
        let data = rgb.iter().copied().cycle().take(geom.width * geom.height * 3).collect();
        Self::new(geom.width, geom.height, data, t_s, geom.um_per_px)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.width * self.height * 3 {
            return Err(Error::Validation(format!(
                "buffer holds {} bytes, expected {}×{}×3",
                self.data.len(),
                self.width,
                self.height
            )));
        }
        if !(self.um_per_px.is_finite() && self.um_per_px > 0.0) {
            return Err(Error::Validation(format!("pixel scale must be > 0, got {}", self.um_per_px)));
        }
        ensure_finite("frame timestamp", self.t_s)
    }

    pub fn geometry(&self) -> FrameGeometry {
        FrameGeometry {
            width: self.width,
            height: self.height,
            um_per_px: self.um_per_px,
            background: 0,
            noise_std: 0.0,
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, col: usize, row: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn red(&self, col: usize, row: usize) -> u8 {
        self.data[(row * self.width + col) * 3]
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    /// Reads a binary P6 image; timestamp and scale come from the sidecar.
    pub fn read_ppm<R: Read>(r: R, t_s: f64, um_per_px: f64) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut tokens = Vec::with_capacity(4);
        let mut line = String::new();
        while tokens.len() < 4 {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Parse("truncated PPM header".into()));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_owned));
        }
        if tokens.len() != 4 || tokens[0] != "P6" {
            return Err(Error::Parse(format!("not a binary PPM header: {tokens:?}")));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad PPM header field {s:?}")));
        let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
        if maxval != 255 {
            return Err(Error::Parse(format!("only 8-bit PPM is supported, maxval {maxval}")));
        }
        let mut data = vec![0u8; width * height * 3];
        r.read_exact(&mut data)
            .map_err(|_| Error::Parse("PPM pixel data is truncated".into()))?;
        Self::new(width, height, data, t_s, um_per_px)
    }

    /// Writes `path` (PPM) and a JSON sidecar next to it.
    pub fn save_fixture(&self, path: &Path) -> Result<()> {
        self.write_ppm(std::io::BufWriter::new(std::fs::File::create(path)?))?;
        let side = Sidecar {
            t_s: self.t_s,
            um_per_px: self.um_per_px,
        };
        std::fs::write(path.with_extension("json"), serde_json::to_string(&side)?)?;
        Ok(())
    }

    pub fn load_fixture(path: &Path) -> Result<Self> {
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
        Self::read_ppm(std::fs::File::open(path)?, side.t_s, side.um_per_px)
    }
}

/// Render the spot as an isotropic Gaussian (σ = diameter/4) in the red
/// channel over a uniform background.
pub fn render_frame(spot: &SpotSample, geom: &FrameGeometry, noise_seed: u64) -> Result<Frame> {
    geom.validate()?;
    ensure_finite("spot x", spot.x_mm)?;
    ensure_finite("spot y", spot.y_mm)?;
    if !(spot.diameter_mm > 0.0) {
        return Err(Error::Domain(format!("spot diameter must be > 0, got {}", spot.diameter_mm)));
    }
    let (u, v) = geom.plane_to_pixel(spot.x_mm, spot.y_mm);
    let (w, h) = (geom.width as f64, geom.height as f64);
    if !(u >= -0.5 && u < w - 0.5 && v >= -0.5 && v < h - 0.5) {
        return Err(Error::OutOfFrame {
            x: spot.x_mm,
            y: spot.y_mm,
        });
    }
    let bg = geom.background;
    let mut frame = Frame::filled(geom, spot.t_s, [bg, bg, bg])?;
    let sigma_px = spot.diameter_mm / 4.0 / geom.mm_per_px();
    let reach = (6.0 * sigma_px).ceil();
    let c0 = (u - reach).floor().max(0.0) as usize;
    let c1 = ((u + reach).ceil() as usize).min(geom.width - 1);
    let r0 = (v - reach).floor().max(0.0) as usize;
    let r1 = ((v + reach).ceil() as usize).min(geom.height - 1);
    let span = 255.0 - f64::from(bg);
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    for row in r0..=r1 {
        let dy = row as f64 - v;
        for col in c0..=c1 {
            let dx = col as f64 - u;
            let g = (-(dx * dx + dy * dy) * inv).exp();
            let i = (row * geom.width + col) * 3;
            frame.data[i] = (f64::from(bg) + span * g).round().min(255.0) as u8;
        }
    }
    if geom.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let n = Normal::new(0.0, geom.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        for p in frame.data.iter_mut() {
            *p = (f64::from(*p) + n.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(frame)
}
