use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{quantize_level, CurrentCommand};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanAxis {
    X,
    Y,
    /// Both axes driven in phase along a line at `angle_rad` from +x.
    Pair {
        angle_rad: f64,
    },
}

/// Sinusoidal scan `A·sin(2πft + φ)`, amplitude in DAC levels along the scan
/// direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanWaveform {
    pub amplitude_levels: f64,
    pub frequency_hz: f64,
    pub axis: ScanAxis,
    pub phase_rad: f64,
}

impl ScanWaveform {
    pub fn new(amplitude_levels: f64, frequency_hz: f64, axis: ScanAxis) -> Result<Self> {
        let w = Self {
            amplitude_levels,
            frequency_hz,
            axis,
            phase_rad: 0.0,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::Config(format!("scan frequency must be > 0, got {}", self.frequency_hz)));
        }
        if !(self.amplitude_levels.is_finite() && self.amplitude_levels.abs() <= 2047.0) {
            return Err(Error::Config(format!(
                "scan amplitude must lie within the DAC range, got {} levels",
                self.amplitude_levels
            )));
        }
        if !self.phase_rad.is_finite() {
            return Err(Error::Config("scan phase must be finite".into()));
        }
        if let ScanAxis::Pair { angle_rad } = self.axis {
            if !angle_rad.is_finite() {
                return Err(Error::Config("scan angle must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn period_s(&self) -> f64 {
        1.0 / self.frequency_hz
    }
}

/// Quantized command of the scan waveform at time `t_s`.
pub fn waveform_sample(w: &ScanWaveform, t_s: f64) -> CurrentCommand {
    let s = w.amplitude_levels * (2.0 * PI * w.frequency_hz * t_s + w.phase_rad).sin();
    let (x, y) = match w.axis {
        ScanAxis::X => (s, 0.0),
        ScanAxis::Y => (0.0, s),
        ScanAxis::Pair { angle_rad } => (s * angle_rad.cos(), s * angle_rad.sin()),
    };
    CurrentCommand::from_levels(quantize_level(x), quantize_level(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::MAX_LEVEL;
    use crate::plant::PlantParams;
    use crate::CONTROL_DT_S;
    use proptest::prelude::*;

    #[test]
    fn starts_at_zero() {
        let w = ScanWaveform::new(738.0, 48.0, ScanAxis::Pair { angle_rad: 0.3 }).unwrap();
        assert_eq!(waveform_sample(&w, 0.0), CurrentCommand::ZERO);
    }

    #[test]
    fn quarter_period_reaches_amplitude() {
        let w = ScanWaveform::new(500.0, 5.0, ScanAxis::X).unwrap();
        assert_eq!(waveform_sample(&w, 0.05).level_x, 500);
        let wy = ScanWaveform::new(500.0, 5.0, ScanAxis::Y).unwrap();
        let c = waveform_sample(&wy, 0.05);
        assert_eq!((c.level_x, c.level_y), (0, 500));
    }

    #[test]
    fn commanded_path_speed_of_a_line_scan() {
        // 0.72 mm line: half-length 0.36 mm at 2/2047 mm per level.
        let p = PlantParams::default();
        let mm_per_level = p.dc_gain_mm_per_a * crate::control::AMPS_PER_LEVEL;
        let amplitude = (0.36 / mm_per_level).round();
        assert_eq!(amplitude, 368.0);
        let w = ScanWaveform::new(amplitude, 48.0, ScanAxis::X).unwrap();
        let n = (w.period_s() / CONTROL_DT_S).round() as usize * 10;
        let mut path = 0.0;
        let mut prev = waveform_sample(&w, 0.0).level_x;
        for k in 1..=n {
            let l = waveform_sample(&w, k as f64 * CONTROL_DT_S).level_x;
            path += f64::from((l - prev).abs()) * mm_per_level;
            prev = l;
        }
        let speed = path / (n as f64 * CONTROL_DT_S);
        assert!((speed - 69.1).abs() / 69.1 < 0.005, "speed {speed}");
    }

    #[test]
    fn invalid_waveforms() {
        assert!(ScanWaveform::new(100.0, 0.0, ScanAxis::X).is_err());
        assert!(ScanWaveform::new(3000.0, 5.0, ScanAxis::X).is_err());
    }

    proptest! {
        #[test]
        fn waveform_is_periodic(k in 0u32..50, tick in 0u32..4000, f_exp in 0i32..6) {
            // f = 2^e Hz and t on the 1/4096 s grid keep t·f exact.
            let f = f64::from(1u32 << f_exp);
            let w = ScanWaveform::new(1500.0, f, ScanAxis::X).unwrap();
            let t = f64::from(tick) / 4096.0;
            let a = waveform_sample(&w, t);
            let b = waveform_sample(&w, t + f64::from(k) / f);
            prop_assert!((a.level_x - b.level_x).abs() <= 1);
        }

        #[test]
        fn samples_stay_in_range(a in -2047.0f64..2047.0, f in 0.1f64..200.0, t in 0.0f64..10.0, ang in -4.0f64..4.0) {
            let w = ScanWaveform::new(a, f, ScanAxis::Pair { angle_rad: ang }).unwrap();
            let c = waveform_sample(&w, t);
            prop_assert!(c.level_x.abs() <= MAX_LEVEL && c.level_y.abs() <= MAX_LEVEL);
        }
    }
}
