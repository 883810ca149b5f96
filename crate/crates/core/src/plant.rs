//! Current-to-spot plant model.
//!
//! Each axis is a damped second-order oscillator driven by its coil-pair
//! current, `d'' + 2ζω·d' + ω²·d = ω²·g·I`, integrated with semi-implicit
//! Euler. The optics map tip deflection onto the target plane with a single
//! linear scale.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::control::{CurrentCommand, MAX_CURRENT_A};
use crate::error::{ensure_finite, Error, Result};
use crate::CONTROL_DT_S;

/// Largest integration step accepted by [`step`], seconds.
pub const MAX_STEP_S: f64 = 1e-3;

/// The workspace clamp sits this fraction beyond the nominal half-width.
pub const SOFT_CLAMP_MARGIN: f64 = 0.10;

/// Per-axis, per-sign gain factors modelling coil and alignment mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainAsymmetry {
    pub x_pos: f64,
    pub x_neg: f64,
    pub y_pos: f64,
    pub y_neg: f64,
}

impl Default for GainAsymmetry {
    fn default() -> Self {
        Self {
            x_pos: 1.0,
            x_neg: 1.0,
            y_pos: 1.0,
            y_neg: 1.0,
        }
    }
}

impl GainAsymmetry {
    fn factor(&self, axis: usize, current: f64) -> f64 {
        match (axis, current >= 0.0) {
            (0, true) => self.x_pos,
            (0, false) => self.x_neg,
            (_, true) => self.y_pos,
            (_, false) => self.y_neg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Spot displacement per ampere of axis current, mm/A.
    pub dc_gain_mm_per_a: f64,
    /// Natural frequency of the x axis, Hz.
    pub natural_frequency_hz: f64,
    /// Ratio of the y-axis natural frequency to the x-axis one.
    pub y_frequency_ratio: f64,
    pub damping_ratio: f64,
    pub working_distance_mm: f64,
    pub spot_diameter_mm: f64,
    pub workspace_halfwidth_mm: f64,
    /// Target-plane displacement per unit tip deflection.
    pub optics_scale: f64,
    /// Lens focal lengths, metadata only.
    pub collimating_focal_mm: f64,
    pub focusing_focal_mm: f64,
    pub asymmetry: GainAsymmetry,
}

/// Natural-frequency ratio of the y axis in the calibrated configuration.
/// The mismatch between the two axes is what bends a diagonal line scan
/// into an ellipse as the drive frequency approaches resonance.
pub const CALIBRATED_Y_FREQUENCY_RATIO: f64 = 1.25;

/// Damping ratio fitted so that a 0.72 mm diagonal line scan deviates from
/// its best-fit line by 50 µm RMS at 48 Hz. Reproduced by
/// `harness::fit_damping_ratio`.
pub const CALIBRATED_DAMPING_RATIO: f64 = 0.179_295_481_122_881;

impl PlantParams {
    /// Default parameters with the fitted damping and axis mismatch.
    pub fn calibrated() -> Self {
        Self {
            y_frequency_ratio: CALIBRATED_Y_FREQUENCY_RATIO,
            damping_ratio: CALIBRATED_DAMPING_RATIO,
            ..Self::default()
        }
    }
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            dc_gain_mm_per_a: 2.0 / MAX_CURRENT_A,
            natural_frequency_hz: 63.0,
            y_frequency_ratio: 1.0,
            damping_ratio: 0.05,
            working_distance_mm: 30.0,
            spot_diameter_mm: 0.57,
            workspace_halfwidth_mm: 2.0,
            optics_scale: 1.0,
            collimating_focal_mm: 12.5,
            focusing_focal_mm: 30.0,
            asymmetry: GainAsymmetry::default(),
        }
    }
}

const KV_KEYS: &[&str] = &[
    "dc_gain_mm_per_a",
    "natural_frequency_hz",
    "y_frequency_ratio",
    "damping_ratio",
    "working_distance_mm",
    "spot_diameter_mm",
    "workspace_halfwidth_mm",
    "optics_scale",
    "collimating_focal_mm",
    "focusing_focal_mm",
    "gain_x_pos",
    "gain_x_neg",
    "gain_y_pos",
    "gain_y_neg",
];

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dc_gain_mm_per_a", self.dc_gain_mm_per_a),
            ("natural_frequency_hz", self.natural_frequency_hz),
            ("y_frequency_ratio", self.y_frequency_ratio),
            ("working_distance_mm", self.working_distance_mm),
            ("spot_diameter_mm", self.spot_diameter_mm),
            ("workspace_halfwidth_mm", self.workspace_halfwidth_mm),
            ("optics_scale", self.optics_scale),
            ("collimating_focal_mm", self.collimating_focal_mm),
            ("focusing_focal_mm", self.focusing_focal_mm),
            ("gain_x_pos", self.asymmetry.x_pos),
            ("gain_x_neg", self.asymmetry.x_neg),
            ("gain_y_pos", self.asymmetry.y_pos),
            ("gain_y_neg", self.asymmetry.y_neg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.damping_ratio > 0.0 && self.damping_ratio < 1.0) {
            return Err(Error::Config(format!(
                "damping_ratio must lie in (0, 1), got {}",
                self.damping_ratio
            )));
        }
        Ok(())
    }

    /// Angular natural frequency of `axis` (0 = x, 1 = y), rad/s.
    pub fn omega(&self, axis: usize) -> f64 {
        let f = if axis == 0 {
            self.natural_frequency_hz
        } else {
            self.natural_frequency_hz * self.y_frequency_ratio
        };
        2.0 * std::f64::consts::PI * f
    }

    /// Per-axis deflection limit beyond which the spot counts as out of the
    /// workspace, mm.
    pub fn soft_clamp_mm(&self) -> f64 {
        self.workspace_halfwidth_mm * (1.0 + SOFT_CLAMP_MARGIN)
    }

    /// Closed-form steady-state gain of `axis` at frequency `f_hz`,
    /// including the DC gain, mm/A.
    pub fn frequency_response(&self, axis: usize, f_hz: f64) -> f64 {
        let wn = self.omega(axis);
        let w = 2.0 * std::f64::consts::PI * f_hz;
        let z = self.damping_ratio;
        let re = wn * wn - w * w;
        let im = 2.0 * z * wn * w;
        self.dc_gain_mm_per_a * wn * wn / (re * re + im * im).sqrt()
    }

    /// Parse a `key = value` configuration. `#` starts a comment; keys not
    /// present keep their default values.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut p = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = f64::from_str(value.trim()).map_err(|e| Error::Config(format!("line {}: {key}: {e}", lineno + 1)))?;
            let slot = match key {
                "dc_gain_mm_per_a" => &mut p.dc_gain_mm_per_a,
                "natural_frequency_hz" => &mut p.natural_frequency_hz,
                "y_frequency_ratio" => &mut p.y_frequency_ratio,
                "damping_ratio" => &mut p.damping_ratio,
                "working_distance_mm" => &mut p.working_distance_mm,
                "spot_diameter_mm" => &mut p.spot_diameter_mm,
                "workspace_halfwidth_mm" => &mut p.workspace_halfwidth_mm,
                "optics_scale" => &mut p.optics_scale,
                "collimating_focal_mm" => &mut p.collimating_focal_mm,
                "focusing_focal_mm" => &mut p.focusing_focal_mm,
                "gain_x_pos" => &mut p.asymmetry.x_pos,
                "gain_x_neg" => &mut p.asymmetry.x_neg,
                "gain_y_pos" => &mut p.asymmetry.y_pos,
                "gain_y_neg" => &mut p.asymmetry.y_neg,
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {other:?}; expected one of {}",
                        lineno + 1,
                        KV_KEYS.join(", ")
                    )))
                }
            };
            *slot = value;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }

    /// Serialize as `key = value` lines. Values use the shortest
    /// round-tripping representation.
    pub fn to_kv_string(&self) -> String {
        let values = [
            self.dc_gain_mm_per_a,
            self.natural_frequency_hz,
            self.y_frequency_ratio,
            self.damping_ratio,
            self.working_distance_mm,
            self.spot_diameter_mm,
            self.workspace_halfwidth_mm,
            self.optics_scale,
            self.collimating_focal_mm,
            self.focusing_focal_mm,
            self.asymmetry.x_pos,
            self.asymmetry.x_neg,
            self.asymmetry.y_pos,
            self.asymmetry.y_neg,
        ];
        let mut out = String::new();
        for (k, v) in KV_KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v:?}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PlantState {
    /// Tip deflection per axis, mm.
    pub deflection_mm: [f64; 2],
    /// Tip velocity per axis, mm/s.
    pub velocity_mm_s: [f64; 2],
    pub t_s: f64,
}

impl PlantState {
    pub fn at_rest() -> Self {
        Self::default()
    }

    pub fn is_finite(&self) -> bool {
        self.deflection_mm.iter().chain(&self.velocity_mm_s).all(|v| v.is_finite()) && self.t_s.is_finite()
    }

    pub fn speed_mm_s(&self) -> f64 {
        self.velocity_mm_s[0].hypot(self.velocity_mm_s[1])
    }

    /// Quadratic energy analog that the integrator is guaranteed not to
    /// increase when unforced: `v² + ω²d² − c·d·v` per axis, with the cross
    /// coefficient `c` set by the step size and damping.
    pub fn energy_analog(&self, params: &PlantParams, dt: f64) -> f64 {
        let z = params.damping_ratio;
        (0..2)
            .map(|axis| {
                let w = params.omega(axis);
                let h = dt;
                let c = h * h * w * w * w * (1.0 - 2.0 * h * w * z) / (h * w + z - 2.0 * h * h * w * w * z);
                let d = self.deflection_mm[axis];
                let v = self.velocity_mm_s[axis];
                v * v + w * w * d * d - c * d * v
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotSample {
    pub x_mm: f64,
    pub y_mm: f64,
    pub diameter_mm: f64,
    pub t_s: f64,
}

/// Advance the plant by one step under `command`.
pub fn step(state: &PlantState, command: &CurrentCommand, dt: f64, params: &PlantParams) -> Result<PlantState> {
    step_currents(state, [command.amps_x, command.amps_y], dt, params)
}

/// Same as [`step`] but takes the analog coil currents directly, so that
/// drive noise can be injected after DAC quantization.
pub fn step_currents(state: &PlantState, currents: [f64; 2], dt: f64, params: &PlantParams) -> Result<PlantState> {
    if !(dt > 0.0 && dt <= MAX_STEP_S) {
        return Err(Error::Config(format!("step dt must lie in (0, {MAX_STEP_S}] s, got {dt}")));
    }
    ensure_finite("x current", currents[0])?;
    ensure_finite("y current", currents[1])?;
    if !state.is_finite() {
        return Err(Error::Domain("plant state is not finite".into()));
    }
    let z = params.damping_ratio;
    let mut next = *state;
    for (axis, &current) in currents.iter().enumerate() {
        let w = params.omega(axis);
        let target = params.dc_gain_mm_per_a * params.asymmetry.factor(axis, current) * current;
        let d = state.deflection_mm[axis];
        let v = state.velocity_mm_s[axis];
        let accel = w * w * (target - d) - 2.0 * z * w * v;
        let v_next = v + dt * accel;
        next.velocity_mm_s[axis] = v_next;
        next.deflection_mm[axis] = d + dt * v_next;
    }
    next.t_s = state.t_s + dt;
    Ok(next)
}

/// Map tip deflection onto the target plane.
pub fn project_to_target(state: &PlantState, params: &PlantParams) -> Result<SpotSample> {
    let limit = params.soft_clamp_mm();
    let [dx, dy] = state.deflection_mm;
    if !(dx.abs() <= limit && dy.abs() <= limit) {
        return Err(Error::WorkspaceExceeded { x: dx, y: dy, limit });
    }
    Ok(SpotSample {
        x_mm: params.optics_scale * dx,
        y_mm: params.optics_scale * dy,
        diameter_mm: params.spot_diameter_mm,
        t_s: state.t_s,
    })
}

/// Static spot displacement produced by a constant axis current, mm.
/// Currents beyond the driver limit are reported as a saturation error
/// carrying the clamped value.
pub fn dc_response(current: f64, params: &PlantParams) -> Result<f64> {
    ensure_finite("current", current)?;
    if current.abs() > MAX_CURRENT_A {
        return Err(Error::Saturation {
            requested: current,
            clamped: current.clamp(-MAX_CURRENT_A, MAX_CURRENT_A),
        });
    }
    Ok(params.dc_gain_mm_per_a * current)
}

/// A plant with its own state, stepped at the control rate.
#[derive(Debug, Clone)]
pub struct Plant {
    pub params: PlantParams,
    pub state: PlantState,
}

impl Plant {
    pub fn new(params: PlantParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            state: PlantState::at_rest(),
        })
    }

    pub fn step(&mut self, currents: [f64; 2]) -> Result<&PlantState> {
        self.state = step_currents(&self.state, currents, CONTROL_DT_S, &self.params)?;
        Ok(&self.state)
    }

    pub fn spot(&self) -> Result<SpotSample> {
        project_to_target(&self.state, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::quantize_amps;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn amps(x: f64, y: f64) -> CurrentCommand {
        CurrentCommand::from_amps(x, y)
    }

    fn run_constant(params: &PlantParams, currents: [f64; 2], seconds: f64) -> PlantState {
        let mut s = PlantState::at_rest();
        let n = (seconds / CONTROL_DT_S).round() as usize;
        for _ in 0..n {
            s = step_currents(&s, currents, CONTROL_DT_S, params).unwrap();
        }
        s
    }

    #[test]
    fn steady_state_under_full_current() {
        let p = PlantParams::default();
        let s = run_constant(&p, [0.165, 0.0], 3.0);
        assert_relative_eq!(s.deflection_mm[0], 2.0, max_relative = 1e-9);
        assert!(s.velocity_mm_s[0].abs() < 1e-6);
    }

    #[test]
    fn rest_stays_at_rest() {
        let p = PlantParams::default();
        let s = step(&PlantState::at_rest(), &amps(0.0, 0.0), CONTROL_DT_S, &p).unwrap();
        assert_eq!(s.deflection_mm, [0.0, 0.0]);
        assert_eq!(s.velocity_mm_s, [0.0, 0.0]);
    }

    #[test]
    fn invalid_steps_are_rejected() {
        let p = PlantParams::default();
        let s = PlantState::at_rest();
        assert!(matches!(step(&s, &amps(0.0, 0.0), 0.0, &p), Err(Error::Config(_))));
        assert!(matches!(step(&s, &amps(0.0, 0.0), 2e-3, &p), Err(Error::Config(_))));
        assert!(matches!(
            step_currents(&s, [f64::NAN, 0.0], CONTROL_DT_S, &p),
            Err(Error::Domain(_))
        ));
    }

    /// Steady-state amplitude of the simulated axis under a sinusoidal drive,
    /// measured after transients have died out.
    fn simulated_gain(p: &PlantParams, f: f64) -> f64 {
        let i0 = 0.01;
        let tau = 1.0 / (p.damping_ratio * p.omega(0));
        let settle = (12.0 * tau).max(50.0 / f);
        let measure = (4.0 / f).max(0.2);
        let n_settle = (settle / CONTROL_DT_S).ceil() as usize;
        let n_measure = (measure / CONTROL_DT_S).ceil() as usize;
        let mut s = PlantState::at_rest();
        let mut peak: f64 = 0.0;
        for k in 0..n_settle + n_measure {
            let t = k as f64 * CONTROL_DT_S;
            let i = i0 * (2.0 * PI * f * t).sin();
            s = step_currents(&s, [i, 0.0], CONTROL_DT_S, p).unwrap();
            if k >= n_settle {
                peak = peak.max(s.deflection_mm[0].abs());
            }
        }
        peak / i0
    }

    #[test]
    fn resonant_magnification_is_one_over_two_zeta() {
        let p = PlantParams::default();
        let magnification = simulated_gain(&p, p.natural_frequency_hz) / p.dc_gain_mm_per_a;
        assert_relative_eq!(magnification, 1.0 / (2.0 * p.damping_ratio), max_relative = 0.02);
    }

    #[test]
    fn frequency_response_matches_closed_form() {
        let p = PlantParams::default();
        for f in [1.0, 5.0, 10.0, 20.0, 48.0, 63.0, 100.0] {
            let sim = simulated_gain(&p, f);
            let closed = p.frequency_response(0, f);
            assert_relative_eq!(sim, closed, max_relative = 0.02);
        }
    }

    #[test]
    fn projection_examples() {
        let p = PlantParams::default();
        let origin = project_to_target(&PlantState::at_rest(), &p).unwrap();
        assert_eq!((origin.x_mm, origin.y_mm), (0.0, 0.0));
        let s = PlantState {
            deflection_mm: [2.0, 0.0],
            ..Default::default()
        };
        let spot = project_to_target(&s, &p).unwrap();
        assert_eq!((spot.x_mm, spot.y_mm, spot.diameter_mm), (2.0, 0.0, 0.57));
        let scaled = PlantParams {
            optics_scale: 1.2,
            ..Default::default()
        };
        let s = PlantState {
            deflection_mm: [1.0, 1.0],
            ..Default::default()
        };
        let spot = project_to_target(&s, &scaled).unwrap();
        assert_relative_eq!(spot.x_mm, 1.2);
        assert_relative_eq!(spot.y_mm, 1.2);
    }

    #[test]
    fn projection_beyond_clamp_is_an_error() {
        let p = PlantParams::default();
        let s = PlantState {
            deflection_mm: [0.0, -2.25],
            ..Default::default()
        };
        assert!(matches!(project_to_target(&s, &p), Err(Error::WorkspaceExceeded { .. })));
        let edge = PlantState {
            deflection_mm: [2.2, -2.2],
            ..Default::default()
        };
        assert!(project_to_target(&edge, &p).is_ok());
    }

    #[test]
    fn dc_response_examples() {
        let p = PlantParams::default();
        assert_relative_eq!(dc_response(0.165, &p).unwrap(), 2.0, max_relative = 1e-12);
        assert_eq!(dc_response(0.0, &p).unwrap(), 0.0);
        assert_relative_eq!(dc_response(-0.0825, &p).unwrap(), -1.0, max_relative = 1e-12);
        match dc_response(0.2, &p) {
            Err(Error::Saturation { clamped, .. }) => assert_eq!(clamped, 0.165),
            other => panic!("expected saturation, got {other:?}"),
        }
    }

    #[test]
    fn unforced_energy_never_increases() {
        let p = PlantParams::default();
        let mut s = PlantState {
            deflection_mm: [1.5, -0.7],
            velocity_mm_s: [30.0, 120.0],
            t_s: 0.0,
        };
        let mut e = s.energy_analog(&p, CONTROL_DT_S);
        for _ in 0..20_000 {
            s = step_currents(&s, [0.0, 0.0], CONTROL_DT_S, &p).unwrap();
            let e_next = s.energy_analog(&p, CONTROL_DT_S);
            assert!(e_next <= e * (1.0 + 1e-12), "{e_next} > {e}");
            e = e_next;
        }
    }

    #[test]
    fn kv_config_round_trip_and_errors() {
        let p = PlantParams {
            damping_ratio: 0.1234,
            y_frequency_ratio: 1.25,
            ..Default::default()
        };
        let text = format!("# calibrated\n{}", p.to_kv_string());
        assert_eq!(PlantParams::from_kv_str(&text).unwrap(), p);
        assert!(matches!(PlantParams::from_kv_str("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(PlantParams::from_kv_str("damping_ratio = 1.5"), Err(Error::Config(_))));
        assert!(matches!(PlantParams::from_kv_str("damping_ratio"), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn axes_are_decoupled(ix in -0.165f64..0.165, n in 1usize..400, ratio in 0.8f64..1.5) {
            let p = PlantParams { y_frequency_ratio: ratio, ..Default::default() };
            let mut s = PlantState::at_rest();
            for _ in 0..n {
                s = step_currents(&s, [ix, 0.0], CONTROL_DT_S, &p).unwrap();
            }
            prop_assert_eq!(s.deflection_mm[1], 0.0);
            prop_assert_eq!(s.velocity_mm_s[1], 0.0);
        }

        #[test]
        fn response_is_linear_in_current(levels in prop::collection::vec(-2047i32..=2047, 1..200), alpha in -1.0f64..1.0) {
            let p = PlantParams::default();
            let mut a = PlantState::at_rest();
            let mut b = PlantState::at_rest();
            for l in levels {
                let i = quantize_amps(f64::from(l) * crate::control::AMPS_PER_LEVEL) as f64 * crate::control::AMPS_PER_LEVEL;
                a = step_currents(&a, [i, -i], CONTROL_DT_S, &p).unwrap();
                b = step_currents(&b, [alpha * i, -alpha * i], CONTROL_DT_S, &p).unwrap();
                for axis in 0..2 {
                    let scaled = alpha * a.deflection_mm[axis];
                    let tol = 1e-9 * a.deflection_mm[axis].abs().max(1e-6);
                    prop_assert!((b.deflection_mm[axis] - scaled).abs() <= tol);
                }
            }
        }

        #[test]
        fn stepping_is_deterministic(i in prop::array::uniform2(-0.165f64..0.165), n in 1usize..300) {
            let p = PlantParams::default();
            let run = || {
                let mut s = PlantState::at_rest();
                for _ in 0..n {
                    s = step_currents(&s, i, CONTROL_DT_S, &p).unwrap();
                }
                s
            };
            let (a, b) = (run(), run());
            prop_assert_eq!(a.deflection_mm[0].to_bits(), b.deflection_mm[0].to_bits());
            prop_assert_eq!(a.velocity_mm_s[1].to_bits(), b.velocity_mm_s[1].to_bits());
        }
    }
}
