//! Magnetostatic primitives: on-axis field of a circular coil, the uniform
//! field of a coaxial coil pair, and force/torque on a point dipole.
//!
//! Coil fields are scaled by an effective core multiplier so that an iron
//! core can be represented without a B-H model. The plant is calibrated from
//! measured current/displacement data, so these functions inform structure
//! rather than drive the simulation directly.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Permeability of free space, T·m/A.
pub const MU_0: f64 = 4.0e-7 * std::f64::consts::PI;

/// Default finite-difference step for [`dipole_force`], in meters.
pub const FORCE_STEP_M: f64 = 1e-5;

/// Maximum angle between two coil axes that still counts as coaxial.
pub const COAXIAL_TOLERANCE_RAD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoilGeometry {
    /// Loop radius, m.
    pub radius: f64,
    pub turns: u32,
    /// Unit vector along the coil axis.
    pub axis: Vector3<f64>,
    /// Coil center, m.
    pub center: Vector3<f64>,
    /// Effective permeability multiplier standing in for the iron core.
    pub core_gain: f64,
}

impl CoilGeometry {
    pub fn new(radius: f64, turns: u32, axis: Vector3<f64>, center: Vector3<f64>) -> Result<Self> {
        let coil = Self {
            radius,
            turns,
            axis,
            center,
            core_gain: 1.0,
        };
        coil.validate()?;
        Ok(coil)
    }

    pub fn with_core_gain(mut self, core_gain: f64) -> Result<Self> {
        self.core_gain = core_gain;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::Geometry(format!("coil radius must be > 0, got {}", self.radius)));
        }
        if self.turns == 0 {
            return Err(Error::Geometry("coil needs at least one turn".into()));
        }
        if !(self.core_gain.is_finite() && self.core_gain > 0.0) {
            return Err(Error::Geometry(format!("core gain must be > 0, got {}", self.core_gain)));
        }
        let norm = self.axis.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Geometry(format!("coil axis must be a unit vector, |axis| = {norm}")));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::Geometry("coil center must be finite".into()));
        }
        Ok(())
    }

    /// Signed axial coordinate of `point` relative to this coil.
    pub fn axial_coordinate(&self, point: &Vector3<f64>) -> f64 {
        (point - self.center).dot(&self.axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipoleMoment(pub Vector3<f64>);

impl DipoleMoment {
    pub fn new(m: Vector3<f64>) -> Result<Self> {
        if m.iter().all(|c| c.is_finite()) {
            Ok(Self(m))
        } else {
            Err(Error::Domain("dipole moment must be finite".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    /// Flux density, T.
    pub b: Vector3<f64>,
    /// Jacobian dB_i/dx_j, T/m. Only filled when a gradient was requested.
    pub gradient: Option<Matrix3<f64>>,
}

impl FieldSample {
    pub fn uniform(b: Vector3<f64>) -> Self {
        Self { b, gradient: None }
    }

    fn check_finite(&self) -> Result<()> {
        let grad_ok = self.gradient.is_none_or(|g| g.iter().all(|v| v.is_finite()));
        if self.b.iter().all(|v| v.is_finite()) && grad_ok {
            Ok(())
        } else {
            Err(Error::Domain("field sample is not finite".into()))
        }
    }
}

/// Axial flux density of a circular coil at axial distance `z` from its
/// center: `N·μ0·I·a² / (2·(a² + z²)^{3/2})`, scaled by the core gain.
pub fn on_axis_field(coil: &CoilGeometry, current: f64, z: f64) -> Result<f64> {
    coil.validate()?;
    ensure_finite("current", current)?;
    ensure_finite("axial distance", z)?;
    let a2 = coil.radius * coil.radius;
    let denom = 2.0 * (a2 + z * z).powf(1.5);
    Ok(coil.core_gain * f64::from(coil.turns) * MU_0 * current * a2 / denom)
}

/// Closed-form derivative of [`on_axis_field`] with respect to `z`.
pub fn on_axis_field_dz(coil: &CoilGeometry, current: f64, z: f64) -> Result<f64> {
    coil.validate()?;
    ensure_finite("current", current)?;
    ensure_finite("axial distance", z)?;
    let a2 = coil.radius * coil.radius;
    let denom = 2.0 * (a2 + z * z).powf(2.5);
    Ok(-3.0 * coil.core_gain * f64::from(coil.turns) * MU_0 * current * a2 * z / denom)
}

/// Field of a coaxial coil pair driven with the same current, under the
/// uniform-field approximation: the two on-axis contributions are evaluated
/// at the point's axial coordinate and the off-axis offset is ignored.
///
/// The resulting field points along `coil_pos.axis`.
pub fn pair_field(coil_pos: &CoilGeometry, coil_neg: &CoilGeometry, current: f64, point: &Vector3<f64>) -> Result<FieldSample> {
    coil_pos.validate()?;
    coil_neg.validate()?;
    if !point.iter().all(|c| c.is_finite()) {
        return Err(Error::Domain("field point must be finite".into()));
    }
    if coil_pos.radius != coil_neg.radius || coil_pos.turns != coil_neg.turns {
        return Err(Error::Geometry("coil pair must share radius and turn count".into()));
    }
    let axis_angle = coil_pos.axis.dot(&coil_neg.axis).abs().min(1.0).acos();
    if axis_angle > COAXIAL_TOLERANCE_RAD {
        return Err(Error::Geometry(format!(
            "coil axes differ by {axis_angle:.3e} rad; pair is not coaxial"
        )));
    }
    let sep = coil_neg.center - coil_pos.center;
    if sep.norm() > 0.0 {
        let off = sep.normalize().dot(&coil_pos.axis).abs().min(1.0).acos();
        if off > COAXIAL_TOLERANCE_RAD {
            return Err(Error::Geometry(format!(
                "coil centers are offset {off:.3e} rad from the common axis"
            )));
        }
    }
    let axis = coil_pos.axis;
    let b = on_axis_field(coil_pos, current, (point - coil_pos.center).dot(&axis))?
        + on_axis_field(coil_neg, current, (point - coil_neg.center).dot(&axis))?;
    Ok(FieldSample::uniform(axis * b))
}

/// Central-difference derivative of `f` along `dir` using the six-point
/// (sixth-order) stencil.
fn central_derivative<F>(f: &F, point: &Vector3<f64>, dir: &Vector3<f64>, h: f64) -> Result<f64>
where
    F: Fn(&Vector3<f64>) -> Result<f64>,
{
    let at = |k: f64| f(&(point + dir * (k * h)));
    let (p1, p2, p3) = (at(1.0)?, at(2.0)?, at(3.0)?);
    let (m1, m2, m3) = (at(-1.0)?, at(-2.0)?, at(-3.0)?);
    Ok((45.0 * (p1 - m1) - 9.0 * (p2 - m2) + (p3 - m3)) / (60.0 * h))
}

/// Force on a dipole, `∇(m·B)`, by central finite differences with the
/// default step [`FORCE_STEP_M`].
pub fn dipole_force<F>(m: &DipoleMoment, field_fn: F, point: &Vector3<f64>) -> Result<Vector3<f64>>
where
    F: Fn(&Vector3<f64>) -> Result<FieldSample>,
{
    dipole_force_with_step(m, field_fn, point, FORCE_STEP_M)
}

pub fn dipole_force_with_step<F>(m: &DipoleMoment, field_fn: F, point: &Vector3<f64>, h: f64) -> Result<Vector3<f64>>
where
    F: Fn(&Vector3<f64>) -> Result<FieldSample>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let energy = |p: &Vector3<f64>| -> Result<f64> {
        let sample = field_fn(p)?;
        sample.check_finite()?;
        Ok(m.0.dot(&sample.b))
    };
    let mut force = Vector3::zeros();
    for i in 0..3 {
        force[i] = central_derivative(&energy, point, &Vector3::ith(i, 1.0), h)?;
    }
    Ok(force)
}

/// Field sample at `point` with its Jacobian filled in by the same stencil
/// used for the force.
pub fn field_with_gradient<F>(field_fn: F, point: &Vector3<f64>, h: f64) -> Result<FieldSample>
where
    F: Fn(&Vector3<f64>) -> Result<FieldSample>,
{
    let mut sample = field_fn(point)?;
    sample.check_finite()?;
    let mut grad = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let component = |p: &Vector3<f64>| -> Result<f64> { Ok(field_fn(p)?.b[i]) };
            grad[(i, j)] = central_derivative(&component, point, &Vector3::ith(j, 1.0), h)?;
        }
    }
    sample.gradient = Some(grad);
    Ok(sample)
}

/// Torque on a dipole, `m × B`. Exactly zero when `m` and `B` are parallel
/// to within rounding of the cross product.
pub fn dipole_torque(m: &DipoleMoment, b: &Vector3<f64>) -> Vector3<f64> {
    let t = m.0.cross(b);
    if t.norm() <= 8.0 * f64::EPSILON * m.0.norm() * b.norm() {
        Vector3::zeros()
    } else {
        t
    }
}
