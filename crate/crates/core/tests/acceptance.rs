//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! line per criterion and exits nonzero if any fails.
//!
//! `cargo test --release -p magscan-core --test acceptance`

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use magscan_core::harness::{
    calibrated_noise, default_grid, measure_line_scan, reference_eight, run_linearity_sweep, run_repeatability, run_teleop_session,
    run_workspace_map, scripted_poses, to_json_file_string, ExperimentRecord, LinearityConfig, RepeatabilityConfig, ScriptedTrace,
    SessionLog, ShapeId, TargetShape, TeleopConfig, WorkspaceConfig,
};
use magscan_core::magnetics::{
    dipole_force, dipole_torque, on_axis_field, on_axis_field_dz, CoilGeometry, DipoleMoment, FieldSample, MU_0,
};
use magscan_core::metrics::{pointwise_error, rmse, Densify, Trajectory};
use magscan_core::plant::{PlantParams, SpotSample};
use magscan_core::vision::{detect_spot, pixel_scale_from_calibration, render_frame, DetectionConfig, FrameGeometry};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Check = fn(&mut Records) -> Result<Outcome, String>;

/// Serialized reports from each experiment, for the determinism check.
#[derive(Default)]
struct Records {
    first: Vec<(String, String)>,
}

fn json<C: serde::Serialize, R: serde::Serialize>(name: &str, config: C, seed: u64, report: R) -> Result<String, String> {
    ExperimentRecord::new(name, config, seed, report)
        .and_then(|r| r.to_json())
        .map_err(|e| e.to_string())
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

fn workspace(rec: &mut Records) -> Result<Outcome, String> {
    let params = PlantParams::calibrated();
    let cfg = WorkspaceConfig::default();
    let t = Instant::now();
    let r = run_workspace_map(&default_grid(), &params, &cfg).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let (fx, fy) = (r.x.ok_or("no x fit")?, r.y.ok_or("no y fit")?);
    let span_ok = |s: f64| (s - 4.0).abs() <= 0.2;
    let pass = span_ok(r.span_x_mm)
        && span_ok(r.span_y_mm)
        && fx.detected.r_squared >= 0.999
        && fy.detected.r_squared >= 0.999
        && r.failures == 0
        && elapsed < Duration::from_secs(10);
    rec.first
        .push(("workspace".into(), json("workspace", (&params, &cfg), cfg.seed, &r)?));
    Ok(outcome(
        pass,
        format!(
            "span {:.3} × {:.3} mm, R² {:.6} / {:.6}, {}",
            r.span_x_mm,
            r.span_y_mm,
            fx.detected.r_squared,
            fy.detected.r_squared,
            secs(elapsed)
        ),
    ))
}

fn sweep_frequencies(params: &PlantParams) -> Vec<f64> {
    let fn_hz = params.natural_frequency_hz;
    (1..=20).map(|k| fn_hz * k as f64 / 20.0).collect()
}

fn linearity(rec: &mut Records) -> Result<Outcome, String> {
    let params = PlantParams::calibrated();
    let cfg = LinearityConfig::default();
    let freqs = sweep_frequencies(&params);
    let t = Instant::now();
    let r = run_linearity_sweep(&freqs, 0.72, &params, &cfg).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let at5 = measure_line_scan(5.0, 0.72, &params, &cfg).map_err(|e| e.to_string())?;
    let limit = r.stable_limit_hz.unwrap_or(f64::NAN);
    let pass = r.monotone_below_natural && at5.rmse_mm <= 0.010 && (limit - 48.0).abs() <= 2.0 && elapsed < Duration::from_secs(60);
    rec.first.push((
        "linearity".into(),
        json("linearity", (&params, &cfg, &freqs), cfg.seed, (&r, &at5))?,
    ));
    Ok(outcome(
        pass,
        format!(
            "monotone to {:.1} Hz: {}, 5 Hz RMSE {:.2} µm, stable limit {:.1} Hz, {} for {} frequencies",
            r.natural_frequency_hz,
            r.monotone_below_natural,
            at5.rmse_mm * 1e3,
            limit,
            secs(elapsed),
            freqs.len()
        ),
    ))
}

fn repeatability(rec: &mut Records) -> Result<Outcome, String> {
    let params = PlantParams::calibrated();
    let eight = reference_eight().map_err(|e| e.to_string())?;
    let quiet = RepeatabilityConfig::default();
    let noisy = RepeatabilityConfig {
        noise: Some(calibrated_noise()),
        ..RepeatabilityConfig::default()
    };
    let t = Instant::now();
    let (a, _) = run_repeatability(&eight, &params, &quiet).map_err(|e| e.to_string())?;
    let ta = t.elapsed();
    let t = Instant::now();
    let (b, _) = run_repeatability(&eight, &params, &noisy).map_err(|e| e.to_string())?;
    let tb = t.elapsed();
    let limit = Duration::from_secs(60);
    let pass = a.passes == 10
        && a.rate_hz == 1.0
        && a.mean_rmse_mm <= 0.0122
        && (0.011..=0.031).contains(&b.mean_rmse_mm)
        && ta < limit
        && tb < limit;
    rec.first
        .push(("repeat-noiseless".into(), json("repeat", (&params, &quiet), quiet.seed, &a)?));
    rec.first
        .push(("repeat-noise".into(), json("repeat", (&params, &noisy), noisy.seed, &b)?));
    Ok(outcome(
        pass,
        format!(
            "noiseless mean {:.2} µm ({}), calibrated noise mean {:.2} µm ({})",
            a.mean_rmse_mm * 1e3,
            secs(ta),
            b.mean_rmse_mm * 1e3,
            secs(tb)
        ),
    ))
}

fn scripted_session(offset_mm: f64) -> Result<SessionLog, String> {
    let shape = TargetShape::standard(ShapeId::T1).map_err(|e| e.to_string())?;
    let cfg = TeleopConfig::default();
    let script = ScriptedTrace {
        offset_mm,
        ..ScriptedTrace::default()
    };
    let poses = scripted_poses(&shape, &script, &cfg).map_err(|e| e.to_string())?;
    run_teleop_session(&shape, &poses, &cfg, None).map_err(|e| e.to_string())
}

fn teleop(rec: &mut Records) -> Result<Outcome, String> {
    let exact = scripted_session(0.0)?;
    let offset = scripted_session(0.039)?;
    let (e, o) = (
        exact.report.rmse_mm().ok_or("perfect replay scored no samples")?,
        offset.report.rmse_mm().ok_or("offset trace scored no samples")?,
    );
    let pass = e <= 0.0122 && (o - 0.039).abs() <= 0.013 && !exact.meta.partial && !offset.meta.partial;
    for (name, log) in [("teleop-exact", &exact), ("teleop-offset", &offset)] {
        rec.first
            .push((name.into(), to_json_file_string(&log.report).map_err(|e| e.to_string())?));
    }
    Ok(outcome(
        pass,
        format!("T1 perfect replay {:.2} µm, 39 µm offset {:.2} µm", e * 1e3, o * 1e3),
    ))
}

/// All-pairs nearest distance, written out independently of the library.
fn brute_nearest(executed: &[(f64, f64)], target: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(executed.len());
    for &(x, y) in executed {
        let mut best = f64::INFINITY;
        for &(tx, ty) in target {
            let (dx, dy) = (x - tx, y - ty);
            let d = (dx * dx + dy * dy).sqrt();
            if d < best {
                best = d;
            }
        }
        out.push(best);
    }
    out
}

fn random_points(rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n = rng.random_range(1..=200);
    let scale = 10f64.powf(rng.random_range(-2.0..1.0));
    (0..n)
        .map(|_| (rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
        .collect()
}

fn metrics(_: &mut Records) -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for _ in 0..100 {
        let (a, b) = (random_points(&mut rng), random_points(&mut rng));
        let ta = Trajectory::from_points(&a, 0.01).map_err(|e| e.to_string())?;
        let tb = Trajectory::from_points(&b, 0.01).map_err(|e| e.to_string())?;
        let got = pointwise_error(&ta, &tb, Densify::Off).map_err(|e| e.to_string())?;
        let want = brute_nearest(&a, &b);
        if got.len() != want.len() || got.iter().zip(&want).any(|(g, w)| g.to_bits() != w.to_bits()) {
            mismatches += 1;
        }
    }
    // (3² + 4² + 12²) / 3 = 169 / 3
    let hand = [
        (vec![3.0, 4.0, 12.0], (169.0f64 / 3.0).sqrt()),
        (vec![0.5], 0.5),
        (vec![1.0, 1.0, 1.0, 1.0, 2.0], (8.0f64 / 5.0).sqrt()),
        (vec![0.001, 0.002], (2.5e-6f64).sqrt()),
    ];
    let mut worst = 0.0f64;
    for (errors, want) in &hand {
        let got = rmse(errors).map_err(|e| e.to_string())?;
        worst = worst.max((got - want).abs() / want);
    }
    Ok(outcome(
        mismatches == 0 && worst <= 1e-12,
        format!("{mismatches}/100 pointwise mismatches, RMSE relative error {worst:.1e}"),
    ))
}

/// Exact field of a straight current element from `a` to `b`.
fn segment_field(a: Vector3<f64>, b: Vector3<f64>, current: f64, p: Vector3<f64>) -> Vector3<f64> {
    let (r1, r2) = (a - p, b - p);
    let (n1, n2) = (r1.norm(), r2.norm());
    let c = r1.cross(&r2);
    let denom = n1 * n2 * (n1 * n2 + r1.dot(&r2));
    c * (MU_0 * current / (4.0 * PI) * (n1 + n2) / denom)
}

/// Loop of radius `a` approximated by a regular polygon with `sides` sides
/// whose enclosed area matches the circle.
fn polygon_loop_field(coil: &CoilGeometry, current: f64, p: Vector3<f64>, sides: usize) -> Vector3<f64> {
    let n = coil.axis.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    let step = 2.0 * PI / sides as f64;
    let r = coil.radius * (PI / (sides as f64 * (step / 2.0).sin() * (step / 2.0).cos())).sqrt();
    let vertex = |k: usize| coil.center + (u * (k as f64 * step).cos() + v * (k as f64 * step).sin()) * r;
    let mut b = Vector3::zeros();
    for k in 0..sides {
        b += segment_field(vertex(k), vertex(k + 1), current, p);
    }
    b * f64::from(coil.turns)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn magnetics(_: &mut Records) -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut field_err, mut force_err) = (0.0f64, 0.0f64);
    let mut torque_nonzero = 0;
    for _ in 0..1000 {
        let radius = rng.random_range(2.5e-3..2e-2);
        let turns = rng.random_range(1..=400);
        let axis = random_unit(&mut rng);
        let center = Vector3::new(
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        );
        let coil = CoilGeometry::new(radius, turns, axis, center).map_err(|e| e.to_string())?;
        let current = rng.random_range(-0.165..0.165);
        let z = rng.random_range(-3.0..3.0) * radius;

        let analytic = on_axis_field(&coil, current, z).map_err(|e| e.to_string())?;
        let oracle = polygon_loop_field(&coil, current, center + axis * z, 16384);
        field_err = field_err.max((oracle - axis * analytic).norm() / analytic.abs());

        let m = DipoleMoment::new(axis * rng.random_range(-1e-3..1e-3)).map_err(|e| e.to_string())?;
        let field = |p: &Vector3<f64>| -> magscan_core::Result<FieldSample> {
            Ok(FieldSample::uniform(axis * on_axis_field(&coil, current, (p - center).dot(&axis))?))
        };
        let fd = dipole_force(&m, field, &(center + axis * z)).map_err(|e| e.to_string())?;
        let slope = |zz: f64| on_axis_field_dz(&coil, current, zz).map_err(|e| e.to_string());
        let exact = axis * (m.0.dot(&axis) * slope(z)?);
        let scale = (m.0.norm() * slope(radius / 2.0)?).abs();
        force_err = force_err.max((fd - exact).norm() / exact.norm().max(scale));

        let b = random_unit(&mut rng) * rng.random_range(1e-6..1e-1);
        let parallel = DipoleMoment::new(b * rng.random_range(-1e4..1e4)).map_err(|e| e.to_string())?;
        if dipole_torque(&parallel, &b) != Vector3::zeros() {
            torque_nonzero += 1;
        }
    }
    Ok(outcome(
        field_err <= 1e-6 && force_err <= 1e-6 && torque_nonzero == 0,
        format!("1000 cases: field rel {field_err:.1e}, force rel {force_err:.1e}, {torque_nonzero} nonzero parallel torques"),
    ))
}

fn vision(_: &mut Records) -> Result<Outcome, String> {
    let geom = FrameGeometry::default();
    let px_mm = geom.mm_per_px();
    let detect = DetectionConfig::default();
    let diameter = PlantParams::calibrated().spot_diameter_mm;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for k in 0..500 {
        let spot = SpotSample {
            x_mm: rng.random_range(-2.5..2.5),
            y_mm: rng.random_range(-2.5..2.5),
            diameter_mm: diameter,
            t_s: k as f64 * 0.01,
        };
        let frame = render_frame(&spot, &geom, k).map_err(|e| e.to_string())?;
        let d = detect_spot(&frame, &detect).map_err(|e| e.to_string())?;
        worst = worst.max((d.x_mm - spot.x_mm).hypot(d.y_mm - spot.y_mm));
    }
    let scale = pixel_scale_from_calibration(41.0, 1.0).map_err(|e| e.to_string())?;
    let scale_ok = format!("{scale:.2}") == "24.39" && (geom.um_per_px - scale).abs() < 1e-12;
    Ok(outcome(
        worst <= 0.5 * px_mm && scale_ok,
        format!(
            "worst round trip {:.3} px ({:.2} µm) over 500 placements, 41 px/mm gives {scale:.2} µm/px",
            worst / px_mm,
            worst * 1e3
        ),
    ))
}

fn determinism(first: &mut Records) -> Result<Outcome, String> {
    let mut again = Records::default();
    workspace(&mut again)?;
    linearity(&mut again)?;
    repeatability(&mut again)?;
    teleop(&mut again)?;
    let mut differing = Vec::new();
    for ((name, a), (_, b)) in first.first.iter().zip(&again.first) {
        if a.as_bytes() != b.as_bytes() {
            differing.push(name.clone());
        }
    }
    let pass = differing.is_empty() && first.first.len() == again.first.len() && !first.first.is_empty();
    Ok(outcome(
        pass,
        if differing.is_empty() {
            format!("{} reports byte-identical across two runs", first.first.len())
        } else {
            format!("reports differ: {}", differing.join(", "))
        },
    ))
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 8] = [
        ("workspace", workspace),
        ("linearity", linearity),
        ("repeatability", repeatability),
        ("teleop scripted", teleop),
        ("metrics oracle", metrics),
        ("magnetics", magnetics),
        ("vision", vision),
        ("determinism", determinism),
    ];
    let mut records = Records::default();
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let t = Instant::now();
        let (pass, detail) = match check(&mut records) {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {}. {name}: {detail} ({})",
            if pass { "PASS" } else { "FAIL" },
            k + 1,
            secs(t.elapsed())
        );
    }
    if failed == 0 {
        println!("acceptance: all {} criteria pass", checks.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of {} criteria fail", checks.len());
        ExitCode::FAILURE
    }
}
