use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use magscan_core::harness::{
    calibrate, calibrated_noise, default_grid, evaluate_session_dir, reference_eight, run_linearity_sweep, run_repeatability,
    run_teleop_session, run_workspace_map, scripted_poses, to_json_file_string, CalibrationTargets, CurrentNoise, ExperimentRecord,
    LinearityConfig, Observation, RepeatabilityConfig, ScriptedTrace, SessionLog, ShapeId, TargetShape, TeleopConfig, WorkspaceConfig,
};
use magscan_core::metrics::Trajectory;
use magscan_core::plant::PlantParams;
use magscan_teleop::{serve, ServiceConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "magscan",
    version,
    about = "Simulated magnetic laser scanner: experiments, teleoperation and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Plant configuration file (key = value); defaults to the calibrated plant.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory for the JSON report and CSV tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObserveArg {
    Camera,
    Truth,
}

impl From<ObserveArg> for Observation {
    fn from(o: ObserveArg) -> Self {
        match o {
            ObserveArg::Camera => Observation::Camera,
            ObserveArg::Truth => Observation::Truth,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Map the workspace over a grid of coil currents.
    Workspace {
        #[command(flatten)]
        common: Common,
    },
    /// Deviation from linearity of a diagonal line scan versus frequency.
    Linearity {
        /// Comma-separated list, or start:stop:step. Defaults to 20 steps up
        /// to the natural frequency.
        #[arg(long)]
        freqs: Option<String>,
        #[arg(long, default_value_t = 0.72)]
        line_mm: f64,
        #[arg(long, value_enum, default_value = "camera")]
        observe: ObserveArg,
        #[command(flatten)]
        common: Common,
    },
    /// Replay a trajectory several times and score passes against the first.
    Repeat {
        /// `eight` or one of T1..T5.
        #[arg(long, default_value = "eight")]
        shape: String,
        #[arg(long, default_value_t = 10)]
        passes: u32,
        #[arg(long, default_value_t = 1.0)]
        rate_hz: f64,
        /// `none`, `calibrated`, or a current standard deviation in A.
        #[arg(long, default_value = "none")]
        noise: String,
        #[arg(long, value_enum, default_value = "camera")]
        observe: ObserveArg,
        #[command(flatten)]
        common: Common,
    },
    /// Serve the tablet WebSocket, or run a scripted session offline.
    Teleop {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value = "T1")]
        shape: ShapeId,
        /// Root directory for session folders.
        #[arg(long, default_value = "sessions")]
        sessions: PathBuf,
        /// Trace the shape with a scripted operator instead of serving.
        #[arg(long)]
        scripted: bool,
        /// Lateral offset of the scripted operator, µm.
        #[arg(long, default_value_t = 0.0)]
        offset_um: f64,
        #[arg(long)]
        save_frames: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Score a recorded session again and compare with its stored report.
    Eval {
        #[arg(long)]
        session: PathBuf,
        /// Also re-simulate the session from its logged poses.
        #[arg(long)]
        rerun: bool,
        #[arg(long)]
        json: bool,
    },
    /// Fit damping and current noise to the reference targets.
    Calibrate {
        #[arg(long)]
        params: Option<PathBuf>,
        /// Write the calibration ledger here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_params(path: Option<&Path>) -> Result<PlantParams> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(PlantParams::from_kv_str(&text)?)
        }
        None => Ok(PlantParams::calibrated()),
    }
}

fn parse_freqs(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let [a, b, step] = [parts[0], parts[1], parts[2]].map(|s| s.trim().parse::<f64>());
        let (a, b, step) = (a?, b?, step?);
        if !(step > 0.0 && b >= a) {
            bail!("frequency range {spec:?} needs start <= stop and step > 0");
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|k| a + k as f64 * step).collect());
    }
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad frequency {s:?}")))
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Print and store an experiment record.
fn emit<C: Serialize, R: Serialize>(common: &Common, name: &str, config: C, report: R, table: String) -> Result<Option<PathBuf>> {
    let record = ExperimentRecord::new(name, config, common.seed, report)?;
    let json = record.to_json()?;
    if common.json {
        print!("{json}");
    } else {
        print!("{table}");
    }
    let Some(dir) = &common.out else {
        return Ok(None);
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{name}.json")), json)?;
    Ok(Some(dir.clone()))
}

#[derive(Serialize)]
struct WorkspaceRun {
    params: PlantParams,
    config: WorkspaceConfig,
}

#[derive(Serialize)]
struct WorkspaceRow {
    level_x: i32,
    level_y: i32,
    amps_x: f64,
    amps_y: f64,
    x_mm: Option<f64>,
    y_mm: Option<f64>,
    truth_x_mm: Option<f64>,
    truth_y_mm: Option<f64>,
    error: Option<String>,
}

fn cmd_workspace(common: Common) -> Result<()> {
    let params = load_params(common.params.as_deref())?;
    let config = WorkspaceConfig {
        seed: common.seed,
        ..WorkspaceConfig::default()
    };
    let report = run_workspace_map(&default_grid(), &params, &config)?;
    let rows: Vec<WorkspaceRow> = report
        .points
        .iter()
        .map(|p| WorkspaceRow {
            level_x: p.level_x,
            level_y: p.level_y,
            amps_x: p.amps_x,
            amps_y: p.amps_y,
            x_mm: p.detected_mm.map(|d| d[0]),
            y_mm: p.detected_mm.map(|d| d[1]),
            truth_x_mm: p.truth_mm.map(|d| d[0]),
            truth_y_mm: p.truth_mm.map(|d| d[1]),
            error: p.error.clone(),
        })
        .collect();
    let table = report.table();
    if let Some(dir) = emit(&common, "workspace", WorkspaceRun { params, config }, &report, table)? {
        write_csv(&dir.join("workspace.csv"), &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LinearityRun {
    params: PlantParams,
    frequencies_hz: Vec<f64>,
    line_mm: f64,
    config: LinearityConfig,
}

fn cmd_linearity(freqs: Option<String>, line_mm: f64, observe: ObserveArg, common: Common) -> Result<()> {
    let params = load_params(common.params.as_deref())?;
    let frequencies_hz = match freqs {
        Some(s) => parse_freqs(&s)?,
        None => (1..=20).map(|k| params.natural_frequency_hz * f64::from(k) / 20.0).collect(),
    };
    let config = LinearityConfig {
        observation: observe.into(),
        seed: common.seed,
        ..LinearityConfig::default()
    };
    let report = run_linearity_sweep(&frequencies_hz, line_mm, &params, &config)?;
    let table = report.table();
    let mut rows = report.points.clone();
    rows.extend(report.refinement.iter().cloned());
    rows.sort_by(|a, b| a.frequency_hz.total_cmp(&b.frequency_hz));
    let run = LinearityRun {
        params,
        frequencies_hz,
        line_mm,
        config,
    };
    if let Some(dir) = emit(&common, "linearity", run, &report, table)? {
        write_csv(&dir.join("linearity.csv"), &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RepeatRun {
    params: PlantParams,
    shape: String,
    config: RepeatabilityConfig,
}

fn parse_noise(s: &str, seed: u64) -> Result<Option<CurrentNoise>> {
    match s {
        "none" => Ok(None),
        "calibrated" => Ok(Some(calibrated_noise())),
        v => {
            let std_a: f64 = v.parse().with_context(|| format!("bad noise level {v:?}"))?;
            if std_a.is_nan() || std_a < 0.0 {
                bail!("noise level must be >= 0");
            }
            Ok(Some(CurrentNoise { std_a, seed }))
        }
    }
}

fn cmd_repeat(shape: String, passes: u32, rate_hz: f64, noise: String, observe: ObserveArg, common: Common) -> Result<()> {
    let params = load_params(common.params.as_deref())?;
    let traj: Trajectory = if shape == "eight" {
        reference_eight()?
    } else {
        TargetShape::standard(shape.parse()?)?.centerline()?
    };
    let config = RepeatabilityConfig {
        passes,
        rate_hz,
        noise: parse_noise(&noise, common.seed)?,
        observation: observe.into(),
        seed: common.seed,
        ..RepeatabilityConfig::default()
    };
    let (run, trajectories) = run_repeatability(&traj, &params, &config)?;
    let table = run.table();
    let record = RepeatRun { params, shape, config };
    if let Some(dir) = emit(&common, "repeat", record, &run, table)? {
        write_csv(&dir.join("repeat.csv"), &run.per_pass)?;
        for (i, t) in trajectories.iter().enumerate() {
            t.save(&dir.join(format!("pass_{:02}.csv", i + 1)))?;
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_teleop(
    port: u16,
    host: String,
    shape: ShapeId,
    sessions: PathBuf,
    scripted: bool,
    offset_um: f64,
    save_frames: bool,
    common: Common,
) -> Result<()> {
    let config = TeleopConfig {
        params: load_params(common.params.as_deref())?,
        save_frames,
        seed: common.seed,
        ..TeleopConfig::default()
    };
    if scripted {
        let target = TargetShape::standard(shape)?;
        let script = ScriptedTrace {
            offset_mm: offset_um / 1000.0,
            ..ScriptedTrace::default()
        };
        let poses = scripted_poses(&target, &script, &config)?;
        let dir = common.out.clone().unwrap_or_else(|| sessions.join(format!("scripted-{shape}")));
        let log = run_teleop_session(&target, &poses, &config, Some(&dir))?;
        log.save(&dir)?;
        if common.json {
            print!("{}", to_json_file_string(&log.report)?);
        } else {
            println!("{}", log.report.summary());
            println!("session written to {}", dir.display());
        }
        return Ok(());
    }
    let bind: SocketAddr = format!("{host}:{port}")
        .parse()
        .with_context(|| format!("bad address {host}:{port}"))?;
    let mut service = ServiceConfig::new(bind, sessions);
    service.teleop = config;
    service.default_shape = shape;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let handle = serve(service).await?;
        eprintln!("listening on ws://{} (Ctrl-C to stop)", handle.local_addr());
        tokio::signal::ctrl_c().await?;
        handle.shutdown().await?;
        anyhow::Ok(())
    })
}

fn cmd_eval(session: PathBuf, rerun: bool, json: bool) -> Result<()> {
    let check = evaluate_session_dir(&session).with_context(|| format!("session {}", session.display()))?;
    let mut ok = check.matches();
    let mut rerun_report = None;
    if rerun {
        let log = SessionLog::load(&session)?;
        let again = log.rerun()?;
        ok &= again.report == check.stored;
        rerun_report = Some(again.report);
    }
    if json {
        #[derive(Serialize)]
        struct EvalOut<'a> {
            matches: bool,
            stored: &'a magscan_core::harness::SessionReport,
            recomputed: &'a magscan_core::harness::SessionReport,
            rerun: Option<&'a magscan_core::harness::SessionReport>,
        }
        print!(
            "{}",
            to_json_file_string(&EvalOut {
                matches: ok,
                stored: &check.stored,
                recomputed: &check.recomputed,
                rerun: rerun_report.as_ref(),
            })?
        );
    } else {
        println!("{}", check.recomputed.summary());
        println!("stored report {}", if check.matches() { "matches" } else { "DIFFERS" });
        if let Some(r) = &rerun_report {
            println!("re-simulated report {}", if *r == check.stored { "matches" } else { "DIFFERS" });
        }
    }
    if !ok {
        return Err(magscan_core::Error::Validation("session report does not reproduce".into()).into());
    }
    Ok(())
}

fn cmd_calibrate(params: Option<PathBuf>, out: Option<PathBuf>) -> Result<()> {
    let base = load_params(params.as_deref())?;
    let cal = calibrate(&base, &CalibrationTargets::default())?;
    let ledger = cal.ledger();
    print!("{ledger}");
    if let Some(p) = out {
        fs::write(&p, &ledger).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    match cli.cmd {
        Cmd::Workspace { common } => cmd_workspace(common)?,
        Cmd::Linearity {
            freqs,
            line_mm,
            observe,
            common,
        } => cmd_linearity(freqs, line_mm, observe, common)?,
        Cmd::Repeat {
            shape,
            passes,
            rate_hz,
            noise,
            observe,
            common,
        } => cmd_repeat(shape, passes, rate_hz, noise, observe, common)?,
        Cmd::Teleop {
            port,
            host,
            shape,
            sessions,
            scripted,
            offset_um,
            save_frames,
            common,
        } => cmd_teleop(port, host, shape, sessions, scripted, offset_um, save_frames, common)?,
        Cmd::Eval { session, rerun, json } => cmd_eval(session, rerun, json)?,
        Cmd::Calibrate { params, out } => cmd_calibrate(params, out)?,
    }
    eprintln!("done in {:.2} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let core = e.chain().find_map(|c| c.downcast_ref::<magscan_core::Error>());
            let (category, code) = core.map_or(("error", 1), |c| (c.category(), c.exit_code()));
            eprintln!("error[{category}]: {e:#}");
            ExitCode::from(code as u8)
        }
    }
}
