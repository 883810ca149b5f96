use std::path::PathBuf;
use std::sync::mpsc::{Receiver, RecvTimeoutError, TryRecvError};
use std::time::{Duration, Instant};

use magscan_core::control::{MappingMatrix, TabletPose};
use magscan_core::harness::{EndReason, ShapeId, TargetShape, TeleopConfig, TeleopEngine};
use magscan_core::CONTROL_RATE_HZ;
use tokio::sync::broadcast;

use crate::recorder::SessionStore;
use crate::wire::{ModeName, ServerMessage};

/// Requests from the network side to the control thread.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Command {
    Pose {
        x: f64,
        y: f64,
        t_s: f64,
    },
    Start {
        shape: Option<ShapeId>,
        seed: Option<u64>,
        save_frames: Option<bool>,
    },
    End,
    Mode {
        mode: ModeName,
        mapping: Option<MappingMatrix>,
    },
    Disconnected,
    Shutdown,
}

/// Outbound message stamped with service time.
#[derive(Debug, Clone)]
pub(crate) struct Event {
    pub t_ms: f64,
    pub msg: ServerMessage,
}

struct Active {
    name: String,
    dir: PathBuf,
    engine: TeleopEngine,
    started: Instant,
}

/// Owner of the simulation. Runs the control tick in real time while a
/// session is open and is the only place simulation state is touched.
pub(crate) struct ControlLoop {
    teleop: TeleopConfig,
    default_shape: ShapeId,
    store: SessionStore,
    commands: Receiver<Command>,
    events: broadcast::Sender<Event>,
    epoch: Instant,
    session: Option<Active>,
}

const IDLE_POLL: Duration = Duration::from_millis(20);
const TICK_SLEEP: Duration = Duration::from_micros(250);

impl ControlLoop {
    pub(crate) fn new(
        teleop: TeleopConfig,
        default_shape: ShapeId,
        store: SessionStore,
        commands: Receiver<Command>,
        events: broadcast::Sender<Event>,
        epoch: Instant,
    ) -> Self {
        Self {
            teleop,
            default_shape,
            store,
            commands,
            events,
            epoch,
            session: None,
        }
    }

    fn emit(&self, msg: ServerMessage) {
        let t_ms = self.epoch.elapsed().as_secs_f64() * 1000.0;
        // No subscriber simply means no client is connected.
        let _ = self.events.send(Event { t_ms, msg });
    }

    pub(crate) fn run(mut self) {
        loop {
            if self.session.is_none() {
                match self.commands.recv_timeout(IDLE_POLL) {
                    Ok(cmd) => {
                        if !self.handle(cmd) {
                            return;
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => return,
                }
                continue;
            }
            if !self.run_due_ticks() {
                return;
            }
            std::thread::sleep(TICK_SLEEP);
        }
    }

    /// Catch the session up with wall time, taking commands between ticks.
    /// Returns false when the loop should stop.
    fn run_due_ticks(&mut self) -> bool {
        loop {
            match self.commands.try_recv() {
                Ok(cmd) => {
                    if !self.handle(cmd) {
                        return false;
                    }
                    continue;
                }
                Err(TryRecvError::Empty) => {}
                Err(TryRecvError::Disconnected) => {
                    self.close_session(Some(EndReason::Disconnected));
                    return false;
                }
            }
            let Some(active) = self.session.as_mut() else {
                return true;
            };
            let due = (active.started.elapsed().as_secs_f64() * CONTROL_RATE_HZ) as u64;
            if active.engine.tick_count() >= due {
                return true;
            }
            match active.engine.tick() {
                Ok(Some(t)) => self.emit(ServerMessage::Spot {
                    x_mm: t.x_mm,
                    y_mm: t.y_mm,
                }),
                Ok(None) => {}
                Err(e) => self.emit(ServerMessage::error(e.category(), e.to_string())),
            }
            if self.session.as_ref().is_some_and(|a| a.engine.ended().is_some()) {
                self.close_session(None);
            }
        }
    }

    fn handle(&mut self, cmd: Command) -> bool {
        match cmd {
            Command::Pose { x, y, t_s } => match self.session.as_mut() {
                Some(a) => {
                    let r = TabletPose::new(x, y, t_s).and_then(|p| a.engine.ingest(p));
                    if let Err(e) = r {
                        self.emit(ServerMessage::error(e.category(), e.to_string()));
                    }
                }
                None => self.emit(ServerMessage::error("sequencing", "pose received with no session running")),
            },
            Command::Start { shape, seed, save_frames } => self.start_session(shape, seed, save_frames),
            Command::End => match self.session.as_mut() {
                Some(a) => a.engine.request_end(),
                None => self.emit(ServerMessage::error("sequencing", "no session running")),
            },
            Command::Mode { mode, mapping } => self.set_mode(mode, mapping),
            Command::Disconnected => self.close_session(Some(EndReason::Disconnected)),
            Command::Shutdown => {
                self.close_session(Some(EndReason::Disconnected));
                return false;
            }
        }
        true
    }

    fn set_mode(&mut self, mode: ModeName, mapping: Option<MappingMatrix>) {
        match mode {
            ModeName::Idle => {
                if let Some(a) = self.session.as_mut() {
                    a.engine.request_end();
                }
            }
            ModeName::Teleoperation => {
                if self.session.is_some() {
                    self.emit(ServerMessage::error("busy", "mapping can only change between sessions"));
                    return;
                }
                if let Some(m) = mapping {
                    if let Err(e) = m.validate() {
                        self.emit(ServerMessage::error(e.category(), e.to_string()));
                        return;
                    }
                    self.teleop.mapping = m;
                }
                self.emit(ServerMessage::Mode { mode: ModeName::Idle });
            }
        }
    }

    fn start_session(&mut self, id: Option<ShapeId>, seed: Option<u64>, save_frames: Option<bool>) {
        if self.session.is_some() {
            self.emit(ServerMessage::error("busy", "a session is already running"));
            return;
        }
        let id = id.unwrap_or(self.default_shape);
        let mut config = self.teleop.clone();
        if let Some(s) = seed {
            config.seed = s;
        }
        if let Some(f) = save_frames {
            config.save_frames = f;
        }
        let shape = match TargetShape::standard(id) {
            Ok(s) => s,
            Err(e) => return self.emit(ServerMessage::error(e.category(), e.to_string())),
        };
        let (name, dir) = match self.store.allocate() {
            Ok(v) => v,
            Err(e) => return self.emit(ServerMessage::error("io", e.to_string())),
        };
        let engine = match TeleopEngine::new(shape.clone(), config, Some(&dir)) {
            Ok(e) => e,
            Err(e) => return self.emit(ServerMessage::error(e.category(), e.to_string())),
        };
        self.emit(ServerMessage::Shape {
            id,
            points_mm: shape.polyline_mm.clone(),
            band_mm: shape.band_halfwidth_mm,
        });
        self.emit(ServerMessage::SessionStart {
            session: name.clone(),
            shape: id,
        });
        self.emit(ServerMessage::Mode {
            mode: ModeName::Teleoperation,
        });
        self.session = Some(Active {
            name,
            dir,
            engine,
            started: Instant::now(),
        });
    }

    /// Finish the running session, if any, and write it to disk.
    fn close_session(&mut self, reason: Option<EndReason>) {
        let Some(mut active) = self.session.take() else {
            return;
        };
        if let Some(r) = reason {
            active.engine.abort(r);
        }
        let log = match active.engine.finish() {
            Ok(log) => log,
            Err(e) => {
                self.emit(ServerMessage::error(e.category(), e.to_string()));
                self.emit(ServerMessage::Mode { mode: ModeName::Idle });
                return;
            }
        };
        if let Err(e) = self.store.save(&active.dir, &log) {
            self.emit(ServerMessage::error(
                e.category(),
                format!("session {} not saved: {e}", active.name),
            ));
        }
        self.emit(ServerMessage::SessionEnd {
            session: active.name,
            reason: log.meta.end_reason.clone(),
            partial: log.meta.partial,
            report: Box::new(log.report),
        });
        self.emit(ServerMessage::Mode { mode: ModeName::Idle });
    }
}
