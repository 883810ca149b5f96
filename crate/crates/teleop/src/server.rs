use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender, TrySendError};
use std::sync::Arc;
use std::time::Instant;

use futures_util::{SinkExt, StreamExt};
use magscan_core::harness::{ShapeId, TeleopConfig};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use crate::control::{Command, ControlLoop, Event};
use crate::recorder::SessionStore;
use crate::wire::{ClientMessage, Frame, InboundDecoder, ServerMessage};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub teleop: TeleopConfig,
    /// Shape used when a session start names none.
    pub default_shape: ShapeId,
    pub sessions_dir: PathBuf,
    /// Depth of the ingress queue into the control thread.
    pub command_capacity: usize,
    /// Outbound events kept for a slow client before the oldest are dropped.
    pub event_capacity: usize,
}

impl ServiceConfig {
    pub fn new(bind: SocketAddr, sessions_dir: impl Into<PathBuf>) -> Self {
        Self {
            bind,
            teleop: TeleopConfig::default(),
            default_shape: ShapeId::T1,
            sessions_dir: sessions_dir.into(),
            command_capacity: 1024,
            event_capacity: 256,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] magscan_core::Error),
    #[error("control thread panicked")]
    ControlPanicked,
}

/// A running service. Dropping it without [`ServiceHandle::shutdown`] leaves
/// the tasks running until the runtime stops.
#[derive(Debug)]
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: watch::Sender<bool>,
    commands: SyncSender<Command>,
    accept: JoinHandle<()>,
    control: std::thread::JoinHandle<()>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Close connections, save any running session as partial and stop.
    pub async fn shutdown(self) -> Result<(), ServiceError> {
        let _ = self.stop.send(true);
        self.accept.abort();
        let _ = self.commands.send(Command::Shutdown);
        let control = self.control;
        tokio::task::spawn_blocking(move || control.join())
            .await
            .map_err(|_| ServiceError::ControlPanicked)?
            .map_err(|_| ServiceError::ControlPanicked)
    }
}

/// Bind the listener and start the control thread. Must be called inside a
/// tokio runtime.
pub async fn serve(config: ServiceConfig) -> Result<ServiceHandle, ServiceError> {
    config.teleop.validate()?;
    let listener = TcpListener::bind(config.bind).await?;
    let addr = listener.local_addr()?;
    let epoch = Instant::now();
    let (cmd_tx, cmd_rx) = sync_channel(config.command_capacity.max(1));
    let (event_tx, _) = broadcast::channel(config.event_capacity.max(1));
    let control = ControlLoop::new(
        config.teleop.clone(),
        config.default_shape,
        SessionStore::new(&config.sessions_dir),
        cmd_rx,
        event_tx.clone(),
        epoch,
    );
    let control = std::thread::Builder::new()
        .name("magscan-control".into())
        .spawn(move || control.run())?;
    let (stop_tx, stop_rx) = watch::channel(false);
    let shared = Shared {
        commands: cmd_tx.clone(),
        events: event_tx,
        busy: Arc::new(AtomicBool::new(false)),
        epoch,
        stop: stop_rx,
    };
    let accept = tokio::spawn(accept_loop(listener, shared));
    Ok(ServiceHandle {
        addr,
        stop: stop_tx,
        commands: cmd_tx,
        accept,
        control,
    })
}

#[derive(Clone)]
struct Shared {
    commands: SyncSender<Command>,
    events: broadcast::Sender<Event>,
    busy: Arc<AtomicBool>,
    epoch: Instant,
    stop: watch::Receiver<bool>,
}

impl Shared {
    fn now_ms(&self) -> f64 {
        self.epoch.elapsed().as_secs_f64() * 1000.0
    }
}

async fn accept_loop(listener: TcpListener, shared: Shared) {
    loop {
        let stream = match listener.accept().await {
            Ok((s, _)) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let shared = shared.clone();
        if shared.busy.swap(true, Ordering::SeqCst) {
            tokio::spawn(reject(stream, shared));
        } else {
            tokio::spawn(async move {
                let busy = shared.busy.clone();
                if let Err(e) = connection(stream, shared).await {
                    log::warn!("client connection ended with error: {e}");
                }
                busy.store(false, Ordering::SeqCst);
            });
        }
    }
}

async fn reject(stream: TcpStream, shared: Shared) {
    let Ok(mut ws) = tokio_tungstenite::accept_async(stream).await else {
        return;
    };
    let frame = Frame::new(
        1,
        shared.now_ms(),
        ServerMessage::Busy {
            message: "another client is connected".into(),
        },
    );
    let _ = ws.send(Message::text(frame.to_text())).await;
    let _ = ws.close(None).await;
}

fn to_command(frame: Frame<ClientMessage>) -> Command {
    match frame.body {
        ClientMessage::Pose { x, y } => Command::Pose {
            x,
            y,
            t_s: frame.t_ms / 1000.0,
        },
        ClientMessage::SessionStart { shape, seed, save_frames } => Command::Start { shape, seed, save_frames },
        ClientMessage::SessionEnd => Command::End,
        ClientMessage::Mode { mode, mapping } => Command::Mode { mode, mapping },
    }
}

async fn connection(stream: TcpStream, shared: Shared) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    let (local_tx, mut local_rx) = mpsc::channel::<Event>(64);
    let mut events = shared.events.subscribe();
    let writer = tokio::spawn(async move {
        let mut seq = 0u64;
        loop {
            let ev = tokio::select! {
                biased;
                Some(e) = local_rx.recv() => e,
                r = events.recv() => match r {
                    Ok(e) => e,
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
            };
            seq += 1;
            if sink.send(Message::text(Frame::new(seq, ev.t_ms, ev.msg).to_text())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let mut decoder = InboundDecoder::default();
    let mut stop = shared.stop.clone();
    let result = loop {
        let msg = tokio::select! {
            m = source.next() => m,
            _ = stop.changed() => break Ok(()),
        };
        let reply = match msg {
            None => break Ok(()),
            Some(Err(e)) => break Err(e),
            Some(Ok(Message::Close(_))) => break Ok(()),
            Some(Ok(Message::Text(text))) => match decoder.decode(text.as_str()) {
                Ok(frame) => match shared.commands.try_send(to_command(frame)) {
                    Ok(()) => None,
                    Err(TrySendError::Full(_)) => Some(ServerMessage::error("busy", "control queue full; message dropped")),
                    Err(TrySendError::Disconnected(_)) => break Ok(()),
                },
                Err(e) => Some(ServerMessage::error(e.category(), e.to_string())),
            },
            Some(Ok(Message::Binary(_))) => Some(ServerMessage::error("parse", "binary frames are not part of the protocol")),
            Some(Ok(_)) => None,
        };
        if let Some(msg) = reply {
            let _ = local_tx
                .send(Event {
                    t_ms: shared.now_ms(),
                    msg,
                })
                .await;
        }
    };
    let _ = shared.commands.send(Command::Disconnected);
    drop(local_tx);
    writer.abort();
    result
}
