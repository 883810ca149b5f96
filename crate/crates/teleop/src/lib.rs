//! WebSocket bridge between a tablet client and the simulated scanner.
//!
//! Three actors: the network ingress (one task per connection), the control
//! thread that owns the simulation and ticks it in real time, and the
//! per-connection egress writer. Ingress feeds the control thread through a
//! bounded queue; the control thread publishes telemetry and session events
//! on a bounded broadcast channel where a lagging client loses the oldest
//! events. Only one client is served at a time.
//!
//! Wire format: see [`wire`].

mod control;
pub mod recorder;
mod server;
pub mod wire;

pub use server::{serve, ServiceConfig, ServiceError, ServiceHandle};
