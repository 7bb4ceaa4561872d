//! Transport backends.
//!
//! A [`Link`] is one full-duplex stream connection carrying length-prefixed
//! payloads. Backends frame and unframe; callers see whole payloads.

use std::io;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;

pub mod sim;
pub mod tcp;

pub use sim::{SimNetwork, SimNode, TranscriptEntry};
pub use tcp::TcpNetwork;

#[async_trait]
pub trait PayloadSink: Send {
    async fn send(&mut self, payload: Vec<u8>) -> io::Result<()>;
    /// Closes the write half; the remote reader sees end of stream.
    async fn close(&mut self);
}

#[async_trait]
pub trait PayloadSource: Send {
    /// Next payload, or `None` once the remote side closed.
    async fn recv(&mut self) -> io::Result<Option<Vec<u8>>>;
}

pub struct Link {
    pub tx: Box<dyn PayloadSink>,
    pub rx: Box<dyn PayloadSource>,
    pub remote: String,
}

#[async_trait]
pub trait Listener: Send {
    async fn accept(&mut self) -> io::Result<Link>;
    fn local_addr(&self) -> String;
}

#[async_trait]
pub trait Datagram: Send + Sync {
    async fn send_to(&self, payload: &[u8], addr: &str) -> io::Result<()>;
    async fn recv(&self) -> io::Result<Vec<u8>>;
    fn local_addr(&self) -> String;
}

/// One node's view of the network: how it listens, dials and tells time.
#[async_trait]
pub trait Network: Send + Sync + 'static {
    async fn listen(&self, addr: &str) -> io::Result<Box<dyn Listener>>;
    async fn connect(&self, addr: &str) -> io::Result<Link>;
    async fn bind_datagram(&self, addr: &str) -> io::Result<Box<dyn Datagram>>;
    /// Monotonic time since the network was created.
    fn now(&self) -> Duration;
    async fn sleep(&self, d: Duration);
}

pub type SharedNetwork = Arc<dyn Network>;

pub fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}
