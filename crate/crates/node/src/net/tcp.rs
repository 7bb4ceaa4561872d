//! Stream sockets: 4-byte big-endian length prefix, then the payload.

use std::io;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use flexsmc_core::frame::MAX_FRAME_LEN;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpListener, TcpStream, UdpSocket};

use super::{Datagram, Link, Listener, Network, PayloadSink, PayloadSource};

pub struct TcpNetwork {
    epoch: Instant,
}

impl TcpNetwork {
    pub fn new() -> Self {
        TcpNetwork { epoch: Instant::now() }
    }
}

impl Default for TcpNetwork {
    fn default() -> Self {
        Self::new()
    }
}

fn link(stream: TcpStream) -> io::Result<Link> {
    stream.set_nodelay(true)?;
    let remote = stream.peer_addr()?.to_string();
    let (r, w) = stream.into_split();
    Ok(Link {
        tx: Box::new(TcpSink(w)),
        rx: Box::new(TcpSource(r)),
        remote,
    })
}

struct TcpSink(OwnedWriteHalf);

#[async_trait]
impl PayloadSink for TcpSink {
    async fn send(&mut self, payload: Vec<u8>) -> io::Result<()> {
        if payload.len() > MAX_FRAME_LEN {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
        }
        let mut buf = Vec::with_capacity(4 + payload.len());
        buf.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        buf.extend_from_slice(&payload);
        self.0.write_all(&buf).await
    }

    async fn close(&mut self) {
        let _ = self.0.shutdown().await;
    }
}

struct TcpSource(OwnedReadHalf);

#[async_trait]
impl PayloadSource for TcpSource {
    async fn recv(&mut self) -> io::Result<Option<Vec<u8>>> {
        let mut len = [0u8; 4];
        match self.0.read_exact(&mut len).await {
            Ok(_) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) if e.kind() == io::ErrorKind::ConnectionReset => return Ok(None),
            Err(e) => return Err(e),
        }
        let len = u32::from_be_bytes(len) as usize;
        if len > MAX_FRAME_LEN {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
        }
        let mut payload = vec![0u8; len];
        match self.0.read_exact(&mut payload).await {
            Ok(_) => Ok(Some(payload)),
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(None),
            Err(e) => Err(e),
        }
    }
}

struct TcpAcceptor(TcpListener);

#[async_trait]
impl Listener for TcpAcceptor {
    async fn accept(&mut self) -> io::Result<Link> {
        let (stream, _) = self.0.accept().await?;
        link(stream)
    }

    fn local_addr(&self) -> String {
        self.0.local_addr().map(|a| a.to_string()).unwrap_or_default()
    }
}

struct Udp(UdpSocket);

#[async_trait]
impl Datagram for Udp {
    async fn send_to(&self, payload: &[u8], addr: &str) -> io::Result<()> {
        self.0.send_to(payload, addr).await.map(|_| ())
    }

    async fn recv(&self) -> io::Result<Vec<u8>> {
        let mut buf = vec![0u8; 64 * 1024];
        let (n, _) = self.0.recv_from(&mut buf).await?;
        buf.truncate(n);
        Ok(buf)
    }

    fn local_addr(&self) -> String {
        self.0.local_addr().map(|a| a.to_string()).unwrap_or_default()
    }
}

#[async_trait]
impl Network for TcpNetwork {
    async fn listen(&self, addr: &str) -> io::Result<Box<dyn Listener>> {
        Ok(Box::new(TcpAcceptor(TcpListener::bind(addr).await?)))
    }

    async fn connect(&self, addr: &str) -> io::Result<Link> {
        link(TcpStream::connect(addr).await?)
    }

    async fn bind_datagram(&self, addr: &str) -> io::Result<Box<dyn Datagram>> {
        let sock = UdpSocket::bind(addr).await?;
        sock.set_broadcast(true)?;
        Ok(Box::new(Udp(sock)))
    }

    fn now(&self) -> Duration {
        self.epoch.elapsed()
    }

    async fn sleep(&self, d: Duration) {
        tokio::time::sleep(d).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn payloads_cross_a_socket_intact() {
        let net = TcpNetwork::new();
        let mut l = net.listen("127.0.0.1:0").await.unwrap();
        let addr = l.local_addr();
        let client = tokio::spawn(async move {
            let net = TcpNetwork::new();
            let mut link = net.connect(&addr).await.unwrap();
            link.tx.send(b"{\"a\":1}".to_vec()).await.unwrap();
            link.tx.send(vec![b'x'; 70_000]).await.unwrap();
            link.tx.close().await;
        });
        let mut server = l.accept().await.unwrap();
        assert_eq!(server.rx.recv().await.unwrap().unwrap(), b"{\"a\":1}");
        assert_eq!(server.rx.recv().await.unwrap().unwrap().len(), 70_000);
        assert_eq!(server.rx.recv().await.unwrap(), None);
        client.await.unwrap();
    }

    #[tokio::test]
    async fn oversized_payload_is_refused() {
        let net = TcpNetwork::new();
        let mut l = net.listen("127.0.0.1:0").await.unwrap();
        let addr = l.local_addr();
        let accept = tokio::spawn(async move { l.accept().await.unwrap() });
        let mut link = net.connect(&addr).await.unwrap();
        let err = link.tx.send(vec![0; MAX_FRAME_LEN + 1]).await.unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::InvalidInput);
        drop(accept.await.unwrap());
    }
}
