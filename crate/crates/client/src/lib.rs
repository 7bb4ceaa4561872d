//! Client for a gateway's framed-JSON endpoint.
//!
//! One connection carries any number of concurrent requests; replies are
//! matched to callers by request id.
//!
//! ```no_run
//! # async fn demo() -> Result<(), flexsmc_client::ClientError> {
//! use std::sync::Arc;
//! use flexsmc_client::GatewayClient;
//! use flexsmc_node::net::TcpNetwork;
//!
//! let client = GatewayClient::connect(Arc::new(TcpNetwork::new()), "127.0.0.1:7402").await?;
//! let r = client.query("floor2/presence_count", "sum", "presence_count").await?;
//! println!("{} from {} peers", r.result, r.contributors);
//! # Ok(()) }
//! ```

use std::collections::HashMap;
use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use flexsmc_core::frame::{decode_payload, encode_payload, Frame, MessageType};
use flexsmc_core::session::{Catalog, ClientCall, ClientQuery, ClientReply, ClientResult, ErrorBody};
use flexsmc_node::net::{PayloadSink, SharedNetwork};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

/// Sender name clients put in their frames.
pub const CLIENT_SENDER: &str = "client";

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("cannot reach gateway at {addr}: {source}")]
    Connect { addr: String, source: io::Error },
    #[error("gateway closed the connection")]
    Closed,
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("gateway refused the request: {code:?}: {msg}", code = .0.code, msg = .0.message)]
    Gateway(ErrorBody),
    #[error("unexpected reply: {0}")]
    Protocol(String),
}

type Pending = Arc<Mutex<HashMap<String, oneshot::Sender<Frame>>>>;

pub struct GatewayClient {
    out: mpsc::UnboundedSender<Frame>,
    pending: Pending,
    next: AtomicU64,
    timeout: Duration,
    tasks: [JoinHandle<()>; 2],
}

impl Drop for GatewayClient {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

impl GatewayClient {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

    pub async fn connect(net: SharedNetwork, addr: &str) -> Result<Self, ClientError> {
        let link = net.connect(addr).await.map_err(|source| ClientError::Connect {
            addr: addr.to_owned(),
            source,
        })?;
        let (mut tx, mut rx) = (link.tx, link.rx);
        let (out, mut out_rx) = mpsc::unbounded_channel::<Frame>();
        let writer = tokio::spawn(async move {
            while let Some(f) = out_rx.recv().await {
                let Ok(bytes) = encode_payload(&f) else { continue };
                if tx.send(bytes).await.is_err() {
                    break;
                }
            }
            PayloadSink::close(tx.as_mut()).await;
        });
        let pending: Pending = Arc::default();
        let routes = pending.clone();
        let reader = tokio::spawn(async move {
            while let Ok(Some(payload)) = rx.recv().await {
                let Ok(f) = decode_payload(&payload) else { continue };
                let Some(id) = f.session_id.clone() else { continue };
                if let Some(w) = routes.lock().unwrap().remove(&id) {
                    let _ = w.send(f);
                }
            }
            // Dropping the waiters tells every caller the connection is gone.
            routes.lock().unwrap().clear();
        });
        Ok(GatewayClient {
            out,
            pending,
            next: AtomicU64::new(1),
            timeout: Self::DEFAULT_TIMEOUT,
            tasks: [writer, reader],
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Sends one call and waits for its reply.
    pub async fn call(&self, call: &ClientCall) -> Result<ClientReply, ClientError> {
        let id = format!("c{}", self.next.fetch_add(1, Ordering::Relaxed));
        let (tx, rx) = oneshot::channel();
        self.pending.lock().unwrap().insert(id.clone(), tx);
        let frame = Frame::new(MessageType::ClientRequest, CLIENT_SENDER, Some(id.clone()), call);
        if self.out.send(frame).is_err() {
            self.pending.lock().unwrap().remove(&id);
            return Err(ClientError::Closed);
        }
        let reply = tokio::time::timeout(self.timeout, rx).await;
        self.pending.lock().unwrap().remove(&id);
        let f = match reply {
            Ok(Ok(f)) => f,
            Ok(Err(_)) => return Err(ClientError::Closed),
            Err(_) => return Err(ClientError::Timeout(self.timeout)),
        };
        match f.kind {
            MessageType::ClientResponse => f.body_as().map_err(|e| ClientError::Protocol(e.to_string())),
            MessageType::Error => Err(ClientError::Gateway(
                f.body_as().map_err(|e| ClientError::Protocol(e.to_string()))?,
            )),
            other => Err(ClientError::Protocol(format!("{other} frame"))),
        }
    }

    pub async fn query(&self, group: &str, operation: &str, data_type: &str) -> Result<ClientResult, ClientError> {
        let call = ClientCall::Query(ClientQuery {
            group: group.to_owned(),
            operation: operation.to_owned(),
            data_type: data_type.to_owned(),
        });
        match self.call(&call).await? {
            ClientReply::Result(r) => Ok(r),
            ClientReply::Catalog(_) => Err(ClientError::Protocol("catalog in reply to a query".into())),
        }
    }

    pub async fn catalog(&self) -> Result<Catalog, ClientError> {
        match self.call(&ClientCall::ListMetadata { list_metadata: true }).await? {
            ClientReply::Catalog(c) => Ok(c),
            ClientReply::Result(_) => Err(ClientError::Protocol("result in reply to list_metadata".into())),
        }
    }
}
