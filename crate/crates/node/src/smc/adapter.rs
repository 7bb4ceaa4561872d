//! The adapter boundary between a daemon and its SMC instance.
//!
//! [`InProcessAdapter`] calls the instance directly. [`SocketAdapter`] sends
//! the same commands as length-prefixed JSON over a loopback connection to
//! [`serve_adapter`].

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;

use super::instance::{ExecOutcome, PrepareRequest, SmcError, SmcInstance};
use crate::net::{Listener, Network, PayloadSink};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AdapterError {
    #[error("adapter unreachable: {0}")]
    Unreachable(String),
    #[error("adapter protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Failed(SmcError),
}

impl From<SmcError> for AdapterError {
    fn from(e: SmcError) -> Self {
        match e {
            SmcError::NotPrepared { .. } | SmcError::AlreadyPrepared { .. } => AdapterError::Protocol(e.to_string()),
            other => AdapterError::Failed(other),
        }
    }
}

#[async_trait]
pub trait Adapter: Send + Sync {
    async fn prepare(&self, req: PrepareRequest) -> Result<(), AdapterError>;
    async fn execute(&self, session_id: &str) -> Result<ExecOutcome, AdapterError>;
    async fn abort(&self, session_id: &str) -> Result<(), AdapterError>;
    async fn echo(&self, payload: Value) -> Result<Value, AdapterError>;
}

pub struct InProcessAdapter(pub Arc<SmcInstance>);

#[async_trait]
impl Adapter for InProcessAdapter {
    async fn prepare(&self, req: PrepareRequest) -> Result<(), AdapterError> {
        Ok(self.0.prepare(req)?)
    }

    async fn execute(&self, session_id: &str) -> Result<ExecOutcome, AdapterError> {
        Ok(self.0.execute(session_id).await?)
    }

    async fn abort(&self, session_id: &str) -> Result<(), AdapterError> {
        self.0.abort(session_id);
        Ok(())
    }

    async fn echo(&self, payload: Value) -> Result<Value, AdapterError> {
        Ok(payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Prepare,
    Execute,
    Abort,
    Echo,
}

/// One adapter frame; requests carry `args`, replies `ok` plus `value` or
/// `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterFrame {
    pub cmd: Command,
    pub session_id: Option<String>,
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ok: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<SmcError>,
}

type Pending = Arc<Mutex<Option<HashMap<u64, oneshot::Sender<AdapterFrame>>>>>;

pub struct SocketAdapter {
    writer: tokio::sync::Mutex<Box<dyn PayloadSink>>,
    pending: Pending,
    next_id: AtomicU64,
    reader: JoinHandle<()>,
}

impl Drop for SocketAdapter {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

impl SocketAdapter {
    pub async fn connect(net: &dyn Network, addr: &str) -> Result<Self, AdapterError> {
        let link = net
            .connect(addr)
            .await
            .map_err(|e| AdapterError::Unreachable(format!("{addr}: {e}")))?;
        let pending: Pending = Arc::new(Mutex::new(Some(HashMap::new())));
        let mut rx = link.rx;
        let p = pending.clone();
        let reader = tokio::spawn(async move {
            while let Ok(Some(payload)) = rx.recv().await {
                let Ok(frame) = serde_json::from_slice::<AdapterFrame>(&payload) else {
                    break;
                };
                let waiter = p.lock().unwrap().as_mut().and_then(|m| m.remove(&frame.id));
                if let Some(w) = waiter {
                    let _ = w.send(frame);
                }
            }
            p.lock().unwrap().take();
        });
        Ok(SocketAdapter {
            writer: tokio::sync::Mutex::new(link.tx),
            pending,
            next_id: AtomicU64::new(1),
            reader,
        })
    }

    async fn call(&self, cmd: Command, session_id: Option<&str>, args: Option<Value>) -> Result<Value, AdapterError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = oneshot::channel();
        match self.pending.lock().unwrap().as_mut() {
            Some(m) => m.insert(id, tx),
            None => return Err(AdapterError::Unreachable("adapter connection closed".into())),
        };
        let req = AdapterFrame {
            cmd,
            session_id: session_id.map(str::to_owned),
            id,
            args,
            ok: None,
            value: None,
            error: None,
        };
        let bytes = serde_json::to_vec(&req).map_err(|e| AdapterError::Protocol(e.to_string()))?;
        self.writer
            .lock()
            .await
            .send(bytes)
            .await
            .map_err(|e| AdapterError::Unreachable(e.to_string()))?;
        let reply = rx
            .await
            .map_err(|_| AdapterError::Unreachable("adapter connection closed".into()))?;
        if reply.cmd != cmd {
            return Err(AdapterError::Protocol(format!("reply to {:?} for {:?}", reply.cmd, cmd)));
        }
        match (reply.ok, reply.error) {
            (Some(true), _) => Ok(reply.value.unwrap_or(Value::Null)),
            (Some(false), Some(e)) => Err(e.into()),
            _ => Err(AdapterError::Protocol("malformed reply".into())),
        }
    }
}

#[async_trait]
impl Adapter for SocketAdapter {
    async fn prepare(&self, req: PrepareRequest) -> Result<(), AdapterError> {
        let sid = req.plan.session_id.clone();
        let args = serde_json::to_value(&req).map_err(|e| AdapterError::Protocol(e.to_string()))?;
        self.call(Command::Prepare, Some(&sid), Some(args)).await.map(|_| ())
    }

    async fn execute(&self, session_id: &str) -> Result<ExecOutcome, AdapterError> {
        let v = self.call(Command::Execute, Some(session_id), None).await?;
        serde_json::from_value(v).map_err(|e| AdapterError::Protocol(e.to_string()))
    }

    async fn abort(&self, session_id: &str) -> Result<(), AdapterError> {
        self.call(Command::Abort, Some(session_id), None).await.map(|_| ())
    }

    async fn echo(&self, payload: Value) -> Result<Value, AdapterError> {
        self.call(Command::Echo, None, Some(payload)).await
    }
}

async fn handle(inst: &SmcInstance, req: &AdapterFrame) -> Result<Value, SmcError> {
    let sid = req.session_id.clone().unwrap_or_default();
    let bad = |m: String| SmcError::Engine { message: m };
    match req.cmd {
        Command::Prepare => {
            let args = req.args.clone().ok_or_else(|| bad("prepare without args".into()))?;
            let pr: PrepareRequest = serde_json::from_value(args).map_err(|e| bad(e.to_string()))?;
            inst.prepare(pr)?;
            Ok(Value::Null)
        }
        Command::Execute => {
            let out = inst.execute(&sid).await?;
            Ok(serde_json::to_value(out).expect("outcome serializes"))
        }
        Command::Abort => {
            inst.abort(&sid);
            Ok(Value::Null)
        }
        Command::Echo => Ok(req.args.clone().unwrap_or(Value::Null)),
    }
}

/// Serves adapter connections for `inst` until the listener fails.
pub fn serve_adapter(mut listener: Box<dyn Listener>, inst: Arc<SmcInstance>) -> JoinHandle<()> {
    tokio::spawn(async move {
        while let Ok(link) = listener.accept().await {
            let inst = inst.clone();
            tokio::spawn(async move {
                let mut rx = link.rx;
                let mut sink = link.tx;
                let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Vec<u8>>();
                let writer = tokio::spawn(async move {
                    while let Some(b) = out_rx.recv().await {
                        if sink.send(b).await.is_err() {
                            break;
                        }
                    }
                });
                while let Ok(Some(payload)) = rx.recv().await {
                    let Ok(req) = serde_json::from_slice::<AdapterFrame>(&payload) else {
                        break;
                    };
                    let inst = inst.clone();
                    let out_tx = out_tx.clone();
                    tokio::spawn(async move {
                        let result = handle(&inst, &req).await;
                        let reply = AdapterFrame {
                            cmd: req.cmd,
                            session_id: req.session_id.clone(),
                            id: req.id,
                            args: None,
                            ok: Some(result.is_ok()),
                            value: result.as_ref().ok().cloned(),
                            error: result.err(),
                        };
                        let _ = out_tx.send(serde_json::to_vec(&reply).expect("reply serializes"));
                    });
                }
                drop(out_tx);
                let _ = writer.await;
            });
        }
    })
}
