//! The framed-JSON client endpoint.
//!
//! Clients send `client_request` frames whose `session_id` carries their
//! request id; each gets exactly one `client_response` or `error` frame back
//! under the same id. That id only correlates replies; the gateway assigns
//! its own request ids.

use std::sync::Arc;

use flexsmc_core::frame::{decode_payload, encode_payload, Frame, MessageType};
use flexsmc_core::session::{ClientCall, ErrorBody, ErrorCode};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use super::Inner;
use crate::net::{Link, Listener};

pub(crate) fn serve_clients(inner: Arc<Inner>, mut listener: Box<dyn Listener>) -> JoinHandle<()> {
    tokio::spawn(async move {
        while let Ok(link) = listener.accept().await {
            tokio::spawn(serve_one(inner.clone(), link));
        }
    })
}

async fn serve_one(inner: Arc<Inner>, link: Link) {
    let Link { mut tx, mut rx, .. } = link;
    let me = inner.fingerprint().as_str().to_owned();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Frame>();
    let writer = tokio::spawn(async move {
        while let Some(f) = out_rx.recv().await {
            let Ok(bytes) = encode_payload(&f) else { continue };
            if tx.send(bytes).await.is_err() {
                break;
            }
        }
        tx.close().await;
    });
    let mut calls = tokio::task::JoinSet::new();
    while let Ok(Some(payload)) = rx.recv().await {
        let (id, call) = match decode_payload(&payload) {
            Ok(f) if f.kind == MessageType::ClientRequest => {
                let call = f.body_as::<ClientCall>().map_err(|e| e.to_string());
                (f.session_id, call)
            }
            Ok(f) => (f.session_id, Err(format!("unexpected {} frame", f.kind))),
            Err(e) => (None, Err(e.to_string())),
        };
        let call = match call {
            Ok(c) => c,
            Err(msg) => {
                let body = ErrorBody::new(ErrorCode::BadRequest, msg);
                let _ = out_tx.send(Frame::new(MessageType::Error, me.as_str(), id, &body));
                continue;
            }
        };
        let (inner, out_tx, me) = (inner.clone(), out_tx.clone(), me.clone());
        calls.spawn(async move {
            let reply = inner.call(call, None).await;
            let frame = match reply {
                Ok(r) => Frame::new(MessageType::ClientResponse, me, id, &r),
                Err(e) => Frame::new(MessageType::Error, me, id, &e),
            };
            let _ = out_tx.send(frame);
        });
    }
    // The client hung up; outstanding calls still finish their sessions.
    while calls.join_next().await.is_some() {}
    drop(out_tx);
    let _ = writer.await;
}
