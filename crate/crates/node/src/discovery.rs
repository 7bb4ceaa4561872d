//! UDP beacon discovery: gateways announce, peers listen.

use std::io;
use std::time::Duration;

use flexsmc_core::discovery::GatewayAnnouncement;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use crate::net::{Datagram, SharedNetwork};

/// Broadcasts `ann` to every target once per `period` until `stop` flips.
/// The first announcement goes out immediately.
pub async fn announce_loop(
    socket: Box<dyn Datagram>,
    net: SharedNetwork,
    ann: GatewayAnnouncement,
    targets: Vec<String>,
    period: Duration,
    mut stop: watch::Receiver<bool>,
) -> io::Result<()> {
    let payload = serde_json::to_vec(&ann).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    loop {
        if *stop.borrow() {
            return Ok(());
        }
        for t in &targets {
            // A missing receiver is not the announcer's problem.
            let _ = socket.send_to(&payload, t).await;
        }
        tokio::select! {
            biased;
            _ = stop.changed() => return Ok(()),
            _ = net.sleep(period) => {}
        }
    }
}

/// Forwards every well-formed announcement heard on `socket`.
pub fn listen_announcements(socket: Box<dyn Datagram>, out: mpsc::UnboundedSender<GatewayAnnouncement>) -> JoinHandle<()> {
    tokio::spawn(async move {
        while let Ok(bytes) = socket.recv().await {
            if let Ok(ann) = serde_json::from_slice::<GatewayAnnouncement>(&bytes) {
                if out.send(ann).is_err() {
                    break;
                }
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Network, SimNetwork};
    use flexsmc_core::discovery::SUM_PROTOCOL;
    use flexsmc_core::fault::FaultPlan;
    use flexsmc_core::identity::Fingerprint;
    use std::sync::Arc;

    fn ann(c: char) -> GatewayAnnouncement {
        GatewayAnnouncement {
            fingerprint: Fingerprint::parse(&c.to_string().repeat(64)).unwrap(),
            endpoint: format!("gw{c}:7000"),
            client_endpoint: None,
            location: "floor1".into(),
            purpose: "stats".into(),
            protocols: vec![SUM_PROTOCOL.into()],
        }
    }

    async fn start(sim: &SimNetwork, name: &str, a: GatewayAnnouncement) -> watch::Sender<bool> {
        let net: SharedNetwork = sim.node(name);
        let sock = net.bind_datagram(":0").await.unwrap();
        let (stop, rx) = watch::channel(false);
        tokio::spawn(announce_loop(sock, net, a, vec!["*:7400".into()], Duration::from_secs(2), rx));
        stop
    }

    #[tokio::test(start_paused = true)]
    async fn period_count_two_gateways_and_stop() {
        let sim = SimNetwork::new(FaultPlan::default(), 1);
        let probe_net: Arc<dyn Network> = sim.node("probe");
        let (tx, mut rx) = mpsc::unbounded_channel();
        let _h = listen_announcements(probe_net.bind_datagram(":7400").await.unwrap(), tx);
        let stop_a = start(&sim, "gwa", ann('a')).await;
        let stop_b = start(&sim, "gwb", ann('b')).await;
        tokio::time::sleep(Duration::from_millis(9_999)).await;
        let mut seen = Vec::new();
        while let Ok(a) = rx.try_recv() {
            seen.push(a.fingerprint);
        }
        let count_a = seen.iter().filter(|f| **f == ann('a').fingerprint).count();
        assert!(count_a >= 4, "{count_a}");
        assert!(seen.contains(&ann('b').fingerprint));

        stop_a.send(true).unwrap();
        stop_b.send(true).unwrap();
        tokio::time::sleep(Duration::from_millis(1)).await;
        while rx.try_recv().is_ok() {}
        tokio::time::sleep(Duration::from_secs(10)).await;
        assert!(rx.try_recv().is_err());
    }
}
