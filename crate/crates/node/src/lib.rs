//! Networked side of FlexSMC: transports, secure channels, the SMC instance
//! and adapter, the peer daemon and the gateway service.

pub mod channel;
pub mod config;
pub mod discovery;
pub mod gateway;
pub mod net;
pub mod peer;
pub mod smc;
pub mod trust;
