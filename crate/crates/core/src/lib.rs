//! Core of FlexSMC: prime-field Shamir sharing, the three-round secure
//! summation engine, and the pure state, wire and report types shared by the
//! gateway, the peer daemon and the harness.

pub mod discovery;
pub mod engine;
pub mod fault;
pub mod field;
pub mod frame;
pub mod identity;
pub mod liveness;
pub mod messages;
pub mod peer_state;
pub mod report;
pub mod session;
pub mod shamir;

pub use field::{field_add, FieldElement, Fp, MODULUS};
pub use identity::{Fingerprint, Identity, PublicKey};
pub use shamir::{add_share_vectors, reconstruct, share_secret, Share, SharingError};
