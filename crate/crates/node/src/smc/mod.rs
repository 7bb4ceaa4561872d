//! The local SMC instance and the adapter through which daemons drive it.

pub mod adapter;
pub mod instance;

pub use adapter::{serve_adapter, Adapter, AdapterError, InProcessAdapter, SocketAdapter};
pub use instance::{ExecOutcome, PrepareRequest, SmcConfig, SmcError, SmcInstance};
