//! HTTP surfaces for the pipeline: the preference-study API and a
//! chat-completion [`Transport`](lexdrift_core::genclient::Transport).

pub mod server;
pub mod transport;

pub use server::{router, serve, spawn_expiry, AppState};
pub use transport::HttpTransport;
