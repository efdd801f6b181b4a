//! HTTP gateway, remote authorities and the `confetty` command line.

pub mod authority;
pub mod cli;
pub mod exit;
pub mod server;
pub mod transport;

pub use authority::{authority_handler, spawn_isolated, RemoteAuthority};
pub use server::{gateway_handler, serve_blocking, spawn, Handler, ServerHandle};
pub use transport::HttpTransport;
