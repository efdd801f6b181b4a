//! Blocking HTTP transport for [`GatewayClient`](confetty_core::service::GatewayClient).

use std::io::Read;
use std::time::Duration;

use serde_json::Value as Json;

use confetty_core::api::{auth_headers, ApiError, ApiRequest};
use confetty_core::service::Transport;

use crate::server::BODY_LIMIT;

#[derive(Clone)]
pub struct HttpTransport {
    base: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport").field("base", &self.base).finish()
    }
}

impl HttpTransport {
    pub fn new(base: &str) -> Self {
        Self {
            base: base.trim_end_matches('/').to_owned(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(120)).build(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }
}

fn transport_error(msg: impl std::fmt::Display) -> ApiError {
    ApiError::new("TransportError", msg.to_string())
}

fn read_body(resp: ureq::Response) -> Result<Vec<u8>, ApiError> {
    let mut buf = Vec::new();
    resp.into_reader()
        .take(BODY_LIMIT as u64 + 1)
        .read_to_end(&mut buf)
        .map_err(transport_error)?;
    Ok(buf)
}

impl Transport for HttpTransport {
    fn send(&self, req: ApiRequest) -> Result<Json, ApiError> {
        let mut call = self
            .agent
            .request(req.method.as_str(), &format!("{}{}", self.base, req.path));
        for (k, v) in &req.query {
            call = call.query(k, v);
        }
        if let Some(auth) = &req.auth {
            for (name, value) in auth_headers(auth) {
                call = call.set(name, &value);
            }
        }
        let result = if req.body.is_empty() && req.auth.is_none() {
            call.call()
        } else {
            call.set("content-type", "application/json").send_bytes(&req.body)
        };
        match result {
            Ok(resp) => {
                let body = read_body(resp)?;
                serde_json::from_slice(&body).map_err(|e| transport_error(format!("malformed response: {e}")))
            }
            Err(ureq::Error::Status(status, resp)) => {
                let body = read_body(resp)?;
                Err(serde_json::from_slice::<ApiError>(&body).unwrap_or_else(|_| {
                    let mut e = transport_error(format!("HTTP {status}: {}", String::from_utf8_lossy(&body)));
                    e.status = status;
                    e
                }))
            }
            Err(ureq::Error::Transport(t)) => Err(transport_error(t)),
        }
    }
}
