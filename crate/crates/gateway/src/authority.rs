//! Attribute authority as a separate service, and the gateway-side proxy
//! that speaks to it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use confetty_core::abe::{
    ABKey, AbeError, Attribute, AuthorityInfo, AuthorityKeys, AuthorityRegistry, AuthorityService, LocalAuthority,
};
use confetty_core::api::{ApiError, ApiRequest, Method};
use confetty_core::identity::{AccountId, Identity, PublicKey};
use confetty_core::service::{authority_seed, GatewayClient};

use crate::server::Handler;
use crate::transport::HttpTransport;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IssueRequest {
    pub user: AccountId,
    pub attributes: Vec<Attribute>,
    pub granted: Vec<Attribute>,
    pub epoch: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IssueResponse {
    /// Partial key bytes, hex encoded.
    pub key: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributeKeyResponse {
    pub public_key: String,
}

fn abe_to_api(e: AbeError) -> ApiError {
    let (code, status, details) = match &e {
        AbeError::UngrantedAttribute(a) => ("UngrantedAttribute", 403, json!({ "attribute": a.to_string() })),
        AbeError::ForeignAttribute { attribute, .. } => {
            ("ForeignAttribute", 400, json!({ "attribute": attribute.to_string() }))
        }
        _ => ("AuthorityError", 500, Json::Null),
    };
    let mut err = ApiError::new(code, e.to_string()).with_details(details);
    err.status = status;
    err
}

/// Serves one authority's issuance API. With `trusted_caller` set, only
/// requests signed by that key may obtain keys.
pub fn authority_handler(keys: AuthorityKeys, trusted_caller: Option<PublicKey>) -> Handler {
    let service = Arc::new(LocalAuthority::new(keys));
    Arc::new(move |req: ApiRequest| {
        let segments: Vec<&str> = req.path.trim_matches('/').split('/').collect();
        match (req.method, segments.as_slice()) {
            (Method::Get, ["health"]) => Ok(json!({ "status": "ok", "authority": service.id() })),
            (Method::Get, ["authority"]) => serde_json::to_value(service.info().map_err(abe_to_api)?).map_err(ApiError::internal),
            (Method::Get, ["authority", "attributes", name, epoch]) => {
                let epoch: u64 = epoch.parse().map_err(|_| ApiError::bad_request("epoch must be an integer"))?;
                let pk = service.attribute_public_key(name, epoch).map_err(abe_to_api)?;
                Ok(json!(AttributeKeyResponse { public_key: hex::encode(pk) }))
            }
            (Method::Post, ["authority", "issue"]) => {
                if let Some(trusted) = &trusted_caller {
                    match &req.auth {
                        Some(auth) if auth.public_key == *trusted => {}
                        _ => return Err(ApiError::new("Unauthorized", "issuance is restricted to the gateway")),
                    }
                }
                let body: IssueRequest = serde_json::from_slice(&req.body)
                    .map_err(|e| ApiError::bad_request(format!("malformed issue request: {e}")))?;
                let attrs: BTreeSet<Attribute> = body.attributes.into_iter().collect();
                let granted: BTreeSet<Attribute> = body.granted.into_iter().collect();
                let key = service
                    .issue(&body.user, &attrs, &granted, body.epoch)
                    .map_err(abe_to_api)?;
                Ok(json!(IssueResponse { key: hex::encode(key.to_bytes()) }))
            }
            _ => Err(ApiError::new("NotFound", format!("no route for {}", req.endpoint()))),
        }
    })
}

/// Gateway-side proxy for an authority running elsewhere.
pub struct RemoteAuthority {
    id: String,
    info: AuthorityInfo,
    client: GatewayClient<HttpTransport>,
    public_keys: Mutex<BTreeMap<(String, u64), [u8; 32]>>,
}

impl std::fmt::Debug for RemoteAuthority {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteAuthority")
            .field("id", &self.id)
            .field("url", &self.client.transport().base())
            .finish()
    }
}

impl RemoteAuthority {
    /// Fetches the authority's public identity. `caller` signs issuance
    /// requests.
    pub fn connect(url: &str, caller: Option<Identity>) -> Result<Self, ApiError> {
        let client = GatewayClient::new(HttpTransport::new(url), caller);
        let info: AuthorityInfo = serde_json::from_value(client.get_json("/authority", &[])?)
            .map_err(|e| ApiError::internal(format!("malformed authority info: {e}")))?;
        Ok(Self {
            id: info.id.clone(),
            info,
            client,
            public_keys: Mutex::new(BTreeMap::new()),
        })
    }

    fn unavailable(&self, e: ApiError) -> AbeError {
        match (e.code.as_str(), e.details.get("attribute").and_then(Json::as_str)) {
            ("UngrantedAttribute", Some(a)) => match a.parse() {
                Ok(attr) => AbeError::UngrantedAttribute(attr),
                Err(_) => AbeError::AuthorityUnavailable(self.id.clone()),
            },
            _ => AbeError::AuthorityUnavailable(self.id.clone()),
        }
    }
}

impl AuthorityService for RemoteAuthority {
    fn id(&self) -> &str {
        &self.id
    }

    fn info(&self) -> Result<AuthorityInfo, AbeError> {
        Ok(self.info.clone())
    }

    fn attribute_public_key(&self, name: &str, epoch: u64) -> Result<[u8; 32], AbeError> {
        let cache_key = (name.to_owned(), epoch);
        if let Some(pk) = self.public_keys.lock().expect("cache lock").get(&cache_key) {
            return Ok(*pk);
        }
        let resp: AttributeKeyResponse = self
            .client
            .get_json(&format!("/authority/attributes/{name}/{epoch}"), &[])
            .and_then(|v| serde_json::from_value(v).map_err(ApiError::internal))
            .map_err(|e| self.unavailable(e))?;
        let pk: [u8; 32] = hex::decode(&resp.public_key)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| AbeError::AuthorityUnavailable(self.id.clone()))?;
        self.public_keys.lock().expect("cache lock").insert(cache_key, pk);
        Ok(pk)
    }

    fn issue(
        &self,
        user: &AccountId,
        attrs: &BTreeSet<Attribute>,
        granted: &BTreeSet<Attribute>,
        epoch: u64,
    ) -> Result<ABKey, AbeError> {
        let req = IssueRequest {
            user: *user,
            attributes: attrs.iter().cloned().collect(),
            granted: granted.iter().filter(|a| a.authority == self.id).cloned().collect(),
            epoch,
        };
        let resp: IssueResponse = self
            .client
            .post_json("/authority/issue", &req)
            .and_then(|v| serde_json::from_value(v).map_err(ApiError::internal))
            .map_err(|e| self.unavailable(e))?;
        let bytes = hex::decode(resp.key).map_err(|e| AbeError::MalformedKey(e.to_string()))?;
        let key = ABKey::from_bytes(&bytes)?;
        if key.user() != user {
            return Err(AbeError::MalformedKey("partial key is bound to another account".into()));
        }
        key.verify(std::slice::from_ref(&self.info))?;
        Ok(key)
    }
}

/// Authority subprocesses owned by a gateway. They exit when the gateway
/// closes their stdin, which also happens if it dies.
pub struct IsolatedAuthorities {
    children: Vec<Child>,
}

impl IsolatedAuthorities {
    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }
}

impl Drop for IsolatedAuthorities {
    fn drop(&mut self) {
        for c in &mut self.children {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

/// Starts one `confetty authority serve` process per id and registers each
/// as a remote authority. Keys match those of in-process authorities built
/// from the same secret.
pub fn spawn_isolated(
    exe: &std::path::Path,
    secret: &str,
    ids: &[&str],
    caller: &Identity,
) -> Result<(AuthorityRegistry, IsolatedAuthorities), ApiError> {
    let registry = AuthorityRegistry::new();
    let mut owned = IsolatedAuthorities { children: Vec::new() };
    for id in ids {
        let mut child = Command::new(exe)
            .args(["authority", "serve", "--id", id, "--listen", "127.0.0.1:0", "--exit-on-stdin-eof"])
            .arg("--trusted-caller")
            .arg(caller.public_key().to_string())
            .env("CONFETTY_AUTHORITY_SECRET", secret)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ApiError::internal(format!("cannot start authority {id}: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        owned.children.push(child);
        let mut line = String::new();
        BufReader::new(stdout)
            .read_line(&mut line)
            .map_err(|e| ApiError::internal(format!("authority {id} did not report its address: {e}")))?;
        let url = line
            .trim()
            .strip_prefix("listening on ")
            .ok_or_else(|| ApiError::internal(format!("authority {id} printed {line:?}")))?
            .to_owned();
        let remote = RemoteAuthority::connect(&url, Some(caller.clone()))?;
        if remote.id() != *id {
            return Err(ApiError::internal(format!("authority at {url} is {} not {id}", remote.id())));
        }
        registry
            .add_service(Arc::new(remote))
            .map_err(|e| ApiError::internal(e.to_string()))?;
    }
    Ok((registry, owned))
}

/// Keys for authority `id` under a deployment secret.
pub fn authority_keys(secret: &[u8], id: &str) -> Result<AuthorityKeys, AbeError> {
    AuthorityKeys::setup(id, &authority_seed(secret, id))
}
