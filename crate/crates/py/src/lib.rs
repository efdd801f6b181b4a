//! Python bindings: an in-process or remote gateway, identities, fixtures
//! and policy helpers. JSON documents cross the boundary as Python objects.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;
use serde_json::Value as Json;

use confetty_core::abe::{parse_policy as parse_policy_tree, Attribute};
use confetty_core::api::ApiError;
use confetty_core::digest::Digest;
use confetty_core::fixtures;
use confetty_core::identity::Identity;
use confetty_core::service::{
    build_gateway, run_scenario, standard_authorities, GatewayClient, LocalTransport, ScenarioOptions, StackConfig,
    Transport,
};
use confetty_gateway::HttpTransport;

create_exception!(
    confetty,
    ConfettyError,
    PyException,
    "Gateway or client failure. `args` is (code, message, details as JSON text)."
);

fn err(e: ApiError) -> PyErr {
    ConfettyError::new_err((e.code, e.message, e.details.to_string()))
}

fn bad_request(msg: impl std::fmt::Display) -> PyErr {
    err(ApiError::bad_request(msg.to_string()))
}

fn to_py(py: Python<'_>, value: &impl Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(ApiError::internal(e)))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<Json> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(bad_request)
}

fn digest(text: &str) -> PyResult<Digest> {
    text.parse().map_err(|_| bad_request(format!("`{text}` is not a 64-character hex digest")))
}

#[pyclass(name = "Identity", frozen)]
struct PyIdentity(Identity);

#[pymethods]
impl PyIdentity {
    #[staticmethod]
    fn from_seed(seed: &str) -> Self {
        Self(Identity::from_seed(seed.as_bytes()))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Identity::load(&path)
            .map(Self)
            .map_err(|e| err(ApiError::new("LocalError", e.to_string())))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0
            .save(&path)
            .map_err(|e| err(ApiError::new("LocalError", e.to_string())))
    }

    #[getter]
    fn account(&self) -> String {
        self.0.account().to_string()
    }

    #[getter]
    fn public_key(&self) -> String {
        self.0.public_key().to_string()
    }

    fn __repr__(&self) -> String {
        format!("Identity({})", self.0.account())
    }
}

/// A gateway reached in-process or over HTTP.
#[pyclass(name = "Gateway", frozen)]
struct PyGateway {
    transport: Arc<dyn Transport>,
}

impl PyGateway {
    fn client(&self, identity: Option<&PyIdentity>) -> GatewayClient<Arc<dyn Transport>> {
        GatewayClient::new(self.transport.clone(), identity.map(|i| i.0.clone()))
    }
}

#[pymethods]
impl PyGateway {
    /// Stands up a gateway inside this process.
    #[staticmethod]
    #[pyo3(signature = (cas_root, ledger_path=None, secret="confetty-development-secret", rng_seed=None))]
    fn local(cas_root: PathBuf, ledger_path: Option<PathBuf>, secret: &str, rng_seed: Option<u64>) -> PyResult<Self> {
        let registry = standard_authorities(secret.as_bytes()).map_err(|e| err(ApiError::internal(e)))?;
        let mut cfg = StackConfig::new(cas_root);
        cfg.ledger_path = ledger_path;
        cfg.rng_seed = rng_seed;
        let gw = build_gateway(cfg, Arc::new(registry)).map_err(|e| err(ApiError::internal(e)))?;
        Ok(Self {
            transport: Arc::new(LocalTransport(gw)),
        })
    }

    #[staticmethod]
    fn connect(url: &str) -> Self {
        Self {
            transport: Arc::new(HttpTransport::new(url)),
        }
    }

    /// Raw API call. POST bodies are signed by `identity`.
    #[pyo3(signature = (method, path, body=None, identity=None, query=None))]
    fn call(
        &self,
        py: Python<'_>,
        method: &str,
        path: &str,
        body: Option<Bound<'_, PyAny>>,
        identity: Option<PyRef<'_, PyIdentity>>,
        query: Option<BTreeMap<String, String>>,
    ) -> PyResult<Py<PyAny>> {
        let client = self.client(identity.as_deref());
        let result = match method.to_ascii_uppercase().as_str() {
            "GET" => {
                let q: Vec<(&str, String)> = query
                    .iter()
                    .flatten()
                    .map(|(k, v)| (k.as_str(), v.clone()))
                    .collect();
                client.get_json(path, &q)
            }
            "POST" => {
                let body = match &body {
                    Some(b) => from_py(py, b)?,
                    None => Json::Object(Default::default()),
                };
                client.post_json(path, &body)
            }
            other => return Err(bad_request(format!("unsupported method {other}"))),
        };
        to_py(py, &result.map_err(err)?)
    }

    /// Plays a fixture end to end and returns the scenario report.
    #[pyo3(signature = (name, deploy_nonce=0, skip_reads=false))]
    fn run_fixture(&self, py: Python<'_>, name: &str, deploy_nonce: u64, skip_reads: bool) -> PyResult<Py<PyAny>> {
        let bundle = fixtures::load_fixture(name).map_err(|e| err(ApiError::new("UnknownFixture", e.to_string())))?;
        let opts = ScenarioOptions {
            deploy_nonce,
            skip_reads,
        };
        let report = run_scenario(&bundle, &self.transport, &opts).map_err(err)?;
        to_py(py, &report)
    }

    fn inspect(&self, py: Python<'_>, instance_id: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &self.client(None).inspect(&digest(instance_id)?).map_err(err)?)
    }

    /// Requests a key for `identity` and decrypts one confidential message.
    fn read(&self, py: Python<'_>, message_id: &str, identity: PyRef<'_, PyIdentity>) -> PyResult<Py<PyAny>> {
        let client = self.client(Some(&identity));
        let key = client.request_key().map_err(err)?;
        to_py(py, &client.read(&digest(message_id)?, &key).map_err(err)?)
    }

    fn verify(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.client(None).verify().map_err(err)?)
    }

    fn replay(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.client(None).replay().map_err(err)?)
    }
}

#[pyfunction]
fn fixture_names() -> Vec<&'static str> {
    fixtures::fixture_names()
}

#[pyfunction]
fn load_fixture(py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
    let bundle = fixtures::load_fixture(name).map_err(|e| err(ApiError::new("UnknownFixture", e.to_string())))?;
    Ok(py.import("json")?.call_method1("loads", (bundle.to_json(),))?.unbind())
}

/// Canonical rendering of a policy.
#[pyfunction]
fn parse_policy(text: &str) -> PyResult<String> {
    parse_policy_tree(text).map(|t| t.render()).map_err(|e| {
        err(ApiError::new("PolicyParseError", e.message.clone()).with_details(serde_json::json!({ "offset": e.offset })))
    })
}

#[pyfunction]
fn policy_satisfied(policy: &str, attributes: Vec<String>) -> PyResult<bool> {
    let tree = parse_policy_tree(policy).map_err(|e| err(ApiError::new("PolicyParseError", e.message)))?;
    let attrs = attributes
        .iter()
        .map(|a| a.parse::<Attribute>().map_err(bad_request))
        .collect::<PyResult<BTreeSet<_>>>()?;
    Ok(tree.satisfies(&attrs))
}

/// Exit status the command line uses for an error code.
#[pyfunction]
fn exit_code(code: &str) -> i32 {
    confetty_gateway::exit::for_code(code)
}

#[pymodule]
fn confetty(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ConfettyError", m.py().get_type::<ConfettyError>())?;
    m.add_class::<PyIdentity>()?;
    m.add_class::<PyGateway>()?;
    m.add_function(wrap_pyfunction!(fixture_names, m)?)?;
    m.add_function(wrap_pyfunction!(load_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(parse_policy, m)?)?;
    m.add_function(wrap_pyfunction!(policy_satisfied, m)?)?;
    m.add_function(wrap_pyfunction!(exit_code, m)?)?;
    Ok(())
}
