//! The `confetty` command line.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value as Json};

use confetty_core::abe::{ABKey, Attribute};
use confetty_core::api::{ApiError, ConfigureRequest, PolicyEntry};
use confetty_core::digest::Digest;
use confetty_core::fixtures::load_fixture;
use confetty_core::identity::{AccountId, Identity, PublicKey};
use confetty_core::service::{
    attest, build_gateway, run_scenario, standard_authorities, GatewayClient, LocalTransport, ReadOutcome,
    ScenarioOptions, ScenarioReport, SealMode, StackConfig, DEFAULT_AUTHORITIES,
};

use crate::authority::{authority_handler, authority_keys, spawn_isolated};
use crate::exit;
use crate::server::{gateway_handler, serve_blocking};
use crate::transport::HttpTransport;

const DEV_SECRET: &str = "confetty-development-secret";

#[derive(Debug, Parser)]
#[command(name = "confetty", version, about = "Client, gateway and authority for confidential choreographies")]
pub struct Cli {
    /// Gateway base URL.
    #[arg(long, global = true, env = "CONFETTY_GATEWAY", default_value = "http://127.0.0.1:8080")]
    gateway: String,
    /// Identity file used to sign requests.
    #[arg(long, global = true, env = "CONFETTY_IDENTITY")]
    identity: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true, env = "CONFETTY_JSON")]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create an identity file.
    Keygen {
        #[arg(long)]
        out: PathBuf,
        /// Derive the key from a seed instead of the OS random source.
        #[arg(long)]
        seed: Option<String>,
        #[arg(long)]
        force: bool,
    },
    /// Deploy a choreography and print the policy drafts.
    Configure {
        #[arg(long)]
        spec: PathBuf,
        /// `Name=attribute@Authority`, repeatable.
        #[arg(long = "custom-role", value_parser = parse_custom_role)]
        custom_roles: Vec<(String, String)>,
        /// Certifier account, repeatable. Defaults to the caller.
        #[arg(long = "certifier")]
        certifiers: Vec<AccountId>,
        #[arg(long, default_value_t = 0)]
        nonce: u64,
    },
    /// Confirm the access policies of a deployed process.
    #[command(subcommand)]
    Policies(PoliciesCommand),
    /// Sign an attestation as a certifier.
    Attest {
        #[arg(long)]
        process: Digest,
        #[arg(long)]
        role: String,
        #[arg(long)]
        account: AccountId,
        /// Extra attributes. The role attribute and the process confinement
        /// attribute are always included.
        #[arg(long = "attr")]
        attrs: Vec<Attribute>,
        /// Defaults to the current epoch.
        #[arg(long)]
        epoch: Option<u64>,
        /// Record the grant without binding a choreography role.
        #[arg(long)]
        grant_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register with a certifier's attestation.
    Register {
        #[arg(long)]
        attestation: PathBuf,
    },
    /// Start a new instance of a process.
    Instantiate {
        #[arg(long)]
        process: Digest,
    },
    /// Execute choreography tasks.
    #[command(subcommand)]
    Task(TaskCommand),
    /// Public view of an instance or a process.
    Inspect {
        #[arg(long, conflicts_with = "process", required_unless_present = "process")]
        instance: Option<Digest>,
        #[arg(long)]
        process: Option<Digest>,
    },
    /// Obtain decryption keys from the authorities.
    #[command(subcommand)]
    Key(KeyCommand),
    /// Fetch and decrypt a confidential message.
    Read {
        #[arg(long)]
        message: Digest,
        /// Key file from `key request`. Without it a fresh key is requested.
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Query and verify the ledger.
    #[command(subcommand)]
    Ledger(LedgerCommand),
    /// Replay the ledger from genesis and compare with live state.
    Replay,
    /// Show or advance the key epoch.
    #[command(subcommand)]
    Epoch(EpochCommand),
    /// Scripted scenarios with fixture identities.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Run the gateway.
    Serve(ServeArgs),
    /// Run or manage attribute authorities.
    #[command(subcommand)]
    Authority(AuthorityCommand),
}

#[derive(Debug, Subcommand)]
enum PoliciesCommand {
    /// Register policies. Without a file the stored drafts are confirmed.
    Confirm {
        #[arg(long)]
        process: Digest,
        /// JSON array of `{task_id, policy}`.
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum TaskCommand {
    /// Send a task message. Confidential tasks are encrypted first.
    Send {
        #[arg(long)]
        instance: Digest,
        #[arg(long)]
        task: String,
        /// JSON object, or `@path` to read it from a file.
        #[arg(long)]
        payload: String,
    },
}

#[derive(Debug, Subcommand)]
enum KeyCommand {
    /// Request a key for every attribute granted to this identity.
    Request {
        /// Where to write the key. Defaults to the identity path with an
        /// `.abkey` extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum LedgerCommand {
    /// Check the hash chain and every block.
    Verify,
    Head,
    Blocks,
    Block { height: u64 },
    /// Events, optionally filtered by topic or instance.
    Events {
        #[arg(long)]
        contract: Option<String>,
        #[arg(long)]
        topic: Option<String>,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
enum EpochCommand {
    Show,
    /// Start a new epoch (certifiers only).
    Bump,
}

#[derive(Debug, Subcommand)]
enum DemoCommand {
    /// Play the X-ray scenario with fixture identities.
    Xray {
        #[arg(long, default_value = "xray-happy")]
        fixture: String,
        /// Run against a throwaway in-process gateway.
        #[arg(long)]
        in_process: bool,
        #[arg(long)]
        nonce: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "CONFETTY_LISTEN", default_value = "127.0.0.1:8080")]
    listen: String,
    #[arg(long, env = "CONFETTY_LEDGER_PATH", default_value = "confetty-data/ledger.bin")]
    ledger_path: PathBuf,
    #[arg(long, env = "CONFETTY_CAS_PATH", default_value = "confetty-data/cas")]
    cas_path: PathBuf,
    /// `immediate`, or a seal interval such as `2s`.
    #[arg(long, env = "CONFETTY_AUTO_SEAL", default_value = "immediate")]
    auto_seal: SealMode,
    /// Run each authority as its own process.
    #[arg(long, env = "CONFETTY_AUTHORITY_ISOLATED")]
    authority_isolated: bool,
    #[arg(long, env = "CONFETTY_AUTHORITY_SECRET", hide_env_values = true)]
    authority_secret: Option<String>,
    /// Accounts allowed to manage authorities, repeatable.
    #[arg(long = "admin", env = "CONFETTY_ADMINS", value_delimiter = ',')]
    admins: Vec<AccountId>,
    /// Seed for envelope randomness. Only for reproducible test runs.
    #[arg(long, env = "CONFETTY_RNG_SEED")]
    rng_seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum AuthorityCommand {
    /// Serve one authority's issuance API.
    Serve {
        #[arg(long)]
        id: String,
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        #[arg(long, env = "CONFETTY_AUTHORITY_SECRET", hide_env_values = true)]
        secret: Option<String>,
        /// Only this key may request issuance.
        #[arg(long)]
        trusted_caller: Option<PublicKey>,
        #[arg(long)]
        exit_on_stdin_eof: bool,
    },
    /// Authorities known to the gateway.
    List,
    /// Register an in-process authority (admins only).
    Add {
        id: String,
        /// Hex seed of at least 32 bytes.
        #[arg(long)]
        seed: String,
    },
    Enable { id: String },
    Disable { id: String },
}

fn parse_custom_role(s: &str) -> Result<(String, String), String> {
    let (name, attr) = s.split_once('=').ok_or("expected Name=attribute@Authority")?;
    attr.parse::<Attribute>().map_err(|e| e.to_string())?;
    Ok((name.trim().to_owned(), attr.trim().to_owned()))
}

fn local(msg: impl std::fmt::Display) -> ApiError {
    ApiError::new("LocalError", msg.to_string())
}

fn check_failed(msg: impl std::fmt::Display) -> ApiError {
    ApiError::new("CheckFailed", msg.to_string())
}

struct Ctx {
    gateway: String,
    identity: Option<PathBuf>,
    json: bool,
}

impl Ctx {
    fn load_identity(&self) -> Result<Identity, ApiError> {
        let path = self
            .identity
            .as_ref()
            .ok_or_else(|| local("this command needs --identity or CONFETTY_IDENTITY"))?;
        Identity::load(path).map_err(|e| local(format!("{}: {e}", path.display())))
    }

    fn anonymous(&self) -> GatewayClient<HttpTransport> {
        GatewayClient::anonymous(HttpTransport::new(&self.gateway))
    }

    fn signed(&self) -> Result<GatewayClient<HttpTransport>, ApiError> {
        Ok(GatewayClient::new(HttpTransport::new(&self.gateway), Some(self.load_identity()?)))
    }

    fn emit<T: Serialize>(&self, value: &T, human: impl FnOnce(&T) -> String) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
        } else {
            println!("{}", human(value));
        }
    }
}

fn read_text(path: &Path) -> Result<String, ApiError> {
    std::fs::read_to_string(path).map_err(|e| local(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ApiError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| local(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| local(format!("{}: {e}", path.display())))
}

fn parse_payload(arg: &str) -> Result<Json, ApiError> {
    let text = match arg.strip_prefix('@') {
        Some("-") => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).map_err(local)?;
            s
        }
        Some(path) => read_text(Path::new(path))?,
        None => arg.to_owned(),
    };
    serde_json::from_str(&text).map_err(|e| local(format!("payload is not JSON: {e}")))
}

fn now_micros() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as u64)
}

fn key_path(ctx: &Ctx, out: Option<&PathBuf>) -> Result<PathBuf, ApiError> {
    match (out, &ctx.identity) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(id)) => Ok(id.with_extension("abkey")),
        (None, None) => Err(local("no key path: pass --key/--out or --identity")),
    }
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let ctx = Ctx {
        gateway: cli.gateway,
        identity: cli.identity,
        json: cli.json,
    };
    match execute(&ctx, cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("{}", json!({ "error": e }));
            exit::for_code(&e.code)
        }
    }
}

fn execute(ctx: &Ctx, command: Command) -> Result<(), ApiError> {
    match command {
        Command::Keygen { out, seed, force } => {
            if out.exists() && !force {
                return Err(local(format!("{} exists; pass --force to overwrite", out.display())));
            }
            let identity = match seed {
                Some(s) => Identity::from_seed(s.as_bytes()),
                None => Identity::generate(&mut rand::rngs::OsRng),
            };
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(local)?;
            }
            identity.save(&out).map_err(|e| local(format!("{}: {e}", out.display())))?;
            let view = json!({ "account": identity.account(), "public_key": identity.public_key(), "path": out });
            ctx.emit(&view, |_| identity.account().to_string());
        }
        Command::Configure {
            spec,
            custom_roles,
            mut certifiers,
            nonce,
        } => {
            let client = ctx.signed()?;
            if certifiers.is_empty() {
                certifiers.push(client.account().expect("signed client"));
            }
            let resp = client.configure(&ConfigureRequest {
                spec: read_text(&spec)?,
                custom_roles: custom_roles.into_iter().collect(),
                certifiers,
                deploy_nonce: nonce,
            })?;
            ctx.emit(&resp, |r| {
                let mut s = format!("process {}\nconfinement {}", r.process_id, r.confinement_attribute);
                for d in &r.drafts {
                    s.push_str(&format!("\ndraft {}: {}", d.task_id, d.policy));
                }
                s
            });
        }
        Command::Policies(PoliciesCommand::Confirm { process, file }) => {
            let client = ctx.signed()?;
            let entries: Vec<PolicyEntry> = match file {
                Some(path) => serde_json::from_str(&read_text(&path)?)
                    .map_err(|e| local(format!("{}: {e}", path.display())))?,
                None => client
                    .process(&process)?
                    .drafts
                    .into_iter()
                    .map(|d| PolicyEntry {
                        task_id: d.task_id,
                        policy: d.policy,
                    })
                    .collect(),
            };
            let resp = client.confirm_policies(&process, entries)?;
            ctx.emit(&resp, |r| {
                r.results
                    .iter()
                    .map(|x| match (&x.policy_locator, &x.error) {
                        (Some(loc), _) => format!("{}: {loc}", x.task_id),
                        (None, Some(e)) => format!("{}: {} {}", x.task_id, e.code, e.message),
                        (None, None) => format!("{}: ?", x.task_id),
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
            // Per-task failures still fail the command.
            if let Some(e) = resp.results.iter().find_map(|r| r.error.clone()) {
                return Err(e);
            }
        }
        Command::Attest {
            process,
            role,
            account,
            attrs,
            epoch,
            grant_only,
            out,
        } => {
            let certifier = ctx.load_identity()?;
            let client = ctx.anonymous();
            let view = client.process(&process)?;
            let mut attributes: BTreeSet<Attribute> = attrs.into_iter().collect();
            attributes.insert(
                view.confinement_attribute
                    .parse()
                    .map_err(|e| ApiError::internal(format!("confinement attribute: {e}")))?,
            );
            if let Some(r) = view.role(&role) {
                attributes.insert(r.attribute.parse().map_err(ApiError::internal)?);
            }
            let epoch = match epoch {
                Some(e) => e,
                None => client.epoch()?,
            };
            let att = attest(&certifier, &process, &role, &account, &attributes, epoch, !grant_only);
            let text = serde_json::to_string_pretty(&att).map_err(ApiError::internal)?;
            match out {
                Some(path) => {
                    write_file(&path, text.as_bytes())?;
                    ctx.emit(&json!({ "path": path }), |_| format!("attestation written to {}", path.display()));
                }
                None => println!("{text}"),
            }
        }
        Command::Register { attestation } => {
            let att = serde_json::from_str(&read_text(&attestation)?)
                .map_err(|e| local(format!("{}: {e}", attestation.display())))?;
            let resp = ctx.signed()?.register(att)?;
            ctx.emit(&resp, |r| {
                format!("registered as {} (bound: {}) with {}", r.role, r.bound, r.granted.join(", "))
            });
        }
        Command::Instantiate { process } => {
            let resp = ctx.signed()?.instantiate(&process)?;
            ctx.emit(&resp, |r| format!("instance {}\nenabled {}", r.instance_id, r.enabled.join(", ")));
        }
        Command::Task(TaskCommand::Send {
            instance,
            task,
            payload,
        }) => {
            let resp = ctx.signed()?.transact(&instance, &task, parse_payload(&payload)?)?;
            ctx.emit(&resp, |r| {
                let mut s = format!("message {} in block {} ({:?})", r.message_id, r.block_height, r.visibility);
                if let Some(loc) = &r.ciphertext_locator {
                    s.push_str(&format!("\nciphertext {loc}"));
                }
                s.push_str(&format!("\nstatus {}\nenabled {}", r.status, r.enabled.join(", ")));
                s
            });
        }
        Command::Inspect { instance, process } => {
            let client = ctx.anonymous();
            if let Some(iid) = instance {
                let view = client.inspect(&iid)?;
                ctx.emit(&view, |v| {
                    let mut s = format!("instance {}\nstatus {}", v.instance_id, v.status);
                    for t in &v.enabled {
                        s.push_str(&format!("\nenabled {} ({} -> {})", t.task_id, t.initiator, t.recipient));
                    }
                    for m in &v.message_log {
                        let body = match (&m.payload, &m.ciphertext_locator) {
                            (Some(p), _) => p.to_string(),
                            (None, Some(loc)) => format!("{loc} under {}", m.policy.as_deref().unwrap_or("?")),
                            _ => String::new(),
                        };
                        s.push_str(&format!("\n#{} {} {} {}", m.block_height, m.task_id, m.message_id, body));
                    }
                    s
                });
            } else if let Some(pid) = process {
                let view = client.process(&pid)?;
                ctx.emit(&view, |v| {
                    let mut s = format!("process {} ({})\nepoch {}", v.process_id, v.model_id, v.epoch);
                    for r in &v.roles {
                        let who = r.account.map_or("unbound".to_owned(), |a| a.to_string());
                        s.push_str(&format!("\nrole {} {} {}", r.role, r.attribute, who));
                    }
                    for p in &v.policies {
                        s.push_str(&format!("\npolicy {}: {}", p.task_id, p.policy));
                    }
                    for i in &v.instances {
                        s.push_str(&format!("\ninstance {i}"));
                    }
                    s
                });
            }
        }
        Command::Key(KeyCommand::Request { out }) => {
            let client = ctx.signed()?;
            let key = client.request_key()?;
            let path = key_path(ctx, out.as_ref())?;
            write_file(&path, hex::encode(key.to_bytes()).as_bytes())?;
            let attrs = key.attributes();
            ctx.emit(&json!({ "path": path, "attributes": attrs }), |_| {
                format!("key with {} written to {}", attrs.join(", "), path.display())
            });
        }
        Command::Read { message, key } => {
            let client = ctx.signed()?;
            let key = match key {
                Some(path) => {
                    let text = read_text(&path)?;
                    let bytes = hex::decode(text.trim()).map_err(|e| local(format!("{}: {e}", path.display())))?;
                    ABKey::from_bytes(&bytes).map_err(|e| ApiError::new("MalformedKey", e.to_string()))?
                }
                None => client.request_key()?,
            };
            let plaintext = client.read(&message, &key)?;
            ctx.emit(&plaintext, |p| serde_json::to_string_pretty(p).expect("json"));
        }
        Command::Ledger(cmd) => ledger(ctx, cmd)?,
        Command::Replay => {
            let view = ctx.anonymous().replay()?;
            ctx.emit(&view, |v| {
                format!(
                    "{} instances, identical: {}, state root matches: {}",
                    v.instances, v.identical, v.state_root_matches
                )
            });
            if !(view.clean && view.identical && view.state_root_matches) {
                return Err(check_failed("replay diverges from live state"));
            }
        }
        Command::Epoch(EpochCommand::Show) => {
            let epoch = ctx.anonymous().epoch()?;
            ctx.emit(&json!({ "epoch": epoch }), |_| epoch.to_string());
        }
        Command::Epoch(EpochCommand::Bump) => {
            let epoch = ctx.signed()?.bump_epoch()?;
            ctx.emit(&json!({ "epoch": epoch }), |_| epoch.to_string());
        }
        Command::Demo(DemoCommand::Xray {
            fixture,
            in_process,
            nonce,
        }) => demo(ctx, &fixture, in_process, nonce.unwrap_or_else(now_micros))?,
        Command::Serve(args) => serve(args)?,
        Command::Authority(cmd) => authority(ctx, cmd)?,
    }
    Ok(())
}

fn ledger(ctx: &Ctx, cmd: LedgerCommand) -> Result<(), ApiError> {
    let client = ctx.anonymous();
    match cmd {
        LedgerCommand::Verify => {
            let view = client.verify()?;
            ctx.emit(&view, |v| if v.clean { "CLEAN".to_owned() } else { v.report.clone() });
            if !view.clean {
                return Err(check_failed(view.report));
            }
        }
        LedgerCommand::Head => {
            let head = client.head()?;
            ctx.emit(&head, |h| format!("height {} hash {}", h.height, h.block_hash));
        }
        LedgerCommand::Blocks => {
            let blocks = client.blocks()?;
            ctx.emit(&blocks, |bs| {
                bs.iter()
                    .map(|b| format!("{} {} txs {}", b.height, b.block_hash, b.tx_count))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        LedgerCommand::Block { height } => {
            let block = client.block(height)?;
            ctx.emit(&block, |b| {
                let mut s = format!("block {} {}", b.height, b.block_hash);
                for tx in &b.txs {
                    s.push_str(&format!("\n{} {}.{} {}", tx.tx_id, tx.contract, tx.call, tx.outcome));
                }
                s
            });
        }
        LedgerCommand::Events { contract, topic, from, to } => {
            let mut query = Vec::new();
            if let Some(c) = contract {
                query.push(("contract", c));
            }
            if let Some(t) = topic {
                query.push(("topic", t));
            }
            if let Some(f) = from {
                query.push(("from", f.to_string()));
            }
            if let Some(t) = to {
                query.push(("to", t.to_string()));
            }
            let events = client.events(&query)?;
            ctx.emit(&events, |es| {
                es.iter()
                    .map(|e| format!("{}.{} {} {}", e.block_height, e.index, e.contract, e.topic))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
    }
    Ok(())
}

fn print_report(report: &ScenarioReport) -> String {
    let mut s = String::new();
    for step in &report.steps {
        s.push_str(&format!(
            "#{} {} by {} ({:?}) {}\n",
            step.block_height, step.task, step.sender, step.visibility, step.message_id
        ));
    }
    for (who, key) in &report.keys {
        match key {
            Ok(attrs) => s.push_str(&format!("key {who}: {}\n", attrs.join(", "))),
            Err(code) => s.push_str(&format!("key {who}: denied ({code})\n")),
        }
    }
    for r in &report.reads {
        match &r.outcome {
            ReadOutcome::Plaintext(_) => s.push_str(&format!("read {} {}: plaintext\n", r.reader, r.task)),
            ReadOutcome::Denied(code) => s.push_str(&format!("read {} {}: denied ({code})\n", r.reader, r.task)),
        }
    }
    s.push_str(&format!("instance {} {}", report.instance_id, report.status));
    s
}

fn demo(ctx: &Ctx, fixture: &str, in_process: bool, nonce: u64) -> Result<(), ApiError> {
    let bundle = load_fixture(fixture).map_err(|e| ApiError::new("UnknownFixture", e.to_string()))?;
    let options = ScenarioOptions {
        deploy_nonce: nonce,
        skip_reads: false,
    };
    let report = if in_process {
        let dir = std::env::temp_dir().join(format!("confetty-demo-{}-{nonce}", std::process::id()));
        let registry = standard_authorities(DEV_SECRET.as_bytes()).map_err(ApiError::internal)?;
        let gw = build_gateway(StackConfig::new(dir.join("cas")), Arc::new(registry)).map_err(ApiError::internal)?;
        let result = run_scenario(&bundle, &LocalTransport(gw), &options);
        let _ = std::fs::remove_dir_all(&dir);
        result?
    } else {
        run_scenario(&bundle, &HttpTransport::new(&ctx.gateway), &options)?
    };
    ctx.emit(&report, print_report);
    if report.status != "COMPLETED" {
        return Err(check_failed(format!("instance ended {}", report.status)));
    }
    Ok(())
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("CONFETTY_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn announce(addr: std::net::SocketAddr) {
    let mut out = std::io::stdout();
    let _ = writeln!(out, "listening on http://{addr}");
    let _ = out.flush();
}

fn serve(args: ServeArgs) -> Result<(), ApiError> {
    init_logging();
    let secret = args.authority_secret.unwrap_or_else(|| {
        tracing::warn!("no authority secret given; using the development secret");
        DEV_SECRET.to_owned()
    });
    let (registry, _children) = if args.authority_isolated {
        let exe = std::env::current_exe().map_err(local)?;
        let caller = Identity::generate(&mut rand::rngs::OsRng);
        let (reg, children) = spawn_isolated(&exe, &secret, &DEFAULT_AUTHORITIES, &caller)?;
        tracing::info!(authorities = children.len(), "authorities running as separate processes");
        (reg, Some(children))
    } else {
        (standard_authorities(secret.as_bytes()).map_err(ApiError::internal)?, None)
    };
    let mut config = StackConfig::new(&args.cas_path);
    config.ledger_path = Some(args.ledger_path.clone());
    if let Some(dir) = args.ledger_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(local)?;
    }
    config.seal_mode = args.auto_seal;
    config.admins = args.admins.into_iter().collect();
    config.rng_seed = args.rng_seed;
    let gateway = build_gateway(config, Arc::new(registry)).map_err(|e| ApiError::new("LedgerError", e.to_string()))?;
    serve_blocking(gateway_handler(gateway), &args.listen, announce).map_err(local)
}

fn authority(ctx: &Ctx, cmd: AuthorityCommand) -> Result<(), ApiError> {
    match cmd {
        AuthorityCommand::Serve {
            id,
            listen,
            secret,
            trusted_caller,
            exit_on_stdin_eof,
        } => {
            init_logging();
            let secret = secret.unwrap_or_else(|| DEV_SECRET.to_owned());
            let keys = authority_keys(secret.as_bytes(), &id).map_err(|e| ApiError::new("BadRequest", e.to_string()))?;
            if exit_on_stdin_eof {
                std::thread::spawn(|| {
                    let _ = std::io::copy(&mut std::io::stdin(), &mut std::io::sink());
                    std::process::exit(0);
                });
            }
            serve_blocking(authority_handler(keys, trusted_caller), &listen, announce).map_err(local)
        }
        AuthorityCommand::List => {
            let list = ctx.anonymous().authorities()?;
            ctx.emit(&list, |l| {
                l.iter()
                    .map(|a| format!("{} {} {}", a.id, if a.enabled { "enabled" } else { "disabled" }, a.verifying_key))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
            Ok(())
        }
        AuthorityCommand::Add { id, seed } => {
            let seed = hex::decode(seed.trim()).map_err(|e| local(format!("seed: {e}")))?;
            let info = ctx.signed()?.add_authority(&id, &seed)?;
            ctx.emit(&info, |i| format!("{} {}", i.id, i.verifying_key));
            Ok(())
        }
        AuthorityCommand::Enable { id } => set_authority(ctx, &id, true),
        AuthorityCommand::Disable { id } => set_authority(ctx, &id, false),
    }
}

fn set_authority(ctx: &Ctx, id: &str, enabled: bool) -> Result<(), ApiError> {
    let info = ctx.signed()?.set_authority(id, enabled)?;
    ctx.emit(&info, |i| format!("{} {}", i.id, if i.enabled { "enabled" } else { "disabled" }));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn custom_roles_need_a_qualified_attribute() {
        assert_eq!(
            parse_custom_role("MinistryOfHealth=Ministry@A2").unwrap(),
            ("MinistryOfHealth".to_owned(), "Ministry@A2".to_owned())
        );
        assert!(parse_custom_role("MinistryOfHealth").is_err());
        assert!(parse_custom_role("X=unqualified").is_err());
    }

    #[test]
    fn usage_errors_exit_with_the_usage_status() {
        assert_eq!(run(["confetty", "no-such-command"]), exit::USAGE);
    }

    #[test]
    fn in_process_demo_completes() {
        assert_eq!(run(["confetty", "--json", "demo", "xray", "--in-process", "--nonce", "1"]), exit::OK);
    }
}
