use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use protbox::crypto::DEFAULT_KDF_ITERATIONS;
use protbox::keydist::Decision;
use protbox_daemon::dto::*;
use protbox_daemon::error::{EXIT_FAILURE, EXIT_USAGE};
use protbox_daemon::home::registry_password;
use protbox_daemon::setup::{self, IdentitySource, InitOptions};
use protbox_daemon::{Connection, Daemon, DaemonError, Home};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "protbox", version, about = "Encrypted folder pairs on top of cloud-synchronized folders")]
struct Cli {
    /// Registry and configuration directory [default: ~/.protbox]
    #[arg(long, global = true, env = "PROTBOX_HOME")]
    home: Option<PathBuf>,
    /// Print machine-readable JSON; errors go to stderr as JSON too.
    #[arg(long, global = true)]
    json: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create the registry, identity files and daemon configuration.
    Init(InitArgs),
    #[command(subcommand)]
    Pair(PairCmd),
    #[command(subcommand)]
    Requests(RequestsCmd),
    #[command(subcommand)]
    Hidden(HiddenCmd),
    /// Bring a hidden file back from its backups.
    Restore {
        pair: String,
        path: String,
        #[arg(long)]
        version: Option<u64>,
    },
    #[command(subcommand)]
    Policy(PolicyCmd),
    #[command(subcommand)]
    Quarantine(QuarantineCmd),
    #[command(subcommand)]
    Backups(BackupsCmd),
    #[command(subcommand)]
    Events(EventsCmd),
    /// Run one cycle of every pair now.
    Sync,
    #[command(subcommand)]
    Daemon(DaemonCmd),
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("identity").required(true).args(["software_token", "token_config"])))]
struct InitArgs {
    /// Issue a software token with this subject.
    #[arg(long, value_name = "NAME")]
    software_token: Option<String>,
    /// CA directory for the software token; created when empty [default: <home>/ca]
    #[arg(long, requires = "software_token")]
    ca: Option<PathBuf>,
    /// Existing token configuration file.
    #[arg(long, requires = "truststore")]
    token_config: Option<PathBuf>,
    /// Directory of trusted root certificates (PEM or DER).
    #[arg(long)]
    truststore: Option<PathBuf>,
    /// User id recorded in the registry [default: token subject]
    #[arg(long)]
    user: Option<String>,
    /// Loopback address for the control API.
    #[arg(long)]
    listen: Option<SocketAddr>,
    #[arg(long, default_value_t = DEFAULT_KDF_ITERATIONS)]
    kdf_iterations: u32,
}

#[derive(Debug, Subcommand)]
enum PairCmd {
    /// Pair a prot folder with a shared folder.
    Add {
        #[arg(long)]
        prot: PathBuf,
        #[arg(long)]
        shared: PathBuf,
        /// Cipher for a new key, e.g. AES/CBC/PKCS5Padding.
        #[arg(long)]
        cipher: Option<String>,
        /// MAC for a new key, e.g. HmacSHA1.
        #[arg(long)]
        mac: Option<String>,
    },
    List,
    Remove { pair: String },
}

#[derive(Debug, Subcommand)]
enum RequestsCmd {
    /// Inbound and outbound key requests.
    List,
    Approve { id: String },
    Deny { id: String },
}

#[derive(Debug, Subcommand)]
enum HiddenCmd {
    List { pair: String },
}

#[derive(Debug, Subcommand)]
enum PolicyCmd {
    Show { pair: String },
    /// `policy set <pair> [<path>] <never|keep:N|ask>`
    Set {
        pair: String,
        #[arg(num_args = 1..=2, value_names = ["PATH", "POLICY"], required = true)]
        rest: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
enum QuarantineCmd {
    List { pair: String },
}

#[derive(Debug, Subcommand)]
enum BackupsCmd {
    /// Content waiting for a keep/discard answer under the `ask` policy.
    List,
    Keep { id: String },
    Discard { id: String },
}

#[derive(Debug, Subcommand)]
enum EventsCmd {
    Tail {
        #[arg(long, default_value_t = 0)]
        since: u64,
        /// Keep streaming from the running daemon.
        #[arg(long, short)]
        follow: bool,
    },
    /// Drop events up to and including a sequence number.
    Ack { upto: u64 },
}

#[derive(Debug, Subcommand)]
enum DaemonCmd {
    Run,
}

struct Out {
    json: bool,
}

impl Out {
    fn print<T: Serialize>(&self, value: &T, human: impl FnOnce(&T) -> String) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
        } else {
            let text = human(value);
            if !text.is_empty() {
                println!("{text}");
            }
        }
    }
}

fn pairs_text(pairs: &Vec<PairSummary>) -> String {
    if pairs.is_empty() {
        return "no pairs".into();
    }
    let mut out = format!("{:<16}  {:<11}  {:>5}  {:>6}  {:>4}  {:<8}  FOLDERS", "ID", "STATE", "FILES", "HIDDEN", "QUAR", "POLICY");
    for p in pairs {
        out.push_str(&format!(
            "\n{:<16}  {:<11}  {:>5}  {:>6}  {:>4}  {:<8}  {} <-> {}",
            p.id,
            format!("{:?}", p.state),
            p.files,
            p.hidden,
            p.quarantined,
            p.policy,
            p.prot_path.display(),
            p.shared_path.display()
        ));
    }
    out
}

fn pair_added_text(p: &PairSummary) -> String {
    let mut out = format!("pair {} {:?}", p.id, p.state);
    if let Some(r) = &p.pending_request {
        out.push_str(&format!("\nkey request {r} placed; waiting for a member to approve"));
    }
    out
}

fn policy_text(p: &PolicyView) -> String {
    let mut out = format!("default: {}", p.policy);
    for (path, policy) in &p.overrides {
        out.push_str(&format!("\n{path}: {policy}"));
    }
    out
}

fn event_text(ev: &EventView) -> String {
    format!("{:>5}  {}  {:<19}  {}", ev.seq, ev.at, ev.kind, ev.payload)
}

#[derive(Serialize)]
struct RequestLists {
    inbound: Vec<InboundView>,
    outbound: Vec<OutboundView>,
}

fn requests_text(r: &RequestLists) -> String {
    let mut lines = vec!["inbound:".to_owned()];
    for i in &r.inbound {
        lines.push(format!(
            "  {}  pair {}  from {}  sha256:{}  since {}",
            i.id, i.pair_id, i.subject, i.fingerprint, i.first_seen
        ));
    }
    lines.push("outbound:".into());
    for o in &r.outbound {
        lines.push(format!("  {}  pair {}  placed {}  in {}", o.id, o.pair_id, o.placed_at, o.shared_path));
    }
    lines.join("\n")
}

fn init(home: &Home, args: InitArgs, out: &Out) -> Result<(), DaemonError> {
    let identity = match (args.software_token, args.token_config, args.truststore) {
        (Some(name), None, _) => IdentitySource::SoftwareToken { name, ca_dir: args.ca },
        (None, Some(config), Some(truststore)) => IdentitySource::TokenConfig { config, truststore },
        _ => return Err(DaemonError::BadRequest("choose --software-token or --token-config with --truststore".into())),
    };
    let options = InitOptions {
        identity,
        user_id: args.user,
        listen: args.listen,
        kdf_iterations: args.kdf_iterations,
    };
    let password = registry_password(true)?;
    let report = setup::init(home, &options, &password)?;
    out.print(&report, |r| {
        let mut s = format!(
            "initialized {} for {}\ntoken subject {} (sha256:{})\ncontrol API will listen on {}",
            r.home.display(),
            r.user_id,
            r.subject,
            r.fingerprint,
            r.listen
        );
        if let Some(ca) = &r.ca_dir {
            s.push_str(&format!("\nsoftware CA in {}; other members can use `--ca` with a copy of it", ca.display()));
        }
        s
    });
    Ok(())
}

fn daemon_run(home: Home) -> Result<(), DaemonError> {
    let password = registry_password(false)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let daemon = Daemon::bind(home, &password).await?;
        eprintln!("protbox daemon listening on http://{}", daemon.local_addr());
        daemon
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}

fn run(cli: Cli) -> Result<(), DaemonError> {
    let home = cli.home.map(Home::new).unwrap_or_else(Home::from_env);
    let out = Out { json: cli.json };
    let command = match cli.command {
        Command::Init(args) => return init(&home, args, &out),
        Command::Daemon(DaemonCmd::Run) => return daemon_run(home),
        other => other,
    };
    let conn = Connection::open(&home, || registry_password(false))?;
    let c = conn.control();
    match command {
        Command::Init(_) | Command::Daemon(_) => unreachable!("handled above"),
        Command::Pair(PairCmd::Add { prot, shared, cipher, mac }) => {
            let req = AddPair {
                prot: prot.display().to_string(),
                shared: shared.display().to_string(),
                cipher,
                mac,
            };
            out.print(&c.add_pair(&req)?, pair_added_text);
        }
        Command::Pair(PairCmd::List) => out.print(&c.pairs()?, pairs_text),
        Command::Pair(PairCmd::Remove { pair }) => {
            c.remove_pair(&pair)?;
            out.print(&serde_json::json!({ "removed": pair }), |_| format!("removed pair {pair}"));
        }
        Command::Requests(RequestsCmd::List) => {
            let lists = RequestLists {
                inbound: c.inbound_requests()?,
                outbound: c.outbound_requests()?,
            };
            out.print(&lists, requests_text);
        }
        Command::Requests(RequestsCmd::Approve { id }) => {
            out.print(&c.decide_request(&id, Decision::Approve)?, |d| match &d.response_file {
                Some(f) => format!("approved {}; response {f} placed", d.request_id),
                None => format!("approved {}", d.request_id),
            });
        }
        Command::Requests(RequestsCmd::Deny { id }) => {
            out.print(&c.decide_request(&id, Decision::Deny)?, |d| format!("denied {}", d.request_id));
        }
        Command::Hidden(HiddenCmd::List { pair }) => {
            out.print(&c.hidden(&pair)?, |hidden| {
                if hidden.is_empty() {
                    return "no hidden entries".into();
                }
                hidden
                    .iter()
                    .map(|h| {
                        let versions: Vec<String> = h
                            .versions
                            .iter()
                            .map(|v| format!("v{} {} {}B", v.version, v.captured_at, v.length))
                            .collect();
                        format!("{} ({})  {}", h.path, h.kind, versions.join(", "))
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Command::Restore { pair, path, version } => {
            let view = c.restore(&pair, &RestoreRequest { path, version })?;
            out.print(&view, |v| {
                if v.restored {
                    format!("restored {}", v.path)
                } else {
                    format!("restore of {} scheduled for the next cycle", v.path)
                }
            });
        }
        Command::Policy(PolicyCmd::Show { pair }) => out.print(&c.policy(&pair)?, policy_text),
        Command::Policy(PolicyCmd::Set { pair, mut rest }) => {
            let policy = rest.pop().expect("clap requires one value");
            let update = PolicyUpdate { path: rest.pop(), policy };
            out.print(&c.set_policy(&pair, &update)?, policy_text);
        }
        Command::Quarantine(QuarantineCmd::List { pair }) => {
            out.print(&c.quarantine(&pair)?, |q| {
                q.iter()
                    .map(|r| format!("{}  since {}  {}", r.shared_path, r.since, r.reason))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Command::Backups(BackupsCmd::List) => {
            out.print(&c.backup_decisions()?, |ds| {
                ds.iter()
                    .map(|d| format!("{}  pair {}  {}  {}B  {}", d.id, d.pair_id, d.path, d.length, d.captured_at))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        Command::Backups(BackupsCmd::Keep { id }) => {
            out.print(&c.resolve_backup_decision(&id, true)?, |r| match r.version {
                Some(v) => format!("kept as version {v}"),
                None => "kept".into(),
            });
        }
        Command::Backups(BackupsCmd::Discard { id }) => {
            out.print(&c.resolve_backup_decision(&id, false)?, |r| format!("discarded {}", r.id));
        }
        Command::Events(EventsCmd::Tail { since, follow }) => {
            if follow {
                let Connection::Remote(client) = &conn else {
                    return Err(DaemonError::BadRequest("--follow needs a running daemon".into()));
                };
                client.follow_events(since, |ev| {
                    if out.json {
                        println!("{}", serde_json::to_string(&ev).expect("event serializes"));
                    } else {
                        println!("{}", event_text(&ev));
                    }
                    true
                })?;
            } else {
                out.print(&c.events(since)?, |evs| evs.iter().map(event_text).collect::<Vec<_>>().join("\n"));
            }
        }
        Command::Events(EventsCmd::Ack { upto }) => {
            c.acknowledge_events(upto)?;
            out.print(&Ack { upto }, |a| format!("acknowledged events up to {}", a.upto));
        }
        Command::Sync => {
            out.print(&c.sync_now()?, |cycles| {
                cycles
                    .iter()
                    .map(|r| match &r.error {
                        Some(e) => format!("{}  error {e}", r.pair_id),
                        None => format!(
                            "{}  {} copied, {} deleted, {} conflicts, {} quarantined{}",
                            r.pair_id,
                            r.copied,
                            r.deleted,
                            r.conflicts,
                            r.quarantined,
                            if r.key_installed { ", key installed" } else { "" }
                        ),
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let json = cli.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                eprintln!("{}", serde_json::to_string(&e.to_api()).expect("error serializes"));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code().clamp(EXIT_FAILURE, 255) as u8)
        }
    }
}
