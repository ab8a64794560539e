//! `provledger` command line: runs the services, drives the client
//! operations, generates local networks, benchmarks, and dumps blocks.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde_json::json;

use provledger::bench::{self, Mode, WorkloadSpec};
use provledger::blob::{BlobServer, BlobServerConfig};
use provledger::client::{ClientConfig, ClientSession};
use provledger::keys;
use provledger::model::{to_hex, BlockJson};
use provledger::orderer::{OrdererConfig, OrdererService};
use provledger::peer::{PeerConfig, PeerService};
use provledger::store;
use provledger::testnet::{self, TestnetSpec};

use provledger_core::{Block, Hash, KeyPair, RecordRef, Role, Version};

#[derive(Parser)]
#[command(
    name = "provledger",
    version,
    about = "Permissioned provenance ledger: ordering service, peers, off-chain blob store, client, and bench"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the ordering service.
    Orderer {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a peer.
    Peer {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the off-chain blob store service.
    Blobstore {
        #[arg(long)]
        config: PathBuf,
    },
    /// Client operations against a running network.
    Client {
        #[command(subcommand)]
        op: ClientCmd,
    },
    /// Closed-loop benchmark; writes a CSV report.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// post-only | store-data | get | get-data | mixed
        #[arg(long, default_value = "store-data")]
        mode: String,
        /// Comma-separated payload sizes in bytes.
        #[arg(long, default_value = "1024,10240,102400,1048576")]
        sizes: String,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Seconds per sweep point (wall clock).
        #[arg(long, default_value_t = 10)]
        duration: u64,
        /// Stop each point after this many operations instead.
        #[arg(long)]
        total_ops: Option<u64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output CSV path.
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
    /// Generate a key seed and print its membership line.
    Keygen {
        #[arg(long)]
        id: String,
        /// orderer | peer | client
        #[arg(long)]
        role: String,
        #[arg(long, default_value = "org1")]
        org: String,
        /// Directory the seed file is written into.
        #[arg(long)]
        out_dir: PathBuf,
        /// 64 hex chars; random when omitted.
        #[arg(long)]
        seed: Option<String>,
    },
    /// Generate membership, keys, and configs for a local network.
    Testnet {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        peers: usize,
        #[arg(long, default_value_t = 1)]
        clients: usize,
        #[arg(long, default_value_t = 7050)]
        base_port: u16,
        #[arg(long, default_value_t = 100)]
        batch_max_count: usize,
        #[arg(long, default_value_t = 500)]
        batch_timeout_ms: u64,
    },
    /// Decode one persisted block file to JSON (no verification).
    DumpBlock {
        /// The service data directory holding blocks/.
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        number: u64,
    },
    /// Re-verify a persisted chain from disk, block by block.
    VerifyChain {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        membership_file: PathBuf,
    },
}

#[derive(Subcommand)]
enum ClientCmd {
    /// Post a provenance record.
    Post {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        key: String,
        /// 64 hex chars; defaults to the digest of empty content.
        #[arg(long)]
        checksum: Option<String>,
        #[arg(long, default_value = "")]
        data_locator: String,
        /// Comma-separated parent refs, each `key@block:tx_index`.
        #[arg(long)]
        parents: Option<String>,
        /// Custom metadata as UTF-8 text.
        #[arg(long)]
        custom: Option<String>,
        /// Custom metadata as base64 (wins over --custom).
        #[arg(long)]
        custom_b64: Option<String>,
    },
    /// Read the latest record under a key.
    Get {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        key: String,
    },
    /// Store a file in the blob store and post the binding record.
    Store {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        key: String,
        /// Content file to store.
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        parents: Option<String>,
        #[arg(long)]
        custom: Option<String>,
        #[arg(long)]
        custom_b64: Option<String>,
    },
    /// Fetch a record's content from the blob store and verify it.
    Fetch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        key: String,
        /// Write the raw content here instead of printing base64.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List every committed version of a key.
    History {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        key: String,
    },
    /// Walk a record's ancestry graph.
    Lineage {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        key: String,
        /// Start from this version (`block:tx_index`) instead of latest.
        #[arg(long)]
        version: Option<String>,
        /// Stop after this many hops.
        #[arg(long)]
        max_depth: Option<u32>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    std::process::exit(run(cli.command));
}

/// Maps a stable error code to the process exit code.
fn exit_code(code: &str) -> i32 {
    match code {
        "bad-config" | "malformed-query" | "malformed-checksum" | "malformed-block" => 2,
        "not-found" | "no-data-locator" => 3,
        "empty-key" | "unknown-parent" | "oversize-custom" | "oversize" | "bad-signature"
        | "bad-tx-id" | "unknown-client" | "identity-not-member" | "wrong-number"
        | "broken-chain" | "bad-data-hash" | "empty-block" => 4,
        "integrity-violation" => 5,
        "peer-unreachable" | "commit-timeout" | "backend-unavailable" | "disk-full"
        | "io-error" => 6,
        _ => 1,
    }
}

fn fail(code: &str, message: impl std::fmt::Display) -> i32 {
    eprintln!("error: {message} ({code})");
    exit_code(code)
}

/// Writes one line to stdout; exits quietly if the reader closed the
/// pipe (e.g. the output is piped into `head`).
fn emit(text: impl std::fmt::Display) {
    use std::io::Write;
    if writeln!(std::io::stdout(), "{text}").is_err() {
        std::process::exit(0);
    }
}

fn print_json(value: &serde_json::Value) {
    emit(serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cmd: Cmd) -> i32 {
    match cmd {
        Cmd::Orderer { config } => {
            let config = match OrdererConfig::load(&config) {
                Ok(config) => config,
                Err(e) => return fail(e.code(), &e),
            };
            match OrdererService::start(config) {
                Ok(service) => {
                    service.wait();
                    0
                }
                Err(e) => fail(e.code(), &e),
            }
        }
        Cmd::Peer { config } => {
            let config = match PeerConfig::load(&config) {
                Ok(config) => config,
                Err(e) => return fail(e.code(), &e),
            };
            match PeerService::start(config) {
                Ok(service) => {
                    service.wait();
                    0
                }
                Err(e) => fail(e.code(), &e),
            }
        }
        Cmd::Blobstore { config } => {
            let config = match BlobServerConfig::load(&config) {
                Ok(config) => config,
                Err(e) => return fail("bad-config", e),
            };
            match BlobServer::start(config) {
                Ok(service) => {
                    service.wait();
                    0
                }
                Err(e) => fail(e.code(), &e),
            }
        }
        Cmd::Client { op } => run_client(op),
        Cmd::Bench {
            config,
            mode,
            sizes,
            concurrency,
            duration,
            total_ops,
            seed,
            out,
        } => run_bench(&config, &mode, &sizes, concurrency, duration, total_ops, seed, &out),
        Cmd::Keygen {
            id,
            role,
            org,
            out_dir,
            seed,
        } => run_keygen(&id, &role, &org, &out_dir, seed.as_deref()),
        Cmd::Testnet {
            dir,
            peers,
            clients,
            base_port,
            batch_max_count,
            batch_timeout_ms,
        } => {
            let spec = TestnetSpec {
                dir,
                peers,
                clients,
                base_port,
                batch_max_count,
                batch_timeout_ms,
            };
            match testnet::generate(&spec) {
                Ok(plan) => {
                    emit(format_args!("membership: {}", plan.membership_file.display()));
                    for file in &plan.config_files {
                        emit(format_args!("config:     {}", file.display()));
                    }
                    emit(format_args!("orderer:    {}", plan.orderer_addr));
                    emit(format_args!("blobstore:  {}", plan.blob_addr));
                    for (i, addr) in plan.peer_addrs.iter().enumerate() {
                        emit(format_args!("peer{}:      {addr}", i + 1));
                    }
                    0
                }
                Err(e) => fail("bad-config", e),
            }
        }
        Cmd::DumpBlock { data_dir, number } => {
            let path = data_dir.join("blocks").join(format!("{number}.blk"));
            let bytes = match std::fs::read(&path) {
                Ok(bytes) => bytes,
                Err(e) => return fail("not-found", format!("{}: {e}", path.display())),
            };
            match Block::decode(&bytes) {
                Ok(block) => {
                    let decoded = BlockJson::from(&block);
                    print_json(&serde_json::to_value(&decoded).expect("serializable"));
                    0
                }
                Err(e) => fail("malformed-block", format!("block {number}: {e}")),
            }
        }
        Cmd::VerifyChain {
            data_dir,
            membership_file,
        } => {
            let membership = match keys::load_membership(&membership_file) {
                Ok(membership) => membership,
                Err(e) => return fail("bad-config", e),
            };
            match store::verify_chain(&data_dir, &membership) {
                Ok(height) => {
                    print_json(&json!({ "verified": true, "height": height }));
                    0
                }
                Err(fault) => {
                    print_json(&json!({
                        "verified": false,
                        "block": fault.number,
                        "code": fault.code,
                        "message": fault.message,
                    }));
                    exit_code(&fault.code)
                }
            }
        }
    }
}

fn parse_record_ref(text: &str) -> Result<RecordRef, String> {
    let (key, version) = text
        .rsplit_once('@')
        .ok_or_else(|| format!("{text:?}: expected key@block:tx_index"))?;
    if key.is_empty() {
        return Err(format!("{text:?}: empty key"));
    }
    Ok(RecordRef {
        key: key.to_string(),
        version: parse_version(version)?,
    })
}

fn parse_version(text: &str) -> Result<Version, String> {
    let (block, tx_index) = text
        .split_once(':')
        .ok_or_else(|| format!("{text:?}: expected block:tx_index"))?;
    let block = block
        .parse()
        .map_err(|e| format!("{text:?}: bad block number: {e}"))?;
    let tx_index = tx_index
        .parse()
        .map_err(|e| format!("{text:?}: bad tx index: {e}"))?;
    Ok(Version { block, tx_index })
}

fn parse_parents(text: Option<&str>) -> Result<Vec<RecordRef>, String> {
    let Some(text) = text else {
        return Ok(vec![]);
    };
    text.split(',')
        .map(str::trim)
        .filter(|part| !part.is_empty())
        .map(parse_record_ref)
        .collect()
}

fn parse_custom(custom: Option<&str>, custom_b64: Option<&str>) -> Result<Vec<u8>, String> {
    if let Some(b64) = custom_b64 {
        return provledger::model::bytes_from_b64(b64, "custom").map_err(|e| e.to_string());
    }
    Ok(custom.map(|text| text.as_bytes().to_vec()).unwrap_or_default())
}

fn parse_checksum(checksum: Option<&str>) -> Result<Hash, String> {
    let Some(text) = checksum else {
        // No content named: bind to the digest of empty content.
        return Ok(provledger_core::sha256(b""));
    };
    let raw = hex::decode(text).map_err(|_| "checksum must be hex".to_string())?;
    raw.try_into()
        .map_err(|_| "checksum must be 32 bytes of hex".to_string())
}

fn open_session(config: &Path) -> Result<ClientSession, (String, String)> {
    let config =
        ClientConfig::load(config).map_err(|e| (e.code().to_string(), e.to_string()))?;
    ClientSession::new(config).map_err(|e| (e.code().to_string(), e.to_string()))
}

fn run_client(op: ClientCmd) -> i32 {
    match op {
        ClientCmd::Post {
            config,
            key,
            checksum,
            data_locator,
            parents,
            custom,
            custom_b64,
        } => {
            let checksum = match parse_checksum(checksum.as_deref()) {
                Ok(checksum) => checksum,
                Err(e) => return fail("malformed-checksum", e),
            };
            let parents = match parse_parents(parents.as_deref()) {
                Ok(parents) => parents,
                Err(e) => return fail("malformed-query", e),
            };
            let custom = match parse_custom(custom.as_deref(), custom_b64.as_deref()) {
                Ok(custom) => custom,
                Err(e) => return fail("malformed-query", e),
            };
            let mut session = match open_session(&config) {
                Ok(session) => session,
                Err((code, message)) => return fail(&code, message),
            };
            match session.post(&key, checksum, &data_locator, parents, custom) {
                Ok(receipt) => {
                    print_json(&serde_json::to_value(&receipt).expect("serializable"));
                    0
                }
                Err(e) => fail(e.code(), &e),
            }
        }
        ClientCmd::Get { config, key } => {
            let mut session = match open_session(&config) {
                Ok(session) => session,
                Err((code, message)) => return fail(&code, message),
            };
            match session.get(&key) {
                Ok((record, version, height)) => {
                    print_json(&json!({
                        "key": key,
                        "version": version,
                        "record": record,
                        "peer_height": height,
                    }));
                    0
                }
                Err(e) => fail(e.code(), &e),
            }
        }
        ClientCmd::Store {
            config,
            key,
            file,
            parents,
            custom,
            custom_b64,
        } => {
            let content = match std::fs::read(&file) {
                Ok(content) => content,
                Err(e) => return fail("io-error", format!("{}: {e}", file.display())),
            };
            let parents = match parse_parents(parents.as_deref()) {
                Ok(parents) => parents,
                Err(e) => return fail("malformed-query", e),
            };
            let custom = match parse_custom(custom.as_deref(), custom_b64.as_deref()) {
                Ok(custom) => custom,
                Err(e) => return fail("malformed-query", e),
            };
            let mut session = match open_session(&config) {
                Ok(session) => session,
                Err((code, message)) => return fail(&code, message),
            };
            match session.store_data(&key, &content, parents, custom) {
                Ok((blob_ref, receipt)) => {
                    print_json(&json!({
                        "locator": blob_ref.locator,
                        "size": blob_ref.size,
                        "checksum": to_hex(&blob_ref.digest),
                        "receipt": receipt,
                    }));
                    0
                }
                Err(e) => fail(e.code(), &e),
            }
        }
        ClientCmd::Fetch { config, key, out } => {
            let mut session = match open_session(&config) {
                Ok(session) => session,
                Err((code, message)) => return fail(&code, message),
            };
            match session.get_data(&key) {
                Ok(fetched) => {
                    if let Some(out) = out {
                        if let Err(e) = std::fs::write(&out, &fetched.content) {
                            return fail("io-error", format!("{}: {e}", out.display()));
                        }
                        print_json(&json!({
                            "key": fetched.key,
                            "version": fetched.version,
                            "size": fetched.size,
                            "out": out.display().to_string(),
                        }));
                    } else {
                        print_json(&json!({
                            "key": fetched.key,
                            "version": fetched.version,
                            "size": fetched.size,
                            "record": fetched.record,
                            "content_b64": provledger::model::bytes_to_b64(&fetched.content),
                        }));
                    }
                    0
                }
                Err(e) => fail(e.code(), &e),
            }
        }
        ClientCmd::History { config, key } => {
            let mut session = match open_session(&config) {
                Ok(session) => session,
                Err((code, message)) => return fail(&code, message),
            };
            match session.get_history(&key) {
                Ok((entries, height)) => {
                    print_json(&json!({
                        "key": key,
                        "entries": entries,
                        "peer_height": height,
                    }));
                    0
                }
                Err(e) => fail(e.code(), &e),
            }
        }
        ClientCmd::Lineage {
            config,
            key,
            version,
            max_depth,
        } => {
            let version = match version.as_deref().map(parse_version).transpose() {
                Ok(version) => version,
                Err(e) => return fail("malformed-query", e),
            };
            let mut session = match open_session(&config) {
                Ok(session) => session,
                Err((code, message)) => return fail(&code, message),
            };
            match session.get_lineage(&key, version, max_depth) {
                Ok((graph, height)) => {
                    print_json(&json!({
                        "lineage": graph,
                        "peer_height": height,
                    }));
                    0
                }
                Err(e) => fail(e.code(), &e),
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_bench(
    config: &Path,
    mode: &str,
    sizes: &str,
    concurrency: usize,
    duration: u64,
    total_ops: Option<u64>,
    seed: u64,
    out: &Path,
) -> i32 {
    let Some(mode) = Mode::parse(mode) else {
        return fail(
            "bad-config",
            format!("unknown mode {mode:?}; use post-only, store-data, get, get-data, or mixed"),
        );
    };
    let sizes: Result<Vec<usize>, _> = sizes
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect();
    let sizes = match sizes {
        Ok(sizes) if !sizes.is_empty() => sizes,
        _ => return fail("bad-config", "sizes must be a comma-separated byte list"),
    };
    let config = match ClientConfig::load(config) {
        Ok(config) => config,
        Err(e) => return fail(e.code(), &e),
    };
    let base = WorkloadSpec {
        mode,
        payload_size: 0,
        concurrency,
        duration: Duration::from_secs(duration),
        total_ops,
        seed,
    };
    match bench::run_sweep(&config, &base, &sizes) {
        Ok(rows) => {
            if let Err(e) = bench::emit_csv(out, &rows) {
                return fail("io-error", format!("{}: {e}", out.display()));
            }
            emit(bench::CSV_HEADER);
            for row in &rows {
                emit(format_args!(
                    "{},{},{},{},{:.3},{:.2},{:.3},{:.3},{:.3}",
                    row.mode,
                    row.payload_size,
                    row.ops,
                    row.errors,
                    row.elapsed_s,
                    row.throughput_ops_s,
                    row.p50_ms,
                    row.p90_ms,
                    row.p99_ms
                ));
            }
            eprintln!("report written to {}", out.display());
            0
        }
        Err(e) => fail(e.code(), &e),
    }
}

fn run_keygen(id: &str, role: &str, org: &str, out_dir: &Path, seed: Option<&str>) -> i32 {
    let Some(role) = Role::parse(role) else {
        return fail("bad-config", format!("unknown role {role:?}"));
    };
    let seed: [u8; 32] = match seed {
        Some(text) => match hex::decode(text).ok().and_then(|raw| raw.try_into().ok()) {
            Some(seed) => seed,
            None => return fail("bad-config", "--seed must be 64 hex characters"),
        },
        None => {
            let mut seed = [0u8; 32];
            use rand::RngCore;
            rand::rngs::OsRng.fill_bytes(&mut seed);
            seed
        }
    };
    let keypair = match KeyPair::from_seed(id, role, org, &seed) {
        Ok(keypair) => keypair,
        Err(e) => return fail("bad-config", e),
    };
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        return fail("io-error", format!("{}: {e}", out_dir.display()));
    }
    let seed_path = out_dir.join(format!("{id}.seed"));
    if let Err(e) = keys::write_seed(&seed_path, &seed) {
        return fail("io-error", e);
    }
    let cert = keypair.certificate();
    eprintln!("seed written to {}", seed_path.display());
    // The membership line for this identity, ready to append.
    emit(format_args!(
        "{} {} {} {}",
        cert.id,
        cert.role,
        cert.org,
        to_hex(&cert.public_key)
    ));
    0
}
