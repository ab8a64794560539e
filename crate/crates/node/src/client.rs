//! Client session: builds and signs transactions, submits them to the
//! orderer, confirms commitment by watching a peer's history, queries
//! committed state, and moves content through the blob store.
//!
//! Storing data is two steps in a fixed order: the content goes to the
//! blob store first, then the record (carrying the content digest and
//! locator) is posted to the ledger. If the post fails, the error names
//! the already-written blob so it can be garbage-collected or retried.

use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use provledger_core::{
    sha256, Hash, KeyPair, MembershipList, ProvenanceRecord, RecordRef, Role, Transaction, Version,
};

use crate::blob::{BlobError, BlobRef, LocalDirBackend, RemoteBackend, StoreBackend, DEFAULT_MAX_BLOB};
use crate::config::{Config, ConfigError};
use crate::keys::{load_identity, load_membership, KeyFileError};
use crate::model::{
    to_hex, HistoryEntryJson, LineageJson, ModelError, RecordJson, TransactionJson, VersionJson,
};
use crate::net;
use crate::service::now_ms;
use crate::wire::{self, Message, QueryBody, QueryResultBody};

pub const DEFAULT_COMMIT_TIMEOUT_MS: u64 = 10_000;
pub const DEFAULT_POLL_INTERVAL_MS: u64 = 50;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Keys(#[from] KeyFileError),
    #[error("identity {id:?} is not a client member of this network")]
    IdentityNotMember { id: String },
    #[error("{addr}: {reason}")]
    Unreachable { addr: String, reason: String },
    #[error("{message}")]
    Rejected { code: String, message: String },
    #[error("no committed record under {key:?}")]
    NotFound { key: String },
    #[error("record under {key:?} has no data locator")]
    NoDataLocator { key: String },
    #[error("content at {locator} does not match the committed checksum")]
    Integrity { locator: String },
    #[error("tx {tx_id} for {key:?} not committed within {waited_ms}ms")]
    CommitTimeout {
        key: String,
        tx_id: String,
        waited_ms: u64,
    },
    #[error(transparent)]
    Blob(#[from] BlobError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unexpected reply while {context}")]
    Protocol { context: String },
    #[error("record posting failed after blob {locator} was stored: {source}")]
    OrphanBlob {
        locator: String,
        #[source]
        source: Box<ClientError>,
    },
}

impl ClientError {
    /// Stable identifier used for wire errors and CLI exit codes.
    pub fn code(&self) -> &str {
        match self {
            ClientError::Config(_) | ClientError::Keys(_) => "bad-config",
            ClientError::IdentityNotMember { .. } => "identity-not-member",
            ClientError::Unreachable { .. } => "peer-unreachable",
            ClientError::Rejected { code, .. } => code,
            ClientError::NotFound { .. } => "not-found",
            ClientError::NoDataLocator { .. } => "no-data-locator",
            ClientError::Integrity { .. } => "integrity-violation",
            ClientError::CommitTimeout { .. } => "commit-timeout",
            ClientError::Blob(e) => e.code(),
            ClientError::Model(e) => e.code(),
            ClientError::Protocol { .. } => "io-error",
            ClientError::OrphanBlob { source, .. } => source.code(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub id: String,
    pub key_file: PathBuf,
    pub membership_file: PathBuf,
    pub orderer_addr: String,
    pub peer_addr: String,
    /// Remote blob service address, if any.
    pub blob_addr: Option<String>,
    /// Local blob directory, used when no remote service is configured.
    pub blob_dir: Option<PathBuf>,
    pub blob_backend_id: String,
    pub max_blob: u64,
    pub commit_timeout: Duration,
    pub poll_interval: Duration,
    pub connect_timeout: Duration,
    pub request_timeout: Duration,
}

impl ClientConfig {
    /// Reads a client config file; relative paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<ClientConfig, ClientError> {
        let cfg = Config::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(ClientConfig {
            id: cfg.require("id")?.to_string(),
            key_file: cfg.require_path("key_file", base)?,
            membership_file: cfg.require_path("membership_file", base)?,
            orderer_addr: cfg.require("orderer_addr")?.to_string(),
            peer_addr: cfg.require("peer_addr")?.to_string(),
            blob_addr: cfg.get("blob_addr").map(String::from),
            blob_dir: cfg
                .get("blob_dir")
                .map(|dir| crate::config::resolve_path(base, dir)),
            blob_backend_id: cfg.get("blob_backend_id").unwrap_or("local").to_string(),
            max_blob: cfg.get_or("max_blob", DEFAULT_MAX_BLOB)?,
            commit_timeout: Duration::from_millis(
                cfg.get_or("commit_timeout_ms", DEFAULT_COMMIT_TIMEOUT_MS)?,
            ),
            poll_interval: Duration::from_millis(
                cfg.get_or("poll_interval_ms", DEFAULT_POLL_INTERVAL_MS)?,
            ),
            connect_timeout: Duration::from_millis(cfg.get_or("connect_timeout_ms", 3000u64)?),
            request_timeout: Duration::from_millis(cfg.get_or("request_timeout_ms", 30_000u64)?),
        })
    }
}

/// A lazily connected, reconnecting request channel to one service.
struct Conn {
    addr: String,
    connect_timeout: Duration,
    request_timeout: Duration,
    stream: Option<TcpStream>,
}

impl Conn {
    fn new(addr: &str, connect_timeout: Duration, request_timeout: Duration) -> Conn {
        Conn {
            addr: addr.to_string(),
            connect_timeout,
            request_timeout,
            stream: None,
        }
    }

    /// One round trip, reconnecting once on a dead connection. Safe for
    /// every message the client sends: queries are read-only and the
    /// orderer acknowledges a resubmitted transaction id idempotently.
    fn request(&mut self, msg: &Message) -> Result<Message, ClientError> {
        for attempt in 0..2 {
            if self.stream.is_none() {
                let stream = net::connect(&self.addr, self.connect_timeout).map_err(|e| {
                    ClientError::Unreachable {
                        addr: self.addr.clone(),
                        reason: e.to_string(),
                    }
                })?;
                stream
                    .set_read_timeout(Some(self.request_timeout))
                    .map_err(|e| ClientError::Unreachable {
                        addr: self.addr.clone(),
                        reason: e.to_string(),
                    })?;
                self.stream = Some(stream);
            }
            let stream = self.stream.as_mut().expect("connected above");
            match wire::round_trip(stream, msg) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    self.stream = None;
                    if attempt == 1 {
                        return Err(ClientError::Unreachable {
                            addr: self.addr.clone(),
                            reason: e.to_string(),
                        });
                    }
                }
            }
        }
        unreachable!("the retry loop always returns")
    }
}

/// Receipt for a committed post.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PostReceipt {
    pub key: String,
    pub tx_id: String,
    pub version: VersionJson,
    pub applied: bool,
}

/// A record fetched together with its verified content.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FetchedData {
    pub key: String,
    pub version: VersionJson,
    pub record: RecordJson,
    #[serde(skip)]
    pub content: Vec<u8>,
    pub size: u64,
}

/// One client identity with its connections to the network.
pub struct ClientSession {
    config: ClientConfig,
    keypair: KeyPair,
    orderer: Conn,
    peer: Conn,
    blob: Option<Box<dyn StoreBackend>>,
}

impl ClientSession {
    /// Loads identity and membership and prepares (lazy) connections.
    /// Fails if the id is not a client member of the network.
    pub fn new(config: ClientConfig) -> Result<ClientSession, ClientError> {
        let membership = load_membership(&config.membership_file)?;
        let keypair = Self::load_client_identity(&membership, &config)?;
        let blob: Option<Box<dyn StoreBackend>> = if let Some(addr) = &config.blob_addr {
            Some(Box::new(RemoteBackend::new(
                addr,
                config.connect_timeout,
                config.request_timeout,
            )))
        } else if let Some(dir) = &config.blob_dir {
            Some(Box::new(LocalDirBackend::new(
                dir,
                &config.blob_backend_id,
                config.max_blob,
            )?))
        } else {
            None
        };
        Ok(ClientSession {
            orderer: Conn::new(&config.orderer_addr, config.connect_timeout, config.request_timeout),
            peer: Conn::new(&config.peer_addr, config.connect_timeout, config.request_timeout),
            blob,
            keypair,
            config,
        })
    }

    fn load_client_identity(
        membership: &MembershipList,
        config: &ClientConfig,
    ) -> Result<KeyPair, ClientError> {
        let keypair = match load_identity(membership, &config.id, &config.key_file) {
            Ok(keypair) => keypair,
            Err(KeyFileError::UnknownId(id)) => {
                return Err(ClientError::IdentityNotMember { id })
            }
            Err(e) => return Err(e.into()),
        };
        if keypair.certificate().role != Role::Client {
            return Err(ClientError::IdentityNotMember {
                id: config.id.clone(),
            });
        }
        Ok(keypair)
    }

    pub fn client_id(&self) -> &str {
        &self.config.id
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Posts a provenance record and waits until a peer reports it
    /// committed. Returns the committed position.
    pub fn post(
        &mut self,
        key: &str,
        checksum: Hash,
        data_locator: &str,
        parents: Vec<RecordRef>,
        custom: Vec<u8>,
    ) -> Result<PostReceipt, ClientError> {
        let record = ProvenanceRecord {
            key: key.to_string(),
            checksum,
            data_locator: data_locator.to_string(),
            creator_id: self.config.id.clone(),
            parents,
            custom,
            timestamp_ms: now_ms(),
        };
        self.post_record(record)
    }

    /// Submits a fully formed record. The transaction is built and
    /// signed locally; commitment is confirmed against the peer.
    pub fn post_record(&mut self, record: ProvenanceRecord) -> Result<PostReceipt, ClientError> {
        let key = record.key.clone();
        let tx = Transaction::build(&self.keypair, record);
        let tx_id_hex = to_hex(&tx.tx_id);
        let submit = Message::SubmitTx {
            tx: TransactionJson::from(&tx),
        };
        match self.orderer.request(&submit)? {
            Message::SubmitAck { .. } => {}
            Message::Error { code, message } => return Err(self.submit_error(code, message)),
            _ => {
                return Err(ClientError::Protocol {
                    context: format!("submitting tx {tx_id_hex}"),
                })
            }
        }

        // The ack promises a position; commitment is confirmed by
        // watching the key's history on the peer.
        let started = Instant::now();
        loop {
            if let Some(entry) = self.find_in_history(&key, &tx_id_hex)? {
                return Ok(PostReceipt {
                    key,
                    tx_id: tx_id_hex,
                    version: entry.version,
                    applied: entry.applied,
                });
            }
            if started.elapsed() >= self.config.commit_timeout {
                return Err(ClientError::CommitTimeout {
                    key,
                    tx_id: tx_id_hex,
                    waited_ms: started.elapsed().as_millis() as u64,
                });
            }
            std::thread::sleep(self.config.poll_interval);
        }
    }

    /// The orderer reports an unknown submitter as `unknown-client`;
    /// since a session only ever submits its own transactions, that
    /// means this identity is not (or no longer) a client member.
    fn submit_error(&self, code: String, message: String) -> ClientError {
        if code == "unknown-client" {
            ClientError::IdentityNotMember {
                id: self.config.id.clone(),
            }
        } else {
            ClientError::Rejected { code, message }
        }
    }

    fn find_in_history(
        &mut self,
        key: &str,
        tx_id_hex: &str,
    ) -> Result<Option<HistoryEntryJson>, ClientError> {
        let query = Message::Query(QueryBody::History {
            key: key.to_string(),
        });
        match self.peer.request(&query)? {
            Message::QueryResult {
                result: QueryResultBody::History { entries, .. },
                ..
            } => Ok(entries.into_iter().find(|e| e.tx_id == tx_id_hex)),
            Message::Error { code, .. } if code == "not-found" => Ok(None),
            Message::Error { code, message } => Err(ClientError::Rejected { code, message }),
            _ => Err(ClientError::Protocol {
                context: format!("polling history of {key:?}"),
            }),
        }
    }

    /// The latest committed record under `key`, with its version and
    /// the serving peer's height.
    pub fn get(&mut self, key: &str) -> Result<(RecordJson, VersionJson, u64), ClientError> {
        let query = Message::Query(QueryBody::Get {
            key: key.to_string(),
        });
        match self.peer.request(&query)? {
            Message::QueryResult {
                height,
                result: QueryResultBody::Get { record, version },
            } => Ok((record, version, height)),
            Message::Error { code, .. } if code == "not-found" => Err(ClientError::NotFound {
                key: key.to_string(),
            }),
            Message::Error { code, message } => Err(ClientError::Rejected { code, message }),
            _ => Err(ClientError::Protocol {
                context: format!("getting {key:?}"),
            }),
        }
    }

    /// Every committed version of `key`, oldest first.
    pub fn get_history(&mut self, key: &str) -> Result<(Vec<HistoryEntryJson>, u64), ClientError> {
        let query = Message::Query(QueryBody::History {
            key: key.to_string(),
        });
        match self.peer.request(&query)? {
            Message::QueryResult {
                height,
                result: QueryResultBody::History { entries, .. },
            } => Ok((entries, height)),
            Message::Error { code, .. } if code == "not-found" => Err(ClientError::NotFound {
                key: key.to_string(),
            }),
            Message::Error { code, message } => Err(ClientError::Rejected { code, message }),
            _ => Err(ClientError::Protocol {
                context: format!("fetching history of {key:?}"),
            }),
        }
    }

    /// The ancestry graph reachable from `key` (at `version`, or its
    /// latest), cut off at `max_depth` hops if given.
    pub fn get_lineage(
        &mut self,
        key: &str,
        version: Option<Version>,
        max_depth: Option<u32>,
    ) -> Result<(LineageJson, u64), ClientError> {
        let query = Message::Query(QueryBody::Lineage {
            key: key.to_string(),
            version: version.map(VersionJson::from),
            max_depth,
        });
        match self.peer.request(&query)? {
            Message::QueryResult {
                height,
                result: QueryResultBody::Lineage(graph),
            } => Ok((graph, height)),
            Message::Error { code, .. } if code == "not-found" => Err(ClientError::NotFound {
                key: key.to_string(),
            }),
            Message::Error { code, message } => Err(ClientError::Rejected { code, message }),
            _ => Err(ClientError::Protocol {
                context: format!("fetching lineage of {key:?}"),
            }),
        }
    }

    /// Stores content in the blob store, then posts a record whose
    /// checksum and locator bind it to the ledger. If the post fails,
    /// the error carries the orphaned blob's locator.
    pub fn store_data(
        &mut self,
        key: &str,
        content: &[u8],
        parents: Vec<RecordRef>,
        custom: Vec<u8>,
    ) -> Result<(BlobRef, PostReceipt), ClientError> {
        let blob_ref = self.blob_backend()?.put(content)?;
        let locator = blob_ref.locator.clone();
        match self.post(key, blob_ref.digest, &locator, parents, custom) {
            Ok(receipt) => Ok((blob_ref, receipt)),
            Err(e) => Err(ClientError::OrphanBlob {
                locator: blob_ref.locator,
                source: Box::new(e),
            }),
        }
    }

    /// Resolves `key` to its latest record, fetches the referenced
    /// content, and verifies it against the committed checksum.
    pub fn get_data(&mut self, key: &str) -> Result<FetchedData, ClientError> {
        let (record, version, _) = self.get(key)?;
        if record.data_locator.is_empty() {
            return Err(ClientError::NoDataLocator {
                key: key.to_string(),
            });
        }
        let locator = record.data_locator.clone();
        let content = self.blob_backend()?.get(&locator)?;
        let committed: ProvenanceRecord = ProvenanceRecord::try_from(&record)?;
        if sha256(&content) != committed.checksum {
            return Err(ClientError::Integrity { locator });
        }
        let size = content.len() as u64;
        Ok(FetchedData {
            key: key.to_string(),
            version,
            record,
            content,
            size,
        })
    }

    fn blob_backend(&self) -> Result<&dyn StoreBackend, ClientError> {
        self.blob.as_deref().ok_or(ClientError::Rejected {
            code: "bad-config".to_string(),
            message: "no blob store configured (set blob_addr or blob_dir)".to_string(),
        })
    }

    /// The peer's current height; also serves as a liveness check.
    pub fn peer_height(&mut self) -> Result<u64, ClientError> {
        match self.peer.request(&Message::Query(QueryBody::Height))? {
            Message::QueryResult { height, .. } => Ok(height),
            Message::Error { code, message } => Err(ClientError::Rejected { code, message }),
            _ => Err(ClientError::Protocol {
                context: "querying peer height".to_string(),
            }),
        }
    }

    /// The peer's world-state digest and height, for replica comparison.
    pub fn state_digest(&mut self) -> Result<(String, u64), ClientError> {
        match self.peer.request(&Message::Query(QueryBody::StateDigest))? {
            Message::QueryResult {
                height,
                result: QueryResultBody::StateDigest { digest },
            } => Ok((digest, height)),
            Message::Error { code, message } => Err(ClientError::Rejected { code, message }),
            _ => Err(ClientError::Protocol {
                context: "querying state digest".to_string(),
            }),
        }
    }

    /// A stored block with its decoded form, as served by the peer.
    pub fn get_block(&mut self, number: u64) -> Result<(crate::model::BlockJson, u64), ClientError> {
        let query = Message::Query(QueryBody::GetBlock { number });
        match self.peer.request(&query)? {
            Message::QueryResult {
                height,
                result: QueryResultBody::Block { decoded, .. },
            } => Ok((decoded, height)),
            Message::Error { code, .. } if code == "not-found" => Err(ClientError::NotFound {
                key: format!("block {number}"),
            }),
            Message::Error { code, message } => Err(ClientError::Rejected { code, message }),
            _ => Err(ClientError::Protocol {
                context: format!("fetching block {number}"),
            }),
        }
    }
}
