//! Content-addressed off-chain blob storage.
//!
//! Content is stored under its SHA-256 digest and referenced by a
//! locator of the form `store://<backend-id>/<hex digest>`. A put
//! returns the locator; a get re-hashes what it read and refuses to
//! return bytes whose digest no longer matches the locator.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use provledger_core::{sha256, Hash};

use crate::config::{Config, ConfigError};
use crate::net::ServiceHandle;
use crate::service::ServiceError;
use crate::wire::Message;

/// Default cap on a single blob's size.
pub const DEFAULT_MAX_BLOB: u64 = 64 * 1024 * 1024;

/// Where a piece of content lives and what it must hash to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobRef {
    pub digest: Hash,
    pub locator: String,
    pub size: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum BlobError {
    #[error("content is {size} bytes, over the {limit}-byte limit")]
    Oversize { size: u64, limit: u64 },
    #[error("no stored content for {locator}")]
    NotFound { locator: String },
    #[error("stored bytes for {locator} no longer match its digest")]
    Integrity { locator: String },
    #[error("locator {locator} is malformed: {reason}")]
    BadLocator { locator: String, reason: String },
    #[error("store backend unavailable: {0}")]
    Unavailable(String),
    #[error("store backend out of space: {0}")]
    DiskFull(String),
    #[error("{message} ({code})")]
    Remote { code: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl BlobError {
    pub fn code(&self) -> &str {
        match self {
            BlobError::Oversize { .. } => "oversize",
            BlobError::NotFound { .. } => "not-found",
            BlobError::Integrity { .. } => "integrity-violation",
            BlobError::BadLocator { .. } => "malformed-query",
            BlobError::Unavailable(_) => "backend-unavailable",
            BlobError::DiskFull(_) => "disk-full",
            BlobError::Remote { code, .. } => code,
            BlobError::Io { .. } => "io-error",
        }
    }

    fn from_io(context: &str, source: std::io::Error) -> BlobError {
        if source.kind() == std::io::ErrorKind::StorageFull {
            BlobError::DiskFull(format!("{context}: {source}"))
        } else {
            BlobError::Io {
                context: context.to_string(),
                source,
            }
        }
    }
}

/// Builds the canonical locator for a digest held by `backend_id`.
pub fn make_locator(backend_id: &str, digest: &Hash) -> String {
    format!("store://{backend_id}/{}", hex::encode(digest))
}

/// Splits a locator into backend id and digest.
pub fn parse_locator(locator: &str) -> Result<(String, Hash), BlobError> {
    let bad = |reason: &str| BlobError::BadLocator {
        locator: locator.to_string(),
        reason: reason.to_string(),
    };
    let rest = locator
        .strip_prefix("store://")
        .ok_or_else(|| bad("expected store:// scheme"))?;
    let (backend, digest_hex) = rest
        .split_once('/')
        .ok_or_else(|| bad("expected store://<backend>/<digest>"))?;
    if backend.is_empty() {
        return Err(bad("empty backend id"));
    }
    let raw = hex::decode(digest_hex).map_err(|_| bad("digest is not hex"))?;
    let digest: Hash = raw
        .try_into()
        .map_err(|_| bad("digest is not 32 bytes"))?;
    Ok((backend.to_string(), digest))
}

/// A blob store the client can put to and get from.
pub trait StoreBackend: Send + Sync {
    fn put(&self, content: &[u8]) -> Result<BlobRef, BlobError>;
    fn get(&self, locator: &str) -> Result<Vec<u8>, BlobError>;
    fn has(&self, locator: &str) -> Result<bool, BlobError>;
}

/// Blob store over a local directory: `objects/<first 2 hex>/<hex>`.
pub struct LocalDirBackend {
    root: PathBuf,
    backend_id: String,
    max_size: u64,
    tmp_counter: AtomicU64,
}

impl LocalDirBackend {
    pub fn new(root: &Path, backend_id: &str, max_size: u64) -> Result<LocalDirBackend, BlobError> {
        fs::create_dir_all(root.join("objects"))
            .map_err(|e| BlobError::from_io(&root.display().to_string(), e))?;
        Ok(LocalDirBackend {
            root: root.to_path_buf(),
            backend_id: backend_id.to_string(),
            max_size,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn max_size(&self) -> u64 {
        self.max_size
    }

    fn object_path(&self, digest: &Hash) -> PathBuf {
        let hex = hex::encode(digest);
        self.root.join("objects").join(&hex[..2]).join(&hex)
    }

    /// Resolves a locator to its digest, insisting the locator names
    /// this backend.
    fn resolve(&self, locator: &str) -> Result<Hash, BlobError> {
        let (backend, digest) = parse_locator(locator)?;
        if backend != self.backend_id {
            return Err(BlobError::Unavailable(format!(
                "locator names backend {backend:?}, this store is {:?}",
                self.backend_id
            )));
        }
        Ok(digest)
    }
}

impl StoreBackend for LocalDirBackend {
    fn put(&self, content: &[u8]) -> Result<BlobRef, BlobError> {
        let size = content.len() as u64;
        if size > self.max_size {
            return Err(BlobError::Oversize {
                size,
                limit: self.max_size,
            });
        }
        let digest = sha256(content);
        let blob_ref = BlobRef {
            digest,
            locator: make_locator(&self.backend_id, &digest),
            size,
        };
        let path = self.object_path(&digest);
        if path.exists() {
            // Same digest means same content: the put is a no-op.
            return Ok(blob_ref);
        }
        let dir = path.parent().expect("object paths have a parent");
        fs::create_dir_all(dir).map_err(|e| BlobError::from_io(&dir.display().to_string(), e))?;
        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        let ctx = tmp.display().to_string();
        let mut file = fs::File::create(&tmp).map_err(|e| BlobError::from_io(&ctx, e))?;
        file.write_all(content)
            .and_then(|_| file.flush())
            .map_err(|e| {
                let _ = fs::remove_file(&tmp);
                BlobError::from_io(&ctx, e)
            })?;
        fs::rename(&tmp, &path)
            .map_err(|e| BlobError::from_io(&path.display().to_string(), e))?;
        Ok(blob_ref)
    }

    fn get(&self, locator: &str) -> Result<Vec<u8>, BlobError> {
        let digest = self.resolve(locator)?;
        let path = self.object_path(&digest);
        let content = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(BlobError::NotFound {
                    locator: locator.to_string(),
                })
            }
            Err(e) => return Err(BlobError::from_io(&path.display().to_string(), e)),
        };
        if sha256(&content) != digest {
            return Err(BlobError::Integrity {
                locator: locator.to_string(),
            });
        }
        Ok(content)
    }

    fn has(&self, locator: &str) -> Result<bool, BlobError> {
        let digest = self.resolve(locator)?;
        Ok(self.object_path(&digest).exists())
    }
}

/// Blob store reached over the framed TCP protocol. Safe to share
/// across threads; each request holds the connection for its duration.
pub struct RemoteBackend {
    addr: String,
    connect_timeout: Duration,
    request_timeout: Duration,
    stream: Mutex<Option<std::net::TcpStream>>,
}

impl RemoteBackend {
    pub fn new(addr: &str, connect_timeout: Duration, request_timeout: Duration) -> RemoteBackend {
        RemoteBackend {
            addr: addr.to_string(),
            connect_timeout,
            request_timeout,
            stream: Mutex::new(None),
        }
    }

    /// One request/reply round trip, reconnecting once on a dead
    /// connection (every blob operation is idempotent).
    fn request(&self, msg: &Message) -> Result<Message, BlobError> {
        let mut slot = self.stream.lock().unwrap();
        for attempt in 0..2 {
            if slot.is_none() {
                let stream = crate::net::connect(&self.addr, self.connect_timeout)
                    .map_err(|e| BlobError::Unavailable(format!("{}: {e}", self.addr)))?;
                stream
                    .set_read_timeout(Some(self.request_timeout))
                    .map_err(|e| BlobError::Unavailable(e.to_string()))?;
                *slot = Some(stream);
            }
            let stream = slot.as_mut().expect("connection was just established");
            match crate::wire::round_trip(stream, msg) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    *slot = None;
                    if attempt == 1 {
                        return Err(BlobError::Unavailable(format!("{}: {e}", self.addr)));
                    }
                }
            }
        }
        unreachable!("the retry loop always returns")
    }

    fn remote_error(code: String, message: String, locator: &str) -> BlobError {
        match code.as_str() {
            "not-found" => BlobError::NotFound {
                locator: locator.to_string(),
            },
            "integrity-violation" => BlobError::Integrity {
                locator: locator.to_string(),
            },
            _ => BlobError::Remote { code, message },
        }
    }
}

impl StoreBackend for RemoteBackend {
    fn put(&self, content: &[u8]) -> Result<BlobRef, BlobError> {
        let msg = Message::BlobPut {
            content_b64: crate::model::bytes_to_b64(content),
        };
        match self.request(&msg)? {
            Message::BlobPutAck { locator, size } => {
                let (_, digest) = parse_locator(&locator)?;
                Ok(BlobRef {
                    digest,
                    locator,
                    size,
                })
            }
            Message::Error { code, message } => Err(RemoteBackend::remote_error(code, message, "")),
            other => Err(BlobError::Unavailable(format!(
                "unexpected put reply {other:?}"
            ))),
        }
    }

    fn get(&self, locator: &str) -> Result<Vec<u8>, BlobError> {
        let msg = Message::BlobGet {
            locator: locator.to_string(),
        };
        match self.request(&msg)? {
            Message::BlobGetResult { content_b64 } => {
                let content = crate::model::bytes_from_b64(&content_b64, "content_b64")
                    .map_err(|e| BlobError::Unavailable(e.to_string()))?;
                // Verify end to end, not just server-side.
                let (_, digest) = parse_locator(locator)?;
                if sha256(&content) != digest {
                    return Err(BlobError::Integrity {
                        locator: locator.to_string(),
                    });
                }
                Ok(content)
            }
            Message::Error { code, message } => {
                Err(RemoteBackend::remote_error(code, message, locator))
            }
            other => Err(BlobError::Unavailable(format!(
                "unexpected get reply {other:?}"
            ))),
        }
    }

    fn has(&self, locator: &str) -> Result<bool, BlobError> {
        let msg = Message::BlobHas {
            locator: locator.to_string(),
        };
        match self.request(&msg)? {
            Message::BlobHasResult { present } => Ok(present),
            Message::Error { code, message } => {
                Err(RemoteBackend::remote_error(code, message, locator))
            }
            other => Err(BlobError::Unavailable(format!(
                "unexpected has reply {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlobServerConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub backend_id: String,
    pub max_blob: u64,
}

impl BlobServerConfig {
    /// Reads a blob server config file; relative paths resolve against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<BlobServerConfig, ConfigError> {
        let cfg = Config::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(BlobServerConfig {
            listen: cfg.require("listen")?.to_string(),
            data_dir: cfg.require_path("data_dir", base)?,
            backend_id: cfg.get("backend_id").unwrap_or("local").to_string(),
            max_blob: cfg.get_or("max_blob", DEFAULT_MAX_BLOB)?,
        })
    }
}

/// A running blob store service over a local directory backend.
pub struct BlobServer {
    handle: ServiceHandle,
}

impl BlobServer {
    pub fn start(config: BlobServerConfig) -> Result<BlobServer, ServiceError> {
        let backend = Arc::new(LocalDirBackend::new(
            &config.data_dir,
            &config.backend_id,
            config.max_blob,
        )?);
        let handler = move |msg: Message| serve_blob_request(backend.as_ref(), msg);
        let handle =
            crate::net::serve("blobstore", &config.listen, Arc::new(handler)).map_err(|e| {
                ServiceError::Io {
                    context: format!("binding {}", config.listen),
                    source: e,
                }
            })?;
        log::info!("[blobstore] listening on {}", handle.addr());
        Ok(BlobServer { handle })
    }

    pub fn addr(&self) -> std::net::SocketAddr {
        self.handle.addr()
    }

    pub fn stop(&self) {
        self.handle.stop();
    }

    /// Blocks until the service stops (foreground CLI runs).
    pub fn wait(&self) {
        self.handle.wait();
    }
}

fn serve_blob_request(backend: &LocalDirBackend, msg: Message) -> Message {
    match msg {
        Message::BlobPut { content_b64 } => {
            let content = match crate::model::bytes_from_b64(&content_b64, "content_b64") {
                Ok(content) => content,
                Err(e) => return Message::error(e.code(), e.to_string()),
            };
            match backend.put(&content) {
                Ok(blob_ref) => Message::BlobPutAck {
                    locator: blob_ref.locator,
                    size: blob_ref.size,
                },
                Err(e) => Message::error(e.code(), e.to_string()),
            }
        }
        Message::BlobGet { locator } => match backend.get(&locator) {
            Ok(content) => Message::BlobGetResult {
                content_b64: crate::model::bytes_to_b64(&content),
            },
            Err(e) => Message::error(e.code(), e.to_string()),
        },
        Message::BlobHas { locator } => match backend.has(&locator) {
            Ok(present) => Message::BlobHasResult { present },
            Err(e) => Message::error(e.code(), e.to_string()),
        },
        _ => Message::error(
            "malformed-query",
            "the blob store accepts blob_put, blob_get, and blob_has",
        ),
    }
}
