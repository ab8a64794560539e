//! Peer service: maintains a full replica of the chain, answers
//! queries from committed state, accepts block deliveries from the
//! orderer, and closes any gap by pulling missing blocks.
//!
//! Catch-up runs through three triggers — a delivery ahead of the
//! local height, service startup, and a periodic poll — all funnelling
//! into the same idempotent pull loop, so replicas converge no matter
//! which path noticed they were behind.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use provledger_core::Role;

use crate::config::Config;
use crate::keys::{load_identity, load_membership};
use crate::model::block_from_b64;
use crate::net::{self, ConnectionHandler, ServiceHandle};
use crate::service::{answer_query, require_role, serve_sync, ServiceError};
use crate::store::LedgerStore;
use crate::wire::{self, Message};

pub const DEFAULT_POLL_INTERVAL_MS: u64 = 1000;

#[derive(Debug, Clone)]
pub struct PeerConfig {
    pub listen: String,
    pub id: String,
    pub data_dir: PathBuf,
    pub membership_file: PathBuf,
    pub key_file: PathBuf,
    pub orderer_addr: String,
    pub poll_interval: Duration,
}

impl PeerConfig {
    /// Reads a peer config file; relative paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<PeerConfig, ServiceError> {
        let cfg = Config::load(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(PeerConfig {
            listen: cfg.require("listen")?.to_string(),
            id: cfg.require("id")?.to_string(),
            data_dir: cfg.require_path("data_dir", base)?,
            membership_file: cfg.require_path("membership_file", base)?,
            key_file: cfg.require_path("key_file", base)?,
            orderer_addr: cfg.require("orderer_addr")?.to_string(),
            poll_interval: Duration::from_millis(
                cfg.get_or("poll_interval_ms", DEFAULT_POLL_INTERVAL_MS)?,
            ),
        })
    }
}

struct PeerInner {
    id: String,
    store: RwLock<LedgerStore>,
    orderer_addr: String,
    stop: Arc<AtomicBool>,
}

impl PeerInner {
    /// Applies a delivered block, pulling any gap first; replies with
    /// an acknowledgement carrying the post-handling height. A block at
    /// or below the current height is acknowledged without re-applying.
    fn handle_delivery(&self, number: u64, block_b64: &str) -> Message {
        let block = match block_from_b64(block_b64) {
            Ok(block) => block,
            Err(reason) => return Message::error("malformed-query", reason),
        };
        if block.header.number != number {
            return Message::error(
                "malformed-query",
                format!(
                    "delivery says block {number} but the bytes decode to block {}",
                    block.header.number
                ),
            );
        }
        let behind = {
            let store = self.store.read().unwrap();
            number > store.height()
        };
        if behind {
            // Missed earlier deliveries; pull the gap before applying.
            if let Err(reason) = self.pull_blocks(number - 1) {
                log::warn!("[peer {}] gap sync failed: {reason}", self.id);
            }
        }
        let mut store = self.store.write().unwrap();
        if number < store.height() {
            return Message::BlockAck {
                number,
                height: store.height(),
            };
        }
        if number > store.height() {
            return Message::error(
                "wrong-number",
                format!(
                    "replica is at height {} and could not sync up to block {number}",
                    store.height()
                ),
            );
        }
        match store.append_block(&block) {
            Ok(_) => Message::BlockAck {
                number,
                height: store.height(),
            },
            Err(e) => Message::error(e.code(), e.to_string()),
        }
    }

    /// Pulls blocks from the orderer until this replica holds
    /// everything through `to` (or the orderer's tip, if lower).
    /// Concurrent pulls are safe: each block appends under the write
    /// lock and anything already applied is skipped.
    fn pull_blocks(&self, to: u64) -> Result<u64, String> {
        let mut stream = net::connect(&self.orderer_addr, Duration::from_secs(2))
            .map_err(|e| format!("connect {}: {e}", self.orderer_addr))?;
        stream
            .set_read_timeout(Some(Duration::from_secs(30)))
            .map_err(|e| e.to_string())?;
        loop {
            let from = self.store.read().unwrap().height();
            if from > to {
                return Ok(from);
            }
            let request = Message::SyncRequest { from, to };
            let reply = wire::round_trip(&mut stream, &request).map_err(|e| e.to_string())?;
            let (tip, blocks) = match reply {
                Message::SyncBlocks { tip, blocks } => (tip, blocks),
                Message::Error { code, message } => return Err(format!("{message} ({code})")),
                other => return Err(format!("unexpected sync reply {other:?}")),
            };
            if blocks.is_empty() {
                // Caught up with the responder's tip.
                return Ok(self.store.read().unwrap().height());
            }
            for numbered in blocks {
                let block = block_from_b64(&numbered.block_b64)
                    .map_err(|reason| format!("block {}: {reason}", numbered.number))?;
                let mut store = self.store.write().unwrap();
                if numbered.number < store.height() {
                    continue; // another thread already applied it
                }
                if numbered.number > store.height() {
                    return Err(format!(
                        "sync response skipped ahead to block {}",
                        numbered.number
                    ));
                }
                store
                    .append_block(&block)
                    .map_err(|e| format!("block {}: {e}", numbered.number))?;
            }
            let _ = tip;
        }
    }
}

impl ConnectionHandler for PeerInner {
    fn handle(&self, msg: Message) -> Message {
        match msg {
            Message::Query(query) => answer_query(&self.store.read().unwrap(), query),
            Message::BlockDeliver { number, block_b64 } => {
                self.handle_delivery(number, &block_b64)
            }
            Message::SyncRequest { from, to } => serve_sync(&self.store.read().unwrap(), from, to),
            _ => Message::error(
                "malformed-query",
                "peers accept query, block_deliver, and sync_request",
            ),
        }
    }
}

/// A running peer.
pub struct PeerService {
    handle: ServiceHandle,
    inner: Arc<PeerInner>,
    poll_thread: Mutex<Option<JoinHandle<()>>>,
    stopped: AtomicBool,
}

impl PeerService {
    pub fn start(config: PeerConfig) -> Result<PeerService, ServiceError> {
        let membership = load_membership(&config.membership_file)?;
        let keypair = load_identity(&membership, &config.id, &config.key_file)?;
        require_role(&keypair, Role::Peer)?;

        let store = LedgerStore::open(&config.data_dir, membership)?;
        log::info!(
            "[peer {}] opened replica at height {}",
            config.id,
            store.height()
        );
        let stop = Arc::new(AtomicBool::new(false));
        let inner = Arc::new(PeerInner {
            id: config.id.clone(),
            store: RwLock::new(store),
            orderer_addr: config.orderer_addr.clone(),
            stop: Arc::clone(&stop),
        });

        // Catch up once at startup; the poll loop keeps trying if the
        // orderer is not up yet.
        match inner.pull_blocks(u64::MAX) {
            Ok(height) => log::info!("[peer {}] synced to height {height}", config.id),
            Err(reason) => log::warn!("[peer {}] startup sync failed: {reason}", config.id),
        }

        let handler: Arc<dyn ConnectionHandler> = Arc::clone(&inner) as Arc<dyn ConnectionHandler>;
        let handle = net::serve("peer", &config.listen, handler).map_err(|e| ServiceError::Io {
            context: format!("binding {}", config.listen),
            source: e,
        })?;
        log::info!("[peer {}] listening on {}", config.id, handle.addr());

        let poll_inner = Arc::clone(&inner);
        let interval = config.poll_interval;
        let poll_thread = std::thread::Builder::new()
            .name(format!("peer-{}-poll", config.id))
            .spawn(move || poll_loop(poll_inner, interval))
            .expect("spawning the poll thread");

        Ok(PeerService {
            handle,
            inner,
            poll_thread: Mutex::new(Some(poll_thread)),
            stopped: AtomicBool::new(false),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.handle.addr()
    }

    pub fn height(&self) -> u64 {
        self.inner.store.read().unwrap().height()
    }

    pub fn stop(&self) {
        if self.stopped.swap(true, Ordering::SeqCst) {
            return;
        }
        self.inner.stop.store(true, Ordering::SeqCst);
        self.handle.stop();
        if let Some(thread) = self.poll_thread.lock().unwrap().take() {
            let _ = thread.join();
        }
    }

    /// Blocks until the service stops (foreground CLI runs).
    pub fn wait(&self) {
        self.handle.wait();
    }
}

impl Drop for PeerService {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Periodically pulls whatever the orderer has committed past this
/// replica's height, sleeping in short slices so stop stays responsive.
fn poll_loop(inner: Arc<PeerInner>, interval: Duration) {
    while !inner.stop.load(Ordering::SeqCst) {
        if let Err(reason) = inner.pull_blocks(u64::MAX) {
            log::debug!("[peer {}] poll sync: {reason}", inner.id);
        }
        let mut slept = Duration::ZERO;
        while slept < interval && !inner.stop.load(Ordering::SeqCst) {
            let slice = Duration::from_millis(50).min(interval - slept);
            std::thread::sleep(slice);
            slept += slice;
        }
    }
}
