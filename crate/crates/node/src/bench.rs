//! Closed-loop benchmark harness: N worker threads, each with its own
//! client session, issuing one operation at a time and timing it to
//! client-observed completion (for writes, that means confirmed
//! commitment on the peer, not just the orderer's acknowledgement).
//!
//! Workloads are deterministic given the seed: payload bytes come from
//! a seeded stream cipher RNG and key names encode seed, worker, and
//! operation index, so a run can be reproduced or audited afterwards.

use std::path::Path;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use provledger_core::sha256;

use crate::client::{ClientConfig, ClientError, ClientSession};

/// What each operation in the workload does.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Post ledger records only; the payload rides in the custom field,
    /// so sizes are subject to the orderer's custom limit.
    PostOnly,
    /// Store payload in the blob store, then post the binding record.
    StoreData,
    /// Read a preloaded record from the peer.
    Get,
    /// Read a preloaded record and fetch + verify its blob content.
    GetData,
    /// Even mix of store-data writes and get-data reads.
    Mixed,
}

impl Mode {
    pub fn parse(text: &str) -> Option<Mode> {
        match text {
            "post-only" => Some(Mode::PostOnly),
            "store-data" => Some(Mode::StoreData),
            "get" => Some(Mode::Get),
            "get-data" => Some(Mode::GetData),
            "mixed" => Some(Mode::Mixed),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::PostOnly => "post-only",
            Mode::StoreData => "store-data",
            Mode::Get => "get",
            Mode::GetData => "get-data",
            Mode::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub mode: Mode,
    pub payload_size: usize,
    pub concurrency: usize,
    /// Wall-clock budget; ignored when `total_ops` is set.
    pub duration: Duration,
    /// Operation budget shared across workers; overrides `duration`.
    pub total_ops: Option<u64>,
    pub seed: u64,
}

/// One measured workload, in the shape of a CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mode: String,
    pub payload_size: usize,
    pub ops: u64,
    pub errors: u64,
    pub elapsed_s: f64,
    pub throughput_ops_s: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
}

pub const CSV_HEADER: &str =
    "mode,payload_size,ops,errors,elapsed_s,throughput_ops_s,p50_ms,p90_ms,p99_ms";

impl BenchRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.2},{:.3},{:.3},{:.3}",
            self.mode,
            self.payload_size,
            self.ops,
            self.errors,
            self.elapsed_s,
            self.throughput_ops_s,
            self.p50_ms,
            self.p90_ms,
            self.p99_ms
        )
    }
}

/// Nearest-rank percentile of an ascending-sorted sample; 0 when empty.
pub fn percentile_ms(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let n = sorted.len();
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Deterministic key for one benchmark operation.
fn op_key(seed: u64, worker: usize, op: u64) -> String {
    format!("bench/s{seed}/w{worker}/op{op}")
}

/// Key each worker preloads and then reads in the read-only modes.
fn preload_key(seed: u64, worker: usize) -> String {
    format!("bench/s{seed}/w{worker}/ro")
}

fn payload_for(rng: &mut ChaCha8Rng, size: usize) -> Vec<u8> {
    let mut payload = vec![0u8; size];
    rng.fill(&mut payload[..]);
    payload
}

/// Distinct payloads per workload point. Content is drawn from this
/// fixed pool, so the content-addressed blob store is bounded at
/// `PAYLOAD_POOL` objects per point while every operation still hashes
/// and transfers its full payload.
const PAYLOAD_POOL: usize = 64;

fn build_payload_pool(spec: &WorkloadSpec) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0a0c_0b0d_0001);
    (0..PAYLOAD_POOL)
        .map(|_| payload_for(&mut rng, spec.payload_size))
        .collect()
}

struct WorkerOutput {
    latencies_ms: Vec<f64>,
    errors: u64,
}

fn worker_rng(seed: u64, worker: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (worker as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn run_worker(
    config: &ClientConfig,
    spec: &WorkloadSpec,
    pool: &[Vec<u8>],
    worker: usize,
    stop_at: Instant,
    remaining: &AtomicI64,
) -> Result<WorkerOutput, ClientError> {
    let mut session = ClientSession::new(config.clone())?;
    let mut rng = worker_rng(spec.seed, worker);

    // Read-heavy modes need something committed to read.
    match spec.mode {
        Mode::Get => {
            let payload = pool[0][..spec.payload_size.min(256)].to_vec();
            session.post(
                &preload_key(spec.seed, worker),
                sha256(&payload),
                "",
                vec![],
                payload,
            )?;
        }
        Mode::GetData | Mode::Mixed => {
            session.store_data(&preload_key(spec.seed, worker), &pool[0], vec![], vec![])?;
        }
        Mode::PostOnly | Mode::StoreData => {}
    }

    let mut output = WorkerOutput {
        latencies_ms: Vec::new(),
        errors: 0,
    };
    let mut op: u64 = 0;
    loop {
        if spec.total_ops.is_some() {
            if remaining.fetch_sub(1, Ordering::SeqCst) <= 0 {
                break;
            }
        } else if Instant::now() >= stop_at {
            break;
        }

        let key = op_key(spec.seed, worker, op);
        let read_key = preload_key(spec.seed, worker);
        let started = Instant::now();
        let result: Result<(), ClientError> = match spec.mode {
            Mode::PostOnly => {
                let payload = pool[rng.gen_range(0..pool.len())].clone();
                session
                    .post(&key, sha256(&payload), "", vec![], payload)
                    .map(|_| ())
            }
            Mode::StoreData => {
                let payload = &pool[rng.gen_range(0..pool.len())];
                session.store_data(&key, payload, vec![], vec![]).map(|_| ())
            }
            Mode::Get => session.get(&read_key).map(|_| ()),
            Mode::GetData => session.get_data(&read_key).map(|_| ()),
            Mode::Mixed => {
                if rng.gen_bool(0.5) {
                    let payload = &pool[rng.gen_range(0..pool.len())];
                    session.store_data(&key, payload, vec![], vec![]).map(|_| ())
                } else {
                    session.get_data(&read_key).map(|_| ())
                }
            }
        };
        match result {
            Ok(()) => output
                .latencies_ms
                .push(started.elapsed().as_secs_f64() * 1000.0),
            Err(e) => {
                log::debug!("[bench w{worker}] op {op} failed: {e}");
                output.errors += 1;
                // Don't spin against a hard-down service.
                std::thread::sleep(Duration::from_millis(5));
            }
        }
        op += 1;
    }
    Ok(output)
}

/// Runs one workload to completion and reduces it to a row.
pub fn run_workload(config: &ClientConfig, spec: &WorkloadSpec) -> Result<BenchRow, ClientError> {
    let workers = spec.concurrency.max(1);
    let quota = spec
        .total_ops
        .map(|n| n as i64)
        .unwrap_or(i64::MAX);
    let remaining = Arc::new(AtomicI64::new(quota));
    let pool = build_payload_pool(spec);
    let started = Instant::now();
    let stop_at = started + spec.duration;

    let outputs: Vec<Result<WorkerOutput, ClientError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|worker| {
                let remaining = Arc::clone(&remaining);
                let pool = &pool;
                scope.spawn(move || run_worker(config, spec, pool, worker, stop_at, &remaining))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect()
    });
    let elapsed_s = started.elapsed().as_secs_f64();

    let mut latencies = Vec::new();
    let mut errors = 0u64;
    for output in outputs {
        let output = output?;
        latencies.extend(output.latencies_ms);
        errors += output.errors;
    }
    latencies.sort_by(|a, b| a.partial_cmp(b).expect("latencies are finite"));
    let ops = latencies.len() as u64;
    Ok(BenchRow {
        mode: spec.mode.as_str().to_string(),
        payload_size: spec.payload_size,
        ops,
        errors,
        elapsed_s,
        throughput_ops_s: if elapsed_s > 0.0 {
            ops as f64 / elapsed_s
        } else {
            0.0
        },
        p50_ms: percentile_ms(&latencies, 50.0),
        p90_ms: percentile_ms(&latencies, 90.0),
        p99_ms: percentile_ms(&latencies, 99.0),
    })
}

/// Runs the workload once per payload size, reusing every other knob.
pub fn run_sweep(
    config: &ClientConfig,
    base: &WorkloadSpec,
    sizes: &[usize],
) -> Result<Vec<BenchRow>, ClientError> {
    let mut rows = Vec::new();
    for (i, &size) in sizes.iter().enumerate() {
        let spec = WorkloadSpec {
            payload_size: size,
            // Distinct key spaces per point keep reruns independent.
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        };
        log::info!(
            "[bench] {} payload={size}B concurrency={} ...",
            spec.mode.as_str(),
            spec.concurrency
        );
        let row = run_workload(config, &spec)?;
        log::info!(
            "[bench] {} payload={size}B: {} ops, {:.2} ops/s, p50 {:.1}ms",
            spec.mode.as_str(),
            row.ops,
            row.throughput_ops_s,
            row.p50_ms
        );
        rows.push(row);
    }
    Ok(rows)
}

/// Writes rows as CSV (header first) via a temp file and atomic rename.
pub fn emit_csv(path: &Path, rows: &[BenchRow]) -> std::io::Result<()> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.csv_line());
        text.push('\n');
    }
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    let tmp = dir
        .unwrap_or(Path::new("."))
        .join(format!(".bench-{}.tmp", std::process::id()));
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)
}

/// Parses a CSV produced by [`emit_csv`] (used by tests and tooling).
pub fn parse_csv(text: &str) -> Result<Vec<BenchRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CSV_HEADER => {}
        other => return Err(format!("bad header {other:?}")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(format!("line {}: expected 9 fields", i + 2));
        }
        let parse_f = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
        let parse_u = |s: &str| s.parse::<u64>().map_err(|e| format!("line {}: {e}", i + 2));
        rows.push(BenchRow {
            mode: fields[0].to_string(),
            payload_size: fields[1]
                .parse()
                .map_err(|e| format!("line {}: {e}", i + 2))?,
            ops: parse_u(fields[2])?,
            errors: parse_u(fields[3])?,
            elapsed_s: parse_f(fields[4])?,
            throughput_ops_s: parse_f(fields[5])?,
            p50_ms: parse_f(fields[6])?,
            p90_ms: parse_f(fields[7])?,
            p99_ms: parse_f(fields[8])?,
        });
    }
    Ok(rows)
}
