//! Node-side runtime for the provenance ledger: configuration, disk
//! formats, the TCP wire protocol, the orderer / peer / blob-store
//! services, the client SDK, and the benchmark harness.

pub mod bench;
pub mod blob;
pub mod client;
pub mod config;
pub mod keys;
pub mod model;
pub mod net;
pub mod orderer;
pub mod peer;
pub mod service;
pub mod store;
pub mod testnet;
pub mod wire;
