//! Randomized properties: signature round trips and perturbation
//! resistance, canonical-encoding round trips, tamper evidence, replay
//! convergence, history completeness, and lineage versus a brute-force
//! closure oracle.

mod common;

use std::collections::BTreeMap;

use common::{closure_oracle, NodeId};
use proptest::prelude::*;
use proptest::sample::Index;
use provledger_core::{
    check_block, exec_get, exec_get_history, exec_get_lineage, sha256, state_digest, verify,
    Block, KeyPair, LedgerState, MembershipList, Operation, ProvenanceRecord, RecordRef, Role,
    Transaction, Version,
};

fn network() -> (MembershipList, KeyPair, KeyPair) {
    let orderer = KeyPair::from_seed("ord", Role::Orderer, "org1", &[1; 32]).unwrap();
    let peer = KeyPair::from_seed("peer1", Role::Peer, "org1", &[2; 32]).unwrap();
    let client = KeyPair::from_seed("c1", Role::Client, "org1", &[3; 32]).unwrap();
    let members = vec![
        orderer.certificate().clone(),
        peer.certificate().clone(),
        client.certificate().clone(),
    ];
    (MembershipList::new(members).unwrap(), orderer, client)
}

/// One planned transaction: which key to post and which of the
/// previously planned transactions to cite as parents.
type TxPlan = (usize, Vec<Index>, u8);

struct BuiltChain {
    blocks: Vec<Block>,
    live: LedgerState,
    /// Parent map as planned, keyed by (key, version) — the oracle's view.
    parent_map: BTreeMap<NodeId, Vec<NodeId>>,
    /// Post count per key.
    posts: BTreeMap<String, usize>,
}

/// Turns plans into a signed chain, splitting transactions into blocks
/// by cycling `batch_sizes`, and maintains state incrementally.
fn build_chain(orderer: &KeyPair, client: &KeyPair, plans: &[TxPlan], batch_sizes: &[usize]) -> BuiltChain {
    // Assign each planned transaction its (block, index) up front so
    // parents can cite any earlier transaction, same block included.
    let mut layout = Vec::with_capacity(plans.len());
    let mut remaining = plans.len();
    let mut number = 1u64;
    let mut cycle = batch_sizes.iter().cycle();
    while remaining > 0 {
        let take = (*cycle.next().unwrap()).min(remaining);
        for tx_index in 0..take {
            layout.push(Version {
                block: number,
                tx_index: tx_index as u32,
            });
        }
        remaining -= take;
        number += 1;
    }

    let keys: Vec<String> = plans.iter().map(|(k, _, _)| format!("k{k}")).collect();
    let mut parent_map = BTreeMap::new();
    let mut posts: BTreeMap<String, usize> = BTreeMap::new();
    let mut txs = Vec::with_capacity(plans.len());
    for (t, (_, picks, custom_byte)) in plans.iter().enumerate() {
        let parents: Vec<RecordRef> = if t == 0 {
            Vec::new()
        } else {
            picks
                .iter()
                .map(|pick| {
                    let p = pick.index(t);
                    RecordRef {
                        key: keys[p].clone(),
                        version: layout[p],
                    }
                })
                .collect()
        };
        let node: NodeId = (keys[t].clone(), layout[t]);
        parent_map.insert(
            node,
            parents.iter().map(|p| (p.key.clone(), p.version)).collect(),
        );
        *posts.entry(keys[t].clone()).or_default() += 1;
        let record = ProvenanceRecord {
            key: keys[t].clone(),
            checksum: sha256(&[*custom_byte]),
            data_locator: String::new(),
            creator_id: "c1".into(),
            parents,
            custom: vec![*custom_byte],
            timestamp_ms: t as u64,
        };
        txs.push(Transaction::build(client, record));
    }

    let mut live = LedgerState::default();
    let genesis = Block::genesis(orderer, 1_000);
    live.apply_block(&genesis);
    let mut blocks = vec![genesis];
    let mut cursor = 0;
    while cursor < txs.len() {
        let number = blocks.len() as u64;
        let count = layout[cursor..]
            .iter()
            .take_while(|v| v.block == layout[cursor].block)
            .count();
        let batch = txs[cursor..cursor + count].to_vec();
        let prev = blocks.last().unwrap().hash();
        let block = Block::build(orderer, number, prev, 1_000 + number, batch);
        live.apply_block(&block);
        blocks.push(block);
        cursor += count;
    }
    BuiltChain {
        blocks,
        live,
        parent_map,
        posts,
    }
}

proptest! {
    #[test]
    fn signatures_round_trip_and_bind_inputs(
        seed in any::<[u8; 32]>(),
        msg in prop::collection::vec(any::<u8>(), 1..200),
        byte_pick in any::<Index>(),
        bit in 0u8..8,
    ) {
        let kp = KeyPair::from_seed("a", Role::Client, "org", &seed).unwrap();
        let sig = kp.sign(&msg);
        prop_assert!(verify(kp.certificate(), &msg, &sig));

        let mut wrong_msg = msg.clone();
        wrong_msg[byte_pick.index(msg.len())] ^= 1 << bit;
        prop_assert!(!verify(kp.certificate(), &wrong_msg, &sig));

        let mut wrong_sig = sig.to_vec();
        wrong_sig[byte_pick.index(sig.len())] ^= 1 << bit;
        prop_assert!(!verify(kp.certificate(), &msg, &wrong_sig));

        let mut wrong_cert = kp.certificate().clone();
        wrong_cert.public_key[byte_pick.index(32)] ^= 1 << bit;
        prop_assert!(!verify(&wrong_cert, &msg, &sig));
    }

    #[test]
    fn key_generation_is_deterministic(seed in any::<[u8; 32]>()) {
        let a = KeyPair::from_seed("id", Role::Peer, "org", &seed).unwrap();
        let b = KeyPair::from_seed("id", Role::Peer, "org", &seed).unwrap();
        prop_assert_eq!(a.certificate(), b.certificate());
        prop_assert_eq!(a.sign(b"x"), b.sign(b"x"));
    }
}

fn arb_record() -> impl Strategy<Value = ProvenanceRecord> {
    (
        ".{0,12}",
        any::<[u8; 32]>(),
        ".{0,20}",
        ".{0,8}",
        prop::collection::vec((".{0,8}", any::<u64>(), any::<u32>()), 0..4),
        prop::collection::vec(any::<u8>(), 0..64),
        any::<u64>(),
    )
        .prop_map(|(key, checksum, data_locator, creator_id, parents, custom, timestamp_ms)| {
            ProvenanceRecord {
                key,
                checksum,
                data_locator,
                creator_id,
                parents: parents
                    .into_iter()
                    .map(|(key, block, tx_index)| RecordRef {
                        key,
                        version: Version { block, tx_index },
                    })
                    .collect(),
                custom,
                timestamp_ms,
            }
        })
}

fn arb_transaction() -> impl Strategy<Value = Transaction> {
    (
        any::<[u8; 32]>(),
        ".{0,8}",
        arb_record(),
        prop::collection::vec(any::<u8>(), 0..80),
    )
        .prop_map(|(tx_id, client_id, record, signature)| Transaction {
            tx_id,
            client_id,
            operation: Operation::Post,
            key: record.key.clone(),
            record,
            signature,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn record_encoding_round_trips(record in arb_record()) {
        let bytes = record.encode();
        let mut r = provledger_core::codec::Reader::new(&bytes);
        let back = ProvenanceRecord::decode_from(&mut r).unwrap();
        r.finish().unwrap();
        prop_assert_eq!(back, record);
    }

    #[test]
    fn block_encoding_round_trips(
        number in any::<u64>(),
        prev in any::<[u8; 32]>(),
        ts in any::<u64>(),
        sig in prop::collection::vec(any::<u8>(), 0..80),
        txs in prop::collection::vec(arb_transaction(), 0..4),
    ) {
        let block = Block {
            header: provledger_core::BlockHeader {
                number,
                prev_hash: prev,
                data_hash: provledger_core::data_hash_over(&txs),
                timestamp_ms: ts,
            },
            orderer_signature: sig,
            transactions: txs,
        };
        prop_assert_eq!(Block::decode(&block.encode()).unwrap(), block);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn replaying_blocks_reconstructs_state_exactly(
        plans in prop::collection::vec((0..10usize, prop::collection::vec(any::<Index>(), 0..3), any::<u8>()), 1..40),
        batch_sizes in prop::collection::vec(1..=5usize, 1..6),
    ) {
        let (membership, orderer, client) = network();
        let built = build_chain(&orderer, &client, &plans, &batch_sizes);

        // Every block passes full validation at its position.
        let mut replayed = LedgerState::default();
        let mut prev = provledger_core::ZERO_HASH;
        for (i, block) in built.blocks.iter().enumerate() {
            prop_assert_eq!(check_block(block, i as u64, prev, &membership), Ok(()));
            replayed.apply_block(block);
            prev = block.hash();
        }
        prop_assert_eq!(&replayed, &built.live);
        prop_assert_eq!(state_digest(replayed.world()), state_digest(built.live.world()));

        // Independent replicas converge to the identical digest.
        let mut again = LedgerState::default();
        for block in &built.blocks {
            again.apply_block(block);
        }
        prop_assert_eq!(state_digest(again.world()), state_digest(built.live.world()));
    }

    #[test]
    fn history_is_complete_and_coherent(
        plans in prop::collection::vec((0..6usize, prop::collection::vec(any::<Index>(), 0..3), any::<u8>()), 1..40),
        batch_sizes in prop::collection::vec(1..=5usize, 1..6),
    ) {
        let (_, orderer, client) = network();
        let built = build_chain(&orderer, &client, &plans, &batch_sizes);
        let state = &built.live;

        let total: usize = built.posts.values().sum();
        prop_assert_eq!(state.history().entry_count(), total);
        for (key, count) in &built.posts {
            let hist = exec_get_history(state, key).unwrap();
            prop_assert_eq!(hist.len(), *count);
            for pair in hist.windows(2) {
                prop_assert!(pair[0].version < pair[1].version);
            }
            prop_assert!(hist.iter().all(|e| e.applied));
            let (latest, version) = exec_get(state, key).unwrap();
            let last = hist.last().unwrap();
            prop_assert_eq!(version, last.version);
            prop_assert_eq!(latest, &last.record);
        }
        prop_assert!(exec_get(state, "never-posted").is_none());
    }

    #[test]
    fn lineage_equals_brute_force_closure(
        plans in prop::collection::vec((0..8usize, prop::collection::vec(any::<Index>(), 0..3), any::<u8>()), 1..100),
        batch_sizes in prop::collection::vec(1..=5usize, 1..6),
        start_pick in any::<Index>(),
    ) {
        let (_, orderer, client) = network();
        let built = build_chain(&orderer, &client, &plans, &batch_sizes);
        let state = &built.live;

        let all_nodes: Vec<&NodeId> = built.parent_map.keys().collect();
        let start = all_nodes[start_pick.index(all_nodes.len())];
        let graph = exec_get_lineage(state, &start.0, Some(start.1), None).unwrap();

        // Node set equals the oracle's transitive closure.
        let got: Vec<NodeId> = graph
            .nodes
            .iter()
            .map(|n| (n.id.key.clone(), n.id.version))
            .collect();
        let want: Vec<NodeId> = closure_oracle(&built.parent_map, start).into_iter().collect();
        prop_assert_eq!(&got, &want);
        prop_assert!(!graph.truncated);

        // Soundness: every edge is a recorded parents entry; every edge
        // points backwards in commit order (acyclicity); completeness:
        // the closure's own parent entries are all present as edges.
        let mut expected_edges = 0usize;
        for node in &want {
            let parents = &built.parent_map[node];
            let mut distinct: Vec<&NodeId> = parents.iter().collect();
            distinct.sort();
            distinct.dedup();
            expected_edges += distinct.len();
        }
        prop_assert_eq!(graph.edges.len(), expected_edges);
        for edge in &graph.edges {
            let child: NodeId = (edge.child.key.clone(), edge.child.version);
            let parent: NodeId = (edge.parent.key.clone(), edge.parent.version);
            prop_assert!(built.parent_map[&child].contains(&parent));
            prop_assert!(parent.1 < child.1);
        }

        // Every node carries the record that was committed for it.
        for node in &graph.nodes {
            let hist = exec_get_history(state, &node.id.key).unwrap();
            let committed = hist.iter().find(|e| e.version == node.id.version).unwrap();
            prop_assert_eq!(&committed.record, &node.record);
        }
    }

    #[test]
    fn any_single_bit_flip_is_detected(
        plans in prop::collection::vec((0..4usize, prop::collection::vec(any::<Index>(), 0..2), any::<u8>()), 1..6),
        batch_sizes in prop::collection::vec(1..=3usize, 1..3),
        block_pick in any::<Index>(),
        byte_pick in any::<Index>(),
        bit in 0u8..8,
    ) {
        let (membership, orderer, client) = network();
        let built = build_chain(&orderer, &client, &plans, &batch_sizes);

        let i = block_pick.index(built.blocks.len());
        let prev = if i == 0 {
            provledger_core::ZERO_HASH
        } else {
            built.blocks[i - 1].hash()
        };
        let mut bytes = built.blocks[i].encode();
        let pos = byte_pick.index(bytes.len());
        bytes[pos] ^= 1 << bit;

        match Block::decode(&bytes) {
            Err(_) => {}
            Ok(tampered) => {
                prop_assert!(check_block(&tampered, i as u64, prev, &membership).is_err());
            }
        }
    }
}
