use std::sync::atomic::{AtomicUsize, Ordering};

use draftforge_core::store::{BlobStore, ContentHash, EventLog, EventType, Store, StoreError};
use proptest::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

#[test]
fn random_blobs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let blobs = BlobStore::open(dir.path()).unwrap();
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(1000));
    runner
        .run(&prop::collection::vec(any::<u8>(), 0..4096), |bytes| {
            let h = blobs.put(&bytes).unwrap();
            prop_assert_eq!(h.as_str(), hex::encode(Sha256::digest(&bytes)));
            prop_assert_eq!(blobs.get(&h).unwrap(), bytes.clone());
            prop_assert_eq!(blobs.put(&bytes).unwrap(), h);
            Ok(())
        })
        .unwrap();
}

#[test]
fn empty_blob_has_standard_digest() {
    let dir = tempfile::tempdir().unwrap();
    let blobs = BlobStore::open(dir.path()).unwrap();
    let h = blobs.put(b"").unwrap();
    assert_eq!(h.as_str(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    let unknown = ContentHash::of(b"never stored");
    assert!(matches!(blobs.get(&unknown), Err(StoreError::NotFound(_))));
}

#[test]
fn racing_writers_on_one_version_have_exactly_one_winner() {
    let dir = tempfile::tempdir().unwrap();
    let logs: Vec<EventLog> = (0..8).map(|_| EventLog::open(dir.path()).unwrap()).collect();
    logs[0].append("race", EventType::SessionCreated, json!({}), Some(0)).unwrap();
    for round in 1..=20u64 {
        let wins = AtomicUsize::new(0);
        let conflicts = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for log in &logs {
                let (wins, conflicts) = (&wins, &conflicts);
                s.spawn(move || match log.append("race", EventType::Described, json!({"round": round}), Some(round)) {
                    Ok(seq) => {
                        assert_eq!(seq, round + 1);
                        wins.fetch_add(1, Ordering::SeqCst);
                    }
                    Err(StoreError::SequenceConflict { expected, actual }) => {
                        assert_eq!((expected, actual), (round, round + 1));
                        conflicts.fetch_add(1, Ordering::SeqCst);
                    }
                    Err(e) => panic!("{e}"),
                });
            }
        });
        assert_eq!(wins.load(Ordering::SeqCst), 1);
        assert_eq!(conflicts.load(Ordering::SeqCst), logs.len() - 1);
    }
    let records = logs[3].load("race").unwrap();
    assert_eq!(records.iter().map(|r| r.seq).collect::<Vec<_>>(), (1..=21).collect::<Vec<_>>());
}

#[test]
fn unconditional_appends_stay_contiguous_under_contention() {
    let dir = tempfile::tempdir().unwrap();
    let log = EventLog::open(dir.path()).unwrap();
    log.append("s", EventType::SessionCreated, json!({}), None).unwrap();
    std::thread::scope(|s| {
        for t in 0..8 {
            let log = EventLog::open(dir.path()).unwrap();
            s.spawn(move || {
                for i in 0..25 {
                    log.append("s", EventType::FeedbackAppended, json!({"t": t, "i": i}), None).unwrap();
                }
            });
        }
    });
    let records = log.load("s").unwrap();
    assert_eq!(records.len(), 201);
    assert!(records.iter().enumerate().all(|(i, r)| r.seq == i as u64 + 1));
}

#[test]
fn appends_are_visible_to_a_fresh_store() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.events.append("d", EventType::SessionCreated, json!({"n": 1}), None).unwrap(), 1);
        assert_eq!(store.events.append("d", EventType::Described, json!({"n": 2}), Some(1)).unwrap(), 2);
    }
    let reopened = Store::open(dir.path()).unwrap();
    let records = reopened.events.load("d").unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[1].payload, json!({"n": 2}));
    assert_eq!(reopened.events.list().unwrap(), vec!["d".to_owned()]);
}

#[test]
fn non_creation_event_needs_existing_session() {
    let dir = tempfile::tempdir().unwrap();
    let log = EventLog::open(dir.path()).unwrap();
    assert!(matches!(log.append("ghost", EventType::Described, json!({}), None), Err(StoreError::NotFound(_))));
    assert!(matches!(log.load("ghost"), Err(StoreError::NotFound(_))));
}

#[test]
fn log_lines_carry_the_documented_fields() {
    let dir = tempfile::tempdir().unwrap();
    let log = EventLog::open(dir.path()).unwrap();
    log.append("f", EventType::SessionCreated, json!({"k": "v"}), None).unwrap();
    let text = std::fs::read_to_string(log.path_of("f")).unwrap();
    let line: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for field in ["seq", "ts", "type", "payload", "crc32"] {
        assert!(line.get(field).is_some(), "missing {field}");
    }
    assert_eq!(line["type"], "SessionCreated");
}
