use std::collections::{BTreeMap, BTreeSet};

use dfp_core::envmodel::*;
use dfp_core::hal::{normalize, DeviceDescriptor, DeviceKind, DeviceRegistry};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: &[&str] = &[
    "tunnel",
    "highway",
    "rain",
    "night",
    "fog",
    "snow",
    "urban",
    "bridge",
    "lane",
    "merge",
    "truck",
    "vehicle",
    "lead",
    "cyclist",
    "road_works",
    "wet",
    "dry",
    "exit",
    "ramp",
    "sun",
];
const STOP: &[&str] = &["on", "in", "at", "the", "a", "an", "of", "and", "with"];
const CLASSES: &[RecordClass] = &[
    RecordClass::Object,
    RecordClass::Lane,
    RecordClass::RoadFeature,
    RecordClass::Weather,
    RecordClass::Localization,
    RecordClass::V2XEvent,
];

fn rec(id: u64, class: RecordClass, tags: &[&str], ts: u64) -> EnvRecord {
    EnvRecord {
        record_id: id,
        class,
        tags: tags.iter().map(|s| s.to_string()).collect(),
        timestamp_ns: ts,
        position: None,
        attributes: BTreeMap::new(),
        source: Source::Fusion,
    }
}

fn random_record(rng: &mut ChaCha8Rng, id: u64) -> EnvRecord {
    let n = rng.gen_range(1..=4);
    let tags: Vec<&str> = VOCAB.choose_multiple(rng, n).copied().collect();
    // Coarse timestamps so ties exercise the id tie-break.
    let ts = rng.gen_range(0..10u64) * 1000;
    rec(id, *CLASSES.choose(rng).unwrap(), &tags, ts)
}

fn mutate(rng: &mut ChaCha8Rng, w: &str) -> String {
    let mut c: Vec<char> = w.chars().collect();
    match rng.gen_range(0..4) {
        0 => {
            let i = rng.gen_range(0..c.len());
            c.remove(i);
        }
        1 => {
            let i = rng.gen_range(0..=c.len());
            c.insert(i, 'x');
        }
        2 => {
            let i = rng.gen_range(0..c.len());
            c[i] = 'q';
        }
        _ => {
            c.push('z');
            c.push('z');
        }
    }
    c.into_iter().collect()
}

fn random_query(rng: &mut ChaCha8Rng) -> OddQuery {
    let n = rng.gen_range(1..=3);
    let mut tokens = Vec::new();
    for _ in 0..n {
        let w = VOCAB.choose(rng).unwrap();
        tokens.push(match rng.gen_range(0..3) {
            0 => w.to_string(),
            1 => mutate(rng, w),
            _ => w.to_uppercase(),
        });
        if rng.gen_bool(0.4) {
            tokens.push(STOP.choose(rng).unwrap().to_string());
        }
    }
    let class_filter = rng.gen_bool(0.25).then(|| *CLASSES.choose(rng).unwrap());
    let time_range = rng.gen_bool(0.25).then(|| {
        let a = rng.gen_range(0..10u64) * 1000;
        let b = rng.gen_range(0..10u64) * 1000;
        (a.min(b), a.max(b))
    });
    OddQuery {
        tokens,
        class_filter,
        time_range,
    }
}

/// Brute-force scan using strsim's edit distance.
fn oracle(records: &[EnvRecord], q: &OddQuery) -> Vec<u64> {
    let toks: Vec<String> = q
        .tokens
        .iter()
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !STOP.contains(&t.as_str()))
        .collect();
    let fm =
        |t: &str, g: &str| t == g || (t.chars().count() >= 4 && strsim::levenshtein(t, g) <= 1);
    let mut hits: Vec<&EnvRecord> = records
        .iter()
        .filter(|r| q.class_filter.is_none_or(|c| c == r.class))
        .filter(|r| {
            q.time_range
                .is_none_or(|(a, b)| a <= r.timestamp_ns && r.timestamp_ns <= b)
        })
        .filter(|r| toks.iter().all(|t| r.tags.iter().any(|g| fm(t, g))))
        .collect();
    hits.sort_by_key(|r| (std::cmp::Reverse(r.timestamp_ns), r.record_id));
    hits.into_iter().map(|r| r.record_id).collect()
}

#[test]
fn query_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0dd);
    let store = EnvStore::new();
    let corpus: Vec<EnvRecord> = (1..=50).map(|i| random_record(&mut rng, i)).collect();
    for r in &corpus {
        store.create(r.clone()).unwrap();
    }
    let mut nonempty = 0;
    for _ in 0..200 {
        let q = random_query(&mut rng);
        let got: Vec<u64> = store
            .query(&q)
            .unwrap()
            .iter()
            .map(|r| r.record_id)
            .collect();
        let want = oracle(&corpus, &q);
        assert_eq!(got, want, "query {q:?}");
        nonempty += usize::from(!got.is_empty());
    }
    assert!(
        nonempty > 20,
        "corpus too sparse: {nonempty} non-empty results"
    );
}

#[test]
fn example_odd_query() {
    let store = EnvStore::new();
    store
        .create(rec(
            1,
            RecordClass::RoadFeature,
            &["tunnel", "highway", "rain", "night"],
            5,
        ))
        .unwrap();
    store
        .create(rec(2, RecordClass::RoadFeature, &["tunnel", "urban"], 6))
        .unwrap();
    let q = OddQuery::tokens(&["tunnel", "on", "highway", "in", "rain"]);
    let ids: Vec<u64> = store
        .query(&q)
        .unwrap()
        .iter()
        .map(|r| r.record_id)
        .collect();
    assert_eq!(ids, vec![1]);

    let typo = store.query(&OddQuery::tokens(&["tunel"])).unwrap();
    assert_eq!(typo.len(), 2);
    assert!(matches!(
        store.query(&OddQuery::tokens(&["on", "in"])),
        Err(EnvError::EmptyQuery)
    ));
}

#[test]
fn crud_semantics() {
    let store = EnvStore::new();
    let r = rec(7, RecordClass::Weather, &["rain"], 10);
    store.create(r.clone()).unwrap();
    assert_eq!(store.read(7).unwrap(), r);
    assert!(matches!(
        store.create(r.clone()),
        Err(EnvError::DuplicateId(7))
    ));

    let bad = RecordPatch {
        class: Some(RecordClass::Object),
        ..RecordPatch::default()
    };
    assert!(matches!(
        store.update(7, bad),
        Err(EnvError::InvalidRecord(_))
    ));
    assert_eq!(store.read(7).unwrap(), r, "rejected update must not apply");

    let patch = RecordPatch {
        tags: Some(["Rain", "heavy"].iter().map(|s| s.to_string()).collect()),
        timestamp_ns: Some(11),
        ..RecordPatch::default()
    };
    let after = store.update(7, patch).unwrap();
    assert_eq!(store.read(7).unwrap(), after);
    assert_eq!(
        after.tags,
        BTreeSet::from(["heavy".to_string(), "rain".to_string()])
    );
    assert_eq!(after.timestamp_ns, 11);
    assert_eq!(after.class, RecordClass::Weather);
    assert_eq!(after.source, r.source);

    store.delete(7).unwrap();
    assert!(matches!(store.read(7), Err(EnvError::NotFound(7))));
    assert!(matches!(store.delete(7), Err(EnvError::NotFound(7))));
    assert!(matches!(
        store.update(7, RecordPatch::default()),
        Err(EnvError::NotFound(7))
    ));

    assert!(matches!(
        store.create(rec(8, RecordClass::Lane, &["the"], 0)),
        Err(EnvError::InvalidRecord(_))
    ));
    assert!(matches!(
        store.create(rec(8, RecordClass::Lane, &["lane-2"], 0)),
        Err(EnvError::InvalidRecord(_))
    ));
}

#[test]
fn saved_odds_evaluate_live() {
    let store = EnvStore::new();
    store
        .create(rec(1, RecordClass::Weather, &["rain", "night"], 1))
        .unwrap();
    let q = OddQuery::tokens(&["rain"]);
    store.save_odd("wet", q.clone()).unwrap();
    assert_eq!(store.run_odd("wet").unwrap(), store.query(&q).unwrap());
    assert!(matches!(
        store.save_odd("wet", q.clone()),
        Err(EnvError::DuplicateOddName(_))
    ));
    store
        .create(rec(2, RecordClass::Weather, &["rain"], 2))
        .unwrap();
    let ids: Vec<u64> = store
        .run_odd("wet")
        .unwrap()
        .iter()
        .map(|r| r.record_id)
        .collect();
    assert_eq!(ids, vec![2, 1]);
    assert!(matches!(
        store.run_odd("missing"),
        Err(EnvError::OddNotFound(_))
    ));
}

fn frame_of(kind: DeviceKind, seed: u64) -> dfp_core::hal::AbstractFrame {
    let mut reg = DeviceRegistry::new();
    let h = reg
        .register_device(DeviceDescriptor::new("dev", kind, 10.0, seed))
        .unwrap();
    normalize(&reg.tick(h, 1).unwrap()[0]).unwrap()
}

#[test]
fn ingest_table() {
    let store = EnvStore::new();
    let mut radar = frame_of(DeviceKind::Radar, 1);
    radar.normalized.insert("target_valid".into(), 1.0);
    radar.normalized.insert("range_m".into(), 40.0);
    radar.normalized.insert("azimuth_rad".into(), 0.0);
    let id = store.ingest(&radar).unwrap();
    let r = store.read(id).unwrap();
    assert_eq!(r.class, RecordClass::Object);
    assert_eq!(
        r.tags,
        BTreeSet::from(["lead".to_string(), "vehicle".to_string()])
    );
    assert_eq!(r.position, Some(Position { x: 40.0, y: 0.0 }));

    radar.normalized.insert("target_valid".into(), 0.0);
    assert!(matches!(
        store.ingest(&radar),
        Err(EnvError::InvalidRecord(_))
    ));

    let mut v2x = frame_of(DeviceKind::V2x, 2);
    for k in ["rain", "fog", "road_works"] {
        v2x.normalized.insert(k.into(), 0.0);
    }
    v2x.normalized.insert("rain".into(), 1.0);
    let w = store.read(store.ingest(&v2x).unwrap()).unwrap();
    assert_eq!(w.class, RecordClass::Weather);
    assert_eq!(w.tags, BTreeSet::from(["rain".to_string()]));

    let mut map = frame_of(DeviceKind::HdMap, 3);
    map.normalized.insert("highway".into(), 1.0);
    map.normalized.insert("in_tunnel".into(), 1.0);
    let m = store.read(store.ingest(&map).unwrap()).unwrap();
    assert_eq!(m.class, RecordClass::RoadFeature);
    assert!(m.tags.contains("tunnel") && m.tags.contains("highway"));

    for kind in [DeviceKind::Gps, DeviceKind::Imu] {
        let l = store
            .read(store.ingest(&frame_of(kind, 4)).unwrap())
            .unwrap();
        assert_eq!(l.class, RecordClass::Localization);
    }
}

#[test]
fn ingest_twice_gives_distinct_ids_same_content() {
    let store = EnvStore::new();
    let f = frame_of(DeviceKind::Lidar, 9);
    let a = store.read(store.ingest(&f).unwrap()).unwrap();
    let b = store.read(store.ingest(&f).unwrap()).unwrap();
    assert_ne!(a.record_id, b.record_id);
    assert_eq!(
        EnvRecord {
            record_id: 0,
            timestamp_ns: 0,
            ..a
        },
        EnvRecord {
            record_id: 0,
            timestamp_ns: 0,
            ..b
        }
    );
}

#[test]
fn log_roundtrip_and_compaction() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("env.jsonl");
    {
        let store = EnvStore::open(&path).unwrap();
        store
            .create(rec(1, RecordClass::Weather, &["rain"], 1))
            .unwrap();
        store
            .create(rec(2, RecordClass::Lane, &["lane"], 2))
            .unwrap();
        store
            .update(
                2,
                RecordPatch {
                    timestamp_ns: Some(3),
                    ..RecordPatch::default()
                },
            )
            .unwrap();
        store
            .create(rec(3, RecordClass::Object, &["truck"], 3))
            .unwrap();
        store.delete(1).unwrap();
    }
    let text = std::fs::read_to_string(&path).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(
            keys,
            BTreeSet::from([
                "record_id",
                "class",
                "tags",
                "timestamp_ns",
                "position",
                "attributes",
                "source"
            ])
        );
    }
    let reopened = EnvStore::open(&path).unwrap();
    let ids: Vec<u64> = reopened.records().iter().map(|r| r.record_id).collect();
    assert_eq!(ids, vec![2, 3]);
    assert_eq!(reopened.read(2).unwrap().timestamp_ns, 3);
    // Fresh ids continue after the highest one seen.
    let id = reopened
        .insert(rec(0, RecordClass::Object, &["cyclist"], 4))
        .unwrap();
    assert_eq!(id, 4);

    assert!(matches!(
        EnvStore::load(dir.path().join("absent.jsonl")),
        Err(EnvError::Io { .. })
    ));
    std::fs::write(dir.path().join("bad.jsonl"), "{not json}\n").unwrap();
    assert!(matches!(
        EnvStore::load(dir.path().join("bad.jsonl")),
        Err(EnvError::Parse { line: 1, .. })
    ));
}

#[test]
fn concurrent_queries_see_whole_records() {
    let store = std::sync::Arc::new(EnvStore::new());
    let writer = {
        let s = store.clone();
        std::thread::spawn(move || {
            for i in 1..=300u64 {
                s.create(rec(i, RecordClass::Object, &["truck", "lead"], i))
                    .unwrap();
            }
        })
    };
    for _ in 0..100 {
        let res = store.query(&OddQuery::tokens(&["truck"])).unwrap();
        // A snapshot is a prefix of the creation order, returned newest first.
        let ids: Vec<u64> = res.iter().map(|r| r.record_id).collect();
        let n = ids.len() as u64;
        assert_eq!(ids, (1..=n).rev().collect::<Vec<_>>());
    }
    writer.join().unwrap();
}

fn arb_record(id: u64) -> impl Strategy<Value = EnvRecord> {
    (
        proptest::sample::subsequence(VOCAB.to_vec(), 1..4),
        0..6usize,
        0..20u64,
    )
        .prop_map(move |(tags, c, ts)| rec(id, CLASSES[c], &tags, ts))
}

proptest! {
    #[test]
    fn create_delete_is_identity(
        base in proptest::collection::vec(0..20usize, 0..10),
        extra in arb_record(1000),
    ) {
        let store = EnvStore::new();
        for (i, v) in base.iter().enumerate() {
            store.create(rec(i as u64 + 1, RecordClass::Lane, &[VOCAB[*v]], i as u64)).unwrap();
        }
        let before = store.records();
        store.create(extra).unwrap();
        store.delete(1000).unwrap();
        prop_assert_eq!(store.records(), before);
    }

    #[test]
    fn adding_a_record_never_removes_results(
        seed in any::<u64>(),
        extra in arb_record(999),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = EnvStore::new();
        for i in 1..=15 {
            store.create(random_record(&mut rng, i)).unwrap();
        }
        let queries: Vec<OddQuery> = (0..10).map(|_| random_query(&mut rng)).collect();
        let before: Vec<BTreeSet<u64>> = queries
            .iter()
            .map(|q| store.query(q).unwrap().iter().map(|r| r.record_id).collect())
            .collect();
        store.create(extra).unwrap();
        for (q, b) in queries.iter().zip(before) {
            let after: BTreeSet<u64> = store.query(q).unwrap().iter().map(|r| r.record_id).collect();
            prop_assert!(b.is_subset(&after));
        }
    }
}
