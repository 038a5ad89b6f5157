//! Environment model: a store of classified, tag-normalized environment
//! records with CRUD, fuzzy token queries and saved ODD queries.
//!
//! A query token matches a tag when they are equal, or when the token has at
//! least 4 characters and is within Levenshtein distance 1 of the tag. A
//! record matches when every non-stopword token matches at least one of its
//! tags. Results are ordered by timestamp descending, then id ascending.
//!
//! # Ingest table
//!
//! | frame kind | condition                  | class        | tags                               | source       |
//! |------------|----------------------------|--------------|------------------------------------|--------------|
//! | Radar      | `target_valid` = 1         | Object       | vehicle, lead                      | Perception   |
//! | Radar      | otherwise                  | rejected (`InvalidRecord`)                                       |
//! | Lidar      | —                          | Object       | obstacle, lidar                    | Perception   |
//! | Camera     | —                          | Object       | camera, scene                      | Perception   |
//! | GPS        | —                          | Localization | gps, position                      | Localization |
//! | IMU        | —                          | Localization | imu, motion                        | Localization |
//! | HDMap      | —                          | RoadFeature  | road, + highway, + tunnel if set   | Cloud        |
//! | V2X        | `rain` or `fog` set        | Weather      | each set flag of rain, fog, road_works | V2X      |
//! | V2X        | otherwise                  | V2XEvent     | v2x, + road_works if set           | V2X          |
//!
//! All normalized attributes are copied into the record as numbers. Radar
//! records also get a position `(range·cos az, range·sin az)`.
//!
//! # Persistence
//!
//! A store opened on a path keeps a JSON-lines log with one record per line.
//! Create and update append the record's new state; delete rewrites the log
//! without the record. Opening replays the log, later lines winning.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hal::{AbstractFrame, DeviceKind};

pub const STOPWORDS: [&str; 9] = ["on", "in", "at", "the", "a", "an", "of", "and", "with"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordClass {
    Object,
    Lane,
    RoadFeature,
    Weather,
    Localization,
    V2XEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Perception,
    Localization,
    Fusion,
    V2X,
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Bool(bool),
    Num(f64),
    Text(String),
}

impl AttrValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Num(v) => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvRecord {
    pub record_id: u64,
    pub class: RecordClass,
    pub tags: BTreeSet<String>,
    pub timestamp_ns: u64,
    #[serde(default)]
    pub position: Option<Position>,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
    pub source: Source,
}

/// Fields to change in [`EnvStore::update`]; `None` leaves a field as is.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordPatch {
    #[serde(default)]
    pub class: Option<RecordClass>,
    #[serde(default)]
    pub tags: Option<BTreeSet<String>>,
    #[serde(default)]
    pub timestamp_ns: Option<u64>,
    #[serde(default)]
    pub position: Option<Option<Position>>,
    #[serde(default)]
    pub attributes: Option<BTreeMap<String, AttrValue>>,
    #[serde(default)]
    pub source: Option<Source>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OddQuery {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub class_filter: Option<RecordClass>,
    /// Inclusive `[t0, t1]` in nanoseconds.
    #[serde(default)]
    pub time_range: Option<(u64, u64)>,
}

impl OddQuery {
    pub fn tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        Self {
            tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OddDefinition {
    pub name: String,
    pub query: OddQuery,
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("record {0} already exists")]
    DuplicateId(u64),
    #[error("record {0} not found")]
    NotFound(u64),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("query has no tokens besides stopwords")]
    EmptyQuery,
    #[error("ODD {0:?} already defined")]
    DuplicateOddName(String),
    #[error("ODD {0:?} not found")]
    OddNotFound(String),
    #[error("store log {path}: {message}")]
    Io { path: String, message: String },
    #[error("store log line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn is_stopword(t: &str) -> bool {
    STOPWORDS.contains(&t)
}

/// Lowercases, trims and splits raw words, dropping stopwords.
pub fn normalize_tokens<S: AsRef<str>>(raw: &[S]) -> Vec<String> {
    raw.iter()
        .flat_map(|w| {
            w.as_ref()
                .split_whitespace()
                .map(|t| t.to_lowercase())
                .collect::<Vec<_>>()
        })
        .filter(|t| !is_stopword(t))
        .collect()
}

fn valid_tag(t: &str) -> bool {
    !t.is_empty()
        && t.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Normalizes a tag set: trim, lowercase, drop connector words, then require
/// a non-empty set of `[a-z0-9_]+` tags.
pub fn normalize_tags<I, S>(tags: I) -> Result<BTreeSet<String>, EnvError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = BTreeSet::new();
    for t in tags {
        let t = t.as_ref().trim().to_lowercase();
        if is_stopword(&t) {
            continue;
        }
        if !valid_tag(&t) {
            return Err(EnvError::InvalidRecord(format!(
                "tag {t:?} is not [a-z0-9_]+"
            )));
        }
        out.insert(t);
    }
    if out.is_empty() {
        return Err(EnvError::InvalidRecord(
            "record needs at least one tag".into(),
        ));
    }
    Ok(out)
}

/// Edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != *cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn fuzzy_match(token: &str, tag: &str) -> bool {
    token == tag || (token.chars().count() >= 4 && levenshtein(token, tag) <= 1)
}

fn matches(rec: &EnvRecord, tokens: &[String], q: &OddQuery) -> bool {
    if q.class_filter.is_some_and(|c| c != rec.class) {
        return false;
    }
    if let Some((t0, t1)) = q.time_range {
        if rec.timestamp_ns < t0 || rec.timestamp_ns > t1 {
            return false;
        }
    }
    tokens
        .iter()
        .all(|tok| rec.tags.iter().any(|tag| fuzzy_match(tok, tag)))
}

#[derive(Debug, Default)]
struct State {
    records: BTreeMap<u64, EnvRecord>,
    odds: BTreeMap<String, OddQuery>,
    next_id: u64,
}

/// Thread-safe record store. Mutations are serialized; queries read a
/// consistent snapshot.
#[derive(Debug, Default)]
pub struct EnvStore {
    state: RwLock<State>,
    log: Option<Mutex<PathBuf>>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> EnvError {
    EnvError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

impl EnvStore {
    /// In-memory store without a log.
    pub fn new() -> Self {
        Self {
            state: RwLock::new(State {
                next_id: 1,
                ..State::default()
            }),
            log: None,
        }
    }

    /// Opens a store backed by the log at `path`, creating an empty log if
    /// none exists.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        let path = path.as_ref();
        if !path.exists() {
            File::create(path).map_err(|e| io_err(path, e))?;
        }
        Self::load(path)
    }

    /// Opens an existing log; fails if it cannot be read.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| io_err(path, e))?;
        let mut records = BTreeMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EnvRecord = serde_json::from_str(&line).map_err(|e| EnvError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.insert(rec.record_id, rec);
        }
        let next_id = records.keys().next_back().map_or(1, |k| k + 1);
        Ok(Self {
            state: RwLock::new(State {
                records,
                odds: BTreeMap::new(),
                next_id,
            }),
            log: Some(Mutex::new(path.to_path_buf())),
        })
    }

    fn append(&self, rec: &EnvRecord) -> Result<(), EnvError> {
        let Some(log) = &self.log else { return Ok(()) };
        let path = log.lock().unwrap();
        let mut f = OpenOptions::new()
            .append(true)
            .open(&*path)
            .map_err(|e| io_err(&path, e))?;
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(f, "{line}").map_err(|e| io_err(&path, e))
    }

    fn rewrite(&self, records: &BTreeMap<u64, EnvRecord>) -> Result<(), EnvError> {
        let Some(log) = &self.log else { return Ok(()) };
        let path = log.lock().unwrap();
        let tmp = path.with_extension("tmp");
        let mut out = String::new();
        for r in records.values() {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        fs::write(&tmp, out).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &*path).map_err(|e| io_err(&path, e))
    }

    pub fn create(&self, mut rec: EnvRecord) -> Result<u64, EnvError> {
        rec.tags = normalize_tags(&rec.tags)?;
        let mut st = self.state.write().unwrap();
        if st.records.contains_key(&rec.record_id) {
            return Err(EnvError::DuplicateId(rec.record_id));
        }
        self.append(&rec)?;
        let id = rec.record_id;
        st.next_id = st.next_id.max(id.saturating_add(1));
        st.records.insert(id, rec);
        Ok(id)
    }

    /// Creates a record under the next free id; `rec.record_id` is ignored.
    pub fn insert(&self, mut rec: EnvRecord) -> Result<u64, EnvError> {
        rec.tags = normalize_tags(&rec.tags)?;
        let mut st = self.state.write().unwrap();
        rec.record_id = st.next_id;
        self.append(&rec)?;
        st.next_id += 1;
        let id = rec.record_id;
        st.records.insert(id, rec);
        Ok(id)
    }

    pub fn read(&self, id: u64) -> Result<EnvRecord, EnvError> {
        self.state
            .read()
            .unwrap()
            .records
            .get(&id)
            .cloned()
            .ok_or(EnvError::NotFound(id))
    }

    /// Applies `patch`. The class is part of a record's identity and cannot
    /// change.
    pub fn update(&self, id: u64, patch: RecordPatch) -> Result<EnvRecord, EnvError> {
        let mut st = self.state.write().unwrap();
        let cur = st.records.get(&id).ok_or(EnvError::NotFound(id))?;
        if let Some(c) = patch.class {
            if c != cur.class {
                return Err(EnvError::InvalidRecord(format!(
                    "class of record {id} is {:?} and cannot become {c:?}",
                    cur.class
                )));
            }
        }
        let mut next = cur.clone();
        if let Some(tags) = patch.tags {
            next.tags = normalize_tags(&tags)?;
        }
        if let Some(t) = patch.timestamp_ns {
            next.timestamp_ns = t;
        }
        if let Some(p) = patch.position {
            next.position = p;
        }
        if let Some(a) = patch.attributes {
            next.attributes = a;
        }
        if let Some(s) = patch.source {
            next.source = s;
        }
        self.append(&next)?;
        st.records.insert(id, next.clone());
        Ok(next)
    }

    pub fn delete(&self, id: u64) -> Result<EnvRecord, EnvError> {
        let mut st = self.state.write().unwrap();
        let rec = st.records.remove(&id).ok_or(EnvError::NotFound(id))?;
        if let Err(e) = self.rewrite(&st.records) {
            st.records.insert(id, rec);
            return Err(e);
        }
        Ok(rec)
    }

    pub fn len(&self) -> usize {
        self.state.read().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records in id order.
    pub fn records(&self) -> Vec<EnvRecord> {
        self.state
            .read()
            .unwrap()
            .records
            .values()
            .cloned()
            .collect()
    }

    pub fn query(&self, q: &OddQuery) -> Result<Vec<EnvRecord>, EnvError> {
        let tokens = normalize_tokens(&q.tokens);
        if tokens.is_empty() {
            return Err(EnvError::EmptyQuery);
        }
        let st = self.state.read().unwrap();
        let mut out: Vec<EnvRecord> = st
            .records
            .values()
            .filter(|r| matches(r, &tokens, q))
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            b.timestamp_ns
                .cmp(&a.timestamp_ns)
                .then(a.record_id.cmp(&b.record_id))
        });
        Ok(out)
    }

    pub fn save_odd(&self, name: &str, q: OddQuery) -> Result<(), EnvError> {
        if normalize_tokens(&q.tokens).is_empty() {
            return Err(EnvError::EmptyQuery);
        }
        let mut st = self.state.write().unwrap();
        if st.odds.contains_key(name) {
            return Err(EnvError::DuplicateOddName(name.to_string()));
        }
        st.odds.insert(name.to_string(), q);
        Ok(())
    }

    /// Evaluates a saved ODD against the current store.
    pub fn run_odd(&self, name: &str) -> Result<Vec<EnvRecord>, EnvError> {
        let q = self
            .state
            .read()
            .unwrap()
            .odds
            .get(name)
            .cloned()
            .ok_or_else(|| EnvError::OddNotFound(name.to_string()))?;
        self.query(&q)
    }

    pub fn odd_names(&self) -> Vec<String> {
        self.state.read().unwrap().odds.keys().cloned().collect()
    }

    /// Records a normalized frame per the ingest table.
    pub fn ingest(&self, frame: &AbstractFrame) -> Result<u64, EnvError> {
        self.insert(record_from_frame(frame)?)
    }
}

/// The deterministic frame → record mapping used by [`EnvStore::ingest`].
/// The returned record has id 0.
pub fn record_from_frame(frame: &AbstractFrame) -> Result<EnvRecord, EnvError> {
    let a = &frame.normalized;
    let flag = |k: &str| a.get(k).is_some_and(|v| *v >= 0.5);
    let (class, tags, source): (RecordClass, Vec<&str>, Source) = match frame.kind {
        DeviceKind::Radar => {
            if !flag("target_valid") {
                return Err(EnvError::InvalidRecord(format!(
                    "radar frame {} of {} has no valid target",
                    frame.seq, frame.source_id
                )));
            }
            (
                RecordClass::Object,
                vec!["vehicle", "lead"],
                Source::Perception,
            )
        }
        DeviceKind::Lidar => (
            RecordClass::Object,
            vec!["obstacle", "lidar"],
            Source::Perception,
        ),
        DeviceKind::Camera => (
            RecordClass::Object,
            vec!["camera", "scene"],
            Source::Perception,
        ),
        DeviceKind::Gps => (
            RecordClass::Localization,
            vec!["gps", "position"],
            Source::Localization,
        ),
        DeviceKind::Imu => (
            RecordClass::Localization,
            vec!["imu", "motion"],
            Source::Localization,
        ),
        DeviceKind::HdMap => {
            let mut t = vec!["road"];
            if flag("highway") {
                t.push("highway");
            }
            if flag("in_tunnel") {
                t.push("tunnel");
            }
            (RecordClass::RoadFeature, t, Source::Cloud)
        }
        DeviceKind::V2x => {
            if flag("rain") || flag("fog") {
                let t = ["rain", "fog", "road_works"]
                    .into_iter()
                    .filter(|k| flag(k))
                    .collect();
                (RecordClass::Weather, t, Source::V2X)
            } else {
                let mut t = vec!["v2x"];
                if flag("road_works") {
                    t.push("road_works");
                }
                (RecordClass::V2XEvent, t, Source::V2X)
            }
        }
    };
    let position = (frame.kind == DeviceKind::Radar).then(|| {
        let r = a.get("range_m").copied().unwrap_or(0.0);
        let az = a.get("azimuth_rad").copied().unwrap_or(0.0);
        Position {
            x: r * az.cos(),
            y: r * az.sin(),
        }
    });
    Ok(EnvRecord {
        record_id: 0,
        class,
        tags: normalize_tags(tags)?,
        timestamp_ns: frame.timestamp_ns,
        position,
        attributes: a
            .iter()
            .map(|(k, v)| (k.clone(), AttrValue::Num(*v)))
            .collect(),
        source,
    })
}
