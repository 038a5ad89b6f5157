//! Simulated hardware abstraction layer.
//!
//! Devices are registered in a [`DeviceRegistry`] and produce [`SensorFrame`]s
//! in their native raw units. [`normalize`] maps every raw frame onto a fixed,
//! per-kind schema in SI units so that upper layers never see device-specific
//! units or key names.
//!
//! Frame contents are synthetic: every raw value is a pure function of
//! `(seed, device_id, seq, field)`, and simulated time is derived from `seq`
//! alone, so replaying a descriptor reproduces the exact same stream.
//!
//! # Normalized schemas
//!
//! | kind   | normalized key   | accepted raw keys (factor to SI)            | default |
//! |--------|------------------|---------------------------------------------|---------|
//! | Camera | `width_px`       | `width` (1), `width_px` (1)                 | 0       |
//! |        | `height_px`      | `height` (1), `height_px` (1)               | 0       |
//! |        | `checksum`       | `checksum` (1)                              | 0       |
//! |        | `exposure_s`     | `exposure_ms` (1e-3), `exposure_s` (1)      | 0       |
//! | Radar  | `range_m`        | `range_km` (1000), `range_m` (1)            | 0       |
//! |        | `range_rate_mps` | `range_rate_kmh` (1/3.6), `range_rate_mps`  | 0       |
//! |        | `azimuth_rad`    | `azimuth_deg` (pi/180), `azimuth_rad` (1)   | 0       |
//! |        | `target_valid`   | `target_valid` (1)                          | 0       |
//! | Lidar  | `point_count`    | `points` (1), `point_count` (1)             | 0       |
//! |        | `max_range_m`    | `max_range_cm` (0.01), `max_range_m` (1)    | 0       |
//! |        | `scan_period_s`  | `scan_period_ms` (1e-3), `scan_period_s`    | 0       |
//! | GPS    | `lat_rad`        | `lat_deg` (pi/180), `lat_rad` (1)           | 0       |
//! |        | `lon_rad`        | `lon_deg` (pi/180), `lon_rad` (1)           | 0       |
//! |        | `alt_m`          | `alt_m` (1), `alt_ft` (0.3048)              | 0       |
//! | IMU    | `accel_x_mps2`   | `accel_x_g` (9.80665), `accel_x_mps2` (1)   | 0       |
//! |        | `accel_y_mps2`   | `accel_y_g` (9.80665), `accel_y_mps2` (1)   | 0       |
//! |        | `accel_z_mps2`   | `accel_z_g` (9.80665), `accel_z_mps2` (1)   | 0       |
//! |        | `yaw_rate_rps`   | `yaw_rate_dps` (pi/180), `yaw_rate_rps` (1) | 0       |
//! | HDMap  | `tile_id`        | `tile_id` (1)                               | 0       |
//! |        | `speed_limit_mps`| `speed_limit_kmh` (1/3.6), `speed_limit_mps`| 0       |
//! |        | `lane_count`     | `lane_count` (1)                            | 0       |
//! |        | `highway`        | `highway` (1)                               | 0       |
//! |        | `in_tunnel`      | `in_tunnel` (1)                             | 0       |
//! | V2X    | `msg_id`         | `msg_id` (1)                                | 0       |
//! |        | `distance_m`     | `distance_km` (1000), `distance_m` (1)      | 0       |
//! |        | `rain`           | `rain` (1)                                  | 0       |
//! |        | `fog`            | `fog` (1)                                   | 0       |
//! |        | `road_works`     | `road_works` (1)                            | 0       |
//!
//! The first raw key listed for each field is the device-native key emitted by
//! the generator. The canonical key is always accepted with factor 1, which
//! makes normalization idempotent. Raw keys outside the schema are dropped and
//! missing fields take the default.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{keyed_hash, unit_f64};

/// Flat attribute map. Booleans are encoded as 0.0 / 1.0.
pub type Attributes = BTreeMap<String, f64>;

pub const MAX_RATE_HZ: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceKind {
    Camera,
    Radar,
    Lidar,
    #[serde(rename = "GPS")]
    Gps,
    #[serde(rename = "IMU")]
    Imu,
    #[serde(rename = "HDMap")]
    HdMap,
    #[serde(rename = "V2X")]
    V2x,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 7] = [
        DeviceKind::Camera,
        DeviceKind::Radar,
        DeviceKind::Lidar,
        DeviceKind::Gps,
        DeviceKind::Imu,
        DeviceKind::HdMap,
        DeviceKind::V2x,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::Camera => "Camera",
            DeviceKind::Radar => "Radar",
            DeviceKind::Lidar => "Lidar",
            DeviceKind::Gps => "GPS",
            DeviceKind::Imu => "IMU",
            DeviceKind::HdMap => "HDMap",
            DeviceKind::V2x => "V2X",
        }
    }
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HalError {
    #[error("duplicate device id `{0}`")]
    DuplicateDeviceId(String),
    #[error("invalid rate {0} Hz (must be in (0, 1000])")]
    InvalidRate(f64),
    #[error("invalid device id `{0}`")]
    InvalidDeviceId(String),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("no normalization schema for device kind {0}")]
    UnsupportedKind(DeviceKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDescriptor {
    pub device_id: String,
    pub kind: DeviceKind,
    pub rate_hz: f64,
    pub seed: u64,
    /// Compute-unit affinity hint ("ai-unit", "compute-unit", "control-unit").
    #[serde(default)]
    pub binding_label: String,
}

impl DeviceDescriptor {
    pub fn new(device_id: impl Into<String>, kind: DeviceKind, rate_hz: f64, seed: u64) -> Self {
        Self {
            device_id: device_id.into(),
            kind,
            rate_hz,
            seed,
            binding_label: String::new(),
        }
    }

    pub fn with_binding(mut self, label: impl Into<String>) -> Self {
        self.binding_label = label.into();
        self
    }

    pub fn validate(&self) -> Result<(), HalError> {
        if self.device_id.trim().is_empty() {
            return Err(HalError::InvalidDeviceId(self.device_id.clone()));
        }
        if !(self.rate_hz > 0.0 && self.rate_hz <= MAX_RATE_HZ) {
            return Err(HalError::InvalidRate(self.rate_hz));
        }
        Ok(())
    }

    /// Simulated timestamp of frame `seq`.
    pub fn timestamp_ns(&self, seq: u64) -> u64 {
        (seq as f64 * 1e9 / self.rate_hz).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub device_id: String,
    pub kind: DeviceKind,
    pub seq: u64,
    pub timestamp_ns: u64,
    pub raw: Attributes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractFrame {
    pub source_id: String,
    pub kind: DeviceKind,
    pub seq: u64,
    pub timestamp_ns: u64,
    pub normalized: Attributes,
}

/// Opaque reference to a registered device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DeviceHandle {
    registry_id: u64,
    index: usize,
}

#[derive(Debug)]
struct DeviceState {
    desc: DeviceDescriptor,
    next_seq: Mutex<u64>,
}

/// Registry of simulated devices.
///
/// Registration takes `&mut self`; ticking takes `&self` so distinct handles
/// may be ticked from different threads.
#[derive(Debug)]
pub struct DeviceRegistry {
    id: u64,
    devices: Vec<DeviceState>,
    by_id: BTreeMap<String, usize>,
}

impl Default for DeviceRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl DeviceRegistry {
    pub fn new() -> Self {
        use std::sync::atomic::{AtomicU64, Ordering};
        static NEXT: AtomicU64 = AtomicU64::new(1);
        Self {
            id: NEXT.fetch_add(1, Ordering::Relaxed),
            devices: Vec::new(),
            by_id: BTreeMap::new(),
        }
    }

    pub fn register_device(&mut self, desc: DeviceDescriptor) -> Result<DeviceHandle, HalError> {
        desc.validate()?;
        if self.by_id.contains_key(&desc.device_id) {
            return Err(HalError::DuplicateDeviceId(desc.device_id));
        }
        let index = self.devices.len();
        self.by_id.insert(desc.device_id.clone(), index);
        self.devices.push(DeviceState {
            desc,
            next_seq: Mutex::new(0),
        });
        Ok(DeviceHandle {
            registry_id: self.id,
            index,
        })
    }

    pub fn handle(&self, device_id: &str) -> Option<DeviceHandle> {
        self.by_id.get(device_id).map(|&index| DeviceHandle {
            registry_id: self.id,
            index,
        })
    }

    pub fn descriptor(&self, handle: DeviceHandle) -> Result<&DeviceDescriptor, HalError> {
        self.state(handle).map(|s| &s.desc)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &DeviceDescriptor> {
        self.devices.iter().map(|d| &d.desc)
    }

    fn state(&self, handle: DeviceHandle) -> Result<&DeviceState, HalError> {
        if handle.registry_id != self.id {
            return Err(HalError::UnknownDevice(format!("handle #{}", handle.index)));
        }
        self.devices
            .get(handle.index)
            .ok_or_else(|| HalError::UnknownDevice(format!("handle #{}", handle.index)))
    }

    /// Next sequence number the device will emit.
    pub fn next_seq(&self, handle: DeviceHandle) -> Result<u64, HalError> {
        let st = self.state(handle)?;
        Ok(*st.next_seq.lock().unwrap())
    }

    /// Returns the next `n` frames of the device.
    pub fn tick(&self, handle: DeviceHandle, n: usize) -> Result<Vec<SensorFrame>, HalError> {
        let st = self.state(handle)?;
        let mut next = st.next_seq.lock().unwrap();
        let frames = (0..n as u64)
            .map(|i| generate_frame(&st.desc, *next + i))
            .collect();
        *next += n as u64;
        Ok(frames)
    }

    /// Emits one frame whose fields are overridden by `observed` values.
    ///
    /// `observed` is given in normalized (SI) keys and units; each value is
    /// written back in the device-native raw unit. This is how a simulated
    /// world injects ground truth (e.g. the lead-vehicle range) into a sensor.
    pub fn tick_observing(
        &self,
        handle: DeviceHandle,
        observed: &Attributes,
    ) -> Result<SensorFrame, HalError> {
        let st = self.state(handle)?;
        let mut next = st.next_seq.lock().unwrap();
        let mut frame = generate_frame(&st.desc, *next);
        *next += 1;
        let schema = kind_schema(st.desc.kind);
        for field in schema {
            if let Some(v) = observed.get(field.key) {
                let (raw_key, factor) = field.raw[0];
                frame.raw.insert(raw_key.to_string(), v / factor);
            }
        }
        Ok(frame)
    }
}

/// One normalized field and the raw keys it may be read from.
#[derive(Debug)]
pub struct FieldSpec {
    pub key: &'static str,
    /// `(raw key, factor)`; SI value = raw value * factor. First entry is the
    /// device-native key.
    pub raw: &'static [(&'static str, f64)],
    pub default: f64,
}

const DEG: f64 = PI / 180.0;
const KMH: f64 = 1.0 / 3.6;
const G: f64 = 9.806_65;

macro_rules! field {
    ($key:literal, [$(($raw:literal, $f:expr)),+ $(,)?]) => {
        FieldSpec { key: $key, raw: &[$(($raw, $f)),+], default: 0.0 }
    };
}

static CAMERA: [FieldSpec; 4] = [
    field!("width_px", [("width", 1.0), ("width_px", 1.0)]),
    field!("height_px", [("height", 1.0), ("height_px", 1.0)]),
    field!("checksum", [("checksum", 1.0)]),
    field!("exposure_s", [("exposure_ms", 1e-3), ("exposure_s", 1.0)]),
];
static RADAR: [FieldSpec; 4] = [
    field!("range_m", [("range_km", 1000.0), ("range_m", 1.0)]),
    field!(
        "range_rate_mps",
        [("range_rate_kmh", KMH), ("range_rate_mps", 1.0)]
    ),
    field!("azimuth_rad", [("azimuth_deg", DEG), ("azimuth_rad", 1.0)]),
    field!("target_valid", [("target_valid", 1.0)]),
];
static LIDAR: [FieldSpec; 3] = [
    field!("point_count", [("points", 1.0), ("point_count", 1.0)]),
    field!(
        "max_range_m",
        [("max_range_cm", 0.01), ("max_range_m", 1.0)]
    ),
    field!(
        "scan_period_s",
        [("scan_period_ms", 1e-3), ("scan_period_s", 1.0)]
    ),
];
static GPS: [FieldSpec; 3] = [
    field!("lat_rad", [("lat_deg", DEG), ("lat_rad", 1.0)]),
    field!("lon_rad", [("lon_deg", DEG), ("lon_rad", 1.0)]),
    field!("alt_m", [("alt_m", 1.0), ("alt_ft", 0.3048)]),
];
static IMU: [FieldSpec; 4] = [
    field!("accel_x_mps2", [("accel_x_g", G), ("accel_x_mps2", 1.0)]),
    field!("accel_y_mps2", [("accel_y_g", G), ("accel_y_mps2", 1.0)]),
    field!("accel_z_mps2", [("accel_z_g", G), ("accel_z_mps2", 1.0)]),
    field!(
        "yaw_rate_rps",
        [("yaw_rate_dps", DEG), ("yaw_rate_rps", 1.0)]
    ),
];
static HDMAP: [FieldSpec; 5] = [
    field!("tile_id", [("tile_id", 1.0)]),
    field!(
        "speed_limit_mps",
        [("speed_limit_kmh", KMH), ("speed_limit_mps", 1.0)]
    ),
    field!("lane_count", [("lane_count", 1.0)]),
    field!("highway", [("highway", 1.0)]),
    field!("in_tunnel", [("in_tunnel", 1.0)]),
];
static V2X: [FieldSpec; 5] = [
    field!("msg_id", [("msg_id", 1.0)]),
    field!("distance_m", [("distance_km", 1000.0), ("distance_m", 1.0)]),
    field!("rain", [("rain", 1.0)]),
    field!("fog", [("fog", 1.0)]),
    field!("road_works", [("road_works", 1.0)]),
];

/// The published normalized schema of a kind.
pub fn kind_schema(kind: DeviceKind) -> &'static [FieldSpec] {
    match kind {
        DeviceKind::Camera => &CAMERA,
        DeviceKind::Radar => &RADAR,
        DeviceKind::Lidar => &LIDAR,
        DeviceKind::Gps => &GPS,
        DeviceKind::Imu => &IMU,
        DeviceKind::HdMap => &HDMAP,
        DeviceKind::V2x => &V2X,
    }
}

/// Set of kinds a [`Normalizer`] knows how to normalize.
#[derive(Debug, Clone)]
pub struct Normalizer {
    kinds: Vec<DeviceKind>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::standard()
    }
}

impl Normalizer {
    pub fn standard() -> Self {
        Self {
            kinds: DeviceKind::ALL.to_vec(),
        }
    }

    /// A normalizer lacking the schema for `kind`.
    pub fn without(mut self, kind: DeviceKind) -> Self {
        self.kinds.retain(|k| *k != kind);
        self
    }

    pub fn normalize(&self, frame: &SensorFrame) -> Result<AbstractFrame, HalError> {
        if !self.kinds.contains(&frame.kind) {
            return Err(HalError::UnsupportedKind(frame.kind));
        }
        let normalized = normalize_attributes(frame.kind, &frame.raw);
        Ok(AbstractFrame {
            source_id: frame.device_id.clone(),
            kind: frame.kind,
            seq: frame.seq,
            timestamp_ns: frame.timestamp_ns,
            normalized,
        })
    }
}

/// Normalizes with the standard schema table.
pub fn normalize(frame: &SensorFrame) -> Result<AbstractFrame, HalError> {
    Normalizer::standard().normalize(frame)
}

/// Maps a raw attribute map onto the kind's schema.
pub fn normalize_attributes(kind: DeviceKind, raw: &Attributes) -> Attributes {
    kind_schema(kind)
        .iter()
        .map(|field| {
            let value = std::iter::once((field.key, 1.0))
                .chain(field.raw.iter().copied())
                .find_map(|(k, factor)| raw.get(k).map(|v| v * factor))
                .unwrap_or(field.default);
            (field.key.to_string(), value)
        })
        .collect()
}

fn generate_frame(desc: &DeviceDescriptor, seq: u64) -> SensorFrame {
    let u = |field: &str| unit_f64(keyed_hash(desc.seed, &desc.device_id, seq, field));
    let flag = |field: &str, p: f64| if u(field) < p { 1.0 } else { 0.0 };
    let mut raw = Attributes::new();
    let mut put = |k: &str, v: f64| {
        raw.insert(k.to_string(), v);
    };
    match desc.kind {
        DeviceKind::Camera => {
            // resolution is a per-device constant
            let res = unit_f64(keyed_hash(desc.seed, &desc.device_id, 0, "resolution"));
            let (w, h) = if res < 1.0 / 3.0 {
                (640.0, 480.0)
            } else if res < 2.0 / 3.0 {
                (1280.0, 720.0)
            } else {
                (1920.0, 1080.0)
            };
            put("width", w);
            put("height", h);
            let sum = keyed_hash(desc.seed, &desc.device_id, seq, "checksum") & 0xffff_ffff;
            put("checksum", sum as f64);
            put("exposure_ms", 1.0 + 32.0 * u("exposure"));
        }
        DeviceKind::Radar => {
            put("range_km", (5.0 + 195.0 * u("range")) / 1000.0);
            put("range_rate_kmh", -72.0 + 144.0 * u("range_rate"));
            put("azimuth_deg", -30.0 + 60.0 * u("azimuth"));
            put("target_valid", flag("target_valid", 0.9));
        }
        DeviceKind::Lidar => {
            put("points", (10_000.0 + 90_000.0 * u("points")).floor());
            put("max_range_cm", 5_000.0 + 15_000.0 * u("max_range"));
            put("scan_period_ms", 100.0);
        }
        DeviceKind::Gps => {
            put("lat_deg", 31.2 + 0.01 * u("lat"));
            put("lon_deg", 121.4 + 0.01 * u("lon"));
            put("alt_m", 4.0 + 10.0 * u("alt"));
        }
        DeviceKind::Imu => {
            put("accel_x_g", -0.5 + u("ax"));
            put("accel_y_g", -0.5 + u("ay"));
            put("accel_z_g", 1.0 + 0.05 * (u("az") - 0.5));
            put("yaw_rate_dps", -10.0 + 20.0 * u("yaw"));
        }
        DeviceKind::HdMap => {
            put("tile_id", (1000.0 * u("tile")).floor());
            let limits = [60.0, 80.0, 100.0, 120.0];
            put("speed_limit_kmh", limits[(u("limit") * 4.0) as usize % 4]);
            put("lane_count", 1.0 + (4.0 * u("lanes")).floor());
            put("highway", flag("highway", 0.5));
            put("in_tunnel", flag("tunnel", 0.2));
        }
        DeviceKind::V2x => {
            put("msg_id", (65_536.0 * u("msg")).floor());
            put("distance_km", 0.01 + 2.0 * u("distance"));
            put("rain", flag("rain", 0.3));
            put("fog", flag("fog", 0.1));
            put("road_works", flag("road_works", 0.1));
        }
    }
    SensorFrame {
        device_id: desc.device_id.clone(),
        kind: desc.kind,
        seq,
        timestamp_ns: desc.timestamp_ns(seq),
        raw,
    }
}
