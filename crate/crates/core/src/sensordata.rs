//! Synthetic sensor readings, the gateway datastore and query-scoped packages.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type SensorId = u32;

/// Per-entry wire size of one reading, including its JSON framing.
pub const DEFAULT_ENTRY_BYTES: u64 = 180;

/// Milliseconds since scenario start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn from_secs(secs: f64) -> Self {
        Self((secs * 1000.0).round() as u64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ms", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor_id: SensorId,
    pub timestamp: Timestamp,
    pub position: [f64; 2],
    pub value: f64,
}

impl SensorReading {
    fn key(&self) -> (SensorId, Timestamp) {
        (self.sensor_id, self.timestamp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireFormat {
    pub entry_bytes: u64,
    pub envelope_bytes: u64,
}

impl Default for WireFormat {
    fn default() -> Self {
        Self {
            entry_bytes: DEFAULT_ENTRY_BYTES,
            envelope_bytes: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("sensor {sensor}: reading at {got} is not after the last stored reading at {last}")]
    OutOfOrder {
        sensor: SensorId,
        last: Timestamp,
        got: Timestamp,
    },
    #[error("query window ends at {end}, after the store clock {clock}")]
    OpenWindow { end: Timestamp, clock: Timestamp },
    #[error("empty query window [{start}, {end})")]
    EmptyWindow { start: Timestamp, end: Timestamp },
    #[error("conflicting values for sensor {sensor} at {timestamp}")]
    Conflict {
        sensor: SensorId,
        timestamp: Timestamp,
    },
    #[error("reading dump I/O")]
    Io(#[from] std::io::Error),
    #[error("reading dump line {line}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

/// Half-open interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl TimeWindow {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self, DataError> {
        if start >= end {
            return Err(DataError::EmptyWindow { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorFilter {
    All,
    Ids(BTreeSet<SensorId>),
}

impl SensorFilter {
    pub fn matches(&self, id: SensorId) -> bool {
        match self {
            Self::All => true,
            Self::Ids(ids) => ids.contains(&id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub sensors: SensorFilter,
    pub window: TimeWindow,
    pub type_tag: String,
}

impl Query {
    pub fn new(sensors: SensorFilter, window: TimeWindow, type_tag: impl Into<String>) -> Self {
        Self {
            sensors,
            window,
            type_tag: type_tag.into(),
        }
    }

    /// Query over every sensor for `[start, end)`.
    pub fn all(start: Timestamp, end: Timestamp) -> Result<Self, DataError> {
        Ok(Self::new(SensorFilter::All, TimeWindow::new(start, end)?, "all"))
    }

    pub fn matches(&self, r: &SensorReading) -> bool {
        self.sensors.matches(r.sensor_id) && self.window.contains(r.timestamp)
    }
}

/// Readings sorted and duplicate-free on `(sensor_id, timestamp)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPackage {
    entries: Vec<SensorReading>,
    format: WireFormat,
}

impl DataPackage {
    pub fn empty(format: WireFormat) -> Self {
        Self {
            entries: Vec::new(),
            format,
        }
    }

    /// Sorts `entries` and collapses exact duplicates. Two readings with the
    /// same key and different contents are a conflict.
    pub fn from_entries(mut entries: Vec<SensorReading>, format: WireFormat) -> Result<Self, DataError> {
        entries.sort_by_key(SensorReading::key);
        let mut out: Vec<SensorReading> = Vec::with_capacity(entries.len());
        for r in entries {
            match out.last() {
                Some(last) if last.key() == r.key() => {
                    if *last != r {
                        return Err(conflict(&r));
                    }
                }
                _ => out.push(r),
            }
        }
        Ok(Self {
            entries: out,
            format,
        })
    }

    pub fn entries(&self) -> &[SensorReading] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<SensorReading> {
        self.entries
    }

    pub fn format(&self) -> WireFormat {
        self.format
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn byte_size(&self) -> u64 {
        self.entries.len() as u64 * self.format.entry_bytes + self.format.envelope_bytes
    }

    /// Payload as exported: a JSON array of entry records.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.entries).expect("readings serialize")
    }
}

fn conflict(r: &SensorReading) -> DataError {
    DataError::Conflict {
        sensor: r.sensor_id,
        timestamp: r.timestamp,
    }
}

/// Sorted, duplicate-free union of two packages. The result uses `a`'s wire
/// format.
pub fn package_union(a: &DataPackage, b: &DataPackage) -> Result<DataPackage, DataError> {
    let (x, y) = (&a.entries, &b.entries);
    let mut out = Vec::with_capacity(x.len() + y.len());
    let (mut i, mut j) = (0, 0);
    while i < x.len() && j < y.len() {
        match x[i].key().cmp(&y[j].key()) {
            std::cmp::Ordering::Less => {
                out.push(x[i].clone());
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(y[j].clone());
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                if x[i] != y[j] {
                    return Err(conflict(&x[i]));
                }
                out.push(x[i].clone());
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&x[i..]);
    out.extend_from_slice(&y[j..]);
    Ok(DataPackage {
        entries: out,
        format: a.format,
    })
}

/// The schedule on which each sensor reports: sensor `s` emits `counts[s]`
/// readings at `phases[s] + k * period`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingGrid {
    pub period_ms: u64,
    pub phases: Vec<u64>,
    pub counts: Vec<u64>,
}

impl SamplingGrid {
    pub fn sensor_count(&self) -> u32 {
        self.phases.len() as u32
    }

    pub fn sensors(&self) -> impl Iterator<Item = SensorId> {
        0..self.sensor_count()
    }

    /// Grid timestamps of `sensor` inside `window`, ascending.
    pub fn timestamps_in(&self, sensor: SensorId, window: TimeWindow) -> impl Iterator<Item = Timestamp> + '_ {
        let (phase, count) = match (self.phases.get(sensor as usize), self.counts.get(sensor as usize)) {
            (Some(&p), Some(&c)) => (p, c),
            _ => (0, 0),
        };
        let period = self.period_ms;
        let first = if window.start.0 <= phase {
            0
        } else {
            (window.start.0 - phase).div_ceil(period)
        };
        (first..count)
            .map(move |k| Timestamp(phase + k * period))
            .take_while(move |t| *t < window.end)
    }
}

/// Seeded generator of uniformly spaced readings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorGenerator {
    pub sensors: u32,
    /// Updates per minute per sensor.
    pub rate_per_min: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl SensorGenerator {
    pub fn period_ms(&self) -> u64 {
        (60_000.0 / self.rate_per_min).round() as u64
    }

    pub fn readings_per_sensor(&self) -> u64 {
        (self.duration_s * self.rate_per_min / 60.0 + 1e-9).floor() as u64
    }

    pub fn grid(&self) -> SamplingGrid {
        let period = self.period_ms();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let phases = (0..self.sensors).map(|_| rng.gen_range(0..period)).collect();
        SamplingGrid {
            period_ms: period,
            phases,
            counts: vec![self.readings_per_sensor(); self.sensors as usize],
        }
    }

    /// All readings, ordered by arrival time (timestamp, then sensor id).
    pub fn readings(&self) -> Vec<SensorReading> {
        let grid = self.grid();
        // separate stream so the grid does not depend on value draws
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_da7a);
        let mut out = Vec::with_capacity(self.sensors as usize * self.readings_per_sensor() as usize);
        for s in grid.sensors() {
            let position = [rng.gen_range(0.0..1000.0), rng.gen_range(0.0..1000.0)];
            let phase = grid.phases[s as usize];
            for k in 0..grid.counts[s as usize] {
                out.push(SensorReading {
                    sensor_id: s,
                    timestamp: Timestamp(phase + k * grid.period_ms),
                    position,
                    value: rng.gen_range(0.0..100.0),
                });
            }
        }
        out.sort_by_key(|r| (r.timestamp, r.sensor_id));
        out
    }
}

/// Readings of `n_sensors` sensors reporting `rate` times a minute for
/// `duration` seconds.
pub fn generate_readings(n_sensors: u32, rate: f64, duration: f64, seed: u64) -> Vec<SensorReading> {
    SensorGenerator {
        sensors: n_sensors,
        rate_per_min: rate,
        duration_s: duration,
        seed,
    }
    .readings()
}

/// The gateway's append-only per-sensor datastore.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReadingStore {
    series: BTreeMap<SensorId, Vec<SensorReading>>,
    clock: Timestamp,
    format: WireFormat,
}

impl ReadingStore {
    pub fn new(format: WireFormat) -> Self {
        Self {
            series: BTreeMap::new(),
            clock: Timestamp(0),
            format,
        }
    }

    pub fn format(&self) -> WireFormat {
        self.format
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    /// Moves the store clock forward. Windows ending at or before the clock
    /// are closed and may be queried.
    pub fn advance_clock(&mut self, to: Timestamp) {
        self.clock = self.clock.max(to);
    }

    pub fn ingest(&mut self, r: SensorReading) -> Result<(), DataError> {
        let series = self.series.entry(r.sensor_id).or_default();
        if let Some(last) = series.last() {
            if r.timestamp <= last.timestamp {
                return Err(DataError::OutOfOrder {
                    sensor: r.sensor_id,
                    last: last.timestamp,
                    got: r.timestamp,
                });
            }
        }
        self.clock = self.clock.max(r.timestamp);
        series.push(r);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sensor_len(&self, sensor: SensorId) -> usize {
        self.series.get(&sensor).map_or(0, Vec::len)
    }

    fn select<'a>(&'a self, q: &'a Query) -> impl Iterator<Item = &'a SensorReading> + 'a {
        let sensors: Box<dyn Iterator<Item = &Vec<SensorReading>>> = match &q.sensors {
            SensorFilter::All => Box::new(self.series.values()),
            SensorFilter::Ids(ids) => Box::new(ids.iter().filter_map(|id| self.series.get(id))),
        };
        sensors.flat_map(move |series| {
            let lo = series.partition_point(|r| r.timestamp < q.window.start);
            let hi = series.partition_point(|r| r.timestamp < q.window.end);
            series[lo..hi].iter()
        })
    }

    /// Readings matching all of `queries`' union, as a package, together
    /// with its creation time at `k_create` seconds per entry.
    pub fn build_package_many(&self, queries: &[Query], k_create: f64) -> Result<(DataPackage, f64), DataError> {
        for q in queries {
            if q.window.end > self.clock {
                return Err(DataError::OpenWindow {
                    end: q.window.end,
                    clock: self.clock,
                });
            }
        }
        let entries: Vec<SensorReading> = queries.iter().flat_map(|q| self.select(q)).cloned().collect();
        let package = DataPackage::from_entries(entries, self.format)?;
        let creation = k_create * package.len() as f64;
        Ok((package, creation))
    }

    pub fn build_package(&self, q: &Query, k_create: f64) -> Result<(DataPackage, f64), DataError> {
        self.build_package_many(std::slice::from_ref(q), k_create)
    }

    /// Writes every reading as one JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), DataError> {
        let mut all: Vec<&SensorReading> = self.series.values().flatten().collect();
        all.sort_by_key(|r| (r.timestamp, r.sensor_id));
        for r in all {
            serde_json::to_writer(&mut w, r).map_err(|e| DataError::Json { line: 0, source: e })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Rebuilds a store from a line-delimited JSON dump.
    pub fn read_jsonl<R: BufRead>(r: R, format: WireFormat) -> Result<Self, DataError> {
        let mut store = Self::new(format);
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let reading: SensorReading =
                serde_json::from_str(&line).map_err(|e| DataError::Json { line: i + 1, source: e })?;
            store.ingest(reading)?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reading(sensor: SensorId, t: u64, value: f64) -> SensorReading {
        SensorReading {
            sensor_id: sensor,
            timestamp: Timestamp(t),
            position: [0.0, 0.0],
            value,
        }
    }

    fn reference_store() -> ReadingStore {
        let mut store = ReadingStore::new(WireFormat::default());
        for r in generate_readings(1000, 4.0, 360.0, 7) {
            store.ingest(r).unwrap();
        }
        store.advance_clock(Timestamp::from_secs(360.0));
        store
    }

    #[test]
    fn thousand_sensors_six_minutes() {
        let readings = generate_readings(1000, 4.0, 360.0, 1);
        assert_eq!(readings.len(), 24_000);
        let mut per_sensor = BTreeMap::new();
        for r in &readings {
            *per_sensor.entry(r.sensor_id).or_insert(0) += 1;
        }
        assert_eq!(per_sensor.len(), 1000);
        assert!(per_sensor.values().all(|&c| c == 24));
        assert!(readings.iter().all(|r| r.timestamp < Timestamp::from_secs(360.0)));
    }

    #[test]
    fn zero_duration_is_empty() {
        assert!(generate_readings(1, 4.0, 0.0, 3).is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_readings(20, 4.0, 120.0, 9), generate_readings(20, 4.0, 120.0, 9));
        assert_ne!(generate_readings(20, 4.0, 120.0, 9), generate_readings(20, 4.0, 120.0, 10));
    }

    #[test]
    fn ingest_counts_and_order() {
        let mut store = ReadingStore::new(WireFormat::default());
        store.ingest(reading(1, 10, 0.0)).unwrap();
        assert_eq!(store.len(), 1);
        let err = store.ingest(reading(1, 5, 0.0)).unwrap_err();
        assert!(matches!(err, DataError::OutOfOrder { sensor: 1, .. }));

        let store = reference_store();
        assert!((0..1000).all(|s| store.sensor_len(s) == 24));
    }

    #[test]
    fn full_query_package() {
        let store = reference_store();
        let q = Query::all(Timestamp(0), Timestamp::from_secs(360.0)).unwrap();
        let (p, creation) = store.build_package(&q, 0.56 / 24_000.0).unwrap();
        assert_eq!(p.len(), 24_000);
        assert_eq!(p.byte_size(), 4_320_000);
        assert!((creation - 0.56).abs() < 1e-12);
    }

    #[test]
    fn empty_match_and_open_window() {
        let store = reference_store();
        let q = Query::new(
            SensorFilter::Ids([5000].into()),
            TimeWindow::new(Timestamp(0), Timestamp(1000)).unwrap(),
            "none",
        );
        let (p, _) = store.build_package(&q, 1.0).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.byte_size(), 0);

        let q = Query::all(Timestamp(0), Timestamp::from_secs(400.0)).unwrap();
        assert!(matches!(store.build_package(&q, 1.0), Err(DataError::OpenWindow { .. })));
        assert!(Query::all(Timestamp(5), Timestamp(5)).is_err());
    }

    #[test]
    fn closed_windows_are_stable() {
        let mut store = ReadingStore::new(WireFormat::default());
        for t in 0..10 {
            store.ingest(reading(0, t * 100, t as f64)).unwrap();
        }
        let q = Query::all(Timestamp(0), Timestamp(500)).unwrap();
        let before = store.build_package(&q, 0.0).unwrap();
        for t in 10..20 {
            store.ingest(reading(0, t * 100, t as f64)).unwrap();
        }
        assert_eq!(store.build_package(&q, 0.0).unwrap(), before);
    }

    #[test]
    fn union_identity_idempotence_conflict() {
        let f = WireFormat::default();
        let p = DataPackage::from_entries(vec![reading(1, 1, 1.0), reading(0, 2, 2.0)], f).unwrap();
        assert_eq!(package_union(&p, &DataPackage::empty(f)).unwrap(), p);
        assert_eq!(package_union(&p, &p).unwrap(), p);
        let q = DataPackage::from_entries(vec![reading(1, 1, 9.0)], f).unwrap();
        assert!(matches!(package_union(&p, &q), Err(DataError::Conflict { sensor: 1, .. })));
    }

    #[test]
    fn jsonl_round_trip() {
        let store = reference_store();
        let mut buf = Vec::new();
        store.write_jsonl(&mut buf).unwrap();
        let mut back = ReadingStore::read_jsonl(buf.as_slice(), store.format()).unwrap();
        back.advance_clock(store.clock());
        assert_eq!(back, store);
    }

    #[test]
    fn grid_matches_generated_timestamps() {
        let gen = SensorGenerator {
            sensors: 5,
            rate_per_min: 4.0,
            duration_s: 120.0,
            seed: 4,
        };
        let grid = gen.grid();
        let window = TimeWindow::new(Timestamp(7_000), Timestamp(61_000)).unwrap();
        for s in grid.sensors() {
            let expected: Vec<Timestamp> = gen
                .readings()
                .into_iter()
                .filter(|r| r.sensor_id == s && window.contains(r.timestamp))
                .map(|r| r.timestamp)
                .collect();
            assert_eq!(grid.timestamps_in(s, window).collect::<Vec<_>>(), expected);
        }
    }

    fn arb_package() -> impl Strategy<Value = DataPackage> {
        // values are a function of the key so random packages never conflict
        proptest::collection::vec((0u32..6, 0u64..30), 0..40).prop_map(|keys| {
            let entries = keys
                .into_iter()
                .map(|(s, t)| reading(s, t, (s as u64 * 100 + t) as f64))
                .collect();
            DataPackage::from_entries(entries, WireFormat::default()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn union_is_a_semilattice(a in arb_package(), b in arb_package(), c in arb_package()) {
            let ab = package_union(&a, &b).unwrap();
            prop_assert_eq!(&ab, &package_union(&b, &a).unwrap());
            prop_assert_eq!(
                package_union(&ab, &c).unwrap(),
                package_union(&a, &package_union(&b, &c).unwrap()).unwrap()
            );
            prop_assert_eq!(package_union(&ab, &ab).unwrap(), ab.clone());
            prop_assert_eq!(ab.byte_size(), ab.len() as u64 * 180);
        }

        #[test]
        fn split_and_merge_restores_package(p in arb_package(), mask in proptest::collection::vec(any::<bool>(), 40)) {
            let (left, right): (Vec<_>, Vec<_>) = p
                .entries()
                .iter()
                .cloned()
                .enumerate()
                .partition(|(i, _)| mask[*i % mask.len()]);
            let f = p.format();
            let left = DataPackage::from_entries(left.into_iter().map(|x| x.1).collect(), f).unwrap();
            let right = DataPackage::from_entries(right.into_iter().map(|x| x.1).collect(), f).unwrap();
            prop_assert_eq!(package_union(&left, &right).unwrap(), p);
        }
    }
}
