//! Space-time observations: ingestion, normalization and train/test splits.
//!
//! A [`Dataset`] is an ordered list of [`Observation`]s, each a scalar value
//! measured at a [`SpaceTimePoint`] `(x, y, t)`. Stations are identified by an
//! explicit integer id column when one is present and by their spatial
//! coordinates otherwise.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One input location: two spatial coordinates and a time coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl SpaceTimePoint {
    pub fn new(x: f64, y: f64, t: f64) -> Self {
        SpaceTimePoint { x, y, t }
    }

    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.t]
    }

    pub fn from_coords(c: [f64; 3]) -> Self {
        SpaceTimePoint::new(c[0], c[1], c[2])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.t.is_finite()
    }

    fn key(&self) -> [u64; 3] {
        // +0.0 folds -0.0 onto 0.0 so both hash identically
        [
            (self.x + 0.0).to_bits(),
            (self.y + 0.0).to_bits(),
            (self.t + 0.0).to_bits(),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: SpaceTimePoint,
    pub value: f64,
}

impl Observation {
    pub fn new(point: SpaceTimePoint, value: f64) -> Self {
        Observation { point, value }
    }
}

/// Affine value transform recorded by [`normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub stddev: f64,
}

impl Normalization {
    pub fn to_normalized(&self, v: f64) -> f64 {
        (v - self.mean) / self.stddev
    }

    pub fn to_original(&self, v: f64) -> f64 {
        v * self.stddev + self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    station_ids: Option<Vec<i64>>,
    normalization: Option<Normalization>,
}

impl Dataset {
    /// Validates and wraps a list of observations.
    pub fn new(observations: Vec<Observation>, station_ids: Option<Vec<i64>>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        if let Some(ids) = &station_ids {
            if ids.len() != observations.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} station ids for {} observations",
                    ids.len(),
                    observations.len()
                )));
            }
        }
        let mut seen = HashSet::with_capacity(observations.len());
        for (i, obs) in observations.iter().enumerate() {
            let line = i + 1;
            if !obs.point.is_finite() {
                return Err(Error::NonFinite {
                    line,
                    field: "coordinate",
                });
            }
            if !obs.value.is_finite() {
                return Err(Error::NonFinite {
                    line,
                    field: "value",
                });
            }
            if !seen.insert(obs.point.key()) {
                let p = obs.point;
                return Err(Error::DuplicatePoint {
                    line,
                    x: p.x,
                    y: p.y,
                    t: p.t,
                });
            }
        }
        Ok(Dataset {
            observations,
            station_ids,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn station_ids(&self) -> Option<&[i64]> {
        self.station_ids.as_deref()
    }

    pub fn normalization(&self) -> Option<Normalization> {
        self.normalization
    }

    pub fn points(&self) -> Vec<SpaceTimePoint> {
        self.observations.iter().map(|o| o.point).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.value).collect()
    }

    /// Values in the units of the source file, undoing any normalization.
    pub fn original_values(&self) -> Vec<f64> {
        match self.normalization {
            Some(n) => self
                .observations
                .iter()
                .map(|o| n.to_original(o.value))
                .collect(),
            None => self.values(),
        }
    }

    /// Per-observation station key: the explicit id when present, otherwise
    /// the rank of the observation's `(x, y)` among the sorted distinct
    /// spatial coordinates.
    pub fn station_keys(&self) -> Vec<i64> {
        if let Some(ids) = &self.station_ids {
            return ids.clone();
        }
        let mut coords: Vec<(f64, f64)> = self
            .observations
            .iter()
            .map(|o| (o.point.x + 0.0, o.point.y + 0.0))
            .collect();
        coords.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        coords.dedup();
        self.observations
            .iter()
            .map(|o| {
                let c = (o.point.x + 0.0, o.point.y + 0.0);
                coords
                    .binary_search_by(|p| p.0.total_cmp(&c.0).then(p.1.total_cmp(&c.1)))
                    .expect("coordinate present") as i64
            })
            .collect()
    }

    /// Distinct station keys in ascending order.
    pub fn stations(&self) -> Vec<i64> {
        let mut keys = self.station_keys();
        keys.sort_unstable();
        keys.dedup();
        keys
    }

    /// Distinct time coordinates in ascending order.
    pub fn times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.observations.iter().map(|o| o.point.t + 0.0).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Axis-aligned bounding box `(min, max)` of all points.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        bounding_box(&self.points())
    }

    /// Observations at the given indices, keeping station ids and normalization.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("subset is empty".into()));
        }
        Ok(Dataset {
            observations: indices.iter().map(|&i| self.observations[i]).collect(),
            station_ids: self
                .station_ids
                .as_ref()
                .map(|ids| indices.iter().map(|&i| ids[i]).collect()),
            normalization: self.normalization,
        })
    }

    /// Row count plus a SHA-256 over the bit patterns of every row.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (i, o) in self.observations.iter().enumerate() {
            for v in [o.point.x, o.point.y, o.point.t, o.value] {
                hasher.update(v.to_bits().to_le_bytes());
            }
            if let Some(ids) = &self.station_ids {
                hasher.update(ids[i].to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        format!("{}:{}", self.len(), hex)
    }
}

pub fn bounding_box(points: &[SpaceTimePoint]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for (d, c) in p.coords().into_iter().enumerate() {
            lo[d] = lo[d].min(c);
            hi[d] = hi[d].max(c);
        }
    }
    (lo, hi)
}

/// CSV column names. Defaults are `x`, `y`, `t`, `value` and no station column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub x: String,
    pub y: String,
    pub t: String,
    pub value: String,
    pub station: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            x: "x".into(),
            y: "y".into(),
            t: "t".into(),
            value: "value".into(),
            station: None,
        }
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, columns)
}

pub fn read_csv<R: Read>(reader: R, columns: &ColumnMap) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column '{name}'"),
            })
    };
    let ix = find(&columns.x)?;
    let iy = find(&columns.y)?;
    let it = find(&columns.t)?;
    let iv = find(&columns.value)?;
    let istation = columns.station.as_deref().map(find).transpose()?;

    let mut observations = Vec::new();
    let mut station_ids = istation.map(|_| Vec::new());
    for (row, record) in rdr.records().enumerate() {
        // header is line 1
        let line = row + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |i: usize, name: &str| -> Result<f64> {
            let raw = record.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field '{name}'"),
            })?;
            raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse '{raw}' as a number in column '{name}'"),
            })
        };
        let point = SpaceTimePoint::new(
            field(ix, &columns.x)?,
            field(iy, &columns.y)?,
            field(it, &columns.t)?,
        );
        if !point.is_finite() {
            return Err(Error::NonFinite {
                line,
                field: "coordinate",
            });
        }
        let value = field(iv, &columns.value)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                line,
                field: "value",
            });
        }
        if let (Some(i), Some(ids)) = (istation, station_ids.as_mut()) {
            let raw = record.get(i).unwrap_or("");
            let id = raw.parse::<i64>().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse station id '{raw}'"),
            })?;
            ids.push(id);
        }
        observations.push(Observation::new(point, value));
    }
    // report duplicates with file line numbers
    Dataset::new(observations, station_ids).map_err(|e| match e {
        Error::DuplicatePoint { line, x, y, t } => Error::DuplicatePoint {
            line: line + 1,
            x,
            y,
            t,
        },
        other => other,
    })
}

/// Writes the stored observations in the layout [`read_csv`] accepts.
pub fn write_csv<W: Write>(data: &Dataset, columns: &ColumnMap, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        columns.x.as_str(),
        columns.y.as_str(),
        columns.t.as_str(),
        columns.value.as_str(),
    ];
    let with_station = columns.station.is_some() && data.station_ids.is_some();
    if with_station {
        header.push(columns.station.as_deref().unwrap());
    }
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (i, o) in data.observations.iter().enumerate() {
        let mut row = vec![
            o.point.x.to_string(),
            o.point.y.to_string(),
            o.point.t.to_string(),
            o.value.to_string(),
        ];
        if with_station {
            row.push(data.station_ids.as_ref().unwrap()[i].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

pub fn export_csv(data: &Dataset, columns: &ColumnMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(data, columns, file)
}

/// Rescales values to zero mean and unit (population) standard deviation.
///
/// Normalizing an already-normalized dataset composes the transforms, so
/// [`denormalize`] always returns to the source units.
pub fn normalize(data: &Dataset) -> Result<Dataset> {
    let values = data.values();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let stddev = var.sqrt();
    if !(stddev > 0.0) || stddev <= f64::EPSILON * mean.abs() {
        return Err(Error::ZeroVariance);
    }
    let step = Normalization { mean, stddev };
    let composed = match data.normalization {
        Some(prev) => Normalization {
            mean: prev.to_original(mean),
            stddev: prev.stddev * stddev,
        },
        None => step,
    };
    Ok(Dataset {
        observations: data
            .observations
            .iter()
            .map(|o| Observation::new(o.point, step.to_normalized(o.value)))
            .collect(),
        station_ids: data.station_ids.clone(),
        normalization: Some(composed),
    })
}

pub fn denormalize(data: &Dataset) -> Dataset {
    let Some(n) = data.normalization else {
        return data.clone();
    };
    Dataset {
        observations: data
            .observations
            .iter()
            .map(|o| Observation::new(o.point, n.to_original(o.value)))
            .collect(),
        station_ids: data.station_ids.clone(),
        normalization: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum SplitRule {
    /// `k` training stations at even strides through the sorted station list;
    /// the rest are test stations.
    UniformByStation { k: usize },
    /// Listed stations train, the rest test.
    ByStationIds { train: Vec<i64> },
    /// Observations with `t` in `train` (inclusive) train. Test takes the
    /// remaining observations, restricted to `test` when given.
    ByTimeRange {
        train: (f64, f64),
        #[serde(default)]
        test: Option<(f64, f64)>,
    },
}

pub fn split_train_test(data: &Dataset, rule: &SplitRule) -> Result<(Dataset, Dataset)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    match rule {
        SplitRule::UniformByStation { k } => {
            let stations = data.stations();
            if *k == 0 || *k > stations.len() {
                return Err(Error::InvalidArgument(format!(
                    "cannot pick {k} training stations out of {}",
                    stations.len()
                )));
            }
            let chosen: HashSet<i64> = (0..*k)
                .map(|i| stations[i * stations.len() / k])
                .collect();
            for (i, key) in data.station_keys().into_iter().enumerate() {
                if chosen.contains(&key) {
                    train.push(i);
                } else {
                    test.push(i);
                }
            }
        }
        SplitRule::ByStationIds { train: ids } => {
            let stations = data.stations();
            for id in ids {
                if stations.binary_search(id).is_err() {
                    return Err(Error::UnknownStation(*id));
                }
            }
            let chosen: HashSet<i64> = ids.iter().copied().collect();
            for (i, key) in data.station_keys().into_iter().enumerate() {
                if chosen.contains(&key) {
                    train.push(i);
                } else {
                    test.push(i);
                }
            }
        }
        SplitRule::ByTimeRange {
            train: (t0, t1),
            test: test_range,
        } => {
            for (i, o) in data.observations.iter().enumerate() {
                let t = o.point.t;
                if t >= *t0 && t <= *t1 {
                    train.push(i);
                } else if test_range.map_or(true, |(a, b)| t >= a && t <= b) {
                    test.push(i);
                }
            }
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "split leaves {} training and {} test observations",
            train.len(),
            test.len()
        )));
    }
    Ok((data.subset(&train)?, data.subset(&test)?))
}

/// Rectangular stations x timesteps view of a dataset.
#[derive(Debug, Clone)]
pub struct StationGrid {
    /// Station keys in ascending order.
    pub stations: Vec<i64>,
    /// Spatial coordinates `(x, y)` per station.
    pub locations: Vec<(f64, f64)>,
    /// Distinct times in ascending order.
    pub times: Vec<f64>,
    /// `index[s][k]` is the observation index of station `s` at `times[k]`.
    pub index: Vec<Vec<usize>>,
}

impl StationGrid {
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let keys = data.station_keys();
        let times = data.times();
        let mut by_station: BTreeMap<i64, Vec<Option<usize>>> = BTreeMap::new();
        for (i, (key, o)) in keys.iter().zip(data.observations()).enumerate() {
            let slot = by_station
                .entry(*key)
                .or_insert_with(|| vec![None; times.len()]);
            let k = times
                .binary_search_by(|t| t.total_cmp(&(o.point.t + 0.0)))
                .expect("time present");
            if slot[k].is_some() {
                return Err(Error::NonRectangular(format!(
                    "station {key} has two observations at t = {}",
                    o.point.t
                )));
            }
            slot[k] = Some(i);
        }
        let mut stations = Vec::with_capacity(by_station.len());
        let mut locations = Vec::with_capacity(by_station.len());
        let mut index = Vec::with_capacity(by_station.len());
        for (key, slots) in by_station {
            let mut row = Vec::with_capacity(slots.len());
            for (k, s) in slots.into_iter().enumerate() {
                match s {
                    Some(i) => row.push(i),
                    None => {
                        return Err(Error::NonRectangular(format!(
                            "station {key} has no observation at t = {}",
                            times[k]
                        )))
                    }
                }
            }
            let p = data.observations()[row[0]].point;
            stations.push(key);
            locations.push((p.x, p.y));
            index.push(row);
        }
        Ok(StationGrid {
            stations,
            locations,
            times,
            index,
        })
    }

    pub fn n_stations(&self) -> usize {
        self.stations.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }
}
