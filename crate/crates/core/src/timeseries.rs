//! Univariate KPI time series: ingestion, validation, gap filling and
//! anomaly segment extraction.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Interval assumed for series with fewer than two points, where no
/// consecutive difference exists to infer one from.
pub const FALLBACK_INTERVAL: i64 = 60;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(i64),
    #[error("series is empty")]
    EmptySeries,
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("timestamps are not strictly increasing at index {0}")]
    Unordered(usize),
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("value at index {0} is not finite")]
    NonFinite(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Column names used when reading or writing CSV files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub timestamp: String,
    pub value: String,
    pub label: String,
    /// Column holding the KPI identifier in multi-series files.
    pub series_id: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            value: "value".into(),
            label: "label".into(),
            series_id: "KPI ID".into(),
        }
    }
}

/// A validated, timestamped univariate sequence.
///
/// Immutable after construction; transformations build new instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    id: String,
    timestamps: Vec<i64>,
    values: Vec<f64>,
    labels: Option<Vec<u8>>,
    /// `true` for points fabricated by [`TimeSeries::fill_gaps`].
    synthetic: Vec<bool>,
    sampling_interval: i64,
}

impl TimeSeries {
    /// Builds a series from rows already sorted by timestamp.
    pub fn new(
        id: impl Into<String>,
        timestamps: Vec<i64>,
        values: Vec<f64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self, SeriesError> {
        let n = timestamps.len();
        let synthetic = vec![false; n];
        Self::from_parts(id.into(), timestamps, values, labels, synthetic)
    }

    fn from_parts(
        id: String,
        timestamps: Vec<i64>,
        values: Vec<f64>,
        labels: Option<Vec<u8>>,
        synthetic: Vec<bool>,
    ) -> Result<Self, SeriesError> {
        let n = timestamps.len();
        if n == 0 {
            return Err(SeriesError::EmptySeries);
        }
        if values.len() != n {
            return Err(SeriesError::LengthMismatch {
                what: "values",
                got: values.len(),
                expected: n,
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(SeriesError::LengthMismatch {
                    what: "labels",
                    got: labels.len(),
                    expected: n,
                });
            }
            if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
                return Err(SeriesError::InvalidLabel(bad));
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite(i));
        }
        for i in 1..n {
            if timestamps[i] == timestamps[i - 1] {
                return Err(SeriesError::DuplicateTimestamp(timestamps[i]));
            }
            if timestamps[i] < timestamps[i - 1] {
                return Err(SeriesError::Unordered(i));
            }
        }
        let sampling_interval = modal_interval(&timestamps);
        Ok(Self {
            id,
            timestamps,
            values,
            labels,
            synthetic,
            sampling_interval,
        })
    }

    /// Builds a series from unordered rows, sorting by timestamp.
    pub fn from_rows(id: impl Into<String>, mut rows: Vec<(i64, f64, Option<u8>)>) -> Result<Self, SeriesError> {
        if rows.is_empty() {
            return Err(SeriesError::EmptySeries);
        }
        rows.sort_by_key(|r| r.0);
        let has_labels = rows.iter().all(|r| r.2.is_some());
        let timestamps = rows.iter().map(|r| r.0).collect();
        let values = rows.iter().map(|r| r.1).collect();
        let labels = has_labels.then(|| rows.iter().map(|r| r.2.unwrap_or(0)).collect());
        Self::new(id, timestamps, values, labels)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn synthetic(&self) -> &[bool] {
        &self.synthetic
    }

    pub fn is_synthetic(&self, i: usize) -> bool {
        self.synthetic[i]
    }

    pub fn sampling_interval(&self) -> i64 {
        self.sampling_interval
    }

    /// Number of points covering one day at the sampling interval.
    pub fn points_per_day(&self) -> usize {
        ((86_400 / self.sampling_interval.max(1)) as usize).max(1)
    }

    /// Indices of real (non gap-filled) points.
    pub fn real_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.synthetic[i]).collect()
    }

    /// Returns a copy with the same data but without ground-truth labels.
    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    /// Sub-series over `range` (half-open), keeping flags and labels.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self, SeriesError> {
        let end = range.end.min(self.len());
        let start = range.start.min(end);
        let mut out = Self::from_parts(
            self.id.clone(),
            self.timestamps[start..end].to_vec(),
            self.values[start..end].to_vec(),
            self.labels.as_ref().map(|l| l[start..end].to_vec()),
            self.synthetic[start..end].to_vec(),
        )?;
        // a short slice should not forget its parent's cadence
        if out.len() < 2 {
            out.sampling_interval = self.sampling_interval;
        }
        Ok(out)
    }

    /// Splits into a training head and a test tail at `at`.
    pub fn split_at(&self, at: usize) -> Result<(Self, Self), SeriesError> {
        Ok((self.slice(0..at)?, self.slice(at..self.len())?))
    }

    /// Inserts every missing multiple of the sampling interval between the
    /// first and last timestamp. Inserted values are linearly interpolated,
    /// labelled 0 and flagged as synthetic.
    pub fn fill_gaps(&self) -> Self {
        let step = self.sampling_interval;
        let mut timestamps = Vec::with_capacity(self.len());
        let mut values = Vec::with_capacity(self.len());
        let mut labels = self.labels.as_ref().map(|_| Vec::with_capacity(self.len()));
        let mut synthetic = Vec::with_capacity(self.len());

        for i in 0..self.len() {
            if i > 0 {
                let (t0, t1) = (self.timestamps[i - 1], self.timestamps[i]);
                let (v0, v1) = (self.values[i - 1], self.values[i]);
                let mut t = t0 + step;
                while t < t1 {
                    let frac = (t - t0) as f64 / (t1 - t0) as f64;
                    timestamps.push(t);
                    values.push(v0 + frac * (v1 - v0));
                    if let Some(l) = labels.as_mut() {
                        l.push(0);
                    }
                    synthetic.push(true);
                    t += step;
                }
            }
            timestamps.push(self.timestamps[i]);
            values.push(self.values[i]);
            if let (Some(l), Some(src)) = (labels.as_mut(), self.labels.as_ref()) {
                l.push(src[i]);
            }
            synthetic.push(self.synthetic[i]);
        }

        Self {
            id: self.id.clone(),
            timestamps,
            values,
            labels,
            synthetic,
            sampling_interval: step,
        }
    }

    /// Writes `timestamp,value[,label]` with the default column names.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SeriesError> {
        self.write_csv_with(writer, &CsvSchema::default())
    }

    pub fn write_csv_with<W: Write>(&self, writer: W, schema: &CsvSchema) -> Result<(), SeriesError> {
        let mut w = csv::Writer::from_writer(writer);
        match &self.labels {
            Some(_) => w.write_record([&schema.timestamp, &schema.value, &schema.label])?,
            None => w.write_record([&schema.timestamp, &schema.value])?,
        }
        for i in 0..self.len() {
            let ts = self.timestamps[i].to_string();
            let v = self.values[i].to_string();
            match &self.labels {
                Some(l) => w.write_record([ts, v, l[i].to_string()])?,
                None => w.write_record([ts, v])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), SeriesError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn modal_interval(timestamps: &[i64]) -> i64 {
    if timestamps.len() < 2 {
        return FALLBACK_INTERVAL;
    }
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for pair in timestamps.windows(2) {
        *counts.entry(pair[1] - pair[0]).or_default() += 1;
    }
    // smallest difference wins ties (BTreeMap iterates ascending)
    let mut best = (0usize, FALLBACK_INTERVAL);
    for (diff, count) in counts {
        if count > best.0 {
            best = (count, diff);
        }
    }
    best.1
}

struct Columns {
    timestamp: usize,
    value: usize,
    label: Option<usize>,
    series_id: Option<usize>,
}

fn resolve_columns(headers: &csv::StringRecord, schema: &CsvSchema) -> Result<Columns, SeriesError> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    Ok(Columns {
        timestamp: find(&schema.timestamp).ok_or_else(|| SeriesError::MissingColumn(schema.timestamp.clone()))?,
        value: find(&schema.value).ok_or_else(|| SeriesError::MissingColumn(schema.value.clone()))?,
        label: find(&schema.label),
        series_id: find(&schema.series_id),
    })
}

fn parse_row(record: &csv::StringRecord, row: usize, cols: &Columns) -> Result<(i64, f64, Option<u8>), SeriesError> {
    let field = |idx: usize| {
        record.get(idx).map(str::trim).ok_or_else(|| SeriesError::MalformedRow {
            row,
            reason: format!("missing field {idx}"),
        })
    };
    let ts_raw = field(cols.timestamp)?;
    let timestamp = ts_raw
        .parse::<i64>()
        .or_else(|_| {
            // some exports write integral timestamps as floats
            ts_raw
                .parse::<f64>()
                .ok()
                .filter(|f| f.fract() == 0.0 && f.is_finite())
                .map(|f| f as i64)
                .ok_or(())
        })
        .map_err(|_| SeriesError::MalformedRow {
            row,
            reason: format!("timestamp `{ts_raw}` is not an integer"),
        })?;
    let v_raw = field(cols.value)?;
    let value = v_raw
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| SeriesError::MalformedRow {
            row,
            reason: format!("value `{v_raw}` is not a finite number"),
        })?;
    let label = match cols.label {
        Some(idx) => {
            let raw = field(idx)?;
            match raw {
                "0" => Some(0),
                "1" => Some(1),
                other => {
                    return Err(SeriesError::MalformedRow {
                        row,
                        reason: format!("label `{other}` is not 0 or 1"),
                    })
                }
            }
        }
        None => None,
    };
    Ok((timestamp, value, label))
}

/// Reads a single series. Rows may be in any order; duplicates are rejected.
pub fn read_csv<R: Read>(reader: R, id: &str, schema: &CsvSchema) -> Result<TimeSeries, SeriesError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let cols = resolve_columns(rdr.headers()?, schema)?;
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        rows.push(parse_row(&record?, i + 1, &cols)?);
    }
    TimeSeries::from_rows(id, rows)
}

/// Loads a single series from a CSV file; the file stem becomes the id.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TimeSeries, SeriesError> {
    let path = path.as_ref();
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), &id, schema)
}

/// Reads a multi-KPI file (AIOps competition layout) into one series per KPI
/// id, ordered by id.
pub fn read_multi_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Vec<TimeSeries>, SeriesError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let cols = resolve_columns(rdr.headers()?, schema)?;
    let id_col = cols
        .series_id
        .ok_or_else(|| SeriesError::MissingColumn(schema.series_id.clone()))?;
    let mut groups: HashMap<String, Vec<(i64, f64, Option<u8>)>> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = parse_row(&record, i + 1, &cols)?;
        let id = record.get(id_col).unwrap_or_default().trim().to_string();
        groups.entry(id).or_default().push(row);
    }
    if groups.is_empty() {
        return Err(SeriesError::EmptySeries);
    }
    let mut ids: Vec<String> = groups.keys().cloned().collect();
    ids.sort();
    ids.into_iter()
        .map(|id| {
            let rows = groups.remove(&id).unwrap_or_default();
            TimeSeries::from_rows(id, rows)
        })
        .collect()
}

pub fn load_multi_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<TimeSeries>, SeriesError> {
    let file = std::fs::File::open(path)?;
    read_multi_csv(std::io::BufReader::new(file), schema)
}

/// Inclusive `(start, end)` index ranges of consecutive anomalous points.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentList {
    pub segments: Vec<(usize, usize)>,
}

impl SegmentList {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, usize)> {
        self.segments.iter()
    }
}

/// Maximal runs of label 1, in order.
pub fn extract_segments(labels: &[u8]) -> SegmentList {
    let mut segments = Vec::new();
    let mut start = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l == 1, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                segments.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        segments.push((s, labels.len() - 1));
    }
    SegmentList { segments }
}
