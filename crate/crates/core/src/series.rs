//! Series data model, CSV ingestion, the 80-20 split and per-series
//! normalization.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit of the integer timestamps stored in a [`RawSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeUnit {
    /// Plain integer index.
    Index,
    /// Seconds since the Unix epoch.
    Seconds,
    /// Calendar months (`year * 12 + month0`); used when every timestamp is
    /// midnight on the first day of a month.
    Months,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSeries {
    pub id: String,
    pub timestamps: Vec<i64>,
    pub unit: TimeUnit,
    pub values: Vec<f64>,
    pub events: Vec<f64>,
    /// Observations per seasonal period.
    pub cycle: usize,
}

impl RawSeries {
    pub fn new(
        id: impl Into<String>,
        timestamps: Vec<i64>,
        unit: TimeUnit,
        values: Vec<f64>,
        events: Vec<f64>,
        cycle: usize,
    ) -> Result<Self> {
        let s = Self {
            id: id.into(),
            timestamps,
            unit,
            values,
            events,
            cycle,
        };
        s.validate()?;
        Ok(s)
    }

    /// Series indexed `0..T` with integer timestamps.
    pub fn indexed(
        id: impl Into<String>,
        values: Vec<f64>,
        events: Vec<f64>,
        cycle: usize,
    ) -> Result<Self> {
        let ts = (0..values.len() as i64).collect();
        Self::new(id, ts, TimeUnit::Index, values, events, cycle)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_shape()?;
        let need = 2 * self.cycle;
        if self.len() < need {
            return Err(Error::SeriesTooShort {
                series: self.id.clone(),
                len: self.len(),
                need,
            });
        }
        Ok(())
    }

    fn validate_shape(&self) -> Result<()> {
        let t = self.values.len();
        if self.events.len() != t || self.timestamps.len() != t {
            return Err(Error::ShapeMismatch(format!(
                "series `{}`: {} values, {} events, {} timestamps",
                self.id,
                t,
                self.events.len(),
                self.timestamps.len()
            )));
        }
        if self.cycle == 0 {
            return Err(Error::InvalidArgument("cycle must be positive".into()));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series `{}` value {i}", self.id)));
        }
        if let Some(i) = self
            .events
            .iter()
            .position(|e| !(e.is_finite() && *e >= 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "series `{}`: event level at {i} must be a non-negative number",
                self.id
            )));
        }
        check_spacing(&self.id, &self.timestamps)
    }

    /// Contiguous sub-series keeping id and cycle. Segments only need the
    /// shape invariants; a test segment may be shorter than two cycles.
    pub fn segment(&self, range: std::ops::Range<usize>) -> RawSeries {
        RawSeries {
            id: self.id.clone(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            unit: self.unit,
            values: self.values[range.clone()].to_vec(),
            events: self.events[range].to_vec(),
            cycle: self.cycle,
        }
    }
}

fn check_spacing(id: &str, ts: &[i64]) -> Result<()> {
    if ts.len() < 2 {
        return Ok(());
    }
    let step = ts[1] - ts[0];
    for (i, w) in ts.windows(2).enumerate() {
        let d = w[1] - w[0];
        if d == 0 {
            return Err(Error::DuplicateTimestamp {
                series: id.to_string(),
                timestamp: w[0],
            });
        }
        if d != step || d < 0 {
            return Err(Error::NonUniformSpacing {
                series: id.to_string(),
                index: i + 1,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Test,
    Unseen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub series: Vec<RawSeries>,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(series: Vec<RawSeries>, split: SplitTag) -> Result<Self> {
        let mut seen = HashMap::new();
        for s in &series {
            if seen.insert(s.id.as_str(), ()).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate series id `{}`",
                    s.id
                )));
            }
        }
        Ok(Self { series, split })
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&RawSeries> {
        self.series.iter().find(|s| s.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.series.iter().map(|s| s.id.as_str())
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }
}

/// Column names used by [`load_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub series_id: String,
    pub timestamp: String,
    pub value: String,
    /// Optional; absent column means no events.
    pub event_level: String,
    pub cycle: usize,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            series_id: "series_id".into(),
            timestamp: "timestamp".into(),
            value: "value".into(),
            event_level: "event_level".into(),
            cycle: 1,
        }
    }
}

impl CsvSchema {
    pub fn with_cycle(cycle: usize) -> Self {
        Self {
            cycle,
            ..Self::default()
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Writes `series_id,timestamp,value,event_level` rows that [`read_csv`]
/// reads back. Timestamps are rendered in their original unit.
pub fn write_csv<W: std::io::Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["series_id", "timestamp", "value", "event_level"])?;
    for s in &dataset.series {
        for i in 0..s.len() {
            w.write_record([
                s.id.clone(),
                format_timestamp(s.unit, s.timestamps[i])?,
                s.values[i].to_string(),
                s.events[i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}

fn format_timestamp(unit: TimeUnit, ts: i64) -> Result<String> {
    let bad = || Error::Parse {
        what: "timestamp",
        value: ts.to_string(),
    };
    Ok(match unit {
        TimeUnit::Index => ts.to_string(),
        TimeUnit::Seconds => DateTime::from_timestamp(ts, 0)
            .ok_or_else(bad)?
            .format("%Y-%m-%dT%H:%M:%S")
            .to_string(),
        TimeUnit::Months => {
            let (year, month0) = (ts.div_euclid(12), ts.rem_euclid(12));
            NaiveDate::from_ymd_opt(year as i32, month0 as u32 + 1, 1)
                .ok_or_else(bad)?
                .format("%Y-%m-%d")
                .to_string()
        }
    })
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col =
        col(&schema.series_id).ok_or_else(|| Error::MissingColumn(schema.series_id.clone()))?;
    let ts_col =
        col(&schema.timestamp).ok_or_else(|| Error::MissingColumn(schema.timestamp.clone()))?;
    let val_col = col(&schema.value).ok_or_else(|| Error::MissingColumn(schema.value.clone()))?;
    let ev_col = col(&schema.event_level);

    struct Rows {
        ts: Vec<String>,
        values: Vec<f64>,
        events: Vec<f64>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Rows> = HashMap::new();

    for record in rdr.records() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("");
        let id = field(id_col).to_string();
        let value = parse_f64(field(val_col), "value")?;
        let event = match ev_col.map(field) {
            None | Some("") => 0.0,
            Some(v) => parse_f64(v, "event_level")?,
        };
        let rows = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Rows {
                ts: Vec::new(),
                values: Vec::new(),
                events: Vec::new(),
            }
        });
        rows.ts.push(field(ts_col).to_string());
        rows.values.push(value);
        rows.events.push(event);
    }

    let mut series = Vec::with_capacity(order.len());
    for id in order {
        let rows = groups.remove(&id).expect("grouped id");
        let (unit, ts) = parse_timestamps(&rows.ts)?;
        let mut idx: Vec<usize> = (0..ts.len()).collect();
        idx.sort_by_key(|&i| ts[i]);
        let timestamps: Vec<i64> = idx.iter().map(|&i| ts[i]).collect();
        let values = idx.iter().map(|&i| rows.values[i]).collect();
        let events = idx.iter().map(|&i| rows.events[i]).collect();
        series.push(RawSeries::new(
            id,
            timestamps,
            unit,
            values,
            events,
            schema.cycle,
        )?);
    }
    Dataset::new(series, SplitTag::Train)
}

fn parse_f64(s: &str, what: &'static str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            what,
            value: s.to_string(),
        })
}

fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Integer index, or ISO-8601 dates/datetimes. Month-start dates map to a
/// month counter so monthly data has constant spacing.
fn parse_timestamps(raw: &[String]) -> Result<(TimeUnit, Vec<i64>)> {
    if let Ok(v) = raw
        .iter()
        .map(|s| s.parse::<i64>())
        .collect::<std::result::Result<Vec<_>, _>>()
    {
        return Ok((TimeUnit::Index, v));
    }
    let dts = raw
        .iter()
        .map(|s| {
            parse_datetime(s).ok_or_else(|| Error::Parse {
                what: "timestamp",
                value: s.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let monthly = dts
        .iter()
        .all(|d| d.day() == 1 && d.num_seconds_from_midnight() == 0);
    if monthly && dts.len() > 1 {
        let months = dts
            .iter()
            .map(|d| d.year() as i64 * 12 + d.month0() as i64)
            .collect();
        Ok((TimeUnit::Months, months))
    } else {
        Ok((
            TimeUnit::Seconds,
            dts.iter().map(|d| d.and_utc().timestamp()).collect(),
        ))
    }
}

/// Number of training points under the 80-20 split.
pub fn train_len(t: usize) -> usize {
    t * 4 / 5
}

/// Splits every series into its older 80% and newer 20%.
pub fn split_80_20(d: &Dataset) -> Result<(Dataset, Dataset)> {
    let mut train = Vec::with_capacity(d.len());
    let mut test = Vec::with_capacity(d.len());
    for s in &d.series {
        if s.len() < 5 {
            return Err(Error::SeriesTooShort {
                series: s.id.clone(),
                len: s.len(),
                need: 5,
            });
        }
        let n = train_len(s.len());
        train.push(s.segment(0..n));
        test.push(s.segment(n..s.len()));
    }
    Ok((
        Dataset::new(train, SplitTag::Train)?,
        Dataset::new(test, SplitTag::Test)?,
    ))
}

/// Per-series z-score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub location: f64,
    pub scale: f64,
}

impl Normalizer {
    pub fn new(location: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && location.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "normalizer needs finite location and positive scale, got ({location}, {scale})"
            )));
        }
        Ok(Self { location, scale })
    }

    /// Mean and population SD of `values`. A flat segment gets unit scale.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot fit a normalizer on no data".into(),
            ));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * mean.abs().max(1.0) {
            sd
        } else {
            1.0
        };
        Self::new(mean, scale)
    }

    #[inline]
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.location) / self.scale
    }

    #[inline]
    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.scale + self.location
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn csv_of(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn events_default_to_zero() {
        let d = csv_of("series_id,timestamp,value\na,0,1.0\na,1,2.0\na,2,3.0\n").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.series[0].events, vec![0.0, 0.0, 0.0]);
        assert_eq!(d.series[0].values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn interleaved_ids_are_grouped_and_sorted() {
        let d = csv_of(
            "series_id,timestamp,value,event_level\n\
             b,2,20,0\na,1,1,0\nb,0,0,1\na,0,0,0\nb,1,10,0\na,2,2,2\n",
        )
        .unwrap();
        assert_eq!(d.len(), 2);
        let b = d.get("b").unwrap();
        assert_eq!(b.timestamps, vec![0, 1, 2]);
        assert_eq!(b.values, vec![0.0, 10.0, 20.0]);
        assert_eq!(b.events, vec![1.0, 0.0, 0.0]);
        assert_eq!(d.get("a").unwrap().events, vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn written_csv_reads_back() {
        for text in [
            "series_id,timestamp,value,event_level\na,0,1.5,0\na,1,2.25,1\nb,0,-3,0\nb,1,4e-7,0\n",
            "series_id,timestamp,value\nm,2019-11-01,1\nm,2019-12-01,2\nm,2020-01-01,3\n",
            "series_id,timestamp,value\nh,2020-03-01T22:00:00,1\nh,2020-03-01T23:00:00,2\nh,2020-03-02T00:00:00,3\n",
        ] {
            let d = csv_of(text).unwrap();
            let mut out = Vec::new();
            write_csv(&d, &mut out).unwrap();
            let back = csv_of(std::str::from_utf8(&out).unwrap()).unwrap();
            assert_eq!(back.series, d.series);
        }
    }

    #[test]
    fn gaps_are_rejected() {
        let err = csv_of("series_id,timestamp,value\na,0,1\na,1,1\na,3,1\n").unwrap_err();
        assert!(err.to_string().contains("non-uniform spacing"), "{err}");
    }

    #[test]
    fn duplicates_missing_columns_and_bad_numbers() {
        assert!(matches!(
            csv_of("series_id,timestamp,value\na,0,1\na,0,2\n"),
            Err(Error::DuplicateTimestamp { .. })
        ));
        assert!(matches!(
            csv_of("series_id,value\na,1\n"),
            Err(Error::MissingColumn(c)) if c == "timestamp"
        ));
        assert!(matches!(
            csv_of("series_id,timestamp,value\na,0,abc\n"),
            Err(Error::Parse { what: "value", .. })
        ));
    }

    #[test]
    fn iso_dates_and_months() {
        let d = csv_of(
            "series_id,timestamp,value\n\
             m,2020-01-01,1\nm,2020-02-01,2\nm,2020-03-01,3\n\
             h,2020-01-01T00:00:00Z,1\nh,2020-01-01T01:00:00Z,2\nh,2020-01-01T02:00:00Z,3\n",
        )
        .unwrap();
        assert_eq!(d.get("m").unwrap().unit, TimeUnit::Months);
        assert_eq!(d.get("h").unwrap().unit, TimeUnit::Seconds);
        assert_eq!(
            d.get("h").unwrap().timestamps[1] - d.get("h").unwrap().timestamps[0],
            3600
        );
    }

    #[test]
    fn split_arithmetic() {
        let mk = |t: usize| RawSeries::indexed("s", vec![1.0; t], vec![0.0; t], 1).unwrap();
        for (t, a, b) in [(10, 8, 2), (100, 80, 20)] {
            let d = Dataset::new(vec![mk(t)], SplitTag::Train).unwrap();
            let (tr, te) = split_80_20(&d).unwrap();
            assert_eq!((tr.series[0].len(), te.series[0].len()), (a, b));
            assert!(tr.series[0].timestamps.last() < te.series[0].timestamps.first());
        }
        let d = Dataset::new(vec![mk(4)], SplitTag::Train).unwrap();
        assert!(split_80_20(&d).is_err());
    }

    #[test]
    fn series_invariants() {
        assert!(RawSeries::indexed("s", vec![1.0; 5], vec![0.0; 5], 3).is_err());
        assert!(RawSeries::indexed("s", vec![1.0; 6], vec![0.0; 6], 3).is_ok());
        assert!(RawSeries::indexed("s", vec![1.0; 6], vec![-1.0; 6], 1).is_err());
        assert!(RawSeries::indexed("s", vec![1.0; 6], vec![0.0; 5], 1).is_err());
        let dup = vec![
            RawSeries::indexed("s", vec![1.0; 2], vec![0.0; 2], 1).unwrap(),
            RawSeries::indexed("s", vec![1.0; 2], vec![0.0; 2], 1).unwrap(),
        ];
        assert!(Dataset::new(dup, SplitTag::Train).is_err());
    }

    #[test]
    fn flat_series_gets_unit_scale() {
        let n = Normalizer::fit(&[7.0; 10]).unwrap();
        assert_eq!(n.scale, 1.0);
        assert_eq!(n.normalize(7.0), 0.0);
    }

    proptest! {
        #[test]
        fn split_preserves_length(t in 5usize..400) {
            let s = RawSeries::indexed("s", vec![1.0; t], vec![0.0; t], 1).unwrap();
            let d = Dataset::new(vec![s], SplitTag::Train).unwrap();
            let (tr, te) = split_80_20(&d).unwrap();
            prop_assert_eq!(tr.series[0].len() + te.series[0].len(), t);
        }

        #[test]
        fn normalization_round_trip(values in prop::collection::vec(-1e6f64..1e6, 2..64)) {
            let n = Normalizer::fit(&values).unwrap();
            for &x in &values {
                let back = n.denormalize(n.normalize(x));
                let tol = 1e-12 * x.abs().max(n.location.abs()).max(n.scale);
                prop_assert!((back - x).abs() <= tol, "{} vs {}", back, x);
            }
        }
    }
}
