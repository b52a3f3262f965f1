//! BTS on-time panel ingestion: schema validation, record invariants and the
//! volumetric / continuity / epoch filters.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calendar::{CalendarError, YearMonth, STUDY_MONTHS};

/// Absolute tolerance on `Σ cause counts = arr_del15`; BTS rounds each of the
/// five apportioned counts to two decimals.
pub const CAUSE_SUM_TOLERANCE: f64 = 0.51;

pub const DEFAULT_MIN_MONTHS: usize = 36;

/// Column names required in every input file (matched case-insensitively).
pub const REQUIRED_COLUMNS: [&str; 11] = [
    "year",
    "month",
    "airport",
    "carrier",
    "arr_flights",
    "arr_del15",
    "carrier_ct",
    "weather_ct",
    "nas_ct",
    "security_ct",
    "late_aircraft_ct",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: missing column {0:?}")]
    MissingColumn(String),
    #[error("line {line}: cannot parse {column} value {value:?}")]
    BadCell {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("configuration error: {0}")]
    Config(#[from] CalendarError),
    #[error("configuration error: {0}")]
    InvalidConfig(String),
}

/// One airport–carrier–month row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub year: i32,
    pub month: u32,
    pub airport: String,
    pub carrier: String,
    pub arr_flights: f64,
    pub arr_del15: f64,
    pub carrier_ct: f64,
    pub weather_ct: f64,
    pub nas_ct: f64,
    pub security_ct: f64,
    pub late_aircraft_ct: f64,
}

impl ObservationRecord {
    pub fn year_month(&self) -> YearMonth {
        YearMonth {
            year: self.year,
            month: self.month,
        }
    }

    /// Study month index. Only valid for records that passed validation.
    pub fn month_index(&self) -> usize {
        self.year_month().offset() as usize
    }

    pub fn cause_sum(&self) -> f64 {
        self.carrier_ct + self.weather_ct + self.nas_ct + self.security_ct + self.late_aircraft_ct
    }

    /// The four exogenous cause counts in model order (weather, nas, security, late).
    pub fn exogenous_counts(&self) -> [f64; 4] {
        [
            self.weather_ct,
            self.nas_ct,
            self.security_ct,
            self.late_aircraft_ct,
        ]
    }

    /// Checks every record invariant, returning a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        if let Err(e) = YearMonth::new(self.year, self.month).and_then(|ym| ym.month_index()) {
            return Err(e.to_string());
        }
        if self.airport.len() != 3 {
            return Err(format!("airport code {:?} is not 3 characters", self.airport));
        }
        if !(2..=3).contains(&self.carrier.len()) {
            return Err(format!("carrier code {:?} is not 2-3 characters", self.carrier));
        }
        let counts = [
            ("arr_flights", self.arr_flights),
            ("arr_del15", self.arr_del15),
            ("carrier_ct", self.carrier_ct),
            ("weather_ct", self.weather_ct),
            ("nas_ct", self.nas_ct),
            ("security_ct", self.security_ct),
            ("late_aircraft_ct", self.late_aircraft_ct),
        ];
        for (name, v) in counts {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} = {v} is not a non-negative number"));
            }
        }
        if self.arr_del15 > self.arr_flights {
            return Err(format!(
                "arr_del15 ({}) exceeds arr_flights ({})",
                self.arr_del15, self.arr_flights
            ));
        }
        let gap = (self.cause_sum() - self.arr_del15).abs();
        if gap > CAUSE_SUM_TOLERANCE {
            return Err(format!(
                "cause counts sum to {} but arr_del15 is {}",
                self.cause_sum(),
                self.arr_del15
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowRejection {
    pub line: u64,
    pub reason: String,
}

/// Records parsed from one or more files plus the rows that did not make it.
#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<ObservationRecord>,
    /// Rows whose `arr_flights` cell was empty.
    pub skipped_empty: usize,
    /// Rows with `arr_flights = 0` (the "n > 0" refinement).
    pub skipped_zero: usize,
    pub rejected: Vec<RowRejection>,
}

impl ParseOutcome {
    pub fn merge(&mut self, other: ParseOutcome) {
        self.records.extend(other.records);
        self.skipped_empty += other.skipped_empty;
        self.skipped_zero += other.skipped_zero;
        self.rejected.extend(other.rejected);
    }
}

pub fn parse_bts_csv(path: impl AsRef<Path>) -> Result<ParseOutcome, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_bts_reader(file)
}

pub fn parse_bts_reader<R: Read>(reader: R) -> Result<ParseOutcome, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; 11];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
    }

    let mut out = ParseOutcome::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize| row.get(idx[i]).unwrap_or("");

        if cell(4).is_empty() {
            out.skipped_empty += 1;
            continue;
        }
        let number = |i: usize| -> Result<f64, IngestError> {
            let raw = cell(i);
            raw.parse::<f64>().map_err(|_| IngestError::BadCell {
                line,
                column: REQUIRED_COLUMNS[i],
                value: raw.to_string(),
            })
        };
        let year = cell(0).parse::<i32>().map_err(|_| IngestError::BadCell {
            line,
            column: "year",
            value: cell(0).to_string(),
        })?;
        let month = cell(1).parse::<u32>().map_err(|_| IngestError::BadCell {
            line,
            column: "month",
            value: cell(1).to_string(),
        })?;
        let record = ObservationRecord {
            year,
            month,
            airport: cell(2).to_string(),
            carrier: cell(3).to_string(),
            arr_flights: number(4)?,
            arr_del15: number(5)?,
            carrier_ct: number(6)?,
            weather_ct: number(7)?,
            nas_ct: number(8)?,
            security_ct: number(9)?,
            late_aircraft_ct: number(10)?,
        };
        if record.arr_flights == 0.0 {
            out.skipped_zero += 1;
            continue;
        }
        match record.validate() {
            Ok(()) => out.records.push(record),
            Err(reason) => out.rejected.push(RowRejection { line, reason }),
        }
    }
    Ok(out)
}

/// Writes the normalized CSV: the record fields followed by `month_index`.
pub fn write_normalized<W: Write>(writer: W, records: &[ObservationRecord]) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = REQUIRED_COLUMNS.to_vec();
    header.push("month_index");
    wtr.write_record(&header)?;
    for r in records {
        wtr.write_record(&[
            r.year.to_string(),
            r.month.to_string(),
            r.airport.clone(),
            r.carrier.clone(),
            fmt_f64(r.arr_flights),
            fmt_f64(r.arr_del15),
            fmt_f64(r.carrier_ct),
            fmt_f64(r.weather_ct),
            fmt_f64(r.nas_ct),
            fmt_f64(r.security_ct),
            fmt_f64(r.late_aircraft_ct),
            r.month_index().to_string(),
        ])?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: "<output>".into(),
        source,
    })?;
    Ok(())
}

pub fn write_normalized_file(path: impl AsRef<Path>, records: &[ObservationRecord]) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_normalized(std::io::BufWriter::new(file), records)
}

/// Shortest representation that parses back to the same bits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Volumetric admission rule for `arr_flights`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeThreshold {
    /// `n > 0`.
    Positive,
    /// `n ≥ k`.
    AtLeast(u32),
}

impl VolumeThreshold {
    /// CLI convention: `0` is the strict `n > 0` level, any other value `n ≥ k`.
    pub fn from_cli(k: u32) -> Self {
        if k == 0 {
            Self::Positive
        } else {
            Self::AtLeast(k)
        }
    }

    pub fn admits(self, flights: f64) -> bool {
        match self {
            Self::Positive => flights > 0.0,
            Self::AtLeast(k) => flights >= k as f64,
        }
    }
}

pub fn apply_volumetric_filter(
    mut records: Vec<ObservationRecord>,
    threshold: VolumeThreshold,
) -> Vec<ObservationRecord> {
    records.retain(|r| threshold.admits(r.arr_flights));
    records
}

/// Keeps every record of an airport–carrier pair that reports at least
/// `min_months` distinct months; drops the pair entirely otherwise.
pub fn apply_continuity_filter(
    mut records: Vec<ObservationRecord>,
    min_months: usize,
) -> Vec<ObservationRecord> {
    let mut months: HashMap<(&str, &str), BTreeSet<usize>> = HashMap::new();
    for r in &records {
        months
            .entry((r.airport.as_str(), r.carrier.as_str()))
            .or_default()
            .insert(r.month_index());
    }
    let keep: std::collections::HashSet<(String, String)> = months
        .into_iter()
        .filter(|(_, m)| m.len() >= min_months)
        .map(|((a, c), _)| (a.to_string(), c.to_string()))
        .collect();
    records.retain(|r| keep.contains(&(r.airport.clone(), r.carrier.clone())));
    records
}

/// Keeps records dated on or before `epoch_end`.
pub fn split_epoch(
    mut records: Vec<ObservationRecord>,
    epoch_end: YearMonth,
) -> Result<Vec<ObservationRecord>, IngestError> {
    epoch_end.month_index()?;
    records.retain(|r| r.year_month() <= epoch_end);
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub total_flights: f64,
    pub total_delays: f64,
    pub record_count: usize,
    pub airport_count: usize,
    pub carrier_count: usize,
    pub delay_rate: f64,
}

impl CorpusStats {
    /// Share of `raw_flights` retained by this corpus.
    pub fn flight_retention(&self, raw_flights: f64) -> f64 {
        self.total_flights / raw_flights
    }
}

pub fn summarize_corpus(records: &[ObservationRecord]) -> Result<CorpusStats, IngestError> {
    if records.is_empty() {
        return Err(IngestError::EmptyCorpus);
    }
    let total_flights: f64 = records.iter().map(|r| r.arr_flights).sum();
    let total_delays: f64 = records.iter().map(|r| r.arr_del15).sum();
    let airports: BTreeSet<&str> = records.iter().map(|r| r.airport.as_str()).collect();
    let carriers: BTreeSet<&str> = records.iter().map(|r| r.carrier.as_str()).collect();
    Ok(CorpusStats {
        total_flights,
        total_delays,
        record_count: records.len(),
        airport_count: airports.len(),
        carrier_count: carriers.len(),
        delay_rate: total_delays / total_flights,
    })
}

/// Whether the continuity rule is evaluated on the full 180-month window or
/// only on the months that survive the epoch split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContinuityScope {
    #[default]
    FullWindow,
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub threshold: VolumeThreshold,
    pub min_months: usize,
    pub epoch_end: Option<YearMonth>,
    pub continuity_scope: ContinuityScope,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            threshold: VolumeThreshold::AtLeast(100),
            min_months: DEFAULT_MIN_MONTHS,
            epoch_end: None,
            continuity_scope: ContinuityScope::FullWindow,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.min_months == 0 || self.min_months > STUDY_MONTHS {
            return Err(IngestError::InvalidConfig(format!(
                "min_months must be in 1..={STUDY_MONTHS}, got {}",
                self.min_months
            )));
        }
        if let Some(end) = self.epoch_end {
            end.month_index()?;
        }
        Ok(())
    }
}

/// Runs the refinement stages in order: volumetric, then continuity, then the
/// epoch split (continuity after the split under [`ContinuityScope::PerEpoch`]).
pub fn filter_corpus(
    records: Vec<ObservationRecord>,
    config: &FilterConfig,
) -> Result<Vec<ObservationRecord>, IngestError> {
    config.validate()?;
    let mut out = apply_volumetric_filter(records, config.threshold);
    match (config.epoch_end, config.continuity_scope) {
        (Some(end), ContinuityScope::PerEpoch) => {
            out = split_epoch(out, end)?;
            out = apply_continuity_filter(out, config.min_months);
        }
        (end, _) => {
            out = apply_continuity_filter(out, config.min_months);
            if let Some(end) = end {
                out = split_epoch(out, end)?;
            }
        }
    }
    if out.is_empty() {
        warn!("no records survive the filters");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "year,month,airport,carrier,arr_flights,arr_del15,carrier_ct,weather_ct,nas_ct,security_ct,late_aircraft_ct\n";

    fn parse(body: &str) -> Result<ParseOutcome, IngestError> {
        parse_bts_reader(format!("{HEADER}{body}").as_bytes())
    }

    pub(crate) fn record(airport: &str, carrier: &str, t: usize, n: f64, y: f64) -> ObservationRecord {
        let ym = YearMonth::from_index(t);
        ObservationRecord {
            year: ym.year,
            month: ym.month,
            airport: airport.into(),
            carrier: carrier.into(),
            arr_flights: n,
            arr_del15: y,
            carrier_ct: y,
            weather_ct: 0.0,
            nas_ct: 0.0,
            security_ct: 0.0,
            late_aircraft_ct: 0.0,
        }
    }

    #[test]
    fn parses_direct_field_mapping() {
        let out = parse("2024,1,ORD,AA,1000,180,50,20,60,0.5,49.5\n").unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.arr_flights, 1000.0);
        assert_eq!(r.arr_del15, 180.0);
        assert_eq!(r.security_ct, 0.5);
        assert_eq!(r.late_aircraft_ct, 49.5);
        assert_eq!(r.month_index(), 168);
    }

    #[test]
    fn rejects_more_delays_than_flights_with_line() {
        let out = parse("2024,1,ORD,AA,1000,180,50,20,60,0.5,49.5\n2024,2,ORD,AA,3,5,5,0,0,0,0\n").unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].line, 3);
        assert!(out.rejected[0].reason.contains("arr_del15"));
    }

    #[test]
    fn missing_column_names_it() {
        let csv = "year,month,airport,carrier,arr_flights,arr_del15,carrier_ct,weather_ct,nas_ct,late_aircraft_ct\n";
        let err = parse_bts_reader(csv.as_bytes()).unwrap_err();
        match err {
            IngestError::MissingColumn(c) => assert_eq!(c, "security_ct"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_is_case_insensitive_and_extra_columns_ignored() {
        let csv = "Year,MONTH,carrier_name,Airport,Carrier,arr_flights,arr_del15,carrier_ct,weather_ct,nas_ct,security_ct,late_aircraft_ct,arr_delay\n\
                   2015,3,American,JFK,AA,200,20,10,0,5,0,5,1234\n";
        let out = parse_bts_reader(csv.as_bytes()).unwrap();
        assert_eq!(out.records[0].airport, "JFK");
        assert_eq!(out.records[0].carrier, "AA");
    }

    #[test]
    fn empty_and_zero_flights_are_tallied() {
        let out = parse("2024,1,ORD,AA,,,,,,,\n2024,1,ORD,UA,0,0,0,0,0,0,0\n2024,1,ORD,DL,10,1,1,0,0,0,0\n").unwrap();
        assert_eq!(out.skipped_empty, 1);
        assert_eq!(out.skipped_zero, 1);
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn unparseable_cell_reports_line() {
        let err = parse("2024,1,ORD,AA,10,abc,1,0,0,0,0\n").unwrap_err();
        match err {
            IngestError::BadCell { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, "arr_del15");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cause_sum_tolerance() {
        let ok = parse("2024,1,ORD,AA,100,10,2,2,2,2,2.5\n").unwrap();
        assert_eq!(ok.records.len(), 1);
        let bad = parse("2024,1,ORD,AA,100,10,2,2,2,2,2.52\n").unwrap();
        assert_eq!(bad.rejected.len(), 1);
    }

    #[test]
    fn strict_positive_level_drops_only_zero_volume() {
        let recs = vec![record("AAA", "XX", 0, 0.0, 0.0), record("AAA", "XX", 1, 1.0, 0.0)];
        let kept = apply_volumetric_filter(recs, VolumeThreshold::Positive);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].arr_flights, 1.0);
    }

    #[test]
    fn continuity_boundary() {
        let pair = |carrier: &str, months: usize| -> Vec<ObservationRecord> {
            (0..months).map(|t| record("AAA", carrier, t * 2, 10.0, 1.0)).collect()
        };
        assert!(apply_continuity_filter(pair("XX", 35), 36).is_empty());
        assert_eq!(apply_continuity_filter(pair("XX", 36), 36).len(), 36);

        let mut both = pair("XX", 40);
        both.extend(pair("YY", 12));
        let kept = apply_continuity_filter(both, 36);
        assert_eq!(kept.len(), 40);
        assert!(kept.iter().all(|r| r.carrier == "XX"));
    }

    #[test]
    fn continuity_counts_distinct_months() {
        // 36 rows but only 18 distinct months.
        let recs: Vec<_> = (0..36).map(|i| record("AAA", "XX", i / 2, 10.0, 1.0)).collect();
        assert!(apply_continuity_filter(recs, 36).is_empty());
    }

    #[test]
    fn epoch_split() {
        let recs: Vec<_> = (0..180).map(|t| record("AAA", "XX", t, 10.0, 1.0)).collect();
        let base = split_epoch(recs.clone(), YearMonth { year: 2019, month: 12 }).unwrap();
        assert_eq!(base.len(), 120);
        assert_eq!(split_epoch(recs.clone(), YearMonth::study_end()).unwrap(), recs);
        assert!(matches!(
            split_epoch(recs, YearMonth { year: 2009, month: 12 }),
            Err(IngestError::Config(_))
        ));
    }

    #[test]
    fn corpus_summary() {
        let s = summarize_corpus(&[record("AAA", "XX", 0, 10.0, 2.0)]).unwrap();
        assert_eq!(s.delay_rate, 0.2);
        assert_eq!(s.airport_count, 1);
        assert!(matches!(summarize_corpus(&[]), Err(IngestError::EmptyCorpus)));
    }

    #[test]
    fn normalized_round_trip() {
        let out = parse("2024,1,ORD,AA,1000,180,50,20,60,0.5,49.5\n2011,7,SEA,AS,123.25,10.01,0.1,0.2,4.71,0,5\n").unwrap();
        let mut buf = Vec::new();
        write_normalized(&mut buf, &out.records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().ends_with(",month_index"));
        let back = parse_bts_reader(buf.as_slice()).unwrap();
        assert_eq!(back.records, out.records);
    }
}
