//! Measurement CSV ingestion and export.
//!
//! Two canonical layouts are supported, both with a header row:
//!
//! * geodetic: `tx_lat,tx_lon,tx_alt_m,rx_lat,rx_lon,rx_alt_m,freq_hz,path_loss_db`
//!   (altitude columns optional; Tx defaults to 17 m, Rx to 1.5 m)
//! * local: `tx_x_m,tx_y_m,tx_z_m,rx_x_m,rx_y_m,rx_z_m,freq_hz,value_db,value_kind`
//!
//! Column names are configurable through [`Schema`]. Parsing never drops rows
//! silently: every bad field is reported with its line and column.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::geo::{check_lat_lon, geo_to_local, GeoOrigin};
use crate::error::{Error, ParseIssue, Result};
use crate::geometry::Point3;
use crate::model::LinkQuery;
use crate::training::Measurement;

/// Default transmitter mast height when the file has no altitude column.
pub const DEFAULT_TX_HEIGHT_M: f64 = 17.0;
/// Default vehicle-mounted receiver height.
pub const DEFAULT_RX_HEIGHT_M: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    PathLoss,
    Rssi,
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueKind::PathLoss => "path_loss",
            ValueKind::Rssi => "rssi",
        })
    }
}

impl FromStr for ValueKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "path_loss" | "pathloss" | "pl" => Ok(ValueKind::PathLoss),
            "rssi" => Ok(ValueKind::Rssi),
            other => Err(Error::invalid(format!("unknown value kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateMode {
    Geodetic,
    Local,
}

/// Column names and interpretation of a measurement file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub mode: CoordinateMode,
    /// `[lat, lon, alt]` or `[x, y, z]`.
    pub tx: [String; 3],
    pub rx: [String; 3],
    pub frequency: String,
    pub value: String,
    /// Per-row value kind column; when absent `default_kind` applies.
    pub kind: Option<String>,
    pub default_kind: ValueKind,
}

fn names(a: [&str; 3]) -> [String; 3] {
    a.map(String::from)
}

impl Schema {
    pub fn geodetic() -> Self {
        Self {
            mode: CoordinateMode::Geodetic,
            tx: names(["tx_lat", "tx_lon", "tx_alt_m"]),
            rx: names(["rx_lat", "rx_lon", "rx_alt_m"]),
            frequency: "freq_hz".into(),
            value: "path_loss_db".into(),
            kind: None,
            default_kind: ValueKind::PathLoss,
        }
    }

    /// Geodetic layout carrying RSSI in an `rssi_dbm` column.
    pub fn geodetic_rssi() -> Self {
        Self {
            value: "rssi_dbm".into(),
            default_kind: ValueKind::Rssi,
            ..Self::geodetic()
        }
    }

    pub fn local() -> Self {
        Self {
            mode: CoordinateMode::Local,
            tx: names(["tx_x_m", "tx_y_m", "tx_z_m"]),
            rx: names(["rx_x_m", "rx_y_m", "rx_z_m"]),
            frequency: "freq_hz".into(),
            value: "value_db".into(),
            kind: Some("value_kind".into()),
            default_kind: ValueKind::PathLoss,
        }
    }

    /// Picks the canonical schema whose columns appear in `header`.
    pub fn detect(header: &[&str]) -> Option<Self> {
        let has = |c: &str| header.iter().any(|h| h.trim() == c);
        if has("tx_x_m") {
            Some(Self::local())
        } else if has("tx_lat") && has("rssi_dbm") {
            Some(Self::geodetic_rssi())
        } else if has("tx_lat") {
            Some(Self::geodetic())
        } else {
            None
        }
    }

    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = self.tx.iter().chain(self.rx.iter()).cloned().collect();
        h.push(self.frequency.clone());
        h.push(self.value.clone());
        if let Some(k) = &self.kind {
            h.push(k.clone());
        }
        h
    }
}

/// Endpoint coordinates as stored in the file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Endpoints {
    /// `(lat°, lon°, alt m)` for each end.
    Geodetic { tx: [f64; 3], rx: [f64; 3] },
    Local { tx: Point3, rx: Point3 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub endpoints: Endpoints,
    pub frequency_hz: f64,
    pub value_db: f64,
    pub value_kind: ValueKind,
}

/// Summary of a parsed file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mode: CoordinateMode,
    pub origin: Option<GeoOrigin>,
    /// Distinct frequencies in first-seen order.
    pub frequencies: Vec<f64>,
    pub record_count: usize,
    pub value_kind: Option<ValueKind>,
}

struct ColumnMap {
    tx: [Option<usize>; 3],
    rx: [Option<usize>; 3],
    frequency: usize,
    value: Option<usize>,
    kind: Option<usize>,
}

fn locate(header: &csv::StringRecord, schema: &Schema, need_value: bool) -> Result<ColumnMap> {
    let find = |name: &str| header.iter().position(|h| h.trim() == name);
    let mut missing = Vec::new();
    let mut req = |name: &String| {
        let idx = find(name);
        if idx.is_none() {
            missing.push(name.clone());
        }
        idx
    };
    let geodetic = schema.mode == CoordinateMode::Geodetic;
    // Altitudes are optional in geodetic files.
    let tx = [req(&schema.tx[0]), req(&schema.tx[1]), if geodetic { find(&schema.tx[2]) } else { req(&schema.tx[2]) }];
    let rx = [req(&schema.rx[0]), req(&schema.rx[1]), if geodetic { find(&schema.rx[2]) } else { req(&schema.rx[2]) }];
    let frequency = req(&schema.frequency);
    let value = if need_value { req(&schema.value) } else { find(&schema.value) };
    let kind = schema.kind.as_deref().and_then(find);
    if !missing.is_empty() {
        return Err(Error::Parse(vec![ParseIssue {
            line: 1,
            column: None,
            message: format!("header is missing column(s): {}", missing.join(", ")),
        }]));
    }
    Ok(ColumnMap {
        tx,
        rx,
        frequency: frequency.unwrap(),
        value,
        kind,
    })
}

struct RowParser<'a> {
    row: &'a csv::StringRecord,
    header: &'a csv::StringRecord,
    line: u64,
    issues: &'a mut Vec<ParseIssue>,
}

impl RowParser<'_> {
    fn num(&mut self, idx: usize) -> f64 {
        let raw = self.row.get(idx).unwrap_or("").trim();
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                self.issues.push(ParseIssue {
                    line: self.line,
                    column: self.header.get(idx).map(|s| s.trim().to_string()),
                    message: format!("malformed number `{raw}`"),
                });
                f64::NAN
            }
        }
    }

    fn opt(&mut self, idx: Option<usize>, default: f64) -> f64 {
        idx.map_or(default, |i| self.num(i))
    }

    fn fail(&mut self, message: String) {
        self.issues.push(ParseIssue {
            line: self.line,
            column: None,
            message,
        });
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn parse_rows<R: Read>(input: R, schema: &Schema, need_value: bool) -> Result<Vec<RawRecord>> {
    let mut rdr = reader(input);
    let header = rdr.headers()?.clone();
    let cols = locate(&header, schema, need_value)?;
    let mut issues = Vec::new();
    let mut out = Vec::new();
    let mut first_kind: Option<ValueKind> = None;

    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                issues.push(ParseIssue {
                    line,
                    column: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        let before = issues.len();
        let mut p = RowParser {
            row: &row,
            header: &header,
            line,
            issues: &mut issues,
        };
        let endpoints = match schema.mode {
            CoordinateMode::Geodetic => {
                let tx = [
                    p.opt(cols.tx[0], 0.0),
                    p.opt(cols.tx[1], 0.0),
                    p.opt(cols.tx[2], DEFAULT_TX_HEIGHT_M),
                ];
                let rx = [
                    p.opt(cols.rx[0], 0.0),
                    p.opt(cols.rx[1], 0.0),
                    p.opt(cols.rx[2], DEFAULT_RX_HEIGHT_M),
                ];
                for (end, c) in [("tx", tx), ("rx", rx)] {
                    if c[0].is_finite() && c[1].is_finite() {
                        if let Err(e) = check_lat_lon(c[0], c[1]) {
                            p.fail(format!("{end}: {e}"));
                        }
                    }
                }
                Endpoints::Geodetic { tx, rx }
            }
            CoordinateMode::Local => {
                let mut pt = |c: &[Option<usize>; 3]| {
                    Point3::new(p.opt(c[0], 0.0), p.opt(c[1], 0.0), p.opt(c[2], 0.0))
                };
                let tx = pt(&cols.tx);
                let rx = pt(&cols.rx);
                Endpoints::Local { tx, rx }
            }
        };
        let frequency_hz = p.num(cols.frequency);
        if frequency_hz.is_finite() && frequency_hz <= 0.0 {
            p.fail(format!("frequency must be positive, got {frequency_hz}"));
        }
        let value_db = p.opt(cols.value, 0.0);
        let value_kind = match cols.kind.and_then(|i| row.get(i)) {
            Some(raw) if !raw.trim().is_empty() => match raw.parse::<ValueKind>() {
                Ok(k) => k,
                Err(e) => {
                    p.issues.push(ParseIssue {
                        line,
                        column: schema.kind.clone(),
                        message: e.to_string(),
                    });
                    schema.default_kind
                }
            },
            _ => schema.default_kind,
        };
        if issues.len() > before {
            continue;
        }
        match first_kind {
            None => first_kind = Some(value_kind),
            Some(k) if k != value_kind => {
                return Err(Error::MixedValueKind {
                    first: k,
                    second: value_kind,
                    line,
                })
            }
            _ => {}
        }
        out.push(RawRecord {
            endpoints,
            frequency_hz,
            value_db,
            value_kind,
        });
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(Error::Parse(issues))
    }
}

/// Parses every row of a measurement file.
pub fn parse_measurements<R: Read>(input: R, schema: &Schema) -> Result<Vec<RawRecord>> {
    parse_rows(input, schema, true)
}

/// Parses a file whose schema is detected from its header.
pub fn parse_measurements_auto<R: Read>(input: R) -> Result<(Vec<RawRecord>, Schema)> {
    let mut buf = Vec::new();
    let mut input = input;
    input
        .read_to_end(&mut buf)
        .map_err(|e| Error::io("<input>", e))?;
    let schema = {
        let mut rdr = reader(buf.as_slice());
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        Schema::detect(&cols).ok_or_else(|| {
            Error::Parse(vec![ParseIssue {
                line: 1,
                column: None,
                message: format!("unrecognized header: {}", cols.join(",")),
            }])
        })?
    };
    let records = parse_measurements(buf.as_slice(), &schema)?;
    Ok((records, schema))
}

pub fn write_measurements<W: Write>(out: W, schema: &Schema, records: &[RawRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(schema.header())?;
    for r in records {
        let mut row: Vec<String> = match (schema.mode, r.endpoints) {
            (CoordinateMode::Geodetic, Endpoints::Geodetic { tx, rx }) => {
                tx.iter().chain(rx.iter()).map(|v| v.to_string()).collect()
            }
            (CoordinateMode::Local, Endpoints::Local { tx, rx }) => tx
                .to_array()
                .iter()
                .chain(rx.to_array().iter())
                .map(|v| v.to_string())
                .collect(),
            _ => return Err(Error::invalid("record coordinates do not match schema mode")),
        };
        row.push(r.frequency_hz.to_string());
        row.push(r.value_db.to_string());
        if schema.kind.is_some() {
            row.push(r.value_kind.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

/// Local-frame records for a set of measurements.
pub fn measurements_to_records(ms: &[Measurement], kind: ValueKind) -> Vec<RawRecord> {
    ms.iter()
        .map(|m| RawRecord {
            endpoints: Endpoints::Local { tx: m.tx, rx: m.rx },
            frequency_hz: m.frequency_hz,
            value_db: m.target,
            value_kind: kind,
        })
        .collect()
}

fn endpoints_to_local(e: &Endpoints, origin: Option<&GeoOrigin>) -> Result<(Point3, Point3)> {
    match (e, origin) {
        (Endpoints::Local { tx, rx }, _) => Ok((*tx, *rx)),
        (Endpoints::Geodetic { tx, rx }, Some(o)) => Ok((
            geo_to_local(tx[0], tx[1], tx[2], o)?,
            geo_to_local(rx[0], rx[1], rx[2], o)?,
        )),
        (Endpoints::Geodetic { .. }, None) => {
            Err(Error::invalid("geodetic records need a projection origin"))
        }
    }
}

/// Projects raw records into the local frame.
///
/// For geodetic input without an explicit origin, the first record's
/// transmitter becomes the origin. Records with coincident endpoints are
/// rejected (they have no defined link).
pub fn to_measurements(
    records: &[RawRecord],
    origin: Option<GeoOrigin>,
) -> Result<(Vec<Measurement>, DatasetManifest)> {
    let mode = match records.first().map(|r| r.endpoints) {
        Some(Endpoints::Geodetic { .. }) => CoordinateMode::Geodetic,
        _ => CoordinateMode::Local,
    };
    let origin = match (mode, origin) {
        (CoordinateMode::Geodetic, None) => match records[0].endpoints {
            Endpoints::Geodetic { tx, .. } => Some(GeoOrigin::new(tx[0], tx[1])?),
            Endpoints::Local { .. } => unreachable!(),
        },
        (_, o) => o,
    };
    let mut frequencies: Vec<f64> = Vec::new();
    let mut out = Vec::with_capacity(records.len());
    let mut issues = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let (tx, rx) = endpoints_to_local(&r.endpoints, origin.as_ref())?;
        match Measurement::new(tx, rx, r.frequency_hz, r.value_db) {
            Ok(m) => out.push(m),
            Err(e) => issues.push(ParseIssue {
                line: i as u64 + 2,
                column: None,
                message: e.to_string(),
            }),
        }
        if !frequencies.contains(&r.frequency_hz) {
            frequencies.push(r.frequency_hz);
        }
    }
    if !issues.is_empty() {
        return Err(Error::Parse(issues));
    }
    let manifest = DatasetManifest {
        mode,
        origin,
        frequencies,
        record_count: out.len(),
        value_kind: records.first().map(|r| r.value_kind),
    };
    Ok((out, manifest))
}

/// Reads link queries (value column optional and ignored).
pub fn parse_queries<R: Read>(input: R, schema: &Schema, origin: Option<GeoOrigin>) -> Result<Vec<LinkQuery>> {
    let records = parse_rows(input, schema, false)?;
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let (tx, rx) = endpoints_to_local(&r.endpoints, origin.as_ref())?;
            LinkQuery::new(tx, rx, r.frequency_hz).map_err(|e| Error::InvalidQuery {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const GEO_HEADER: &str = "tx_lat,tx_lon,tx_alt_m,rx_lat,rx_lon,rx_alt_m,freq_hz,path_loss_db\n";

    #[test]
    fn empty_file_with_header_parses_to_nothing() {
        let recs = parse_measurements(GEO_HEADER.as_bytes(), &Schema::geodetic()).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn single_row_round_trips_bit_exactly() {
        let rec = RawRecord {
            endpoints: Endpoints::Local {
                tx: Point3::new(0.1, -3.0e-7, 17.0),
                rx: Point3::new(1234.5678901234567, 1.0 / 3.0, 1.5),
            },
            frequency_hz: 5.85e9,
            value_db: 123.456_789_012_345_68,
            value_kind: ValueKind::PathLoss,
        };
        let mut buf = Vec::new();
        write_measurements(&mut buf, &Schema::local(), &[rec]).unwrap();
        let back = parse_measurements(buf.as_slice(), &Schema::local()).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn latitude_out_of_range_names_row() {
        let text = format!("{GEO_HEADER}51.5,-0.1,17,51.51,-0.1,1.5,915e6,100\n91,-0.1,17,51.5,-0.1,1.5,915e6,100\n");
        match parse_measurements(text.as_bytes(), &Schema::geodetic()) {
            Err(Error::Parse(issues)) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].line, 3);
                assert!(issues[0].message.contains("latitude"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_number_reports_line_and_column() {
        let text = format!("{GEO_HEADER}51.5,-0.1,17,51.51,abc,1.5,915e6,100\n51.5,-0.1,17,51.51,-0.1,1.5,915e6,x\n");
        match parse_measurements(text.as_bytes(), &Schema::geodetic()) {
            Err(Error::Parse(issues)) => {
                assert_eq!(issues.len(), 2);
                assert_eq!((issues[0].line, issues[0].column.as_deref()), (2, Some("rx_lon")));
                assert_eq!((issues[1].line, issues[1].column.as_deref()), (3, Some("path_loss_db")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mixed_value_kinds_rejected() {
        let text = "tx_x_m,tx_y_m,tx_z_m,rx_x_m,rx_y_m,rx_z_m,freq_hz,value_db,value_kind\n\
                    0,0,1,5,0,1,2.4e9,60,path_loss\n0,0,1,6,0,1,2.4e9,-60,rssi\n";
        assert!(matches!(
            parse_measurements(text.as_bytes(), &Schema::local()),
            Err(Error::MixedValueKind { line: 3, .. })
        ));
    }

    #[test]
    fn missing_altitude_columns_use_defaults() {
        let text = "tx_lat,tx_lon,rx_lat,rx_lon,freq_hz,path_loss_db\n51.5,-0.12,51.501,-0.12,915e6,90\n";
        let recs = parse_measurements(text.as_bytes(), &Schema::geodetic()).unwrap();
        let (ms, manifest) = to_measurements(&recs, None).unwrap();
        assert_eq!(ms[0].tx, Point3::new(0.0, 0.0, DEFAULT_TX_HEIGHT_M));
        assert_eq!(ms[0].rx.z, DEFAULT_RX_HEIGHT_M);
        assert!((ms[0].rx.y - 111.19).abs() < 0.01);
        assert_eq!(manifest.origin, Some(GeoOrigin { lat: 51.5, lon: -0.12 }));
        assert_eq!(manifest.frequencies, vec![915e6]);
    }

    #[test]
    fn missing_required_column_is_schema_error() {
        let text = "tx_lat,tx_lon,rx_lat,freq_hz,path_loss_db\n";
        assert!(matches!(
            parse_measurements(text.as_bytes(), &Schema::geodetic()),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn detects_canonical_layouts() {
        let (_, s) = parse_measurements_auto(GEO_HEADER.as_bytes()).unwrap();
        assert_eq!(s, Schema::geodetic());
        let (_, s) = parse_measurements_auto("tx_x_m,tx_y_m,tx_z_m,rx_x_m,rx_y_m,rx_z_m,freq_hz,value_db,value_kind\n".as_bytes()).unwrap();
        assert_eq!(s, Schema::local());
    }
}
