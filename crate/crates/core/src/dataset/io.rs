//! Record files: the CSV schema and its JSON-lines twin.

use std::io::{BufRead, BufReader, Read, Write};

use serde_json::Value;

use crate::error::{Error, Result, RowError};
use crate::record::RssiRecord;

pub const RECORD_COLUMNS: [&str; 10] = [
    "timestamp_s",
    "node_id",
    "gateway_id",
    "rssi_dbm",
    "snr_db",
    "sf",
    "bw_khz",
    "cr",
    "freq_mhz",
    "occupancy",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Csv,
    Jsonl,
}

impl RecordFormat {
    /// Guesses the format from a file name; anything but `.jsonl`/`.ndjson` is CSV.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => RecordFormat::Jsonl,
            _ => RecordFormat::Csv,
        }
    }
}

pub fn parse_records<R: Read>(input: R, format: RecordFormat) -> Result<Vec<RssiRecord>> {
    match format {
        RecordFormat::Csv => parse_csv(input),
        RecordFormat::Jsonl => parse_jsonl(input),
    }
}

struct RowParser<'a> {
    row: usize,
    errors: &'a mut Vec<RowError>,
}

impl RowParser<'_> {
    fn fail(&mut self, column: &str, message: String) {
        self.errors.push(RowError {
            row: self.row,
            column: column.to_string(),
            message,
        });
    }

    fn number<T: std::str::FromStr>(&mut self, column: &str, raw: &str) -> Option<T> {
        match raw.trim().parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.fail(column, format!("cannot parse {raw:?}"));
                None
            }
        }
    }

    fn finite(&mut self, column: &str, raw: &str) -> Option<f64> {
        let v: f64 = self.number(column, raw)?;
        if v.is_finite() {
            Some(v)
        } else {
            self.fail(column, format!("non-finite value {raw:?}"));
            None
        }
    }

    fn text(&mut self, column: &str, raw: &str) -> Option<String> {
        if raw.is_empty() {
            self.fail(column, "empty value".into());
            None
        } else {
            Some(raw.to_string())
        }
    }

    /// Builds a record from the ten raw column values; `None` marks a
    /// missing/null optional occupancy.
    fn record(&mut self, f: [Option<&str>; 10]) -> Option<RssiRecord> {
        let before = self.errors.len();
        let req = |p: &mut Self, i: usize| -> Option<String> {
            match f[i] {
                Some(v) => Some(v.to_string()),
                None => {
                    p.fail(RECORD_COLUMNS[i], "missing value".into());
                    None
                }
            }
        };
        let raw: Vec<Option<String>> = (0..9).map(|i| req(self, i)).collect();
        let get = |i: usize| raw[i].as_deref();

        let timestamp_s = get(0).and_then(|v| self.finite("timestamp_s", v));
        let node_id = get(1).and_then(|v| self.text("node_id", v));
        let gateway_id = get(2).and_then(|v| self.text("gateway_id", v));
        let rssi_dbm = get(3).and_then(|v| self.finite("rssi_dbm", v));
        let snr_db = get(4).and_then(|v| self.finite("snr_db", v));
        let sf = get(5).and_then(|v| self.number::<u8>("sf", v));
        let bw_khz = get(6).and_then(|v| self.finite("bw_khz", v));
        let cr = get(7).and_then(|v| self.text("cr", v));
        let freq_mhz = get(8).and_then(|v| self.finite("freq_mhz", v));
        let occupancy = match f[9].map(str::trim) {
            None | Some("") => None,
            Some(v) => self.number::<u32>("occupancy", v),
        };
        if self.errors.len() > before {
            return None;
        }
        Some(RssiRecord {
            timestamp_s: timestamp_s?,
            node_id: node_id?,
            gateway_id: gateway_id?,
            rssi_dbm: rssi_dbm?,
            snr_db: snr_db?,
            sf: sf?,
            bw_khz: bw_khz?,
            cr: cr?,
            freq_mhz: freq_mhz?,
            occupancy,
        })
    }
}

fn parse_csv<R: Read>(input: R) -> Result<Vec<RssiRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = reader.records();
    let header = match rows.next() {
        Some(h) => h.map_err(|e| Error::Format(e.to_string()))?,
        None => return Err(Error::Format("missing CSV header".into())),
    };
    if header.iter().ne(RECORD_COLUMNS.iter().copied()) {
        return Err(Error::Format(format!(
            "unexpected CSV header {:?}; expected {}",
            header.iter().collect::<Vec<_>>(),
            RECORD_COLUMNS.join(",")
        )));
    }

    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in rows.enumerate() {
        let mut p = RowParser {
            row: i + 1,
            errors: &mut errors,
        };
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                p.fail("*", e.to_string());
                continue;
            }
        };
        if row.len() != RECORD_COLUMNS.len() {
            p.fail(
                "*",
                format!(
                    "expected {} fields, found {}",
                    RECORD_COLUMNS.len(),
                    row.len()
                ),
            );
            continue;
        }
        let fields: [Option<&str>; 10] = std::array::from_fn(|j| row.get(j));
        if let Some(rec) = p.record(fields) {
            out.push(rec);
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Rows(errors))
    }
}

fn parse_jsonl<R: Read>(input: R) -> Result<Vec<RssiRecord>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut p = RowParser {
            row: i + 1,
            errors: &mut errors,
        };
        let obj = match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(m)) => m,
            Ok(_) => {
                p.fail("*", "line is not a JSON object".into());
                continue;
            }
            Err(e) => {
                p.fail("*", e.to_string());
                continue;
            }
        };
        let owned: Vec<Option<String>> = RECORD_COLUMNS
            .iter()
            .map(|c| match obj.get(*c) {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(other) => Some(other.to_string()),
            })
            .collect();
        let fields: [Option<&str>; 10] = std::array::from_fn(|j| owned[j].as_deref());
        if let Some(rec) = p.record(fields) {
            out.push(rec);
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Rows(errors))
    }
}

fn record_fields(r: &RssiRecord) -> [String; 10] {
    [
        r.timestamp_s.to_string(),
        r.node_id.clone(),
        r.gateway_id.clone(),
        r.rssi_dbm.to_string(),
        r.snr_db.to_string(),
        r.sf.to_string(),
        r.bw_khz.to_string(),
        r.cr.clone(),
        r.freq_mhz.to_string(),
        r.occupancy.map(|o| o.to_string()).unwrap_or_default(),
    ]
}

/// Writes records in the CSV schema. Floats use the shortest representation
/// that parses back to the same value, so output is byte-reproducible.
pub fn write_records_csv<W: Write, I>(out: W, records: I) -> Result<()>
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<RssiRecord>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(RECORD_COLUMNS).map_err(csv_io)?;
    for r in records {
        w.write_record(record_fields(std::borrow::Borrow::borrow(&r)))
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_jsonl<W: Write>(mut out: W, records: &[RssiRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
