//! CSV and JSON input/output.
//!
//! Floats are written in shortest round-trip form, so reading back any
//! written file reproduces every numeric field exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sequential::BatchLogRow;
use crate::simgen::ReplicateRow;
use crate::types::{LinkFunction, Observation, StreamSchema};

/// Streams observations from a `y,a,x1..xp` CSV, checking each row against
/// the header's schema. Row numbers in errors count the header as row 1.
pub struct ObservationReader<R: Read> {
    schema: StreamSchema,
    records: csv::StringRecordsIntoIter<R>,
    row: usize,
}

impl<R: Read> ObservationReader<R> {
    pub fn new(reader: R, link: LinkFunction) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let header = csv.headers()?.clone();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(Error::EmptyData("input has no header row"));
        }
        let fields: Vec<&str> = header.iter().collect();
        let schema = StreamSchema::from_header(&fields, link)?;
        Ok(Self { schema, records: csv.into_records(), row: 1 })
    }

    pub fn schema(&self) -> &StreamSchema {
        &self.schema
    }

    fn parse(&self, rec: &csv::StringRecord) -> Result<Observation> {
        let row = self.row;
        let expected = self.schema.p + 2;
        if rec.len() != expected {
            return Err(Error::Schema { row, reason: format!("expected {expected} fields, got {}", rec.len()) });
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| Error::Schema { row, reason: format!("`{}` in {name} is not a number", &rec[i]) })
        };
        let y = num(0, "y")?;
        let a = match num(1, "a")? {
            v if v == 0.0 => 0,
            v if v == 1.0 => 1,
            v => return Err(Error::Schema { row, reason: format!("treatment indicator must be 0 or 1, got {v}") }),
        };
        let x = (2..expected).map(|i| num(i, &format!("x{}", i - 1))).collect::<Result<Vec<_>>>()?;
        let obs = Observation::new(y, a, x);
        self.schema.check(&obs, row)?;
        Ok(obs)
    }
}

impl<R: Read> Iterator for ObservationReader<R> {
    type Item = Result<Observation>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.records.next()?;
        self.row += 1;
        Some(match rec {
            Ok(rec) => self.parse(&rec),
            Err(e) => Err(Error::Schema { row: self.row, reason: e.to_string() }),
        })
    }
}

pub fn open_observations(path: &Path, link: LinkFunction) -> Result<ObservationReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    ObservationReader::new(BufReader::new(file), link)
}

/// Reads a whole observation file.
pub fn read_observations(path: &Path, link: LinkFunction) -> Result<(StreamSchema, Vec<Observation>)> {
    let reader = open_observations(path, link)?;
    let schema = reader.schema().clone();
    let obs = reader.collect::<Result<Vec<_>>>()?;
    Ok((schema, obs))
}

pub fn write_observations<W: Write>(writer: W, obs: &[Observation]) -> Result<()> {
    let p = obs.first().map_or(0, |o| o.x.len());
    let schema = crate::types::validate_stream_header(p, LinkFunction::Identity)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(schema.header())?;
    let mut fields = Vec::with_capacity(p + 2);
    for (i, o) in obs.iter().enumerate() {
        if o.x.len() != p {
            return Err(Error::DimensionMismatch { expected: p, got: obs[i].x.len() });
        }
        fields.clear();
        fields.push(o.y.to_string());
        fields.push(o.a.to_string());
        fields.extend(o.x.iter().map(f64::to_string));
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_observations_file(path: &Path, obs: &[Observation]) -> Result<()> {
    write_observations(BufWriter::new(File::create(path)?), obs)
}

/// One CSV row per serialized record, header from the field names.
pub fn write_rows<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: DeserializeOwned>(reader: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(reader);
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

/// Columns `k, n_consumed, d_bar, sigma_hat, r_k, lambda_k, verdict, skipped`.
pub fn write_batch_log<W: Write>(writer: W, rows: &[BatchLogRow]) -> Result<()> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "n_consumed", "d_bar", "sigma_hat", "r_k", "lambda_k", "verdict", "skipped"])?;
        w.flush()?;
        return Ok(());
    }
    write_rows(writer, rows)
}

pub fn read_batch_log<R: Read>(reader: R) -> Result<Vec<BatchLogRow>> {
    read_rows(reader)
}

pub fn write_replicates<W: Write>(writer: W, rows: &[ReplicateRow]) -> Result<()> {
    write_rows(writer, rows)
}

pub fn read_replicates<R: Read>(reader: R) -> Result<Vec<ReplicateRow>> {
    read_rows(reader)
}

/// `bin,count` rows.
pub fn write_histogram<W: Write>(writer: W, bins: &[(usize, usize)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin", "count"])?;
    for (bin, count) in bins {
        w.write_record([bin.to_string(), count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Creates `path` and writes CSV through `f`.
pub fn with_file<F: FnOnce(BufWriter<File>) -> Result<()>>(path: &Path, f: F) -> Result<()> {
    f(BufWriter::new(File::create(path)?))
}
