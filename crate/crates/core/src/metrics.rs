//! Line-oriented metrics log: one record per line, space-separated
//! `key=value` pairs in a stable order. The format is deliberately plain
//! so determinism checks can diff files byte-for-byte and any reader can
//! parse records without this crate.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{CrnError, Result};

/// One metrics record; keys keep insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Record {
    pairs: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Record::default()
    }

    /// Add a `key=value` pair. Keys and values must be free of whitespace
    /// and `=` so the line format stays unambiguous.
    pub fn push(&mut self, key: &str, value: impl Display) -> Result<&mut Self> {
        let value = value.to_string();
        let clean =
            |s: &str| !s.is_empty() && !s.contains(|c: char| c.is_whitespace() || c == '=');
        if !clean(key) || !clean(&value) {
            return Err(CrnError::InvalidArgument(format!(
                "metrics pair {key:?}={value:?} contains whitespace or '='"
            )));
        }
        if self.pairs.iter().any(|(k, _)| k == key) {
            return Err(CrnError::InvalidArgument(format!(
                "metrics key {key:?} repeated in one record"
            )));
        }
        self.pairs.push((key.to_string(), value));
        Ok(self)
    }

    /// Floats render via `Display`, the shortest representation that
    /// round-trips, so logs are byte-stable across runs.
    pub fn push_f64(&mut self, key: &str, value: f64) -> Result<&mut Self> {
        self.push(key, value)
    }

    /// A vector-valued metric as one comma-joined token.
    pub fn push_vec(&mut self, key: &str, values: &[f64]) -> Result<&mut Self> {
        let joined = values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        self.push(key, joined)
    }

    pub fn line(&self) -> String {
        self.pairs
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn get_vec(&self, key: &str) -> Option<Vec<f64>> {
        self.get(key)?
            .split(',')
            .map(|tok| tok.parse().ok())
            .collect()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }
}

/// Append-only writer over a fresh file.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(MetricsWriter {
            out: BufWriter::new(File::create(path)?),
        })
    }

    pub fn append(&mut self, record: &Record) -> Result<()> {
        writeln!(self.out, "{}", record.line())?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parse one line of the log; used by readers and by tests as an
/// independent check that logs stay machine-readable.
pub fn parse_line(line: &str) -> Result<Record> {
    let mut record = Record::new();
    for token in line.split_ascii_whitespace() {
        let (key, value) = token.split_once('=').ok_or_else(|| {
            CrnError::InvalidArgument(format!("metrics token {token:?} lacks '='"))
        })?;
        record.push(key, value)?;
    }
    Ok(record)
}

pub fn parse_file(path: &Path) -> Result<Vec<Record>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(parse_line)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_keep_key_order_and_round_trip() {
        let mut r = Record::new();
        r.push("epoch", 3)
            .unwrap()
            .push_f64("train_loss", 0.125)
            .unwrap()
            .push_vec("val_mse_steps", &[1.0, 0.5, 0.25])
            .unwrap();
        let line = r.line();
        assert_eq!(line, "epoch=3 train_loss=0.125 val_mse_steps=1,0.5,0.25");
        let back = parse_line(&line).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get_f64("train_loss"), Some(0.125));
        assert_eq!(back.get_vec("val_mse_steps"), Some(vec![1.0, 0.5, 0.25]));
    }

    #[test]
    fn floats_render_round_trippable() {
        let vals = [1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -0.0, 0.1 + 0.2];
        for v in vals {
            let mut r = Record::new();
            r.push_f64("x", v).unwrap();
            let back = parse_line(&r.line()).unwrap().get_f64("x").unwrap();
            assert_eq!(back.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn malformed_pairs_are_rejected() {
        assert!(Record::new().push("bad key", 1).is_err());
        assert!(Record::new().push("k", "a b").is_err());
        assert!(parse_line("novalue").is_err());
        let mut r = Record::new();
        r.push("k", 1).unwrap();
        assert!(r.push("k", 2).is_err());
    }

    #[test]
    fn writer_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.log");
        let mut w = MetricsWriter::create(&path).unwrap();
        for epoch in 0..3 {
            let mut r = Record::new();
            r.push("epoch", epoch).unwrap();
            w.append(&r).unwrap();
        }
        drop(w);
        let records = parse_file(&path).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[2].get("epoch"), Some("2"));
    }
}
