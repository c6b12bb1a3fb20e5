use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" | "json-lines" => Ok(Format::Jsonl),
            other => Err(format!("unknown format {other:?}; expected csv or jsonl")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}:{line}: {source}", path.display())]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExportError + '_ {
    move |source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `rows` to `path`, replacing any existing file.
pub fn export_rows<T: Serialize>(rows: &[T], format: Format, path: &Path) -> Result<(), ExportError> {
    let file = File::create(path).map_err(io_err(path))?;
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(file);
            for row in rows {
                w.serialize(row).map_err(csv_err(path))?;
            }
            w.flush().map_err(io_err(path))?;
        }
        Format::Jsonl => {
            let mut w = BufWriter::new(file);
            for (i, row) in rows.iter().enumerate() {
                serde_json::to_writer(&mut w, row).map_err(|source| ExportError::Json {
                    path: path.to_path_buf(),
                    line: i + 1,
                    source,
                })?;
                w.write_all(b"\n").map_err(io_err(path))?;
            }
            w.flush().map_err(io_err(path))?;
        }
    }
    Ok(())
}

/// Reads back rows written by [`export_rows`].
pub fn import_rows<T: DeserializeOwned>(format: Format, path: &Path) -> Result<Vec<T>, ExportError> {
    let file = File::open(path).map_err(io_err(path))?;
    match format {
        Format::Csv => csv::Reader::from_reader(file)
            .deserialize()
            .collect::<Result<Vec<T>, _>>()
            .map_err(csv_err(path)),
        Format::Jsonl => {
            let mut rows = Vec::new();
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err(path))?;
                if line.trim().is_empty() {
                    continue;
                }
                rows.push(serde_json::from_str(&line).map_err(|source| ExportError::Json {
                    path: path.to_path_buf(),
                    line: i + 1,
                    source,
                })?);
            }
            Ok(rows)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{CycleRecord, Outcome, VoltageSample};
    use crate::node::NodeId;
    use crate::protocol::FailureReason;

    fn records() -> Vec<CycleRecord> {
        vec![
            CycleRecord {
                node_id: NodeId(1),
                cycle_index: 0,
                start_s: 0.0,
                wake_s: Some(13.762_100_000_000_007),
                end_s: 19.322_1,
                outcome: Outcome::Delivered,
                scap_v_start: 4.463,
                scap_v_wake: Some(4.470_123_456_789_012),
                scap_v_end: 4.464_679_012_345_678,
                energy_consumed_j: 0.018_069_913_2,
                energy_harvested_j: 1.0 / 3.0,
                delivered_at_s: Some(19.322_1),
            },
            CycleRecord {
                node_id: NodeId(2),
                cycle_index: 7,
                start_s: 1e-300,
                wake_s: None,
                end_s: 2.5,
                outcome: Outcome::Failed(FailureReason::NoGateway),
                scap_v_start: 3.3,
                scap_v_wake: None,
                scap_v_end: 3.3,
                energy_consumed_j: 0.0,
                energy_harvested_j: 0.1 + 0.2,
                delivered_at_s: None,
            },
        ]
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cycles.csv");
        export_rows(&records(), Format::Csv, &path).unwrap();
        let back: Vec<CycleRecord> = import_rows(Format::Csv, &path).unwrap();
        assert_eq!(back, records());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("node_id,cycle_index,start_s,wake_s,end_s,outcome,"));
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cycles.jsonl");
        export_rows(&records(), Format::Jsonl, &path).unwrap();
        let back: Vec<CycleRecord> = import_rows(Format::Jsonl, &path).unwrap();
        assert_eq!(back, records());
    }

    #[test]
    fn reexport_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        let rows = vec![VoltageSample {
            t_s: 1.0,
            node_id: NodeId(1),
            voltage_v: 4.4,
        }];
        export_rows(&rows, Format::Csv, &a).unwrap();
        export_rows(&rows, Format::Csv, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn io_error_names_the_path() {
        let path = Path::new("/nonexistent-dir/x.csv");
        let err = export_rows::<VoltageSample>(&[], Format::Csv, path).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.csv"), "{err}");
    }

    #[test]
    fn format_parsing() {
        assert_eq!("csv".parse::<Format>(), Ok(Format::Csv));
        assert_eq!("jsonl".parse::<Format>(), Ok(Format::Jsonl));
        assert!("xml".parse::<Format>().is_err());
    }
}
