use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::log::{InteractionLog, RawRow, Rating};
use crate::error::{Error, Result};

/// Delimited text layouts accepted by [`ingest`]. Every layout carries the
/// columns `user, item, rating, timestamp`; a header row is optional.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Csv,
    /// Arbitrary delimiter such as MovieLens' `::`.
    Delimited(String),
}

impl Format {
    pub fn parse(name: &str, delimiter: Option<&str>) -> Result<Self> {
        match (name, delimiter) {
            ("tsv", None) => Ok(Format::Tsv),
            ("csv", None) => Ok(Format::Csv),
            ("delimited", Some(d)) | ("tsv" | "csv", Some(d)) if !d.is_empty() => {
                Ok(Format::Delimited(d.to_string()))
            }
            _ => Err(Error::Config(format!(
                "unknown data format {name:?} (delimiter {delimiter:?})"
            ))),
        }
    }

    fn delimiter(&self) -> &str {
        match self {
            Format::Tsv => "\t",
            Format::Csv => ",",
            Format::Delimited(d) => d,
        }
    }
}

fn parse_int(field: &str) -> Option<i64> {
    let field = field.trim();
    field.parse::<i64>().ok().or_else(|| {
        // Amazon exports write ratings as "4.0".
        field
            .parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && v.abs() < 9.0e15)
            .map(|v| v as i64)
    })
}

fn split_fields(line: &str, format: &Format) -> Vec<String> {
    match format {
        Format::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_reader(line.as_bytes());
            match reader.records().next() {
                Some(Ok(rec)) => rec.iter().map(|f| f.trim().to_string()).collect(),
                _ => vec![line.to_string()],
            }
        }
        other => line
            .split(other.delimiter())
            .map(|f| f.trim().to_string())
            .collect(),
    }
}

/// Read a delimited rating file into a validated [`InteractionLog`].
pub fn ingest(path: &Path, format: &Format) -> Result<InteractionLog> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    let mut first_row = true;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_start_matches('\u{feff}');
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line, format);
        let is_first = std::mem::replace(&mut first_row, false);
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let (rating, timestamp) = match (parse_int(&fields[2]), parse_int(&fields[3])) {
            (Some(r), Some(t)) => (r, t),
            _ if is_first => continue, // header row
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: "rating and timestamp must be integers".into(),
                })
            }
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "empty user or item id".into(),
            });
        }
        let rating = Rating::new(rating).map_err(|_| Error::RatingOutOfRange {
            path: path.to_path_buf(),
            line: line_no,
            value: rating,
        })?;
        rows.push(RawRow {
            line: line_no,
            user: fields[0].clone(),
            item: fields[1].clone(),
            rating,
            timestamp,
        });
    }
    InteractionLog::from_rows(rows, path, &[])
}

/// Write the log as tab-separated `user item rating timestamp` rows in
/// file order, readable by [`ingest`] with [`Format::Tsv`].
pub fn write_tsv(log: &InteractionLog, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for it in log.interactions() {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            log.user_name(it.user),
            log.item_name(it.item),
            it.rating,
            it.timestamp
        )?;
    }
    out.flush()?;
    Ok(())
}

const NORMALIZED_MAGIC: &[u8; 8] = b"OSALOG01";

/// Binary form of a validated log; identical input gives identical bytes.
pub fn write_normalized(log: &InteractionLog, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(NORMALIZED_MAGIC)?;
    bincode::serialize_into(&mut out, log)?;
    out.flush()?;
    Ok(())
}

pub fn read_normalized(path: &Path) -> Result<InteractionLog> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < NORMALIZED_MAGIC.len() || &bytes[..8] != NORMALIZED_MAGIC {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "not a normalized interaction log".into(),
        });
    }
    Ok(bincode::deserialize(&bytes[8..])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn empty_file_gives_empty_log() {
        let f = file("");
        let log = ingest(f.path(), &Format::Tsv).unwrap();
        assert_eq!(
            log.stats(),
            super::super::LogStats {
                interactions: 0,
                users: 0,
                items: 0
            }
        );
    }

    #[test]
    fn rating_six_is_rejected_with_line() {
        let f = file("1\t10\t4\t100\n1\t11\t6\t101\n");
        match ingest(f.path(), &Format::Tsv) {
            Err(Error::RatingOutOfRange { line, value, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(value, 6);
            }
            other => panic!("unexpected {other:?}"),
        }
        let msg = ingest(f.path(), &Format::Tsv).unwrap_err().to_string();
        assert!(msg.contains("rating out of range"), "{msg}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = file("user,item,rating,timestamp\n1,10,4,100\n1,11,x,101\n");
        match ingest(f.path(), &Format::Csv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = file("1,10,4\n");
        assert!(matches!(
            ingest(f.path(), &Format::Csv),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn duplicate_triple_is_rejected() {
        let f = file("1\t10\t4\t100\n1\t10\t5\t100\n");
        assert!(matches!(
            ingest(f.path(), &Format::Tsv),
            Err(Error::DuplicateInteraction { line: 2, .. })
        ));
    }

    #[test]
    fn movielens_delimiter_and_stable_ties() {
        let f = file("2::7::3::50\n1::9::5::20\n1::8::4::10\n1::3::2::20\n");
        let log = ingest(f.path(), &Format::Delimited("::".into())).unwrap();
        assert_eq!(log.stats().users, 2);
        assert_eq!(log.stats().items, 4);
        let u1 = log.find_user("1").unwrap();
        let items: Vec<&str> = log.history(u1).map(|it| log.item_name(it.item)).collect();
        // timestamp 20 tie keeps file order: 9 before 3
        assert_eq!(items, vec!["8", "9", "3"]);
    }

    #[test]
    fn normalized_round_trip_is_byte_stable() {
        let f = file("1\t10\t4\t100\n2\t11\t1\t101\n");
        let log = ingest(f.path(), &Format::Tsv).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        write_normalized(&log, &a).unwrap();
        write_normalized(&read_normalized(&a).unwrap(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
