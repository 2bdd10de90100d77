//! Event files and per-event prediction files.
//!
//! Two event formats are supported:
//!
//! - CSV with header `x,y,t,p,label` (the `label` column may be omitted or
//!   left empty per row), `t` in integer microseconds, `p` in {-1, 1} and
//!   `label` in {0, 1}.
//! - Packed little-endian binary: a 16-byte header (`b"EVD1"`, `u16` width,
//!   `u16` height, `u64` count) followed by 14-byte records of `u16 x`,
//!   `u16 y`, `u64 t`, `i8 p` and `i8 label` with -1 meaning unlabeled.
//!
//! Loading always checks that timestamps are non-decreasing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use evderain_core::events::{check_sorted, Event, Label, Polarity};

use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"EVD1";
pub const BINARY_HEADER_LEN: usize = 16;
pub const BINARY_RECORD_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.evd` and `.bin` are binary, anything else is CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("evd") | Some("bin") => Format::Binary,
            _ => Format::Csv,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Binary => "evd",
        }
    }
}

/// Events plus the sensor size when the file records one.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFile {
    pub events: Vec<Event>,
    pub sensor: Option<(u32, u32)>,
}

pub fn load_events(path: &Path, format: Format) -> Result<Vec<Event>> {
    Ok(load_event_file(path, format)?.events)
}

pub fn load_event_file(path: &Path, format: Format) -> Result<EventFile> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let loaded = match format {
        Format::Csv => EventFile {
            events: read_csv(path, file)?,
            sensor: None,
        },
        Format::Binary => read_binary(path, file)?,
    };
    check_sorted(&loaded.events).map_err(|e| Error::core(path.display().to_string(), e))?;
    Ok(loaded)
}

fn parse_err(path: &Path, line: u64, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn read_csv(path: &Path, file: File) -> Result<Vec<Event>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    let names: Vec<&str> = header.iter().collect();
    let labeled = match names.as_slice() {
        ["x", "y", "t", "p"] => false,
        ["x", "y", "t", "p", "label"] => true,
        _ => return Err(parse_err(path, 1, format!("expected header x,y,t,p,label, got {}", names.join(",")))),
    };
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<&str> {
            rec.get(i).ok_or_else(|| parse_err(path, line, format!("missing field {name}")))
        };
        let num = |i: usize, name: &str| -> Result<i64> {
            let s = field(i, name)?;
            s.parse::<i64>()
                .map_err(|_| parse_err(path, line, format!("{name}: `{s}` is not an integer")))
        };
        let x = num(0, "x")?;
        let y = num(1, "y")?;
        let t = num(2, "t")?;
        let p = num(3, "p")?;
        if x < 0 || x > u32::MAX as i64 || y < 0 || y > u32::MAX as i64 {
            return Err(parse_err(path, line, format!("coordinates ({x}, {y}) out of range")));
        }
        if t < 0 {
            return Err(parse_err(path, line, format!("negative timestamp {t}")));
        }
        let p = i8::try_from(p)
            .ok()
            .and_then(Polarity::from_sign)
            .ok_or_else(|| parse_err(path, line, format!("polarity {p} not in {{-1, 1}}")))?;
        let mut ev = Event::new(x as u32, y as u32, t as u64, p);
        if labeled && !field(4, "label")?.is_empty() {
            let l = num(4, "label")?;
            let label = u8::try_from(l)
                .ok()
                .and_then(Label::from_class)
                .ok_or_else(|| parse_err(path, line, format!("label {l} not in {{0, 1}}")))?;
            ev = ev.with_label(label);
        }
        events.push(ev);
    }
    Ok(events)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

fn read_binary(path: &Path, file: File) -> Result<EventFile> {
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Ok(EventFile {
            events: Vec::new(),
            sensor: None,
        });
    }
    if bytes.len() < BINARY_HEADER_LEN || &bytes[..4] != BINARY_MAGIC {
        return Err(parse_err(path, 0, "missing EVD1 header"));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]) as u32;
    let height = u16::from_le_bytes([bytes[6], bytes[7]]) as u32;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[BINARY_HEADER_LEN..];
    if (body.len() as u64) != count.saturating_mul(BINARY_RECORD_LEN as u64) {
        return Err(parse_err(
            path,
            0,
            format!("header declares {count} records but body holds {} bytes", body.len()),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    // records are numbered from 1 in error messages
    for (i, r) in body.chunks_exact(BINARY_RECORD_LEN).enumerate() {
        let rec = i as u64 + 1;
        let x = u16::from_le_bytes([r[0], r[1]]) as u32;
        let y = u16::from_le_bytes([r[2], r[3]]) as u32;
        let t = u64::from_le_bytes(r[4..12].try_into().unwrap());
        let p = Polarity::from_sign(r[12] as i8)
            .ok_or_else(|| parse_err(path, rec, format!("polarity {} not in {{-1, 1}}", r[12] as i8)))?;
        let mut ev = Event::new(x, y, t, p);
        match r[13] as i8 {
            -1 => {}
            l => {
                let label = u8::try_from(l)
                    .ok()
                    .and_then(Label::from_class)
                    .ok_or_else(|| parse_err(path, rec, format!("label {l} not in {{-1, 0, 1}}")))?;
                ev = ev.with_label(label);
            }
        }
        events.push(ev);
    }
    Ok(EventFile {
        events,
        sensor: Some((width, height)),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes events; `sensor` is stored in the binary header and ignored for
/// CSV.
pub fn save_events(path: &Path, events: &[Event], format: Format, sensor: (u32, u32)) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    match format {
        Format::Csv => {
            writeln!(out, "x,y,t,p,label").map_err(io)?;
            for e in events {
                let label = e.label.map(|l| l.class().to_string()).unwrap_or_default();
                writeln!(out, "{},{},{},{},{}", e.x, e.y, e.t, e.p.sign(), label).map_err(io)?;
            }
        }
        Format::Binary => {
            let dim = |v: u32, what: &str| {
                u16::try_from(v).map_err(|_| parse_err(path, 0, format!("{what} {v} does not fit in u16")))
            };
            out.write_all(BINARY_MAGIC).map_err(io)?;
            out.write_all(&dim(sensor.0, "width")?.to_le_bytes()).map_err(io)?;
            out.write_all(&dim(sensor.1, "height")?.to_le_bytes()).map_err(io)?;
            out.write_all(&(events.len() as u64).to_le_bytes()).map_err(io)?;
            for e in events {
                out.write_all(&dim(e.x, "x")?.to_le_bytes()).map_err(io)?;
                out.write_all(&dim(e.y, "y")?.to_le_bytes()).map_err(io)?;
                out.write_all(&e.t.to_le_bytes()).map_err(io)?;
                out.write_all(&[e.p.sign() as u8, e.label.map_or(-1, |l| l.class() as i8) as u8])
                    .map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)
}

/// CSV of `index,label`, one row per event in file order.
pub fn save_predictions(path: &Path, predictions: &[u8]) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "index,label").map_err(io)?;
    for (i, p) in predictions.iter().enumerate() {
        writeln!(out, "{i},{p}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a prediction file; indices must run 0, 1, 2, ... in order.
pub fn load_predictions(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    if header.iter().collect::<Vec<_>>() != ["index", "label"] {
        return Err(parse_err(path, 1, "expected header index,label"));
    }
    let mut preds = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let index: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(path, line, format!("index `{}` is not an integer", &rec[0])))?;
        if index != preds.len() {
            return Err(parse_err(path, line, format!("expected index {}, got {index}", preds.len())));
        }
        match &rec[1] {
            "0" => preds.push(0),
            "1" => preds.push(1),
            other => return Err(parse_err(path, line, format!("label `{other}` not in {{0, 1}}"))),
        }
    }
    Ok(preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Event> {
        vec![
            Event::new(0, 0, 0, Polarity::Positive).with_label(Label::Background),
            Event::new(1, 1, 10, Polarity::Negative).with_label(Label::Rain),
            Event::new(63, 47, 10, Polarity::Positive),
        ]
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for format in [Format::Csv, Format::Binary] {
            let p = dir.path().join(format!("ev.{}", format.extension()));
            save_events(&p, &sample(), format, (64, 48)).unwrap();
            assert_eq!(Format::from_path(&p), format);
            let f = load_event_file(&p, format).unwrap();
            assert_eq!(f.events, sample());
            if format == Format::Binary {
                assert_eq!(f.sensor, Some((64, 48)));
                let len = std::fs::metadata(&p).unwrap().len() as usize;
                assert_eq!(len, BINARY_HEADER_LEN + 3 * BINARY_RECORD_LEN);
            }
        }
    }

    #[test]
    fn csv_examples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "x,y,t,p,label\n0,0,0,1,0\n1,1,10,-1,1\n").unwrap();
        let ev = load_events(&p, Format::Csv).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[1].label, Some(Label::Rain));
        assert_eq!(ev[1].p, Polarity::Negative);

        std::fs::write(&p, "").unwrap();
        assert!(load_events(&p, Format::Csv).unwrap().is_empty());

        std::fs::write(&p, "x,y,t,p\n0,0,100,1\n0,0,50,1\n").unwrap();
        let err = load_events(&p, Format::Csv).unwrap_err();
        assert!(matches!(
            err,
            Error::Core {
                source: evderain_core::Error::UnsortedTimestamps { index: 1, .. },
                ..
            }
        ));
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        for (body, line) in [
            ("x,y,t,p,label\n0,0,0,1,0\n0,0,1,2,0\n", 3),
            ("x,y,t,p,label\n0,0,0,1,0\n0,0,1,1,0\n0,zz,2,1,\n", 4),
            ("x,y,t,p,label\n0,0,0,1\n", 2),
            ("x,y,t,p,label\n0,0,0,1,7\n", 2),
        ] {
            std::fs::write(&p, body).unwrap();
            match load_events(&p, Format::Csv) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{body}"),
                other => panic!("{body}: {other:?}"),
            }
        }
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(load_events(&p, Format::Csv), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn binary_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ev.evd");
        save_events(&p, &sample(), Format::Binary, (64, 48)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_events(&p, Format::Binary), Err(Error::Parse { .. })));
        assert!(matches!(
            load_events(&dir.path().join("nope.evd"), Format::Binary),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.csv");
        save_predictions(&p, &[0, 1, 1, 0]).unwrap();
        assert_eq!(load_predictions(&p).unwrap(), vec![0, 1, 1, 0]);
        std::fs::write(&p, "index,label\n0,1\n2,0\n").unwrap();
        assert!(matches!(load_predictions(&p), Err(Error::Parse { line: 3, .. })));
    }
}
