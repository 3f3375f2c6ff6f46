//! Newline-delimited event records.
//!
//! One record per line, comma separated, no quoting. Lines starting with `#`
//! and blank lines are ignored. Fixed-point numbers use six decimals.
//!
//! ```text
//! # kind,cycle_stamp,x,y,peak_bin,subbin_position,depth_m,peak_count,lambda_b_est,cycles_used
//! PEAK,100,3,2,4,4.123456,5.408812,57,3.142857,100
//! TIMEOUT,2000,0,0,,,,,,2000
//! DD_POS,340,3,2,1.234567,1.345678
//! DD_NEG,910,3,2,1.345678,1.201234
//! ```
//!
//! `PEAK` and `TIMEOUT` share the ten-column layout; a timeout leaves the
//! peak columns empty. Dynamic-Depth records carry
//! `kind,cycle_stamp,x,y,depth_before_m,depth_after_m`.

use std::io::{self, BufRead, Write};
use std::path::Path;

use crate::detector::{DetectorEvent, PeakEvent, TimeoutEvent};
use crate::events::{DdEvent, Polarity};
use crate::{DepthValue, Error, PixelCoord, Result};

pub const HEADER: &str =
    "# kind,cycle_stamp,x,y,peak_bin,subbin_position,depth_m,peak_count,lambda_b_est,cycles_used";

#[derive(Debug, Clone, PartialEq)]
pub enum EventRecord {
    Peak(PeakEvent),
    Timeout(TimeoutEvent),
    Dd(DdEvent),
}

impl From<DetectorEvent> for EventRecord {
    fn from(ev: DetectorEvent) -> Self {
        match ev {
            DetectorEvent::Peak(p) => EventRecord::Peak(p),
            DetectorEvent::Timeout(t) => EventRecord::Timeout(t),
        }
    }
}

impl From<DdEvent> for EventRecord {
    fn from(ev: DdEvent) -> Self {
        EventRecord::Dd(ev)
    }
}

impl EventRecord {
    pub fn as_peak(&self) -> Option<&PeakEvent> {
        match self {
            EventRecord::Peak(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_dd(&self) -> Option<&DdEvent> {
        match self {
            EventRecord::Dd(d) => Some(d),
            _ => None,
        }
    }
}

pub fn format_record(rec: &EventRecord) -> String {
    match rec {
        EventRecord::Peak(p) => format!(
            "PEAK,{},{},{},{},{:.6},{:.6},{},{:.6},{}",
            p.cycle_stamp,
            p.coord.x,
            p.coord.y,
            p.peak_bin,
            p.depth.bin_position,
            p.depth.meters,
            p.peak_count,
            p.lambda_b_est,
            p.cycles_used
        ),
        EventRecord::Timeout(t) => format!(
            "TIMEOUT,{},{},{},,,,,,{}",
            t.cycle_stamp, t.coord.x, t.coord.y, t.cycles_used
        ),
        EventRecord::Dd(d) => format!(
            "{},{},{},{},{:.6},{:.6}",
            match d.polarity {
                Polarity::Positive => "DD_POS",
                Polarity::Negative => "DD_NEG",
            },
            d.cycle_stamp,
            d.coord.x,
            d.coord.y,
            d.depth_before,
            d.depth_after
        ),
    }
}

/// Writes the header followed by one line per record.
pub fn write_records<'a, W: Write>(
    mut w: W,
    records: impl IntoIterator<Item = &'a EventRecord>,
) -> io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for rec in records {
        writeln!(w, "{}", format_record(rec))?;
    }
    w.flush()
}

pub fn write_detector_events<W: Write>(w: W, events: &[DetectorEvent]) -> io::Result<()> {
    let recs: Vec<EventRecord> = events.iter().cloned().map(EventRecord::from).collect();
    write_records(w, &recs)
}

/// Serialises a detector stream to bytes; used for determinism checks.
pub fn detector_stream_bytes(events: &[DetectorEvent]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_detector_events(&mut buf, events).expect("writing to memory");
    buf
}

pub fn parse_line(line: &str, line_no: usize) -> Result<Option<EventRecord>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let fields: Vec<&str> = line.split(',').collect();
    let kind = fields[0];
    let expected = match kind {
        "PEAK" | "TIMEOUT" => 10,
        "DD_POS" | "DD_NEG" => 6,
        other => return Err(err(format!("unknown record kind `{other}`"))),
    };
    if fields.len() != expected {
        return Err(err(format!(
            "{kind} record needs {expected} fields, found {}",
            fields.len()
        )));
    }
    let int = |i: usize, name: &str| -> Result<u64> {
        fields[i]
            .parse()
            .map_err(|_| err(format!("field `{name}`: not an integer: `{}`", fields[i])))
    };
    let float = |i: usize, name: &str| -> Result<f64> {
        let v: f64 = fields[i]
            .parse()
            .map_err(|_| err(format!("field `{name}`: not a number: `{}`", fields[i])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(format!("field `{name}`: not finite")))
        }
    };
    let coord_part = |i: usize, name: &str| -> Result<u32> {
        u32::try_from(int(i, name)?).map_err(|_| err(format!("field `{name}` out of range")))
    };
    let cycle_stamp = int(1, "cycle_stamp")?;
    let coord = PixelCoord::new(coord_part(2, "x")?, coord_part(3, "y")?);

    let rec = match kind {
        "PEAK" => EventRecord::Peak(PeakEvent {
            coord,
            cycle_stamp,
            peak_bin: int(4, "peak_bin")? as usize,
            depth: DepthValue {
                bin_position: float(5, "subbin_position")?,
                meters: float(6, "depth_m")?,
            },
            peak_count: int(7, "peak_count")?,
            lambda_b_est: float(8, "lambda_b_est")?,
            cycles_used: int(9, "cycles_used")?,
        }),
        "TIMEOUT" => {
            if fields[4..9].iter().any(|f| !f.is_empty()) {
                return Err(err("TIMEOUT record must leave peak columns empty".into()));
            }
            EventRecord::Timeout(TimeoutEvent {
                coord,
                cycle_stamp,
                cycles_used: int(9, "cycles_used")?,
            })
        }
        _ => EventRecord::Dd(DdEvent {
            coord,
            cycle_stamp,
            polarity: if kind == "DD_POS" {
                Polarity::Positive
            } else {
                Polarity::Negative
            },
            depth_before: float(4, "depth_before_m")?,
            depth_after: float(5, "depth_after_m")?,
        }),
    };
    Ok(Some(rec))
}

pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        if let Some(rec) = parse_line(&line?, i + 1)? {
            out.push(rec);
        }
    }
    Ok(out)
}

pub fn read_stream(path: &Path) -> Result<Vec<EventRecord>> {
    let f = std::fs::File::open(path)?;
    parse_records(io::BufReader::new(f))
}

pub fn peak_events(records: &[EventRecord]) -> Vec<PeakEvent> {
    records
        .iter()
        .filter_map(|r| r.as_peak().cloned())
        .collect()
}
