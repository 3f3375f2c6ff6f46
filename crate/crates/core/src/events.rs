//! Post-processing of peak-event streams.
//!
//! Maps reduce a stream to one value per pixel: last depth, mean of the last
//! `k` depths, event count, and reflectivity `ρ = count · z²` where the event
//! count stands in for received power. Pixels without events carry no value;
//! files keep them in a separate mask instead of a magic depth.
//!
//! Dynamic-Depth (DD) encoding turns a pixel's peak events into sparse
//! polarity events, the depth counterpart of a DVS brightness event.

use std::collections::{BTreeMap, VecDeque};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::detector::{CheckRecord, PeakEvent};
use crate::{Error, HistogramConfig, PixelCoord, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DdMode {
    /// Compare the current average with the average at the last emitted
    /// event; slow sustained motion accumulates until it crosses.
    #[default]
    Reference,
    /// Compare consecutive moving averages.
    Consecutive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdConfig {
    /// Meters.
    pub dd_threshold: f64,
    /// Events in the moving average.
    pub avg_window: usize,
    pub mode: DdMode,
}

impl Default for DdConfig {
    fn default() -> Self {
        Self {
            dd_threshold: 0.1,
            avg_window: 3,
            mode: DdMode::Reference,
        }
    }
}

impl DdConfig {
    pub fn new(dd_threshold: f64, avg_window: usize, mode: DdMode) -> Result<Self> {
        if !(dd_threshold > 0.0 && dd_threshold.is_finite()) {
            return Err(Error::config("dd_threshold", "must be positive"));
        }
        if avg_window == 0 {
            return Err(Error::config("avg_window", "must be at least 1"));
        }
        Ok(Self {
            dd_threshold,
            avg_window,
            mode,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    /// Moving away.
    Positive,
    /// Approaching.
    Negative,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdEvent {
    pub coord: PixelCoord,
    pub cycle_stamp: u64,
    pub polarity: Polarity,
    /// Averaged depth before the change, meters.
    pub depth_before: f64,
    pub depth_after: f64,
}

/// Rounding allowance on the threshold comparison, so a change of exactly
/// the threshold does not fire on floating-point noise in the average.
const DD_SLACK_M: f64 = 1e-9;

/// DD-encodes one pixel's peak events, which must be in time order.
///
/// No output until `avg_window` events exist. The window keeps rolling after
/// an emission.
pub fn dd_encode_pixel(events: &[PeakEvent], cfg: &DdConfig) -> Vec<DdEvent> {
    let mut window = VecDeque::with_capacity(cfg.avg_window + 1);
    let mut reference: Option<f64> = None;
    let mut out = Vec::new();
    for ev in events {
        window.push_back(ev.depth.meters);
        if window.len() > cfg.avg_window {
            window.pop_front();
        }
        if window.len() < cfg.avg_window {
            continue;
        }
        let avg = window.iter().sum::<f64>() / window.len() as f64;
        let Some(prev) = reference else {
            reference = Some(avg);
            continue;
        };
        let diff = avg - prev;
        if diff.abs() > cfg.dd_threshold + DD_SLACK_M {
            out.push(DdEvent {
                coord: ev.coord,
                cycle_stamp: ev.cycle_stamp,
                polarity: if diff > 0.0 {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                },
                depth_before: prev,
                depth_after: avg,
            });
            reference = Some(avg);
        } else if cfg.mode == DdMode::Consecutive {
            reference = Some(avg);
        }
    }
    out
}

/// Groups peak events by pixel in time order.
pub fn group_by_pixel<'a>(
    events: impl IntoIterator<Item = &'a PeakEvent>,
) -> BTreeMap<(u32, u32), Vec<PeakEvent>> {
    let mut by_pixel: BTreeMap<(u32, u32), Vec<PeakEvent>> = BTreeMap::new();
    for ev in events {
        by_pixel
            .entry((ev.coord.y, ev.coord.x))
            .or_default()
            .push(ev.clone());
    }
    for list in by_pixel.values_mut() {
        list.sort_by_key(|e| e.cycle_stamp);
    }
    by_pixel
}

/// DD-encodes a whole stream; output is sorted by `(cycle_stamp, y, x)`.
pub fn dd_encode(events: &[PeakEvent], cfg: &DdConfig) -> Vec<DdEvent> {
    let mut out: Vec<DdEvent> = group_by_pixel(events)
        .values()
        .flat_map(|list| dd_encode_pixel(list, cfg))
        .collect();
    out.sort_by_key(|d| (d.cycle_stamp, d.coord.y, d.coord.x));
    out
}

/// `1 − DD/peaks`; `None` without peak events.
pub fn compression_ratio(dd_events: usize, peak_events: usize) -> Option<f64> {
    (peak_events > 0).then(|| 1.0 - dd_events as f64 / peak_events as f64)
}

/// A per-pixel image; `None` marks a pixel with no value.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    pub width: u32,
    pub height: u32,
    pub unit: &'static str,
    pub cells: Vec<Option<f64>>,
}

impl PixelMap {
    pub fn empty(width: u32, height: u32, unit: &'static str) -> Self {
        Self {
            width,
            height,
            unit,
            cells: vec![None; width as usize * height as usize],
        }
    }

    pub fn get(&self, c: PixelCoord) -> Option<f64> {
        self.cells[c.index(self.width)]
    }

    pub fn valid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Divides every value by the largest one.
    pub fn normalized_by_max(&self) -> PixelMap {
        let max = self.cells.iter().flatten().copied().fold(0.0, f64::max);
        let cells = self
            .cells
            .iter()
            .map(|c| c.map(|v| if max > 0.0 { v / max } else { 0.0 }))
            .collect();
        PixelMap {
            cells,
            unit: "normalized",
            ..*self
        }
    }

    pub fn meta(&self, kind: &str) -> MapMeta {
        MapMeta {
            kind: kind.to_string(),
            width: self.width,
            height: self.height,
            unit: self.unit.to_string(),
            valid_pixels: self.valid_count(),
            layout: "row-major CSV, one line per row y, columns x; empty cell = no value".into(),
            mask: "1 where the pixel has a value, 0 otherwise".into(),
        }
    }

    /// CSV grid, one line per row; pixels without a value are empty cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for row in self.cells.chunks(self.width as usize) {
            let line: Vec<String> = row
                .iter()
                .map(|c| c.map(|v| format!("{v:.6}")).unwrap_or_default())
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn write_mask_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for row in self.cells.chunks(self.width as usize) {
            let line: Vec<&str> = row
                .iter()
                .map(|c| if c.is_some() { "1" } else { "0" })
                .collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Metadata written next to a map grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub kind: String,
    pub width: u32,
    pub height: u32,
    pub unit: String,
    pub valid_pixels: usize,
    pub layout: String,
    pub mask: String,
}

fn checked_groups(
    events: &[PeakEvent],
    width: u32,
    height: u32,
) -> Result<BTreeMap<(u32, u32), Vec<PeakEvent>>> {
    if let Some(ev) = events
        .iter()
        .find(|e| e.coord.x >= width || e.coord.y >= height)
    {
        return Err(Error::Domain(format!(
            "event at ({}, {}) lies outside the {width}x{height} array",
            ev.coord.x, ev.coord.y
        )));
    }
    Ok(group_by_pixel(events))
}

/// Depth of each pixel's final peak event.
pub fn depth_map_last(events: &[PeakEvent], width: u32, height: u32) -> Result<PixelMap> {
    depth_map_avg_k(events, width, height, 1)
}

/// Mean depth of up to the last `k` peak events of each pixel.
pub fn depth_map_avg_k(
    events: &[PeakEvent],
    width: u32,
    height: u32,
    k: usize,
) -> Result<PixelMap> {
    if k == 0 {
        return Err(Error::config("k", "must be at least 1"));
    }
    let mut map = PixelMap::empty(width, height, "m");
    for ((y, x), list) in checked_groups(events, width, height)? {
        let tail = &list[list.len().saturating_sub(k)..];
        let mean = tail.iter().map(|e| e.depth.meters).sum::<f64>() / tail.len() as f64;
        map.cells[PixelCoord::new(x, y).index(width)] = Some(mean);
    }
    Ok(map)
}

/// Peak events per pixel; every pixel has a value.
pub fn event_count_map(events: &[PeakEvent], width: u32, height: u32) -> Result<PixelMap> {
    let mut map = PixelMap {
        cells: vec![Some(0.0); width as usize * height as usize],
        ..PixelMap::empty(width, height, "events")
    };
    for ((y, x), list) in checked_groups(events, width, height)? {
        map.cells[PixelCoord::new(x, y).index(width)] = Some(list.len() as f64);
    }
    Ok(map)
}

/// `ρ = count · (mean depth)²` per pixel, before normalization.
pub fn reflectivity_raw(events: &[PeakEvent], width: u32, height: u32) -> Result<PixelMap> {
    let mut map = PixelMap::empty(width, height, "events*m^2");
    for ((y, x), list) in checked_groups(events, width, height)? {
        let z = list.iter().map(|e| e.depth.meters).sum::<f64>() / list.len() as f64;
        map.cells[PixelCoord::new(x, y).index(width)] = Some(list.len() as f64 * z * z);
    }
    Ok(map)
}

/// Reflectivity image scaled to `[0, 1]` by its maximum.
pub fn reflectivity_map(events: &[PeakEvent], width: u32, height: u32) -> Result<PixelMap> {
    Ok(reflectivity_raw(events, width, height)?.normalized_by_max())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_events: usize,
    pub n_false: usize,
    /// `None` for an empty stream.
    pub fpr: Option<f64>,
    /// Meters; `None` for an empty stream.
    pub rmse: Option<f64>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "n_events,n_false,fpr,rmse_m";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.8}")).unwrap_or_default();
        format!(
            "{},{},{},{}",
            self.n_events,
            self.n_false,
            opt(self.fpr),
            opt(self.rmse)
        )
    }
}

/// Scores peak events against a flat target at `true_depth_m`.
///
/// An event is false when its interpolated position is more than half a bin
/// from the truth. RMSE covers every event, false ones included.
pub fn evaluate_flat_target(
    events: &[PeakEvent],
    true_depth_m: f64,
    cfg: &HistogramConfig,
) -> EvalReport {
    let truth_bin = cfg.depth_to_bin(true_depth_m);
    let n_false = events
        .iter()
        .filter(|e| (e.depth.bin_position - truth_bin).abs() > 0.5)
        .count();
    let n = events.len();
    if n == 0 {
        return EvalReport {
            n_events: 0,
            n_false: 0,
            fpr: None,
            rmse: None,
        };
    }
    let mse = events
        .iter()
        .map(|e| (e.depth.meters - true_depth_m).powi(2))
        .sum::<f64>()
        / n as f64;
    EvalReport {
        n_events: n,
        n_false,
        fpr: Some(n_false as f64 / n as f64),
        rmse: Some(mse.sqrt()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FalseAlarmTally {
    pub trials: u64,
    pub false_alarms: u64,
}

impl FalseAlarmTally {
    pub fn rate(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.false_alarms as f64 / self.trials as f64)
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            trials: self.trials + other.trials,
            false_alarms: self.false_alarms + other.false_alarms,
        }
    }
}

/// Counts threshold crossings by background-only bins at first checks.
///
/// First checks (`N = L1`) follow a reset and see fresh data, so they are
/// independent trials. A trial is a false alarm when any bin outside
/// `signal_bins` exceeds the check's threshold.
pub fn check_false_alarms(checks: &[CheckRecord], signal_bins: &[usize]) -> FalseAlarmTally {
    let mut tally = FalseAlarmTally::default();
    for c in checks.iter().filter(|c| c.first_check) {
        tally.trials += 1;
        if c.bins_over_threshold
            .iter()
            .any(|b| !signal_bins.contains(b))
        {
            tally.false_alarms += 1;
        }
    }
    tally
}
