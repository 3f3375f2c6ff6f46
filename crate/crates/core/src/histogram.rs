//! Timing histograms and the bin/depth geometry shared by every module.
//!
//! Bin `i` spans `[i·Δt, (i+1)·Δt)` of the laser period. Fractional bin
//! positions reported by the detector are referenced to bin centres: a
//! position of `p` means "the centre of bin `p`", and converts to depth as
//! `p·Δt·c/2`. A return whose pulse centre arrives at time `t` therefore sits
//! at bin position `t/Δt − 0.5`; [`HistogramConfig::depth_to_arrival_time`]
//! is the inverse used by the scene generator so scene depths and reported
//! depths share one frame.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    num_bins: usize,
    bin_width: f64,
    laser_rate: f64,
}

impl HistogramConfig {
    /// `bin_width` in seconds, `laser_rate` in cycles per second.
    pub fn new(num_bins: usize, bin_width: f64, laser_rate: f64) -> Result<Self> {
        if num_bins < 2 {
            return Err(Error::config("num_bins", "must be at least 2"));
        }
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(Error::config("bin_width", "must be a positive duration"));
        }
        if !(laser_rate.is_finite() && laser_rate > 0.0) {
            return Err(Error::config("laser_rate", "must be positive"));
        }
        // Small relative slack so that e.g. 400 × 250 ps at 10 MHz is accepted.
        if num_bins as f64 * bin_width > (1.0 + 1e-12) / laser_rate {
            return Err(Error::config(
                "num_bins",
                format!(
                    "histogram span {:.3e} s exceeds the laser period {:.3e} s",
                    num_bins as f64 * bin_width,
                    1.0 / laser_rate
                ),
            ));
        }
        Ok(Self {
            num_bins,
            bin_width,
            laser_rate,
        })
    }

    /// Eight 8.75 ns bins at 1.2 MHz: the fixed-gate window of the 256×128
    /// prototype sensor.
    pub fn eight_bin_window() -> Self {
        Self::new(8, 8.75e-9, 1.2e6).expect("valid constants")
    }

    /// 128 bins of 250 ps at 10 MHz, as on the FPGA prototype.
    pub fn fpga_128() -> Self {
        Self::new(128, 250e-12, 10e6).expect("valid constants")
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn laser_rate(&self) -> f64 {
        self.laser_rate
    }

    /// Total time covered by the histogram.
    pub fn span(&self) -> f64 {
        self.num_bins as f64 * self.bin_width
    }

    /// Depth covered by one bin, `c·Δt/2`.
    pub fn meters_per_bin(&self) -> f64 {
        self.bin_width * SPEED_OF_LIGHT / 2.0
    }

    /// Start time of bin `i`.
    pub fn bin_start(&self, i: usize) -> f64 {
        i as f64 * self.bin_width
    }

    pub fn bin_to_depth(&self, bin_position: f64) -> f64 {
        bin_position * self.bin_width * SPEED_OF_LIGHT / 2.0
    }

    pub fn depth_to_bin(&self, meters: f64) -> f64 {
        meters / self.meters_per_bin()
    }

    /// Arrival time of the pulse centre for an object at `meters`, in the
    /// bin-centre frame described in the module docs.
    pub fn depth_to_arrival_time(&self, meters: f64) -> f64 {
        (self.depth_to_bin(meters) + 0.5) * self.bin_width
    }

    pub fn arrival_time_to_bin(&self, seconds: f64) -> f64 {
        seconds / self.bin_width - 0.5
    }

    pub fn cycles_to_seconds(&self, cycles: u64) -> f64 {
        cycles as f64 / self.laser_rate
    }
}

/// Accumulated photon counts for one pixel plus the number of laser cycles
/// that went into them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: Vec<u64>,
    cycles: u64,
}

impl Histogram {
    pub fn new(num_bins: usize) -> Self {
        Self {
            counts: vec![0; num_bins],
            cycles: 0,
        }
    }

    pub fn from_counts(counts: Vec<u64>, cycles: u64) -> Self {
        Self { counts, cycles }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one laser cycle worth of counts.
    pub fn accumulate(&mut self, cycle_counts: &[u32]) -> Result<()> {
        self.accumulate_cycles(cycle_counts, 1)
    }

    /// Adds counts that were gathered over `cycles` laser cycles.
    pub fn accumulate_cycles(&mut self, counts: &[u32], cycles: u64) -> Result<()> {
        if counts.len() != self.counts.len() {
            return Err(Error::config(
                "cycle_counts",
                format!("expected {} bins, got {}", self.counts.len(), counts.len()),
            ));
        }
        for (acc, &c) in self.counts.iter_mut().zip(counts) {
            *acc += u64::from(c);
        }
        self.cycles += cycles;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.cycles = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelCoord {
    pub x: u32,
    pub y: u32,
}

impl PixelCoord {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Row-major index inside an array of the given width.
    pub fn index(&self, width: u32) -> usize {
        self.y as usize * width as usize + self.x as usize
    }
}

/// A depth reported in both fractional bins and meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthValue {
    pub bin_position: f64,
    pub meters: f64,
}

impl DepthValue {
    pub fn from_bin(bin_position: f64, cfg: &HistogramConfig) -> Self {
        Self {
            bin_position,
            meters: cfg.bin_to_depth(bin_position),
        }
    }
}
