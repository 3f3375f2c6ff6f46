//! The asynchronous per-pixel detection engine.
//!
//! Each pixel accumulates its own histogram in batches of `X` laser cycles.
//! Once at least `L1` cycles are in, every batch boundary runs a check: find
//! the peak bin, estimate the background level `λ_b` from the remaining bins,
//! and emit a peak event if the peak count exceeds `I_th = λ_b + α·√λ_b`. An
//! event, or reaching `L2` cycles without one, clears the histogram and the
//! pixel starts over immediately. Pixels never wait for one another.
//!
//! Checks are inclusive at both ends (`L1 ≤ N ≤ L2`), so a strong pixel can
//! report at exactly `L1` cycles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scene::{sample_counts, SceneSpec};
use crate::{DepthValue, Error, Histogram, HistogramConfig, PixelCoord, RandomSource, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsyncParams {
    pub alpha: f64,
    pub l1: u64,
    pub l2: u64,
    pub x: u64,
}

impl AsyncParams {
    /// Validates the tuple, rounding `L1` and `L2` up to multiples of `X`.
    pub fn new(alpha: f64, l1: u64, l2: u64, x: u64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::config("alpha", "must be finite and non-negative"));
        }
        if x == 0 {
            return Err(Error::config(
                "x",
                "check period must be at least one cycle",
            ));
        }
        if l1 == 0 {
            return Err(Error::config("l1", "must be positive"));
        }
        let l1 = l1.div_ceil(x) * x;
        let l2 = l2.div_ceil(x) * x;
        if l1 >= l2 {
            return Err(Error::config(
                "l2",
                format!("must exceed l1 after rounding to multiples of x (l1 = {l1}, l2 = {l2})"),
            ));
        }
        Ok(Self { alpha, l1, l2, x })
    }
}

/// Counts gathered over `cycles` consecutive laser cycles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleBatch {
    pub counts: Vec<u32>,
    pub cycles: u64,
}

/// Index of the largest count, lowest index on ties.
pub fn find_peak(counts: &[u64]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Mean count of all bins except the peak bin.
pub fn estimate_background(counts: &[u64]) -> f64 {
    background_excluding(counts, find_peak(counts))
}

pub fn background_excluding(counts: &[u64], peak: usize) -> f64 {
    let total: u64 = counts.iter().sum();
    (total - counts[peak]) as f64 / (counts.len() - 1) as f64
}

/// `I_th = λ_b + α·√λ_b`.
pub fn threshold(lambda_b: f64, alpha: f64) -> f64 {
    lambda_b + alpha * lambda_b.sqrt()
}

/// Centre-of-mass position over the peak bin and its two neighbours, with
/// the background level subtracted and negative weights clamped to zero.
pub fn cmm_interpolate(counts: &[u64], peak: usize, lambda_b: f64) -> f64 {
    let lo = peak.saturating_sub(1);
    let hi = (peak + 1).min(counts.len() - 1);
    let (mut moment, mut mass) = (0.0, 0.0);
    for (j, &c) in counts.iter().enumerate().take(hi + 1).skip(lo) {
        let w = (c as f64 - lambda_b).max(0.0);
        moment += (j as f64 - peak as f64) * w;
        mass += w;
    }
    if mass > 0.0 {
        peak as f64 + moment / mass
    } else {
        peak as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakEvent {
    pub coord: PixelCoord,
    pub cycle_stamp: u64,
    pub depth: DepthValue,
    pub peak_bin: usize,
    pub peak_count: u64,
    pub lambda_b_est: f64,
    pub cycles_used: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeoutEvent {
    pub coord: PixelCoord,
    pub cycle_stamp: u64,
    pub cycles_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DetectorEvent {
    Peak(PeakEvent),
    Timeout(TimeoutEvent),
}

impl DetectorEvent {
    pub fn coord(&self) -> PixelCoord {
        match self {
            DetectorEvent::Peak(e) => e.coord,
            DetectorEvent::Timeout(e) => e.coord,
        }
    }

    pub fn cycle_stamp(&self) -> u64 {
        match self {
            DetectorEvent::Peak(e) => e.cycle_stamp,
            DetectorEvent::Timeout(e) => e.cycle_stamp,
        }
    }

    pub fn as_peak(&self) -> Option<&PeakEvent> {
        match self {
            DetectorEvent::Peak(e) => Some(e),
            DetectorEvent::Timeout(_) => None,
        }
    }

    /// Stream ordering key: stamp, then row, then column.
    pub fn sort_key(&self) -> (u64, u32, u32) {
        let c = self.coord();
        (self.cycle_stamp(), c.y, c.x)
    }
}

/// Diagnostic record of one threshold check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRecord {
    pub coord: PixelCoord,
    pub cycle_stamp: u64,
    pub cycles_used: u64,
    /// True for the first check after a reset (`N = L1`). These checks see
    /// disjoint stretches of data and are therefore independent trials.
    pub first_check: bool,
    pub peak_bin: usize,
    pub peak_count: u64,
    pub lambda_b_est: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Every bin whose count exceeded the threshold.
    pub bins_over_threshold: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutcome {
    pub event: Option<DetectorEvent>,
    pub check: Option<CheckRecord>,
}

#[derive(Debug, Clone)]
pub struct PixelState {
    pub coord: PixelCoord,
    pub hist: Histogram,
}

impl PixelState {
    pub fn new(coord: PixelCoord, num_bins: usize) -> Self {
        Self {
            coord,
            hist: Histogram::new(num_bins),
        }
    }

    /// Cycles accumulated since the last reset.
    pub fn cycles_since_reset(&self) -> u64 {
        self.hist.cycles()
    }

    /// Feeds one batch of exactly `X` cycles ending at global cycle
    /// `global_cycle` and runs the check schedule.
    pub fn step(
        &mut self,
        batch: &CycleBatch,
        params: &AsyncParams,
        cfg: &HistogramConfig,
        global_cycle: u64,
    ) -> Result<StepOutcome> {
        if batch.cycles != params.x {
            return Err(Error::config(
                "batch",
                format!(
                    "expected {} cycles per batch, got {}",
                    params.x, batch.cycles
                ),
            ));
        }
        self.hist.accumulate_cycles(&batch.counts, batch.cycles)?;
        let n = self.hist.cycles();
        if n < params.l1 {
            return Ok(StepOutcome::default());
        }

        let counts = self.hist.counts();
        let peak_bin = find_peak(counts);
        let peak_count = counts[peak_bin];
        let lambda_b = background_excluding(counts, peak_bin);
        let th = threshold(lambda_b, params.alpha);
        let passed = peak_count as f64 > th;
        let check = CheckRecord {
            coord: self.coord,
            cycle_stamp: global_cycle,
            cycles_used: n,
            first_check: n == params.l1,
            peak_bin,
            peak_count,
            lambda_b_est: lambda_b,
            threshold: th,
            passed,
            bins_over_threshold: counts
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c as f64 > th)
                .map(|(i, _)| i)
                .collect(),
        };

        let event = if passed {
            let position = cmm_interpolate(counts, peak_bin, lambda_b);
            Some(DetectorEvent::Peak(PeakEvent {
                coord: self.coord,
                cycle_stamp: global_cycle,
                depth: DepthValue::from_bin(position, cfg),
                peak_bin,
                peak_count,
                lambda_b_est: lambda_b,
                cycles_used: n,
            }))
        } else if n >= params.l2 {
            Some(DetectorEvent::Timeout(TimeoutEvent {
                coord: self.coord,
                cycle_stamp: global_cycle,
                cycles_used: n,
            }))
        } else {
            None
        };
        if event.is_some() {
            self.hist.reset();
        }
        Ok(StepOutcome {
            event,
            check: Some(check),
        })
    }
}

/// Single-step convenience wrapper around [`PixelState::step`].
pub fn step_pixel(
    state: &mut PixelState,
    batch: &CycleBatch,
    params: &AsyncParams,
    cfg: &HistogramConfig,
    global_cycle: u64,
) -> Result<Option<DetectorEvent>> {
    state
        .step(batch, params, cfg, global_cycle)
        .map(|o| o.event)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub record_checks: bool,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub events: Vec<DetectorEvent>,
    pub checks: Vec<CheckRecord>,
}

/// Runs every pixel of `scene` for `total_cycles` laser cycles and returns
/// the merged event stream, sorted by `(cycle_stamp, y, x)`.
///
/// Only whole batches of `X` cycles are simulated.
pub fn run_array(
    scene: &SceneSpec,
    params: &AsyncParams,
    total_cycles: u64,
    rnd: &RandomSource,
) -> Vec<DetectorEvent> {
    run_array_with(scene, params, total_cycles, rnd, RunOptions::default()).events
}

pub fn run_array_with(
    scene: &SceneSpec,
    params: &AsyncParams,
    total_cycles: u64,
    rnd: &RandomSource,
    opts: RunOptions,
) -> RunOutput {
    let coords: Vec<PixelCoord> = scene.coords().collect();
    let per_pixel: Vec<RunOutput> = coords
        .par_iter()
        .map(|&coord| run_pixel(scene, params, total_cycles, rnd, coord, opts))
        .collect();

    let mut out = RunOutput::default();
    for p in per_pixel {
        out.events.extend(p.events);
        out.checks.extend(p.checks);
    }
    out.events.sort_by_key(DetectorEvent::sort_key);
    out.checks
        .sort_by_key(|c| (c.cycle_stamp, c.coord.y, c.coord.x));
    out
}

fn run_pixel(
    scene: &SceneSpec,
    params: &AsyncParams,
    total_cycles: u64,
    rnd: &RandomSource,
    coord: PixelCoord,
    opts: RunOptions,
) -> RunOutput {
    let cfg = &scene.cfg;
    let mut rng = rnd.pixel_stream(coord.index(scene.width) as u64);
    let mut state = PixelState::new(coord, cfg.num_bins());
    let static_means = scene
        .is_static()
        .then(|| scene.batch_means(coord, 0, params.x));
    let mut out = RunOutput::default();

    let batches = total_cycles / params.x;
    for k in 0..batches {
        let start = k * params.x;
        let counts = match &static_means {
            Some(m) => sample_counts(m, &mut rng),
            None => sample_counts(&scene.batch_means(coord, start, params.x), &mut rng),
        };
        let batch = CycleBatch {
            counts,
            cycles: params.x,
        };
        let step = state
            .step(&batch, params, cfg, start + params.x)
            .expect("batch shape matches by construction");
        if let Some(ev) = step.event {
            out.events.push(ev);
        }
        if opts.record_checks {
            if let Some(check) = step.check {
                out.checks.push(check);
            }
        }
    }
    out
}
