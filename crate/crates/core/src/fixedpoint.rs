//! Integer reference model of the on-chip processing channel.
//!
//! Histograms are 128 bins of 10-bit saturating counters. The channel finds
//! the peak with a two-level comparator tree, estimates the background from
//! the non-peak half, takes a bit-serial square root and compares the peak
//! against `bg + α·isqrt(bg)`, all in integer arithmetic.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::detector::{self, AsyncParams};
use crate::{Error, Result};

pub const HW_BINS: usize = 128;
pub const COUNT_MAX: u16 = 1023;
pub const GROUPS: usize = 8;
pub const GROUP_SIZE: usize = HW_BINS / GROUPS;
/// Largest input of the 6-iteration square root (12-bit domain).
pub const ISQRT_MAX: u32 = 4095;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HwHistogram {
    counts: [u16; HW_BINS],
    saturations: u64,
}

impl Default for HwHistogram {
    fn default() -> Self {
        Self {
            counts: [0; HW_BINS],
            saturations: 0,
        }
    }
}

impl HwHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: &[u16]) -> Result<Self> {
        if counts.len() != HW_BINS {
            return Err(Error::config(
                "counts",
                format!(
                    "hardware histograms have {HW_BINS} bins, got {}",
                    counts.len()
                ),
            ));
        }
        if let Some((i, &c)) = counts.iter().enumerate().find(|&(_, &c)| c > COUNT_MAX) {
            return Err(Error::Domain(format!(
                "bin {i} holds {c}, above the 10-bit limit {COUNT_MAX}"
            )));
        }
        let mut h = Self::new();
        h.counts.copy_from_slice(counts);
        Ok(h)
    }

    pub fn counts(&self) -> &[u16; HW_BINS] {
        &self.counts
    }

    /// Number of increments lost to saturation since construction or reset.
    pub fn saturations(&self) -> u64 {
        self.saturations
    }

    /// Adds one batch of counts, clamping each bin at 1023.
    pub fn accumulate(&mut self, batch: &[u32]) -> Result<()> {
        if batch.len() != HW_BINS {
            return Err(Error::config(
                "cycle_counts",
                format!("expected {HW_BINS} bins, got {}", batch.len()),
            ));
        }
        for (c, &add) in self.counts.iter_mut().zip(batch) {
            let sum = u32::from(*c) + add;
            if sum > u32::from(COUNT_MAX) {
                self.saturations += u64::from(sum - u32::from(COUNT_MAX));
                *c = COUNT_MAX;
            } else {
                *c = sum as u16;
            }
        }
        Ok(())
    }

    pub fn reset(&mut self) {
        self.counts = [0; HW_BINS];
        self.saturations = 0;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeResult {
    pub i_max: usize,
    pub peak_count: u16,
    /// `(index, count)` winner of each 16-bin group.
    pub group_max: [(usize, u16); GROUPS],
}

/// Two-level argmax: a winner per 16-bin group, then the best group. Both
/// levels keep the lower index on ties.
pub fn comparator_tree_peak(counts: &[u16; HW_BINS]) -> TreeResult {
    let mut group_max = [(0usize, 0u16); GROUPS];
    for (g, slot) in group_max.iter_mut().enumerate() {
        let base = g * GROUP_SIZE;
        let mut best = (base, counts[base]);
        for (i, &c) in counts
            .iter()
            .enumerate()
            .take(base + GROUP_SIZE)
            .skip(base + 1)
        {
            if c > best.1 {
                best = (i, c);
            }
        }
        *slot = best;
    }
    let mut win = group_max[0];
    for &cand in &group_max[1..] {
        if cand.1 > win.1 {
            win = cand;
        }
    }
    TreeResult {
        i_max: win.0,
        peak_count: win.1,
        group_max,
    }
}

/// Smaller of the two quadrant maxima in the half that does not hold the
/// peak (bins 0–63 when the peak is at 64 or above, otherwise 64–127).
pub fn quadrant_background(counts: &[u16; HW_BINS], i_max: usize) -> u16 {
    let half = if i_max >= HW_BINS / 2 { 0 } else { HW_BINS / 2 };
    let q = HW_BINS / 4;
    let max_of = |lo: usize| counts[lo..lo + q].iter().copied().max().unwrap_or(0);
    max_of(half).min(max_of(half + q))
}

/// Bit-serial integer square root, one result bit per iteration.
///
/// Returns `floor(√bg)` for `bg` in `0..=4095`.
pub fn isqrt_background(bg: u32) -> Result<u32> {
    if bg > ISQRT_MAX {
        return Err(Error::Domain(format!(
            "square-root input {bg} exceeds the 12-bit range 0..={ISQRT_MAX}"
        )));
    }
    let mut rem = bg;
    let mut v_bit = 5u32;
    let mut n = 0u32;
    let mut b = 32u32;
    while b > 0 {
        let temp = ((n << 1) + b) << v_bit;
        v_bit = v_bit.wrapping_sub(1);
        if rem >= temp {
            n += b;
            rem -= temp;
        }
        b >>= 1;
    }
    Ok(n)
}

/// `peak > bg + α·isqrt(bg)`, strict, all integer.
pub fn hw_threshold_check(peak_count: u32, bg: u32, alpha_int: u32) -> Result<bool> {
    Ok(peak_count > hw_threshold(bg, alpha_int)?)
}

pub fn hw_threshold(bg: u32, alpha_int: u32) -> Result<u32> {
    Ok(bg + alpha_int * isqrt_background(bg)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HwConfig {
    pub alpha_int: u32,
    /// Pixels sharing one processing channel.
    pub mux_factor: u32,
    /// Laser repetition rate in Hz.
    pub laser_rate: f64,
}

impl Default for HwConfig {
    fn default() -> Self {
        Self {
            alpha_int: 8,
            mux_factor: 4,
            laser_rate: 10e6,
        }
    }
}

/// Output of the processing channel for one histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub i_max: usize,
    pub peak_count: u16,
    pub bg: u16,
    pub sqrt_bg: u32,
    pub threshold: u32,
    pub pass: bool,
}

pub fn process_histogram(h: &HwHistogram, alpha_int: u32) -> Decision {
    let tree = comparator_tree_peak(h.counts());
    let bg = quadrant_background(h.counts(), tree.i_max);
    // 10-bit counts always fall inside the square-root domain.
    let sqrt_bg = isqrt_background(u32::from(bg)).expect("10-bit input");
    let threshold = u32::from(bg) + alpha_int * sqrt_bg;
    Decision {
        i_max: tree.i_max,
        peak_count: tree.peak_count,
        bg,
        sqrt_bg,
        threshold,
        pass: u32::from(tree.peak_count) > threshold,
    }
}

/// The floating-point detector decision with the quadrant estimator in place
/// of the non-peak mean. Returns `(pass, peak − I_th)`.
pub fn float_decision(h: &HwHistogram, alpha: f64) -> (bool, f64) {
    let tree = comparator_tree_peak(h.counts());
    let bg = f64::from(quadrant_background(h.counts(), tree.i_max));
    let th = detector::threshold(bg, alpha);
    let peak = f64::from(tree.peak_count);
    (peak > th, peak - th)
}

/// Width of the band around the float threshold inside which the integer
/// and float decisions may differ.
///
/// The integer threshold is `bg + α·⌊√bg⌋`, which sits below the float one
/// by `α·(√bg − ⌊√bg⌋) < α`. So the two paths can only disagree when the
/// float margin lies in `(−α, 0]`; for `α ≤ 1` that is the one-count band.
pub fn disagreement_band(alpha_int: u32) -> f64 {
    f64::from(alpha_int.max(1))
}

/// One row of a differential run over a histogram file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffRecord {
    pub record: usize,
    pub decision: Decision,
    pub naive_i_max: usize,
    pub float_pass: bool,
    pub float_margin: f64,
}

impl DiffRecord {
    pub fn argmax_mismatch(&self) -> bool {
        self.naive_i_max != self.decision.i_max
    }

    pub fn decision_mismatch(&self) -> bool {
        self.float_pass != self.decision.pass
    }
}

pub fn differential(record: usize, h: &HwHistogram, alpha_int: u32) -> DiffRecord {
    let counts: Vec<u64> = h.counts().iter().map(|&c| u64::from(c)).collect();
    let (float_pass, float_margin) = float_decision(h, f64::from(alpha_int));
    DiffRecord {
        record,
        decision: process_histogram(h, alpha_int),
        naive_i_max: detector::find_peak(&counts),
        float_pass,
        float_margin,
    }
}

pub const DECISION_HEADER: &str =
    "record,i_max,peak_count,bg,sqrt_bg,threshold,pass,naive_i_max,float_pass,float_margin";

pub fn format_diff(r: &DiffRecord) -> String {
    let d = &r.decision;
    format!(
        "{},{},{},{},{},{},{},{},{},{:.6}",
        r.record,
        d.i_max,
        d.peak_count,
        d.bg,
        d.sqrt_bg,
        d.threshold,
        u8::from(d.pass),
        r.naive_i_max,
        u8::from(r.float_pass),
        r.float_margin
    )
}

pub fn write_decisions_csv<W: Write>(mut w: W, rows: &[DiffRecord]) -> io::Result<()> {
    writeln!(w, "{DECISION_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", format_diff(r))?;
    }
    Ok(())
}

pub const RECORD_BYTES: usize = HW_BINS * 2;

/// Splits a packed file of little-endian `u16` counts into 128-bin records.
pub fn parse_histogram_file(bytes: &[u8]) -> Result<Vec<Vec<u16>>> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Parse {
            line: bytes.len() / RECORD_BYTES + 1,
            message: format!(
                "trailing {} bytes; records are {RECORD_BYTES} bytes (128 little-endian u16)",
                bytes.len() % RECORD_BYTES
            ),
        });
    }
    Ok(bytes
        .chunks_exact(RECORD_BYTES)
        .map(|rec| {
            rec.chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect()
        })
        .collect())
}

pub fn encode_histogram_file(records: &[[u16; HW_BINS]]) -> Vec<u8> {
    records
        .iter()
        .flat_map(|r| r.iter().flat_map(|c| c.to_le_bytes()))
        .collect()
}

/// Timing of the pipelined channel, broken into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    /// Time to gather `L1` cycles, the floor for the first decision.
    pub accumulation_s: f64,
    /// Laser cycles the shared channel spends per histogram.
    pub processing_cycles: u64,
    pub processing_s: f64,
    pub check_period_cycles: u64,
    pub check_period_s: f64,
    /// Cycles by which processing overruns the check period; zero means the
    /// channel keeps up and accumulation never waits.
    pub stall_cycles: u64,
    /// Accumulation plus processing for a pixel that passes at its first
    /// check.
    pub first_decision_s: f64,
}

pub fn pipeline_schedule(params: &AsyncParams, hw: &HwConfig) -> Result<LatencyReport> {
    if hw.mux_factor == 0 {
        return Err(Error::config("mux_factor", "must be positive"));
    }
    if !(hw.laser_rate > 0.0 && hw.laser_rate.is_finite()) {
        return Err(Error::config("laser_rate", "must be positive"));
    }
    let period = 1.0 / hw.laser_rate;
    // Each multiplexed histogram occupies the channel for one laser cycle.
    let processing_cycles = u64::from(hw.mux_factor);
    let accumulation_s = params.l1 as f64 * period;
    let processing_s = processing_cycles as f64 * period;
    Ok(LatencyReport {
        accumulation_s,
        processing_cycles,
        processing_s,
        check_period_cycles: params.x,
        check_period_s: params.x as f64 * period,
        stall_cycles: processing_cycles.saturating_sub(params.x),
        first_decision_s: accumulation_s + processing_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RandomSource;
    use proptest::prelude::*;

    fn naive(counts: &[u16]) -> usize {
        let max = *counts.iter().max().unwrap();
        counts.iter().position(|&c| c == max).unwrap()
    }

    fn hist(f: impl FnMut(usize) -> u16) -> [u16; HW_BINS] {
        std::array::from_fn(f)
    }

    #[test]
    fn tree_examples() {
        let zeros = [0u16; HW_BINS];
        let t = comparator_tree_peak(&zeros);
        assert_eq!((t.i_max, t.peak_count), (0, 0));
        let one = hist(|i| if i == 100 { 7 } else { 0 });
        assert_eq!(comparator_tree_peak(&one).i_max, 100);
        let tie = hist(|i| if i == 20 || i == 90 { 9 } else { 1 });
        let t = comparator_tree_peak(&tie);
        assert_eq!(t.i_max, 20);
        assert_eq!(t.group_max[5], (90, 9));
    }

    proptest! {
        #[test]
        fn tree_equals_naive(v in prop::collection::vec(0u16..=COUNT_MAX, HW_BINS)) {
            let h: [u16; HW_BINS] = v.clone().try_into().unwrap();
            prop_assert_eq!(comparator_tree_peak(&h).i_max, naive(&v));
        }

        #[test]
        fn tree_equals_naive_with_heavy_ties(v in prop::collection::vec(0u16..3, HW_BINS)) {
            let h: [u16; HW_BINS] = v.clone().try_into().unwrap();
            prop_assert_eq!(comparator_tree_peak(&h).i_max, naive(&v));
        }

        #[test]
        fn threshold_monotone(peak in 0u32..1100, bg in 0u32..=1023, a in 0u32..16) {
            let base = hw_threshold_check(peak, bg, a).unwrap();
            prop_assert!(!base || hw_threshold_check(peak + 1, bg, a).unwrap());
            prop_assert!(base || !hw_threshold_check(peak, bg, a + 1).unwrap());
        }

        #[test]
        fn float_and_integer_paths_agree_outside_band(
            v in prop::collection::vec(0u16..200, HW_BINS), a in 0u32..12, spike in 0usize..HW_BINS, extra in 0u16..300,
        ) {
            let mut h: [u16; HW_BINS] = v.try_into().unwrap();
            h[spike] = (h[spike] + extra).min(COUNT_MAX);
            let d = differential(0, &HwHistogram::from_counts(&h).unwrap(), a);
            if d.decision_mismatch() {
                prop_assert!(d.float_margin <= 0.0 && d.float_margin > -disagreement_band(a));
            }
        }
    }

    #[test]
    fn quadrant_examples() {
        let mut h = [0u16; HW_BINS];
        h[100] = 50;
        h[3] = 9;
        h[40] = 5;
        assert_eq!(quadrant_background(&h, 100), 5);
        // Peak in the lower half looks at 64..128.
        let mut g = [4u16; HW_BINS];
        g[10] = 80;
        g[70] = 11;
        assert_eq!(quadrant_background(&g, 10), 4);
        // The 63/64 boundary.
        let mut k = [0u16; HW_BINS];
        k[64] = 30;
        k[63] = 30;
        k[0] = 2;
        k[32] = 3;
        assert_eq!(quadrant_background(&k, 64), 2);
        assert_eq!(quadrant_background(&k, 63), 0);
        let flat = hist(|i| if i == 17 { 90 } else { 12 });
        assert_eq!(quadrant_background(&flat, 17), 12);
    }

    #[test]
    fn quadrant_estimate_is_biased_upward() {
        let mut rng = RandomSource::new(5).stream(crate::random::domain::AUX, 0);
        let lambda = 20.0;
        let trials = 2000;
        let mut sum = 0.0;
        for _ in 0..trials {
            let h = hist(|i| {
                if i == 100 {
                    200
                } else {
                    rng.poisson(lambda) as u16
                }
            });
            sum += f64::from(quadrant_background(&h, 100));
        }
        assert!(sum / trials as f64 > lambda + 3.0);
    }

    #[test]
    fn isqrt_examples_and_exhaustive() {
        assert_eq!(isqrt_background(0).unwrap(), 0);
        assert_eq!(isqrt_background(100).unwrap(), 10);
        assert_eq!(isqrt_background(1024).unwrap(), 32);
        assert_eq!(isqrt_background(4095).unwrap(), 63);
        for n in 0..=ISQRT_MAX {
            let r = isqrt_background(n).unwrap();
            assert!(r * r <= n && (r + 1) * (r + 1) > n, "n = {n}");
        }
        assert!(isqrt_background(4096).is_err());
    }

    #[test]
    fn threshold_boundary() {
        assert!(!hw_threshold_check(180, 100, 8).unwrap());
        assert!(hw_threshold_check(181, 100, 8).unwrap());
    }

    #[test]
    fn unit_alpha_paths_never_disagree() {
        // For α ≤ 1 the gap between the thresholds is below one count and
        // the integer threshold is itself an integer, so no integer peak
        // can fall between them. This is the one-count band at its tightest.
        let mut rng = RandomSource::new(17).stream(crate::random::domain::AUX, 1);
        for _ in 0..20_000 {
            let bg = rng.below(400) as u16;
            let peak_at = rng.below(HW_BINS as u64) as usize;
            let peak = (bg as u64 + rng.below(60)) as u16;
            let mut h = hist(|_| bg);
            h[peak_at] = peak;
            for a in [0, 1] {
                let d = differential(0, &HwHistogram::from_counts(&h).unwrap(), a);
                assert!(!d.decision_mismatch(), "{d:?}");
            }
        }
    }

    #[test]
    fn wide_alpha_can_disagree_beyond_one_count() {
        // bg = 99: √99 ≈ 9.95, integer 9. With α = 8 the integer threshold is
        // 171 and the float one ≈ 178.6, so a peak of 175 splits them.
        let mut h = [99u16; HW_BINS];
        h[10] = 175;
        let d = differential(0, &HwHistogram::from_counts(&h).unwrap(), 8);
        assert!(d.decision.pass && !d.float_pass);
        assert!(d.float_margin < -1.0 && d.float_margin > -8.0);
    }

    #[test]
    fn saturation_is_counted() {
        let mut h = HwHistogram::new();
        let mut batch = vec![0u32; HW_BINS];
        batch[5] = 600;
        h.accumulate(&batch).unwrap();
        h.accumulate(&batch).unwrap();
        assert_eq!(h.counts()[5], COUNT_MAX);
        assert_eq!(h.saturations(), 177);
        assert!(h.accumulate(&[1, 2]).is_err());
        h.reset();
        assert_eq!(h.saturations(), 0);
        assert!(HwHistogram::from_counts(&[1024; HW_BINS]).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let a = hist(|i| i as u16);
        let b = hist(|i| (1023 - i) as u16);
        let bytes = encode_histogram_file(&[a, b]);
        assert_eq!(bytes.len(), 2 * RECORD_BYTES);
        let back = parse_histogram_file(&bytes).unwrap();
        assert_eq!(back[0], a.to_vec());
        assert_eq!(back[1], b.to_vec());
        assert!(parse_histogram_file(&bytes[..100]).is_err());
        assert!(parse_histogram_file(&[]).unwrap().is_empty());
    }

    #[test]
    fn latency_components() {
        let hw = HwConfig::default();
        let p = AsyncParams::new(8.0, 40, 2000, 4).unwrap();
        let r = pipeline_schedule(&p, &hw).unwrap();
        assert!((r.accumulation_s - 4.0e-6).abs() < 1e-15);
        assert_eq!(r.processing_cycles, 4);
        assert_eq!(r.stall_cycles, 0);
        let fast = pipeline_schedule(
            &p,
            &HwConfig {
                laser_rate: 20e6,
                ..hw
            },
        )
        .unwrap();
        assert!((fast.accumulation_s * 2.0 - r.accumulation_s).abs() < 1e-18);
        for l1 in (4..400).step_by(4) {
            let p = AsyncParams::new(8.0, l1, 2000, 4).unwrap();
            let r = pipeline_schedule(&p, &hw).unwrap();
            assert!(r.processing_cycles <= r.check_period_cycles);
        }
    }
}
