//! Parametric scenes and the per-cycle photon sampler.
//!
//! Each pixel sees a constant background of `B` expected photons per bin per
//! laser cycle plus zero or more Gaussian returns. The expected signal in bin
//! `i` from a return of amplitude `A` centred at `μ` is
//! `A·(Φ((t_{i+1} − μ)/σ) − Φ((t_i − μ)/σ))`; the count in each bin is drawn
//! as an independent Poisson variate of the summed expectation.
//!
//! Return amplitude follows `A = ρ / z²` for a surface of reflectivity factor
//! `ρ` at depth `z` meters. Probability mass falling outside the histogram
//! span is dropped, as in a gated sensor, so scenes should keep returns at
//! least 4σ away from either edge.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gaussian;
use crate::random::Stream;
use crate::{Error, HistogramConfig, PixelCoord, Result};

/// Contributions further than this many σ from the pulse centre are zero to
/// double precision.
const PULSE_SUPPORT_SIGMAS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnComponent {
    /// Expected signal photons per laser cycle.
    pub amplitude: f64,
    /// Arrival time of the pulse centre, seconds.
    pub center: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelScene {
    pub returns: Vec<ReturnComponent>,
    /// Expected background photons per bin per cycle.
    pub background: f64,
    /// Pulse standard deviation in seconds, shared by all returns.
    pub pulse_sigma: f64,
}

impl PixelScene {
    /// Adds `weight` times the expected per-cycle count of every bin to `out`.
    pub fn add_expected(&self, cfg: &HistogramConfig, weight: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), cfg.num_bins());
        if self.background > 0.0 {
            out.iter_mut().for_each(|v| *v += weight * self.background);
        }
        for ret in &self.returns {
            if ret.amplitude <= 0.0 {
                continue;
            }
            for bin in support_bins(ret.center, self.pulse_sigma, cfg) {
                out[bin] += weight * expected_signal_per_bin(ret, self.pulse_sigma, bin, cfg);
            }
        }
    }

    /// Expected counts per bin for a single laser cycle.
    pub fn expected_counts(&self, cfg: &HistogramConfig) -> Vec<f64> {
        let mut out = vec![0.0; cfg.num_bins()];
        self.add_expected(cfg, 1.0, &mut out);
        out
    }
}

fn support_bins(center: f64, sigma: f64, cfg: &HistogramConfig) -> std::ops::Range<usize> {
    let lo = (center - PULSE_SUPPORT_SIGMAS * sigma) / cfg.bin_width();
    let hi = (center + PULSE_SUPPORT_SIGMAS * sigma) / cfg.bin_width();
    let m = cfg.num_bins() as f64;
    let lo = lo.floor().clamp(0.0, m) as usize;
    let hi = (hi.floor() + 1.0).clamp(0.0, m) as usize;
    lo..hi
}

/// Expected signal photons per cycle that one return deposits in `bin`.
pub fn expected_signal_per_bin(
    ret: &ReturnComponent,
    pulse_sigma: f64,
    bin: usize,
    cfg: &HistogramConfig,
) -> f64 {
    let lo = cfg.bin_start(bin);
    let hi = cfg.bin_start(bin + 1);
    ret.amplitude * gaussian::interval_mass(lo, hi, ret.center, pulse_sigma)
}

/// Draws one laser cycle of counts for a pixel.
pub fn sample_cycle(ps: &PixelScene, cfg: &HistogramConfig, rng: &mut Stream) -> Vec<u32> {
    sample_counts(&ps.expected_counts(cfg), rng)
}

/// Draws an independent Poisson count for every entry of `means`.
///
/// Because sums of independent Poisson variates are Poisson, passing the
/// expected counts summed over several cycles yields exactly the
/// distribution of those cycles accumulated one by one.
pub fn sample_counts(means: &[f64], rng: &mut Stream) -> Vec<u32> {
    means
        .iter()
        .map(|&m| u32::try_from(rng.poisson(m)).unwrap_or(u32::MAX))
        .collect()
}

/// A deterministic description of what every pixel sees at every cycle.
pub trait Trajectory: Send + Sync + fmt::Debug {
    fn pixel_scene_at(&self, coord: PixelCoord, cycle: u64) -> PixelScene;

    /// True when `pixel_scene_at` ignores the cycle index.
    fn is_static(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetKind {
    Static,
    Radial,
    Transverse,
    Custom,
}

impl fmt::Display for PresetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PresetKind::Static => "static",
            PresetKind::Radial => "radial",
            PresetKind::Transverse => "transverse",
            PresetKind::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub cfg: HistogramConfig,
    pub kind: PresetKind,
    trajectory: Arc<dyn Trajectory>,
}

impl SceneSpec {
    pub fn custom(
        width: u32,
        height: u32,
        cfg: HistogramConfig,
        trajectory: Arc<dyn Trajectory>,
    ) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            cfg,
            kind: PresetKind::Custom,
            trajectory,
        })
    }

    pub fn pixel_scene_at(&self, coord: PixelCoord, cycle: u64) -> PixelScene {
        self.trajectory.pixel_scene_at(coord, cycle)
    }

    pub fn is_static(&self) -> bool {
        self.trajectory.is_static()
    }

    pub fn num_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn coords(&self) -> impl Iterator<Item = PixelCoord> + '_ {
        (0..self.height).flat_map(move |y| (0..self.width).map(move |x| PixelCoord::new(x, y)))
    }

    /// Expected counts per bin summed over cycles `start..start + cycles`.
    pub fn batch_means(&self, coord: PixelCoord, start: u64, cycles: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.cfg.num_bins()];
        if self.is_static() {
            self.pixel_scene_at(coord, start)
                .add_expected(&self.cfg, cycles as f64, &mut out);
        } else {
            for c in start..start + cycles {
                self.pixel_scene_at(coord, c)
                    .add_expected(&self.cfg, 1.0, &mut out);
            }
        }
        out
    }
}

fn check_dims(width: u32, height: u32) -> Result<()> {
    if width == 0 {
        return Err(Error::config("width", "must be positive"));
    }
    if height == 0 {
        return Err(Error::config("height", "must be positive"));
    }
    Ok(())
}

/// A reflecting surface: depth in meters and a reflectivity factor `ρ` such
/// that the return amplitude is `ρ/z²` photons per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub depth_m: f64,
    pub reflectivity: f64,
}

impl Surface {
    /// Surface whose return carries exactly `amplitude` photons per cycle.
    pub fn with_amplitude(depth_m: f64, amplitude: f64) -> Self {
        Self {
            depth_m,
            reflectivity: amplitude * depth_m * depth_m,
        }
    }

    pub fn amplitude(&self) -> f64 {
        amplitude_at(self.reflectivity, self.depth_m)
    }
}

pub fn amplitude_at(reflectivity: f64, depth_m: f64) -> f64 {
    reflectivity / (depth_m * depth_m)
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl Region {
    pub fn contains(&self, c: PixelCoord) -> bool {
        c.x >= self.x0 && c.x < self.x1 && c.y >= self.y0 && c.y < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticObject {
    pub region: Region,
    pub surface: Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticParams {
    pub background: f64,
    pub pulse_sigma_bins: f64,
    /// Surface seen by pixels not covered by any object.
    pub plane: Option<Surface>,
    /// Later objects are drawn over earlier ones.
    #[serde(default)]
    pub objects: Vec<StaticObject>,
}

/// An object that recedes from `near_m` to `far_m` and comes back.
///
/// Timeline in cycles: hold at `near_m` for `hold_cycles`, ramp out over
/// `ramp_cycles`, ramp back over `ramp_cycles`, then hold at `near_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialParams {
    pub background: f64,
    pub pulse_sigma_bins: f64,
    pub plane: Option<Surface>,
    pub region: Region,
    pub near_m: f64,
    pub far_m: f64,
    pub reflectivity: f64,
    pub hold_cycles: u64,
    pub ramp_cycles: u64,
}

impl RadialParams {
    pub fn depth_at(&self, cycle: u64) -> f64 {
        let ramp = self.ramp_cycles.max(1) as f64;
        let span = self.far_m - self.near_m;
        let t = cycle.saturating_sub(self.hold_cycles);
        if cycle < self.hold_cycles || t >= 2 * self.ramp_cycles {
            self.near_m
        } else if t < self.ramp_cycles {
            self.near_m + span * t as f64 / ramp
        } else {
            self.far_m - span * (t - self.ramp_cycles) as f64 / ramp
        }
    }

    pub fn turnaround_cycle(&self) -> u64 {
        self.hold_cycles + self.ramp_cycles
    }
}

/// A bar of `bar_width` columns at fixed depth sweeping left to right in
/// front of a background plane, advancing one column every
/// `cycles_per_column` cycles and wrapping around.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransverseParams {
    pub background: f64,
    pub pulse_sigma_bins: f64,
    pub plane: Surface,
    pub object: Surface,
    pub bar_width: u32,
    pub rows: (u32, u32),
    pub start_column: u32,
    pub cycles_per_column: u64,
}

impl TransverseParams {
    /// Columns `[lo, hi)` covered by the bar at `cycle` (may extend past the
    /// array edges).
    pub fn bar_columns(&self, width: u32, cycle: u64) -> (i64, i64) {
        let period = i64::from(width) + i64::from(self.bar_width);
        let step = (cycle / self.cycles_per_column.max(1)) as i64;
        let right = (i64::from(self.start_column) + step).rem_euclid(period);
        (right - i64::from(self.bar_width), right)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PresetParams {
    Static(StaticParams),
    Radial(RadialParams),
    Transverse(TransverseParams),
}

impl PresetParams {
    pub fn kind(&self) -> PresetKind {
        match self {
            PresetParams::Static(_) => PresetKind::Static,
            PresetParams::Radial(_) => PresetKind::Radial,
            PresetParams::Transverse(_) => PresetKind::Transverse,
        }
    }
}

/// Validates `params` and builds the corresponding scene.
pub fn make_preset_scene(
    width: u32,
    height: u32,
    cfg: HistogramConfig,
    params: PresetParams,
) -> Result<SceneSpec> {
    check_dims(width, height)?;
    let kind = params.kind();
    let trajectory: Arc<dyn Trajectory> = match params {
        PresetParams::Static(p) => {
            check_common(p.background, p.pulse_sigma_bins)?;
            if let Some(plane) = &p.plane {
                check_surface("plane", plane, &cfg)?;
            }
            for (i, o) in p.objects.iter().enumerate() {
                check_surface(&format!("objects[{i}].surface"), &o.surface, &cfg)?;
                check_region(&format!("objects[{i}].region"), &o.region, width, height)?;
            }
            Arc::new(StaticTrajectory::new(p, cfg))
        }
        PresetParams::Radial(p) => {
            check_common(p.background, p.pulse_sigma_bins)?;
            if let Some(plane) = &p.plane {
                check_surface("plane", plane, &cfg)?;
            }
            check_region("region", &p.region, width, height)?;
            for (field, z) in [("near_m", p.near_m), ("far_m", p.far_m)] {
                check_depth(field, z, &cfg)?;
            }
            if p.reflectivity < 0.0 {
                return Err(Error::config("reflectivity", "must be non-negative"));
            }
            if p.ramp_cycles == 0 {
                return Err(Error::config("ramp_cycles", "must be positive"));
            }
            Arc::new(RadialTrajectory { params: p, cfg })
        }
        PresetParams::Transverse(p) => {
            check_common(p.background, p.pulse_sigma_bins)?;
            check_surface("plane", &p.plane, &cfg)?;
            check_surface("object", &p.object, &cfg)?;
            if p.bar_width == 0 {
                return Err(Error::config("bar_width", "must be positive"));
            }
            if p.cycles_per_column == 0 {
                return Err(Error::config("cycles_per_column", "must be positive"));
            }
            if p.rows.0 >= p.rows.1 || p.rows.1 > height {
                return Err(Error::config(
                    "rows",
                    "must be a non-empty range inside the array",
                ));
            }
            Arc::new(TransverseTrajectory {
                params: p,
                cfg,
                width,
            })
        }
    };
    Ok(SceneSpec {
        width,
        height,
        cfg,
        kind,
        trajectory,
    })
}

fn check_common(background: f64, sigma_bins: f64) -> Result<()> {
    if !(background >= 0.0 && background.is_finite()) {
        return Err(Error::config(
            "background",
            "must be a finite non-negative rate",
        ));
    }
    if !(sigma_bins > 0.0 && sigma_bins.is_finite()) {
        return Err(Error::config("pulse_sigma_bins", "must be positive"));
    }
    Ok(())
}

fn check_depth(field: &str, depth: f64, cfg: &HistogramConfig) -> Result<()> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::config(field, "depth must be positive"));
    }
    let pos = cfg.depth_to_bin(depth);
    if pos >= cfg.num_bins() as f64 - 0.5 {
        return Err(Error::config(
            field,
            format!(
                "depth {depth} m is beyond the histogram span ({:.3} m)",
                cfg.bin_to_depth(cfg.num_bins() as f64 - 0.5)
            ),
        ));
    }
    Ok(())
}

fn check_surface(field: &str, s: &Surface, cfg: &HistogramConfig) -> Result<()> {
    check_depth(&format!("{field}.depth_m"), s.depth_m, cfg)?;
    if !(s.reflectivity >= 0.0 && s.reflectivity.is_finite()) {
        return Err(Error::config(
            format!("{field}.reflectivity"),
            "must be non-negative",
        ));
    }
    Ok(())
}

fn check_region(field: &str, r: &Region, width: u32, height: u32) -> Result<()> {
    if r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > width || r.y1 > height {
        return Err(Error::config(
            field,
            "must be a non-empty rectangle inside the array",
        ));
    }
    Ok(())
}

fn surface_return(s: &Surface, cfg: &HistogramConfig) -> ReturnComponent {
    ReturnComponent {
        amplitude: s.amplitude(),
        center: cfg.depth_to_arrival_time(s.depth_m),
    }
}

#[derive(Debug)]
struct StaticTrajectory {
    width: u32,
    pixels: Vec<PixelScene>,
    fallback: PixelScene,
}

impl StaticTrajectory {
    fn new(p: StaticParams, cfg: HistogramConfig) -> Self {
        let sigma = p.pulse_sigma_bins * cfg.bin_width();
        let base = PixelScene {
            returns: p.plane.iter().map(|s| surface_return(s, &cfg)).collect(),
            background: p.background,
            pulse_sigma: sigma,
        };
        let width = p.objects.iter().map(|o| o.region.x1).max().unwrap_or(0);
        let height = p.objects.iter().map(|o| o.region.y1).max().unwrap_or(0);
        let mut pixels = vec![base.clone(); width as usize * height as usize];
        for o in &p.objects {
            let scene = PixelScene {
                returns: vec![surface_return(&o.surface, &cfg)],
                background: p.background,
                pulse_sigma: sigma,
            };
            for y in o.region.y0..o.region.y1 {
                for x in o.region.x0..o.region.x1 {
                    pixels[PixelCoord::new(x, y).index(width)] = scene.clone();
                }
            }
        }
        Self {
            width,
            pixels,
            fallback: base,
        }
    }
}

impl Trajectory for StaticTrajectory {
    fn pixel_scene_at(&self, coord: PixelCoord, _cycle: u64) -> PixelScene {
        if coord.x < self.width {
            if let Some(ps) = self.pixels.get(coord.index(self.width)) {
                return ps.clone();
            }
        }
        self.fallback.clone()
    }

    fn is_static(&self) -> bool {
        true
    }
}

#[derive(Debug)]
struct RadialTrajectory {
    params: RadialParams,
    cfg: HistogramConfig,
}

impl Trajectory for RadialTrajectory {
    fn pixel_scene_at(&self, coord: PixelCoord, cycle: u64) -> PixelScene {
        let p = &self.params;
        let surface = if p.region.contains(coord) {
            Some(Surface {
                depth_m: p.depth_at(cycle),
                reflectivity: p.reflectivity,
            })
        } else {
            p.plane
        };
        PixelScene {
            returns: surface
                .iter()
                .map(|s| surface_return(s, &self.cfg))
                .collect(),
            background: p.background,
            pulse_sigma: p.pulse_sigma_bins * self.cfg.bin_width(),
        }
    }
}

#[derive(Debug)]
struct TransverseTrajectory {
    params: TransverseParams,
    cfg: HistogramConfig,
    width: u32,
}

impl Trajectory for TransverseTrajectory {
    fn pixel_scene_at(&self, coord: PixelCoord, cycle: u64) -> PixelScene {
        let p = &self.params;
        let (lo, hi) = p.bar_columns(self.width, cycle);
        let x = i64::from(coord.x);
        let in_bar = coord.y >= p.rows.0 && coord.y < p.rows.1 && x >= lo && x < hi;
        let surface = if in_bar { p.object } else { p.plane };
        PixelScene {
            returns: vec![surface_return(&surface, &self.cfg)],
            background: p.background,
            pulse_sigma: p.pulse_sigma_bins * self.cfg.bin_width(),
        }
    }
}
