//! TOML scene files.
//!
//! ```toml
//! seed = 7                      # optional, a command-line seed overrides it
//!
//! [array]
//! width = 16
//! height = 8
//!
//! [histogram]
//! num_bins = 128
//! bin_width_ns = 0.25
//! laser_rate_mhz = 10.0
//!
//! [scene]
//! kind = "static"               # static | radial | transverse
//! background = 0.0005           # photons per bin per cycle
//! pulse_sigma_bins = 1.0
//! plane = { depth_m = 3.0, reflectivity = 1.8 }
//!
//! [[scene.objects]]
//! region = { x0 = 2, y0 = 2, x1 = 6, y1 = 6 }
//! surface = { depth_m = 1.5, reflectivity = 0.9 }
//! ```
//!
//! The remaining fields of `[scene]` follow [`crate::scene::RadialParams`]
//! and [`crate::scene::TransverseParams`]; `scenes/` in the repository holds
//! one file per preset.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scene::{make_preset_scene, PresetParams, SceneSpec};
use crate::{Error, HistogramConfig, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub seed: Option<u64>,
    pub array: ArraySection,
    pub histogram: HistogramSection,
    pub scene: PresetParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSection {
    pub num_bins: usize,
    pub bin_width_ns: f64,
    pub laser_rate_mhz: f64,
}

impl HistogramSection {
    pub fn to_config(&self) -> Result<HistogramConfig> {
        HistogramConfig::new(
            self.num_bins,
            self.bin_width_ns * 1e-9,
            self.laser_rate_mhz * 1e6,
        )
    }
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<SceneSpec> {
        let cfg = self.histogram.to_config()?;
        make_preset_scene(self.array.width, self.array.height, cfg, self.scene.clone())
    }
}
