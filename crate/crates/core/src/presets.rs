//! Per-domain codec and context presets.

use crate::blockdct::CodecConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    /// Square frame side in pixels.
    pub resolution: usize,
    pub block: usize,
    pub quality: u32,
    pub chroma_downsampled: bool,
    pub min_context: usize,
    pub max_context: usize,
}

impl Preset {
    pub fn config(&self) -> CodecConfig {
        CodecConfig::new(self.block, self.quality, self.chroma_downsampled)
            .expect("preset table holds valid configurations")
    }
}

const fn preset(
    name: &'static str,
    resolution: usize,
    block: usize,
    quality: u32,
    chroma_downsampled: bool,
    min_context: usize,
    max_context: usize,
) -> Preset {
    Preset {
        name,
        resolution,
        block,
        quality,
        chroma_downsampled,
        min_context,
        max_context,
    }
}

pub const PRESETS: [Preset; 8] = [
    preset("bair", 64, 4, 99, false, 1, 4),
    preset("k600", 64, 4, 85, true, 5, 5),
    preset("robonet64", 64, 4, 95, false, 2, 4),
    preset("robonet128", 128, 4, 95, true, 2, 4),
    preset("kitti", 64, 4, 95, false, 5, 5),
    preset("shapenet", 128, 4, 95, true, 1, 3),
    preset("objectron", 192, 8, 65, true, 1, 3),
    preset("multitask", 256, 8, 72, false, 1, 1),
];

pub fn preset_by_name(name: &str) -> Result<Preset> {
    PRESETS
        .iter()
        .find(|p| p.name.eq_ignore_ascii_case(name))
        .copied()
        .ok_or_else(|| Error::Unknown {
            kind: "preset",
            name: name.to_string(),
        })
}
