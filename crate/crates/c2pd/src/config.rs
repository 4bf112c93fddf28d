//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use c2pd_core::optim::AdamConfig;
use c2pd_core::pipeline::{PipelineConfig, MAX_REPEAT};
use c2pd_core::{Padding, WindowShape};

use crate::error::{Error, Result};
use crate::imageio::DepthUnit;

/// Where the guidance grid comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidanceSource {
    /// Luminance of an RGB image.
    #[default]
    GrayscaleGradient,
    /// Normalized ground truth (upper-bound experiments and training).
    GtOracle,
    /// A precomputed guidance grid read from `guidance.path`.
    File,
}

impl GuidanceSource {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "grayscale-gradient" => Some(Self::GrayscaleGradient),
            "gt-oracle" => Some(Self::GtOracle),
            "file" => Some(Self::File),
            _ => None,
        }
    }
}

/// Training knobs; only read by `train`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSection {
    pub adam: AdamConfig,
    pub accumulate: usize,
    pub pool: Option<usize>,
    pub scene_size: usize,
    pub augment: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            accumulate: 1,
            pool: None,
            scene_size: 48,
            augment: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub iso_params: Option<PathBuf>,
    pub pcgd_params: Option<PathBuf>,
    pub guidance: GuidanceSource,
    pub guidance_path: Option<PathBuf>,
    pub unit: DepthUnit,
    pub train: TrainSection,
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: invalid number {v:?}")))
}

fn parse_shape(key: &str, v: &str) -> Result<WindowShape> {
    WindowShape::parse(v)
        .ok_or_else(|| Error::Config(format!("{key}: expected 1x4, 4x1 or 3x3, got {v:?}")))
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| {
                    Error::Config(format!("line {}: expected key = value", lineno + 1))
                })?;
            let path = || base.join(value);
            match key {
                "scale" => cfg.pipeline.scale = parse_num(key, value)?,
                "iso.enabled" => cfg.pipeline.iso.enabled = parse_bool(key, value)?,
                "iso.window" => cfg.pipeline.iso.shape = parse_shape(key, value)?,
                "iso.params_path" => cfg.iso_params = Some(path()),
                "pcgd.repeat" => cfg.pipeline.pcgd.repeat = parse_num(key, value)?,
                "pcgd.window" => cfg.pipeline.pcgd.shape = parse_shape(key, value)?,
                "pcgd.params_path" => cfg.pcgd_params = Some(path()),
                "guidance.source" => {
                    cfg.guidance = GuidanceSource::parse(value).ok_or_else(|| {
                        Error::Config(format!(
                            "guidance.source: expected grayscale-gradient, gt-oracle or file, got {value:?}"
                        ))
                    })?
                }
                "guidance.path" => cfg.guidance_path = Some(path()),
                "padding" => {
                    cfg.pipeline.padding = match value {
                        "replicate" => Padding::Replicate,
                        "circular" => Padding::Circular,
                        _ => return Err(Error::Config(format!("padding: expected replicate or circular, got {value:?}"))),
                    }
                }
                "unit" => {
                    cfg.unit = DepthUnit::parse(value)
                        .ok_or_else(|| Error::Config(format!("unit: expected m or cm, got {value:?}")))?
                }
                "train.lr" => cfg.train.adam.lr = parse_num(key, value)?,
                "train.accumulate" => cfg.train.accumulate = parse_num(key, value)?,
                "train.pool" => {
                    cfg.train.pool = match parse_num::<usize>(key, value)? {
                        0 => None,
                        n => Some(n),
                    }
                }
                "train.scene_size" => cfg.train.scene_size = parse_num(key, value)?,
                "train.augment" => cfg.train.augment = parse_bool(key, value)?,
                _ => return Err(Error::Config(format!("line {}: unknown key {key:?}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        if p.scale < 2 || !p.scale.is_power_of_two() {
            return Err(Error::Config(format!(
                "scale: {} is not a power of two >= 2",
                p.scale
            )));
        }
        if p.pcgd.repeat > MAX_REPEAT {
            return Err(Error::Config(format!(
                "pcgd.repeat: {} exceeds {MAX_REPEAT}",
                p.pcgd.repeat
            )));
        }
        if !(self.train.adam.lr >= 0.0 && self.train.adam.lr.is_finite()) {
            return Err(Error::Config(
                "train.lr: must be finite and non-negative".into(),
            ));
        }
        if self.train.accumulate == 0 {
            return Err(Error::Config("train.accumulate: must be at least 1".into()));
        }
        if self.train.scene_size < p.scale || self.train.scene_size % p.scale != 0 {
            return Err(Error::Config(format!(
                "train.scene_size: {} is not a multiple of scale {}",
                self.train.scene_size, p.scale
            )));
        }
        Ok(())
    }

    /// Renders the pipeline-related keys; paths are written as given.
    pub fn render_infer(&self, iso: Option<&Path>, pcgd: Option<&Path>) -> String {
        let p = &self.pipeline;
        let mut out = format!(
            "scale = {}\niso.enabled = {}\niso.window = {}\npcgd.repeat = {}\npcgd.window = {}\npadding = {}\n",
            p.scale,
            p.iso.enabled,
            p.iso.shape.name(),
            p.pcgd.repeat,
            p.pcgd.shape.name(),
            match p.padding {
                Padding::Replicate => "replicate",
                Padding::Circular => "circular",
            }
        );
        if let Some(iso) = iso {
            out.push_str(&format!("iso.params_path = {}\n", iso.display()));
        }
        if let Some(pcgd) = pcgd {
            out.push_str(&format!("pcgd.params_path = {}\n", pcgd.display()));
        }
        out
    }
}
