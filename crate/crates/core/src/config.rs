//! Run configuration: one JSON document, every field defaulted, with dotted
//! `key=value` overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::crf::CrfParams;
use crate::detector::{DetectorConfig, DetectorTrainConfig};
use crate::error::{Error, Result};
use crate::phantom::PhantomParams;
use crate::pipeline::PipelineConfig;
use crate::segnet::{SegNetConfig, SegTrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Shared phantom parameters; `seed` is replaced per case.
    pub phantom: PhantomParams,
    /// One phantom per seed, in case-id order.
    pub seeds: Vec<u64>,
    /// Train and validation fractions; the rest is the test split.
    pub split: (f64, f64),
    pub split_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomParams::default(),
            seeds: (1..=40).collect(),
            split: (0.6, 0.15),
            split_seed: 2017,
        }
    }
}

/// Architecture, optimizer and initialization seed of a segmentation net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegSpec {
    pub net: SegNetConfig,
    pub train: SegTrainConfig,
    pub init_seed: u64,
}

impl Default for SegSpec {
    fn default() -> Self {
        Self {
            net: SegNetConfig::default(),
            train: SegTrainConfig::default(),
            init_seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSpec {
    pub net: DetectorConfig,
    pub train: DetectorTrainConfig,
    pub init_seed: u64,
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self {
            net: DetectorConfig::default(),
            train: DetectorTrainConfig::default(),
            init_seed: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub liver: SegSpec,
    pub lesion: SegSpec,
    pub baseline: SegSpec,
    pub detector: DetectorSpec,
    pub pipeline: PipelineConfig,
    pub crf: CrfParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seg = |init_seed: u64, seed: u64| SegSpec {
            init_seed,
            train: SegTrainConfig {
                seed,
                ..Default::default()
            },
            ..Default::default()
        };
        Self {
            data: DataConfig::default(),
            liver: seg(1, 7),
            lesion: seg(2, 8),
            baseline: seg(2, 8),
            detector: DetectorSpec::default(),
            pipeline: PipelineConfig::default(),
            crf: CrfParams::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `a.b.c=value` overrides in order. The value is parsed as JSON
    /// and falls back to a plain string; the key must already exist.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut tree = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        for s in sets {
            let (key, raw) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut tree;
            for part in key.split('.') {
                node = match node {
                    Value::Object(map) => map.get_mut(part),
                    Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                    _ => None,
                }
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
            }
            *node = value;
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.data.phantom.validate().map_err(cfg)?;
        crate::phantom::split_sizes(self.data.seeds.len(), self.data.split).map_err(cfg)?;
        for s in [&self.liver, &self.lesion, &self.baseline] {
            s.net.validate().map_err(cfg)?;
        }
        self.pipeline.validate().map_err(cfg)?;
        self.crf.validate().map_err(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let base = RunConfig::default();
        let c = base
            .with_overrides(&["pipeline.liver_threshold=0.4".into(), "data.seeds.0=99".into(), "pipeline.stages.crf=false".into()])
            .unwrap();
        assert_eq!(c.pipeline.liver_threshold, 0.4);
        assert_eq!(c.data.seeds[0], 99);
        assert!(!c.pipeline.stages.crf);
        assert!(matches!(base.with_overrides(&["pipeline.nope=1".into()]), Err(Error::Config(_))));
        assert!(matches!(base.with_overrides(&["pipeline.liver_threshold".into()]), Err(Error::Config(_))));
        assert!(matches!(base.with_overrides(&["pipeline.liver_threshold=1.5".into()]), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = serde_json::from_str(r#"{"pipeline": {"bbox_margin": 2}}"#).unwrap();
        assert_eq!(partial.pipeline.bbox_margin, 2);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
