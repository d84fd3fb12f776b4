//! Run configuration: a versioned JSON file with sections for paths, model
//! architecture, patch building, training, and export, plus dotted-key
//! `--set` overrides applied before validation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetConfig;
use crate::patch::PatchConfig;
use crate::train::{PrepConfig, TrainSettings};
use crate::zernike::ZernikeBasisSet;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub paths: PathsSection,
    pub model: ModelSection,
    pub patch: PatchSection,
    pub train: TrainSection,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            paths: PathsSection::default(),
            model: ModelSection::default(),
            patch: PatchSection::default(),
            train: TrainSection::default(),
            export: ExportSection::default(),
        }
    }
}

/// Fallback locations used when the corresponding flags are omitted.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub conv_filters: [usize; 3],
    pub rotations: usize,
    pub linear_width: usize,
    pub linear_relu: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let net = NetConfig::default();
        ModelSection {
            conv_filters: net.conv_filters,
            rotations: net.rotations,
            linear_width: net.linear_width,
            linear_relu: net.linear_relu,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchSection {
    pub area_fraction: f64,
    pub neighbor_k: usize,
    pub max_order: u32,
    pub samples: usize,
    pub sample_seed: u64,
}

impl Default for PatchSection {
    fn default() -> Self {
        PatchSection {
            area_fraction: 0.01,
            neighbor_k: 8,
            max_order: 5,
            samples: 8000,
            sample_seed: 7,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: u64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let s = TrainSettings::default();
        TrainSection {
            lr: s.lr,
            beta1: s.beta1,
            beta2: s.beta2,
            epochs: s.epochs,
            seed: s.init_seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportSection {
    /// Hit-rate thresholds, in percent.
    pub thresholds: Vec<f64>,
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection {
            thresholds: vec![10.0, 20.0],
        }
    }
}

impl RunConfig {
    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            max_order: self.patch.max_order,
            rotations: self.model.rotations,
            conv_filters: self.model.conv_filters,
            linear_width: self.model.linear_width,
            linear_relu: self.model.linear_relu,
        }
    }

    pub fn patch_config(&self, basis: &ZernikeBasisSet) -> Result<PatchConfig> {
        PatchConfig::new(
            self.patch.area_fraction,
            self.patch.neighbor_k,
            2 * basis.len(),
        )
    }

    pub fn prep_config(&self, basis: &ZernikeBasisSet) -> Result<PrepConfig> {
        Ok(PrepConfig {
            samples: self.patch.samples,
            seed: self.patch.sample_seed,
            patch: self.patch_config(basis)?,
        })
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            lr: self.train.lr,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            epochs: self.train.epochs,
            init_seed: self.train.seed,
        }
    }
}

/// Load the config file (or defaults when absent) and fold in `key=value`
/// overrides, where keys are dotted paths like `train.lr`.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Format {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?
        }
        None => serde_json::to_value(RunConfig::default()).expect("default config serializes"),
    };
    for item in overrides {
        apply_override(&mut value, item)?;
    }
    let config: RunConfig = serde_json::from_value(value)
        .map_err(|e| Error::Usage(format!("invalid configuration: {e}")))?;
    if config.version != CONFIG_VERSION {
        return Err(Error::Usage(format!(
            "config version {} not supported (expected {CONFIG_VERSION})",
            config.version
        )));
    }
    Ok(config)
}

fn apply_override(value: &mut serde_json::Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{item}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if key.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Usage(format!("override key `{key}` is malformed")));
    }
    let parsed: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = value;
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .as_object_mut()
            .ok_or_else(|| Error::Usage(format!("override key `{key}` crosses a non-object")))?
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
    }
    cursor
        .as_object_mut()
        .ok_or_else(|| Error::Usage(format!("override key `{key}` crosses a non-object")))?
        .insert(parts.last().unwrap().to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_json() {
        let config = RunConfig::default();
        let json = serde_json::to_string_pretty(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.model.conv_filters, [128, 512, 1024]);
        assert_eq!(back.patch.samples, 8000);
        assert_eq!(back.export.thresholds, vec![10.0, 20.0]);
    }

    #[test]
    fn partial_file_fills_in_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"train": {"lr": 0.01}}"#).unwrap();
        let config = load_config(Some(&path), &[]).unwrap();
        assert_eq!(config.train.lr, 0.01);
        assert_eq!(config.train.epochs, 60);
        assert_eq!(config.version, CONFIG_VERSION);
    }

    #[test]
    fn overrides_reach_nested_keys_and_arrays() {
        let sets = vec![
            "train.lr=0.5".to_string(),
            "model.conv_filters=[4,6,8]".to_string(),
            "paths.manifest=data/manifest.json".to_string(),
            "model.linear_relu=false".to_string(),
        ];
        let config = load_config(None, &sets).unwrap();
        assert_eq!(config.train.lr, 0.5);
        assert_eq!(config.model.conv_filters, [4, 6, 8]);
        assert_eq!(
            config.paths.manifest,
            Some(PathBuf::from("data/manifest.json"))
        );
        assert!(!config.model.linear_relu);
    }

    #[test]
    fn bad_overrides_and_unknown_keys_are_usage_errors() {
        for bad in ["no-equals", "=x", "a..b=1", "train.typo=3", "nonsense.lr=1"] {
            let result = load_config(None, &[bad.to_string()]);
            assert!(
                matches!(result, Err(Error::Usage(_))),
                "`{bad}` should be a usage error, got {result:?}"
            );
        }
    }

    #[test]
    fn version_is_checked() {
        let result = load_config(None, &["version=9".to_string()]);
        assert!(matches!(result, Err(Error::Usage(_))));
    }

    #[test]
    fn sections_translate_to_module_configs() {
        let config = load_config(
            None,
            &[
                "patch.max_order=3".to_string(),
                "patch.area_fraction=0.12".to_string(),
                "model.rotations=4".to_string(),
            ],
        )
        .unwrap();
        let net = config.net_config();
        assert_eq!(net.max_order, 3);
        assert_eq!(net.rotations, 4);
        let basis = ZernikeBasisSet::new(net.max_order).unwrap();
        let prep = config.prep_config(&basis).unwrap();
        assert_eq!(prep.patch.area_fraction, 0.12);
        assert_eq!(prep.patch.min_patch_points, 2 * basis.len());

        let bad = load_config(None, &["patch.area_fraction=1.5".to_string()]).unwrap();
        assert!(bad.patch_config(&basis).is_err());
    }
}
