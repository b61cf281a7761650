//! Run configuration: one TOML file with a section per module, `--set`
//! overrides, and cross-field validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::backbone::BackboneConfig;
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::metrics::MetricsConfig;
use crate::trainer::TrainerConfig;

pub const OUT_DIR_ENV: &str = "PTGAN_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            out_dir: "runs".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Pairs need a pose distance strictly above this.
    pub pair_min_pose_distance: f32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    /// Worker threads; 0 uses every core.
    pub workers: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every section seed is derived from it.
    pub seed: u64,
    pub backbone: BackboneConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub augment: AugmentConfig,
    pub dataset: DatasetConfig,
    pub trainer: TrainerConfig,
    pub metrics: MetricsConfig,
    pub paths: PathsConfig,
    pub runtime: RuntimeConfig,
}

fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like section.key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty key segment"));
    }
    // TOML literal if it parses as one, otherwise a bare string
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut table = root;
    for (i, seg) in parents.iter().enumerate() {
        let entry = table
            .entry(seg.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path[..=i].join("."), "is not a section"))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parse TOML text with overrides applied on top. Unknown keys and
    /// type errors are reported with their key path.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        for spec in overrides {
            let (path, value) = parse_override(spec)?;
            apply_override(&mut table, &path, value)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Propagate the root seed into every section. A section seed that was
    /// set to something else is rejected.
    pub fn resolve_seeds(&mut self) -> Result<()> {
        let root = self.seed;
        let sections: [(&str, &mut u64); 6] = [
            ("backbone.seed", &mut self.backbone.seed),
            ("generator.seed", &mut self.generator.seed),
            ("discriminator.seed", &mut self.discriminator.seed),
            ("augment.seed", &mut self.augment.seed),
            ("trainer.seed", &mut self.trainer.seed),
            ("metrics.seed", &mut self.metrics.seed),
        ];
        for (key, s) in sections {
            if *s != 0 && *s != root {
                return Err(Error::config(
                    key,
                    format!("section seeds follow the root `seed` ({root}); set that instead"),
                ));
            }
            *s = root;
        }
        self.metrics.classifier_training.seed = root;
        Ok(())
    }

    /// Checks that do not need the dataset.
    pub fn validate(&self) -> Result<()> {
        self.augment.validate()?;
        self.generator.validate()?;
        self.trainer.validate()?;
        self.metrics.validate()?;
        if self.generator.descriptor_dim != self.backbone.dim {
            return Err(Error::config(
                "generator.descriptor_dim",
                format!(
                    "generator.descriptor_dim = {} but backbone.dim = {}",
                    self.generator.descriptor_dim, self.backbone.dim
                ),
            ));
        }
        if self.generator.output_size != self.augment.image_size {
            return Err(Error::config(
                "generator.output_size",
                format!(
                    "generator.output_size = {} but augment.image_size = {}",
                    self.generator.output_size, self.augment.image_size
                ),
            ));
        }
        if self.discriminator.input_size != self.augment.image_size {
            return Err(Error::config(
                "discriminator.input_size",
                format!(
                    "discriminator.input_size = {} but augment.image_size = {}",
                    self.discriminator.input_size, self.augment.image_size
                ),
            ));
        }
        if !(self.dataset.pair_min_pose_distance >= 0.0) {
            return Err(Error::config("dataset.pair_min_pose_distance", "must be non-negative"));
        }
        Ok(())
    }

    /// Fill `discriminator.num_classes` from the dataset, or check it.
    pub fn resolve_num_classes(&mut self, num_identities: usize) -> Result<()> {
        match self.discriminator.num_classes {
            None => self.discriminator.num_classes = Some(num_identities),
            Some(n) if n != num_identities => {
                return Err(Error::config(
                    "discriminator.num_classes",
                    format!("{n} but the manifest has {num_identities} identities"),
                ))
            }
            Some(_) => {}
        }
        self.discriminator.validate()
    }

    /// `PTGAN_OUT`, when set, wins over `paths.out_dir`.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
            if !dir.is_empty() {
                self.paths.out_dir = PathBuf::from(dir);
            }
        }
    }
}

/// Read, override, resolve seeds, apply the environment, validate.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(p.to_path_buf()),
            _ => e.into(),
        })?,
        None => String::new(),
    };
    let mut cfg = RunConfig::from_toml(&text, overrides)?;
    cfg.resolve_seeds()?;
    cfg.apply_env();
    cfg.validate()?;
    Ok(cfg)
}
