//! Run configuration: a TOML file plus dotted-path overrides, and a stable
//! digest of the result.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_synthetic, load_csv, minmax_scale, partition, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::harness::{ClassifierConfig, NoiseSetting, PipelineConfig};
use crate::noise::NoiseSpec;
use crate::pretext::PretextConfig;
use crate::selector::{SelectorConfig, SelectorMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionCounts {
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
}

impl Default for PartitionCounts {
    fn default() -> Self {
        Self {
            labeled: 200,
            unlabeled: 2000,
            test: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub path: Option<PathBuf>,
    /// Header name, or zero-based index when `has_header` is false.
    pub label_column: Option<String>,
    pub has_header: bool,
    pub synthetic: SyntheticSpec,
    pub partition: PartitionCounts,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            label_column: None,
            has_header: true,
            synthetic: SyntheticSpec::default(),
            partition: PartitionCounts::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Noise,
    Budget,
    Cv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub modes: Vec<SelectorMode>,
    /// Feature counts for the noise sweep.
    pub ks: Vec<usize>,
    pub noise: Vec<NoiseSetting>,
    pub budgets: Vec<usize>,
    pub folds: usize,
    pub repeats: usize,
    pub shared_pretraining: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::Noise,
            modes: vec![SelectorMode::Full],
            ks: vec![10, 15, 20, 25, 30],
            noise: Vec::new(),
            budgets: vec![200],
            folds: 5,
            repeats: 5,
            shared_pretraining: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Seeds for sweeps; `[seed]` when empty.
    pub seeds: Vec<u64>,
    /// Not part of the digest.
    pub output_dir: PathBuf,
    pub mode: SelectorMode,
    pub data: DataConfig,
    /// Corruption applied to the data before any stage.
    pub noise: Vec<NoiseSpec>,
    pub pretext: PretextConfig,
    pub selector: SelectorConfig,
    pub classifier: ClassifierConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: Vec::new(),
            output_dir: PathBuf::from("runs"),
            mode: SelectorMode::Full,
            data: DataConfig::default(),
            noise: Vec::new(),
            pretext: PretextConfig::default(),
            selector: SelectorConfig::default(),
            classifier: ClassifierConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse TOML text, apply `key.path=value` overrides, and validate.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: RunConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        self.data.synthetic.validate()?;
        if self.data.source == DataSource::Csv {
            match &self.data.path {
                None => return Err(Error::Config("data.path is required for csv data".into())),
                Some(p) if !p.exists() => {
                    return Err(Error::Config(format!("data file {} does not exist", p.display())))
                }
                Some(_) => {}
            }
        }
        if self.sweep.folds < 2 {
            return Err(Error::Config("sweep.folds must be at least 2".into()));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mode: self.mode,
            pretext: self.pretext.clone(),
            selector: self.selector.clone(),
            classifier: self.classifier.clone(),
        }
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// Hex SHA-256 of the canonical JSON form (sorted keys), with the output
    /// directory left out.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&v).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Short id naming one command's outputs.
    pub fn run_id(&self, command: &str) -> String {
        let h = Sha256::digest(format!("{}:{command}", self.digest()).as_bytes());
        format!("{command}-{}", &hex::encode(h)[..12])
    }

    /// Partitioned, scaled data for `seed`, with the configured noise applied.
    pub fn prepare(&self, seed: u64) -> Result<Dataset> {
        let p = &self.data.partition;
        let raw = match self.data.source {
            DataSource::Synthetic => {
                let spec = SyntheticSpec {
                    seed: self.data.synthetic.seed.wrapping_add(seed),
                    ..self.data.synthetic.clone()
                };
                generate_synthetic(&spec)?
            }
            DataSource::Csv => {
                let path = self.data.path.as_ref().ok_or_else(|| Error::Config("data.path is not set".into()))?;
                load_csv(path, self.data.label_column.as_deref(), self.data.has_header)?
            }
        };
        let ds = minmax_scale(&partition(&raw, p.labeled, p.unlabeled, p.test, seed)?)?;
        let setting = NoiseSetting {
            name: "config".into(),
            specs: self.noise.clone(),
        };
        setting.apply(&ds, seed)
    }
}

/// Set `a.b.c=value` in `table`, creating intermediate tables. The value is
/// read as a TOML literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` must look like key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override `{assignment}` has an empty key")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{assignment}`: `{k}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::from_toml("", &["pretext.epochs=3".into(), "mode=no-selfsup".into(), "seeds=[1, 2]".into()]).unwrap();
        assert_eq!(c.pretext.epochs, 3);
        assert_eq!(c.mode, SelectorMode::NoSelfsup);
        assert_eq!(c.seed_list(), vec![1, 2]);
        assert_eq!(c.selector.attention_hidden, 300);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(matches!(RunConfig::from_toml("bogus = 1", &[]), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[pretext]\np_m = 1.5", &[]).is_err());
        assert!(RunConfig::from_toml("", &["pretext".into()]).is_err());
        assert!(RunConfig::from_toml("[data]\nsource = \"csv\"", &[]).is_err());
    }

    #[test]
    fn digest_is_stable_and_ignores_output_dir() {
        let a = RunConfig::from_toml("seed = 3", &[]).unwrap();
        let b = RunConfig::from_toml("seed = 3\noutput_dir = \"elsewhere\"", &[]).unwrap();
        let c = RunConfig::from_toml("seed = 4", &[]).unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
        assert!(a.run_id("select").starts_with("select-"));
        assert_ne!(a.run_id("select"), a.run_id("pretrain"));
    }

    #[test]
    fn bundled_config_parses() {
        let c = RunConfig::from_toml(include_str!("../../../configs/noise-sweep.toml"), &[]).unwrap();
        assert_eq!(c.pipeline(), PipelineConfig::default());
        assert_eq!(c.sweep.noise.len(), 4);
        assert_eq!(c.seed_list().len(), 5);
    }

    #[test]
    fn noise_settings_parse() {
        let text = r#"
[[sweep.noise]]
name = "sp+missing"
specs = [{ kind = "salt_pepper", amount = 0.05 }, { kind = "missing", fraction = 0.3 }]
"#;
        let c = RunConfig::from_toml(text, &[]).unwrap();
        assert_eq!(c.sweep.noise[0].specs.len(), 2);
    }
}
