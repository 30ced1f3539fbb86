//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bd::DegreeMode;
use crate::data::{self, Dataset, FoldRegime, ImageParams, SubspaceParams};
use crate::error::{Error, Result};
use crate::losses::{CimConfig, ErrorMeasure, LossWeights};
use crate::selfexpr::{ObjectiveSpec, PostprocessConfig, Regularizer};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    SynthImages {
        k: usize,
        per_class: usize,
        size: usize,
        d_sub: usize,
        #[serde(default)]
        noise_sigma: f64,
    },
    SynthSubspaces {
        k: usize,
        d_sub: usize,
        ambient_dim: usize,
        n_per_class: usize,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default)]
        outlier_frac: f64,
        #[serde(default)]
        outlier_mag: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        d: usize,
    },
    ImageDir {
        dir: PathBuf,
        #[serde(default)]
        extension: Option<String>,
        d: usize,
    },
    Csv {
        path: PathBuf,
        label_column: usize,
        d: usize,
    },
}

impl DataSource {
    /// Data seed is shared with the experiment so the generator is reproducible.
    pub fn load<T: Scalar>(&self, seed: u64) -> Result<Dataset<T>> {
        match self {
            DataSource::SynthImages {
                k,
                per_class,
                size,
                d_sub,
                noise_sigma,
            } => data::synth_images(
                &ImageParams {
                    k: *k,
                    per_class: *per_class,
                    size: *size,
                    d_sub: *d_sub,
                    noise_sigma: *noise_sigma,
                },
                seed,
            ),
            DataSource::SynthSubspaces {
                k,
                d_sub,
                ambient_dim,
                n_per_class,
                noise_sigma,
                outlier_frac,
                outlier_mag,
            } => data::synth_subspaces(
                &SubspaceParams {
                    k: *k,
                    d_sub: *d_sub,
                    ambient_dim: *ambient_dim,
                    n_per_class: *n_per_class,
                    noise_sigma: *noise_sigma,
                    outlier_frac: *outlier_frac,
                    outlier_mag: *outlier_mag,
                },
                seed,
            ),
            DataSource::Idx { images, labels, d } => data::load_mnist(images, labels, *d),
            DataSource::ImageDir { dir, extension, d } => data::load_image_dir(dir, extension.as_deref(), *d),
            DataSource::Csv { path, label_column, d } => data::load_csv_dataset(path, *label_column, *d),
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DataSource::Idx { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            DataSource::ImageDir { dir, .. } => fix(dir),
            DataSource::Csv { path, .. } => fix(path),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Encoder layers; the decoder mirrors them. No layers gives the shallow
/// model, which self-expresses the raw samples.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    #[serde(default)]
    pub encoder: Vec<ConvSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub measure: ErrorMeasure,
    pub regularizer: Regularizer,
    #[serde(default)]
    pub degree_mode: DegreeMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub ae_epochs: usize,
    pub dsc_epochs: usize,
    pub t_max: usize,
    pub t0: usize,
    pub warmup: usize,
    pub lr_start: f64,
    pub lr_min: f64,
    #[serde(default = "defaults::plateau_patience")]
    pub plateau_patience: usize,
    #[serde(default = "defaults::plateau_factor")]
    pub plateau_factor: f64,
    #[serde(default = "defaults::min_delta")]
    pub min_delta: f64,
    /// Zero disables early stopping.
    #[serde(default = "defaults::early_stop_patience")]
    pub early_stop_patience: usize,
}

mod defaults {
    pub fn plateau_patience() -> usize {
        20
    }
    pub fn plateau_factor() -> f64 {
        0.5
    }
    pub fn min_delta() -> f64 {
        1e-5
    }
    pub fn early_stop_patience() -> usize {
        60
    }
    pub fn num_folds() -> usize {
        5
    }
    pub fn train_fraction() -> f64 {
        0.7
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.t0 == 0 {
            return Err(Error::Config("schedule.t0 must be >= 1".into()));
        }
        if !(self.lr_start > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_start) {
            return Err(Error::Config(format!(
                "need 0 < schedule.lr_min <= schedule.lr_start, got lr_min={} lr_start={}",
                self.lr_min, self.lr_start
            )));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config(format!("schedule.plateau_factor must lie in (0, 1), got {}", self.plateau_factor)));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("schedule.plateau_patience must be >= 1".into()));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::Config("schedule.min_delta must be >= 0".into()));
        }
        Ok(())
    }

    /// Epochs after which pseudo-labels are refreshed, up to `epochs_run`.
    pub fn refinement_epochs(&self, epochs_run: usize) -> Vec<usize> {
        (1..).map(|j| self.warmup + j * self.t0).take_while(|&e| e <= epochs_run).collect()
    }

    pub fn is_refinement_epoch(&self, epoch: usize) -> bool {
        epoch > self.warmup && (epoch - self.warmup).is_multiple_of(self.t0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeKind {
    OneVsRest,
    WithinFold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldConfig {
    #[serde(default = "defaults::num_folds")]
    pub num_folds: usize,
    pub regime: RegimeKind,
    #[serde(default = "defaults::train_fraction")]
    pub train_fraction: f64,
}

impl FoldConfig {
    pub fn regime(&self) -> FoldRegime {
        match self.regime {
            RegimeKind::OneVsRest => FoldRegime::OneVsRest,
            RegimeKind::WithinFold => FoldRegime::WithinFold {
                train_fraction: self.train_fraction,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Record measured run times; off keeps results byte-reproducible.
    #[serde(default)]
    pub wall_clock: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub data: DataSource,
    #[serde(default)]
    pub architecture: Architecture,
    pub objective: ObjectiveConfig,
    pub cim: CimConfig,
    pub loss: LossWeights,
    pub postprocess: PostprocessConfig,
    pub schedule: Schedule,
    pub folds: FoldConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

/// Sets `dotted.key = value` in a TOML table. The value is parsed as TOML
/// and falls back to a plain string.
fn apply_override(root: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty override key `{key}`")))?;
    let mut table = root;
    for p in parts {
        table = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), parsed);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text` after applying `key=value` overrides.
    pub fn with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::with_overrides(&text, overrides).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.data.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.cim.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.postprocess.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.schedule.validate()?;
        if self.folds.num_folds == 0 {
            return Err(Error::Config("folds.num_folds must be >= 1".into()));
        }
        for (i, c) in self.architecture.encoder.iter().enumerate() {
            if c.channels == 0 || c.kernel == 0 || c.kernel % 2 == 0 || c.stride == 0 {
                return Err(Error::Config(format!(
                    "architecture.encoder[{i}]: need channels >= 1, odd kernel and stride >= 1"
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Self-expression objective for `k` clusters.
    pub fn objective_spec(&self, k: usize) -> ObjectiveSpec {
        ObjectiveSpec {
            measure: self.objective.measure,
            regularizer: self.objective.regularizer,
            gamma: self.loss.gamma,
            cim: self.cim,
            k,
            degree_mode: self.objective.degree_mode,
        }
    }
}
