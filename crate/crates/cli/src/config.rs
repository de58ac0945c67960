//! Pipeline configuration: file, defaults and flag overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skinaug_core::curation::ACCEPT_QUOTA;
use skinaug_core::digest::json_digest;
use skinaug_core::genclient::remote::DEFAULT_ENDPOINT;
use skinaug_core::genclient::{RetryPolicy, DEFAULT_CANDIDATE_COUNT};
use skinaug_core::splitter::PROTOCOL_DOSES;
use skinaug_core::trainer::TrainingConfig;
use skinaug_core::{DEFAULT_AUGMENTED_CONDITIONS, DEFAULT_CONDITIONS};

use crate::error::{read_input, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Remote,
    Stub,
}

/// Layout of the input manifest file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ManifestFormat {
    /// The pipeline's own seven-column CSV.
    #[default]
    Manifest,
    /// The public Fitzpatrick 17k CSV.
    Fitzpatrick17k,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub manifest_path: PathBuf,
    #[serde(default)]
    pub manifest_format: ManifestFormat,
    /// Image directory for Fitzpatrick 17k imports, relative to the manifest.
    #[serde(default = "default_image_dir")]
    pub image_dir: String,
    #[serde(default = "default_conditions")]
    pub conditions: Vec<String>,
    #[serde(default = "default_augmented")]
    pub augmented_conditions: Vec<String>,
    #[serde(default = "default_seed_count")]
    pub seed_count: usize,
    #[serde(default = "default_candidate_count")]
    pub candidate_count: u32,
    #[serde(default = "default_doses")]
    pub doses: Vec<u32>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_image_dir() -> String {
    "images".into()
}
fn default_conditions() -> Vec<String> {
    DEFAULT_CONDITIONS.iter().map(|c| c.to_string()).collect()
}
fn default_augmented() -> Vec<String> {
    DEFAULT_AUGMENTED_CONDITIONS.iter().map(|c| c.to_string()).collect()
}
fn default_seed_count() -> usize {
    8
}
fn default_candidate_count() -> u32 {
    DEFAULT_CANDIDATE_COUNT
}
fn default_doses() -> Vec<u32> {
    PROTOCOL_DOSES.to_vec()
}
fn default_backend() -> Backend {
    Backend::Remote
}
fn default_endpoint() -> String {
    DEFAULT_ENDPOINT.into()
}
fn default_in_flight() -> usize {
    4
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("skinaug-out")
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub rng_seed: Option<u64>,
    pub backend: Option<Backend>,
    pub output_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub manifest_format: Option<ManifestFormat>,
}

impl PipelineConfig {
    /// Load `.toml` or `.json` by extension. Relative paths in the file are
    /// taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let bytes = read_input(path, "config file")?;
        let text = String::from_utf8(bytes).map_err(|_| CliError::Validation(format!("{} is not utf-8", path.display())))?;
        let mut cfg: PipelineConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?,
            Some("json") => {
                serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
            }
            other => {
                return Err(CliError::Validation(format!(
                    "config must be .toml or .json, got {:?}",
                    other.unwrap_or("")
                )))
            }
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.manifest_path, &mut cfg.output_dir] {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.rng_seed {
            self.rng_seed = s;
        }
        if let Some(b) = o.backend {
            self.backend = b;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(m) = &o.manifest {
            self.manifest_path = m.clone();
        }
        if let Some(f) = o.manifest_format {
            self.manifest_format = f;
        }
        // one seed drives every stage
        self.training.rng_seed = self.rng_seed;
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(CliError::Validation(m));
        if self.conditions.len() < 2 {
            return invalid("at least two conditions are needed".into());
        }
        let mut sorted = self.conditions.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.conditions.len() {
            return invalid("conditions contain duplicates".into());
        }
        if let Some(c) = self.augmented_conditions.iter().find(|c| !self.conditions.contains(c)) {
            return invalid(format!("augmented condition `{c}` is not in conditions"));
        }
        if self.seed_count == 0 {
            return invalid("seed_count must be positive".into());
        }
        if (self.candidate_count as usize) < ACCEPT_QUOTA {
            return invalid(format!(
                "candidate_count {} cannot fill the {ACCEPT_QUOTA}-per-seed selection",
                self.candidate_count
            ));
        }
        if self.doses.is_empty() {
            return invalid("doses must not be empty".into());
        }
        let capacity = self.seed_count * ACCEPT_QUOTA;
        if let Some(d) = self.doses.iter().find(|&&d| d == 0 || d as usize > capacity) {
            return invalid(format!("dose {d} must be in 1..={capacity} ({} seeds x {ACCEPT_QUOTA})", self.seed_count));
        }
        if self.max_in_flight == 0 {
            return invalid("max_in_flight must be positive".into());
        }
        self.retry.validate()?;
        self.training.validate()?;
        Ok(())
    }

    /// Digest of everything that can change results; the output location is
    /// excluded so identical runs in different directories agree.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialises");
        value.as_object_mut().expect("object").remove("output_dir");
        json_digest(&value)
    }

    /// Synthetic images per augmented condition in the mode comparison.
    pub fn full_dose(&self) -> u32 {
        *self.doses.iter().max().expect("validated non-empty")
    }

    pub fn manifest_dir(&self) -> PathBuf {
        self.manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}
