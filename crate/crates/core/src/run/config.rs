//! Declarative run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunError;
use crate::confidence::{Aggregation, Estimator};
use crate::metrics::{ReportFilter, ReportOptions};
use crate::probe_data::InjectionSpec;
use crate::scoring::{BackendSpec, Reduction, DEFAULT_LOGPROB_FLOOR};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Native dataset directory.
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub backend: BackendSpec,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub templates: TemplateConfig,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub injection: InjectionSpec,
    /// Extra report filters; the unfiltered report is always written.
    #[serde(default)]
    pub filters: Vec<ReportFilter>,
    #[serde(default)]
    pub metrics: ReportOptions,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

fn default_estimators() -> Vec<Estimator> {
    Estimator::STANDARD.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub reduction: Reduction,
    pub floor: f64,
    pub batch_size: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            reduction: Reduction::Sum,
            floor: DEFAULT_LOGPROB_FLOOR,
            batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateConfig {
    /// First `count` templates of each relation are used.
    pub count: usize,
    /// Template behind Base and Margin.
    pub single_template: usize,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            count: 5,
            single_template: 0,
        }
    }
}

/// Option-count sweep over the 1:1 relations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    3
}

impl RunConfig {
    /// Parses a config file. Relative paths resolve against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            RunError::Config(m) => RunError::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(RunError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.dataset);
        join(&mut self.output_dir);
        if let BackendSpec::File { path, .. } = &mut self.backend {
            join(path);
        }
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if !self.dataset.is_dir() {
            return bad(format!(
                "dataset directory {} does not exist",
                self.dataset.display()
            ));
        }
        if let BackendSpec::File { path, .. } = &self.backend {
            if !path.is_file() {
                return bad(format!("score file {} does not exist", path.display()));
            }
        }
        if self.estimators.is_empty() {
            return bad("estimator set is empty".into());
        }
        if self.metrics.bins == 0 {
            return bad("metrics.bins must be at least 1".into());
        }
        let t = self.templates;
        if t.count == 0 {
            return bad("templates.count must be at least 1".into());
        }
        if t.single_template >= t.count {
            return bad(format!(
                "templates.single_template {} is outside the first {} templates",
                t.single_template, t.count
            ));
        }
        for e in &self.estimators {
            if let Some(Aggregation::Vote(k)) = e.aggregation() {
                if k > t.count {
                    return bad(format!("{e} needs {k} templates, run uses {}", t.count));
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.ks.is_empty() || s.ks.iter().any(|&k| k < 2) || s.repeats == 0 {
                return bad("sweep needs ks >= 2 and at least one repeat".into());
            }
        }
        let mut names = std::collections::BTreeSet::from(["all".to_string()]);
        for f in &self.filters {
            if f.name.is_empty() || f.name.contains(['/', '\\']) || !names.insert(f.name.clone()) {
                return bad(format!(
                    "filter name {:?} is empty, repeated or not file-safe",
                    f.name
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring `output_dir` and
    /// taking paths as written.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn needs_all_templates(&self) -> bool {
        self.estimators.iter().any(|e| !e.is_single_template())
    }
}
