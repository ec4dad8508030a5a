//! Run configuration: one TOML file, overridable from the command line.

use std::path::{Path, PathBuf};

use concat_core::data::synthetic::SyntheticConfig;
use concat_core::data::DEFAULT_SPLIT;
use concat_core::embed::{FactorizeConfig, WaveletConfig};
use concat_core::model::{ModelConfig, TrainConfig};
use concat_core::ode::{Scheme, SolverSpec};
use concat_core::par::Jobs;
use concat_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Where every command reads and writes its artifacts.
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    pub jobs: usize,
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub embedding: EmbeddingConfig,
    pub model: ModelSection,
    pub solver: SolverSpec,
    pub train: TrainConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("run"),
            jobs: 0,
            data: DataConfig::default(),
            synthetic: SyntheticConfig::default(),
            embedding: EmbeddingConfig::default(),
            model: ModelSection::default(),
            solver: SolverSpec::default(),
            train: TrainConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Cascade file in the one-line-per-cascade format.
    pub input: Option<PathBuf>,
    /// Generate cascades from `[synthetic]` instead of reading `input`.
    pub synthetic: bool,
    pub observation_time: f64,
    pub prediction_time: f64,
    pub min_size: usize,
    pub max_triplets: usize,
    pub split_seed: u64,
    pub split: [f64; 3],
    /// Dataset time units per model time unit.
    pub time_scale: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            input: None,
            synthetic: false,
            observation_time: 1.0,
            prediction_time: 4.0,
            min_size: 10,
            max_triplets: 100,
            split_seed: 0,
            split: [DEFAULT_SPLIT.0, DEFAULT_SPLIT.1, DEFAULT_SPLIT.2],
            time_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Characteristic-function sample points, evenly spaced on `[0, max_point]`.
    pub points: usize,
    pub max_point: f64,
    pub chebyshev_order: usize,
    /// Fixed heat scales; derived per graph when absent.
    pub scales: Option<Vec<f64>>,
    pub global: GlobalEmbeddingConfig,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig { points: 25, max_point: 50.0, chebyshev_order: 30, scales: None, global: Default::default() }
    }
}

impl EmbeddingConfig {
    pub fn wavelet(&self) -> WaveletConfig {
        WaveletConfig { scales: self.scales.clone(), chebyshev_order: self.chebyshev_order, ..WaveletConfig::with_points(self.points, self.max_point) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlobalSource {
    /// Truncated factorization of the global graph.
    Factorize,
    /// Precomputed table at `path`.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalEmbeddingConfig {
    pub source: GlobalSource,
    /// Embedding table, required when `source = "file"`.
    pub path: Option<PathBuf>,
    /// Optional edge list replacing the graph built from observed reshares.
    pub edges: Option<PathBuf>,
    pub dim: usize,
    pub oversample: usize,
    pub power_iters: usize,
    pub seed: u64,
}

impl Default for GlobalEmbeddingConfig {
    fn default() -> Self {
        let f = FactorizeConfig::default();
        GlobalEmbeddingConfig {
            source: GlobalSource::Factorize,
            path: None,
            edges: None,
            dim: f.dim,
            oversample: f.oversample,
            power_iters: f.power_iters,
            seed: f.seed,
        }
    }
}

impl GlobalEmbeddingConfig {
    pub fn factorize(&self) -> FactorizeConfig {
        FactorizeConfig { dim: self.dim, oversample: self.oversample, power_iters: self.power_iters, seed: self.seed }
    }
}

/// Model widths that are not implied by the embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub attention_dim: usize,
    pub head_hidden: usize,
    pub no_tpp: bool,
    pub no_align: bool,
    pub include_root_intensity: bool,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            hidden: m.hidden,
            attention_dim: m.attention_dim,
            head_hidden: m.head_hidden,
            no_tpp: false,
            no_align: false,
            include_root_intensity: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub hidden: usize,
    pub attention_dim: usize,
    pub head_hidden: usize,
    pub embedding_dim: usize,
    pub epsilon: f64,
    pub threshold: f64,
    pub seed: u64,
    pub solver: SolverSpec,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            hidden: 4,
            attention_dim: 4,
            head_hidden: 4,
            embedding_dim: 4,
            epsilon: concat_core::model::GRADCHECK_EPSILON,
            threshold: 1e-3,
            seed: 0,
            solver: SolverSpec::fixed(Scheme::Rk4, 0.01),
        }
    }
}

impl RunConfig {
    pub fn jobs(&self) -> Jobs {
        Jobs(self.jobs)
    }

    /// Full model widths given the embedding widths.
    pub fn model_config(&self, global_dim: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            hidden: m.hidden,
            attention_dim: m.attention_dim,
            head_hidden: m.head_hidden,
            cascade_dim: self.embedding.wavelet().dim(),
            global_dim,
            no_tpp: m.no_tpp,
            no_align: m.no_align,
            include_root_intensity: m.include_root_intensity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.observation_time < d.prediction_time) {
            return Err(Error::Config(format!(
                "observation_time {} must be below prediction_time {}",
                d.observation_time, d.prediction_time
            )));
        }
        if d.min_size == 0 || d.max_triplets == 0 {
            return Err(Error::Config("min_size and max_triplets must be positive".into()));
        }
        if !(d.time_scale > 0.0 && d.time_scale.is_finite()) {
            return Err(Error::Config(format!("time_scale must be positive, got {}", d.time_scale)));
        }
        if (d.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 || d.split.iter().any(|r| *r < 0.0) {
            return Err(Error::Config(format!("split ratios {:?} must be non-negative and sum to 1", d.split)));
        }
        if self.embedding.points == 0 {
            return Err(Error::Config("embedding.points must be positive".into()));
        }
        self.embedding.wavelet().validate()?;
        if self.embedding.global.source == GlobalSource::File && self.embedding.global.path.is_none() {
            return Err(Error::Config("embedding.global.path is required when source = \"file\"".into()));
        }
        self.model_config(self.embedding.global.dim.max(1)).validate()?;
        self.solver.validate()?;
        self.gradcheck.solver.validate()?;
        self.train.validate()
    }

    /// Canonical serialization, the input of [`RunConfig::hash`].
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [&mut self.data.input, &mut self.embedding.global.path, &mut self.embedding.global.edges]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }
}

/// Sets `key` (dotted path) in `table` to `raw`, parsed as a TOML value when
/// possible and as a string otherwise.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value = parse_value(raw);
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// The config file text (if any), overrides applied, and relative paths
/// resolved against the config file's directory.
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Original file contents, echoed into the output directory.
    pub source_text: Option<String>,
}

pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<LoadedConfig> {
    let (mut table, source_text, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            let table: toml::Table =
                text.parse().map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (table, Some(text), base)
        }
        None => (toml::Table::new(), None, PathBuf::new()),
    };
    for (k, v) in overrides {
        apply_override(&mut table, k, v)?;
    }
    let mut config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    config.resolve(&base);
    config.validate()?;
    Ok(LoadedConfig { config, source_text })
}
