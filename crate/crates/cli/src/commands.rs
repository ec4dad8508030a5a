//! The six pipeline commands. Each one is a pure function of the run
//! configuration (plus the named artifacts) and writes into `output_dir`.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use concat_core::data::{
    build_cascade_graph, build_global_graph, filter_cascades, parse_dataset, split_dataset, split_stats,
    synthetic, truncate_triplets, window_and_label, Cascade, GlobalGraph, RawCascade, Split, SplitStats,
};
use concat_core::embed::{global_embed_factorize, global_embed_load, EmbeddingTable};
use concat_core::model::{
    cascade_embedding, evaluate, gradcheck, prepare_inputs, toy_input, train, CascadeInput, Checkpoint,
    EpochLog, GradcheckReport, Metrics, Model, ModelConfig, PredictionRecord,
};
use concat_core::{Error, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{GlobalSource, RunConfig};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// A loaded configuration together with the text it came from.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub source_text: Option<String>,
}

impl Context {
    pub fn new(config: RunConfig) -> Self {
        Context { config, source_text: None }
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    fn ensure_dir(&self, rel: &str) -> Result<PathBuf> {
        let dir = self.out(rel);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    /// Writes `config.toml` (the file as given) and `resolved_config.toml`.
    fn echo_config(&self) -> Result<()> {
        let dir = self.ensure_dir("")?;
        let resolved = self.config.to_toml();
        write(dir.join("config.toml"), self.source_text.as_deref().unwrap_or(&resolved))?;
        write(dir.join("resolved_config.toml"), &resolved)
    }
}

fn write(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value).expect("report serializes") + "\n"))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Serde(format!("{}: {e}", path.display()))
}

/// Reads the configured dataset, or generates the synthetic one.
pub fn load_raw(cfg: &RunConfig) -> Result<Vec<RawCascade>> {
    if cfg.data.synthetic {
        return Ok(synthetic::generate(&cfg.synthetic));
    }
    let path = cfg
        .data
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("set data.input or pass --synthetic".into()))?;
    let outcome = parse_dataset(path)?;
    if let Some(first) = outcome.errors.into_iter().next() {
        return Err(first);
    }
    Ok(outcome.records)
}

/// Windows, labels, filters and truncates `raw`.
pub fn window_all(cfg: &RunConfig, raw: &[RawCascade]) -> Result<Vec<Cascade>> {
    let d = &cfg.data;
    let windowed = raw
        .iter()
        .map(|r| window_and_label(r, d.observation_time, d.prediction_time))
        .collect::<Result<Vec<_>>>()?;
    Ok(filter_cascades(windowed, d.min_size)
        .into_iter()
        .map(|c| truncate_triplets(c, d.max_triplets))
        .collect())
}

/// The split a configuration describes. Recomputed on demand; every step is
/// deterministic.
pub fn build_split(cfg: &RunConfig) -> Result<Split> {
    let raw = load_raw(cfg)?;
    let kept = window_all(cfg, &raw)?;
    if kept.is_empty() {
        return Err(Error::Empty(format!(
            "no cascade has at least {} observed events out of {}",
            cfg.data.min_size,
            raw.len()
        )));
    }
    let r = cfg.data.split;
    split_dataset(kept, (r[0], r[1], r[2]), cfg.data.split_seed)
}

fn split_parts(split: &Split) -> [(&'static str, &[Cascade]); 3] {
    [("train", &split.train), ("val", &split.val), ("test", &split.test)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedStats {
    #[serde(flatten)]
    pub stats: SplitStats,
    pub avg_structural_virality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub config_hash: String,
    pub raw_cascades: usize,
    pub kept_cascades: usize,
    pub splits: BTreeMap<String, PreparedStats>,
}

fn prepared_stats(cascades: &[Cascade]) -> Result<PreparedStats> {
    let mut virality = 0.0;
    for c in cascades {
        virality += build_cascade_graph(c)?.structural_virality();
    }
    Ok(PreparedStats { stats: split_stats(cascades), avg_structural_virality: virality / cascades.len().max(1) as f64 })
}

/// Writes `prepared/{train,val,test}.jsonl` and `prepared/stats.json`.
pub fn cmd_prepare(ctx: &Context) -> Result<PrepareReport> {
    let cfg = &ctx.config;
    let raw = load_raw(cfg)?;
    let raw_cascades = raw.len();
    let kept = window_all(cfg, &raw)?;
    if kept.is_empty() {
        return Err(Error::Empty(format!("no cascade has at least {} observed events", cfg.data.min_size)));
    }
    let kept_cascades = kept.len();
    let r = cfg.data.split;
    let split = split_dataset(kept, (r[0], r[1], r[2]), cfg.data.split_seed)?;

    let dir = ctx.ensure_dir("prepared")?;
    let mut splits = BTreeMap::new();
    for (name, cascades) in split_parts(&split) {
        let mut text = String::new();
        for c in cascades {
            text.push_str(&serde_json::to_string(c).expect("cascade serializes"));
            text.push('\n');
        }
        write(dir.join(format!("{name}.jsonl")), &text)?;
        splits.insert(name.to_string(), prepared_stats(cascades)?);
    }
    let report = PrepareReport { config_hash: cfg.hash(), raw_cascades, kept_cascades, splits };
    write_json(dir.join("stats.json"), &report)?;
    ctx.echo_config()?;
    info!("prepared {kept_cascades} of {raw_cascades} cascades into {}", dir.display());
    Ok(report)
}

/// Reads one prepared split file.
pub fn read_prepared(path: impl AsRef<Path>) -> Result<Vec<Cascade>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// The user graph: the configured edge list, or every observed reshare
/// across all splits.
pub fn global_graph(cfg: &RunConfig, split: &Split) -> Result<GlobalGraph> {
    match &cfg.embedding.global.edges {
        Some(path) => GlobalGraph::from_edge_list(path),
        None => {
            let all: Vec<Cascade> = split_parts(split).iter().flat_map(|(_, c)| c.iter().cloned()).collect();
            Ok(build_global_graph(&all))
        }
    }
}

pub fn global_table(cfg: &RunConfig, split: &Split) -> Result<EmbeddingTable> {
    let g = &cfg.embedding.global;
    match g.source {
        GlobalSource::File => global_embed_load(g.path.as_ref().expect("validated")),
        GlobalSource::Factorize => global_embed_factorize(&global_graph(cfg, split)?, &g.factorize()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedReport {
    pub global_users: usize,
    pub global_dim: usize,
    pub cascade_dim: usize,
    pub cascade_nodes: BTreeMap<String, usize>,
}

/// Writes `embeddings/global.emb` and one table per split whose keys are
/// `<cascade_id>/<user>#<occurrence>`.
pub fn cmd_embed(ctx: &Context) -> Result<EmbedReport> {
    let cfg = &ctx.config;
    let split = build_split(cfg)?;
    let global = global_table(cfg, &split)?;
    let dir = ctx.ensure_dir("embeddings")?;
    global.save(dir.join("global.emb"))?;

    let wavelet = cfg.embedding.wavelet();
    let mut cascade_nodes = BTreeMap::new();
    for (name, cascades) in split_parts(&split) {
        let tables = concat_core::par::try_map(cascades, cfg.jobs(), |c| cascade_embedding(c, &wavelet))?;
        let mut merged = EmbeddingTable::new(wavelet.dim());
        for (c, t) in cascades.iter().zip(tables) {
            for (key, v) in t.iter() {
                merged.insert(format!("{}/{key}", c.id), v.to_vec())?;
            }
        }
        cascade_nodes.insert(name.to_string(), merged.len());
        merged.save(dir.join(format!("{name}.emb")))?;
    }
    ctx.echo_config()?;
    Ok(EmbedReport { global_users: global.len(), global_dim: global.dim(), cascade_dim: wavelet.dim(), cascade_nodes })
}

/// Model inputs for every split, with the global table they were built from.
pub struct PreparedInputs {
    pub global: EmbeddingTable,
    pub splits: BTreeMap<String, Vec<CascadeInput>>,
}

pub fn build_inputs(cfg: &RunConfig) -> Result<PreparedInputs> {
    let split = build_split(cfg)?;
    let global = global_table(cfg, &split)?;
    let wavelet = cfg.embedding.wavelet();
    let mut splits = BTreeMap::new();
    for (name, cascades) in split_parts(&split) {
        let inputs = prepare_inputs(cascades, &global, &wavelet, cfg.data.time_scale, cfg.jobs())?;
        splits.insert(name.to_string(), inputs);
    }
    Ok(PreparedInputs { global, splits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    #[serde(flatten)]
    pub metrics: Metrics,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub parameters: usize,
    pub best_epoch: Option<usize>,
    pub splits: BTreeMap<String, SplitMetrics>,
}

fn write_records(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|rec| rec.map_err(|e| csv_error(path, e))).collect()
}

/// Evaluates every non-empty split and writes `predictions_<split>.csv`.
fn evaluate_splits(
    ctx: &Context,
    model: &Model,
    inputs: &PreparedInputs,
    best_epoch: Option<usize>,
) -> Result<MetricsReport> {
    let cfg = &ctx.config;
    let mut splits = BTreeMap::new();
    for (name, split_inputs) in &inputs.splits {
        if split_inputs.is_empty() {
            continue;
        }
        let e = evaluate(model, split_inputs, &cfg.solver, cfg.jobs())?;
        write_records(&ctx.out(&format!("predictions_{name}.csv")), &e.records)?;
        splits.insert(name.clone(), SplitMetrics { metrics: e.metrics, mean_loss: e.mean_loss });
    }
    Ok(MetricsReport { config_hash: cfg.hash(), parameters: model.num_parameters(), best_epoch, splits })
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for entry in log {
        w.serialize(entry).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains from scratch and writes `checkpoint.json`, `train_log.csv`,
/// `metrics.json` and per-split predictions.
pub fn cmd_train(ctx: &Context) -> Result<MetricsReport> {
    let cfg = &ctx.config;
    let inputs = build_inputs(cfg)?;
    let model = Model::new(cfg.model_config(inputs.global.dim()), cfg.model.seed)?;
    info!("training {} parameters on {} cascades", model.num_parameters(), inputs.splits["train"].len());
    let outcome = train(model, &inputs.splits["train"], &inputs.splits["val"], &cfg.train, &cfg.solver, cfg.jobs(), |_| {})?;

    ctx.ensure_dir("")?;
    ctx.echo_config()?;
    Checkpoint::new(&outcome.model, &cfg.solver, cfg.model.seed).save(ctx.out("checkpoint.json"))?;
    write_log(&ctx.out("train_log.csv"), &outcome.log)?;
    let report = evaluate_splits(ctx, &outcome.model, &inputs, Some(outcome.best_epoch))?;
    write_json(ctx.out("metrics.json"), &report)?;
    Ok(report)
}

/// Loads a checkpoint and checks it against the widths the configuration
/// implies. Ablation flags that do not change any width follow the config.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path, global_dim: usize) -> Result<Model> {
    let ck = Checkpoint::load(checkpoint)?;
    let expected: ModelConfig = cfg.model_config(global_dim);
    ck.check_widths(&expected)?;
    let mut model = ck.into_model()?;
    model.config.no_align = expected.no_align;
    model.config.include_root_intensity = expected.include_root_intensity;
    Ok(model)
}

fn default_checkpoint(ctx: &Context, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.out("checkpoint.json"))
}

/// Metrics recomputed from a predictions file alone.
pub fn metrics_from_records(path: &Path) -> Result<Metrics> {
    Metrics::from_records(&read_records(path)?)
}

/// Re-runs prediction on every split and writes `eval_metrics.json`.
pub fn cmd_eval(ctx: &Context, checkpoint: Option<&Path>) -> Result<MetricsReport> {
    let cfg = &ctx.config;
    let inputs = build_inputs(cfg)?;
    let model = load_model(cfg, &default_checkpoint(ctx, checkpoint), inputs.global.dim())?;
    ctx.ensure_dir("")?;
    let report = evaluate_splits(ctx, &model, &inputs, None)?;
    write_json(ctx.out("eval_metrics.json"), &report)?;
    Ok(report)
}

/// Predicts every cascade in `input` (windowed and truncated like the
/// training data, but not size-filtered). Users unseen in the global graph
/// get zero global embeddings.
pub fn cmd_predict(ctx: &Context, checkpoint: Option<&Path>, input: &Path) -> Result<Vec<PredictionRecord>> {
    let cfg = &ctx.config;
    let split = build_split(cfg)?;
    let global = global_table(cfg, &split)?;
    let model = load_model(cfg, &default_checkpoint(ctx, checkpoint), global.dim())?;

    let outcome = parse_dataset(input)?;
    if let Some(first) = outcome.errors.into_iter().next() {
        return Err(first);
    }
    let d = &cfg.data;
    let cascades = outcome
        .records
        .iter()
        .map(|r| Ok(truncate_triplets(window_and_label(r, d.observation_time, d.prediction_time)?, d.max_triplets)))
        .collect::<Result<Vec<_>>>()?;
    if cascades.is_empty() {
        return Err(Error::Empty(format!("no cascades in {}", input.display())));
    }
    let inputs = prepare_inputs(&cascades, &global, &cfg.embedding.wavelet(), d.time_scale, cfg.jobs())?;
    let preds = concat_core::par::try_map(&inputs, cfg.jobs(), |c| model.predict(c, &cfg.solver))?;
    Ok(inputs.iter().zip(preds).map(|(c, p)| PredictionRecord::new(c.id.clone(), c.label, p)).collect())
}

pub fn print_records(out: &mut impl std::io::Write, records: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<stdout>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOutcome {
    #[serde(flatten)]
    pub report: GradcheckReport,
    pub threshold: f64,
    pub passed: bool,
}

/// Gradient check on the toy cascade with the `[gradcheck]` widths.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradcheckOutcome> {
    let g = &cfg.gradcheck;
    let model_cfg = ModelConfig {
        hidden: g.hidden,
        attention_dim: g.attention_dim,
        head_hidden: g.head_hidden,
        cascade_dim: g.embedding_dim,
        global_dim: g.embedding_dim,
        no_tpp: cfg.model.no_tpp,
        no_align: cfg.model.no_align,
        include_root_intensity: cfg.model.include_root_intensity,
    };
    let model = Model::new(model_cfg, g.seed)?;
    let report = gradcheck(&model, &toy_input(&model.config, g.seed), &g.solver, g.epsilon)?;
    let passed = report.max_rel_error < g.threshold;
    if !passed {
        warn!("max relative error {:.3e} at {} exceeds {:.1e}", report.max_rel_error, report.worst, g.threshold);
    }
    Ok(GradcheckOutcome { report, threshold: g.threshold, passed })
}

pub fn print_json<T: Serialize>(value: &T) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(value).expect("report serializes"));
}
