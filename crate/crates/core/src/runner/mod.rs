//! Experiment orchestration: configs, sweeps over σ × objective × β × seed,
//! a resumable JSON-lines record store and summary tables.

mod config;
mod store;
mod summary;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{CellKey, ExperimentConfig, TrainSettings, UnfairnessFit, CONFIG_VERSION};
pub use store::{quarantine_path, read_records, RecordStore};
pub use summary::{summarize, summary_csv, summary_text, AdaptedSummary, SummaryRow};

use crate::adapt::{apply_substitution, fast_adapt, AdaptError, SubstitutionFn};
use crate::factors::{FactorConfig, FactorError, FactorSpace, PairSampler, Regime, Sigma};
use crate::metrics::{evaluate_with_reference, Labeled, MetricError, ScoreReport};
use crate::rng::{Purpose, SeedStream};
use crate::vae::{encode_dataset, train, CorrelatedImages, Objective, TracePoint, TrainedModel, VaeError, WeakPairImages};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("record store: {0}")]
    Store(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
}

pub type Result<T> = std::result::Result<T, RunnerError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationOutcome {
    pub labels: usize,
    pub substitution: SubstitutionFn,
    /// Scores of the adapted latents on the same evaluation set.
    pub report: ScoreReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub report: ScoreReport,
    pub adaptations: Vec<AdaptationOutcome>,
    pub final_loss: Option<TracePoint>,
    /// Loss trace CSV relative to the output directory, when models are saved.
    pub trace_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Completed(Box<CellResult>),
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config_hash: String,
    pub cell: CellKey,
    pub outcome: CellOutcome,
    pub wall_time_secs: f64,
}

impl ExperimentRecord {
    pub fn result(&self) -> Option<&CellResult> {
        match &self.outcome {
            CellOutcome::Completed(r) => Some(r),
            CellOutcome::Failed { .. } => None,
        }
    }
}

/// Draws `n` factor configurations from the uniform independent
/// distribution of `stream`.
pub fn uniform_configs(space: &FactorSpace, seed: SeedStream, purpose: Purpose, counter: u64, n: usize) -> Vec<FactorConfig> {
    let mut rng = seed.stream(purpose, counter);
    (0..n).map(|_| space.sample_uniform(&mut rng)).collect()
}

pub fn label_matrix(configs: &[FactorConfig], factors: usize) -> Array2<usize> {
    Array2::from_shape_fn((configs.len(), factors), |(i, j)| configs[i].0[j])
}

fn pair_columns(labels: ArrayView2<usize>, pair: (usize, usize)) -> Array2<usize> {
    Array2::from_shape_fn((labels.nrows(), 2), |(i, j)| labels[[i, if j == 0 { pair.0 } else { pair.1 }]])
}

pub fn train_cell(cfg: &ExperimentConfig, cell: &CellKey) -> Result<TrainedModel> {
    let corr = cfg.correlation(cell.sigma);
    let tc = cfg.train.for_cell(cell.objective, cell.beta);
    let seed = SeedStream::new(cell.seed);
    Ok(match cell.objective {
        Objective::BetaVae => train(&mut CorrelatedImages::new(cfg.space.clone(), corr, cfg.render.clone())?, &tc, seed)?,
        Objective::AdaGvae => {
            let regime: Regime = cfg.weak_regime;
            train(&mut WeakPairImages::new(cfg.space.clone(), corr, cfg.render.clone(), regime)?, &tc, seed)?
        }
    })
}

/// Encoded evaluation data of one model: the uniform evaluation set and the
/// reference set the unfairness classifiers are fitted on.
pub struct EvaluationData {
    pub latents: Array2<f64>,
    pub labels: Array2<usize>,
    pub reference: Option<(Array2<f64>, Array2<usize>)>,
}

impl EvaluationData {
    pub fn encode(cfg: &ExperimentConfig, trained: &TrainedModel, sigma: Sigma, seed: u64) -> Result<Self> {
        let seeds = SeedStream::new(seed);
        let eval = uniform_configs(&cfg.space, seeds, Purpose::Evaluation, 0, cfg.eval_samples);
        let latents = encode_dataset(&trained.model, &cfg.space, &cfg.render, &eval)?;
        let labels = label_matrix(&eval, cfg.space.len());
        let reference = match cfg.unfairness_fit {
            UnfairnessFit::EvaluationSet => None,
            UnfairnessFit::TrainingDistribution => {
                let corr = cfg.correlation(sigma);
                let sampler = PairSampler::for_spec(&cfg.space, &corr)?;
                let mut rng = seeds.stream(Purpose::Evaluation, 1);
                let configs: Vec<FactorConfig> = (0..cfg.eval_samples).map(|_| sampler.sample(&cfg.space, &corr, &mut rng)).collect();
                let ref_latents = encode_dataset(&trained.model, &cfg.space, &cfg.render, &configs)?;
                Some((ref_latents, label_matrix(&configs, cfg.space.len())))
            }
        };
        Ok(Self { latents, labels, reference })
    }

    /// Scores the evaluation set, optionally after replacing the latents
    /// with `map` applied to both sets.
    pub fn score(&self, cfg: &ExperimentConfig, map: Option<&SubstitutionFn>) -> Result<ScoreReport> {
        let (latents, reference) = match map {
            None => (self.latents.clone(), self.reference.as_ref().map(|(l, _)| l.clone())),
            Some(f) => (
                apply_substitution(self.latents.view(), f)?,
                self.reference.as_ref().map(|(l, _)| apply_substitution(l.view(), f)).transpose()?,
            ),
        };
        let reference = reference
            .as_ref()
            .zip(self.reference.as_ref())
            .map(|(l, (_, y))| Labeled { latents: l.view(), labels: y.view() });
        Ok(evaluate_with_reference(latents.view(), self.labels.view(), reference, cfg.correlated_pair, &cfg.metrics)?)
    }
}

/// Fast adaptation from `m` uniformly drawn labels of the correlated pair.
pub fn adapt_model(cfg: &ExperimentConfig, trained: &TrainedModel, seed: u64, m: usize) -> Result<SubstitutionFn> {
    let seeds = SeedStream::new(seed);
    let (a, b) = cfg.correlated_pair;
    let cards = (cfg.space.cardinality(a), cfg.space.cardinality(b));
    // The M labeled samples are the only labels adaptation sees.
    let labeled = uniform_configs(&cfg.space, seeds, Purpose::Labels, m as u64, m);
    let labeled_latents = encode_dataset(&trained.model, &cfg.space, &cfg.render, &labeled)?;
    let pair_labels = pair_columns(label_matrix(&labeled, cfg.space.len()).view(), cfg.correlated_pair);
    let mut rng = seeds.stream(Purpose::Adaptation, m as u64);
    let fit = fast_adapt(labeled_latents.view(), pair_labels.view(), cards, cfg.adaptation_kind, &cfg.metrics.gbt, &mut rng)?;
    Ok(fit.substitution)
}

/// Scores a trained model and runs fast adaptation for every configured
/// label budget.
pub fn evaluate_model(cfg: &ExperimentConfig, trained: &TrainedModel, sigma: Sigma, seed: u64) -> Result<(ScoreReport, Vec<AdaptationOutcome>)> {
    let data = EvaluationData::encode(cfg, trained, sigma, seed)?;
    let report = data.score(cfg, None)?;
    let mut adaptations = Vec::new();
    for &m in cfg.adaptation_labels.iter().filter(|&&m| m > 0) {
        let substitution = adapt_model(cfg, trained, seed, m)?;
        let report = data.score(cfg, Some(&substitution))?;
        adaptations.push(AdaptationOutcome { labels: m, substitution, report });
    }
    Ok((report, adaptations))
}

/// Trains and evaluates one cell. With `out_dir` and `save_models`, writes
/// `models/<cell id>/{model.json, trace.csv, substitution-<M>.json}`.
pub fn run_cell(cfg: &ExperimentConfig, cell: &CellKey, out_dir: Option<&Path>) -> Result<CellResult> {
    let trained = train_cell(cfg, cell)?;
    let (report, adaptations) = evaluate_model(cfg, &trained, cell.sigma, cell.seed)?;
    let mut trace_path = None;
    if let (Some(dir), true) = (out_dir, cfg.save_models) {
        let rel = PathBuf::from("models").join(cell.id());
        let cell_dir = dir.join(&rel);
        std::fs::create_dir_all(&cell_dir)?;
        std::fs::write(cell_dir.join("model.json"), serde_json::to_string(&trained).map_err(|e| RunnerError::Store(e.to_string()))?)?;
        std::fs::write(cell_dir.join("trace.csv"), trained.trace_csv())?;
        for ad in &adaptations {
            let json = serde_json::to_string_pretty(&ad.substitution).map_err(|e| RunnerError::Store(e.to_string()))?;
            std::fs::write(cell_dir.join(format!("substitution-{}.json", ad.labels)), json)?;
        }
        trace_path = Some(rel.join("trace.csv").to_string_lossy().into_owned());
    }
    Ok(CellResult { report, adaptations, final_loss: trained.trace.last().copied(), trace_path })
}

fn run_record(cfg: &ExperimentConfig, hash: &str, cell: &CellKey, out_dir: Option<&Path>) -> ExperimentRecord {
    let start = Instant::now();
    let outcome = match run_cell(cfg, cell, out_dir) {
        Ok(r) => CellOutcome::Completed(Box::new(r)),
        Err(e) => {
            log::error!("cell {} failed: {e}", cell.id());
            CellOutcome::Failed { error: e.to_string() }
        }
    };
    ExperimentRecord { config_hash: hash.to_string(), cell: *cell, outcome, wall_time_secs: start.elapsed().as_secs_f64() }
}

pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug)]
pub struct SweepOutcome {
    /// One record per cell of the config, in config order.
    pub records: Vec<ExperimentRecord>,
    pub trained: usize,
    pub skipped: usize,
    pub quarantined: Option<PathBuf>,
}

/// Runs every cell of `cfg` that has no record in `<out_dir>/records.jsonl`
/// yet, on up to `jobs` threads. Finished cells are appended by a single
/// writer as they complete; a failing cell is recorded and the sweep goes on.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: &Path, jobs: usize) -> Result<SweepOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let (mut store, loaded) = RecordStore::open(&out_dir.join(RECORDS_FILE))?;
    let hash = cfg.hash();
    let cells = cfg.cells();
    let existing = |cell: &CellKey| loaded.records.iter().find(|r| r.config_hash == hash && r.cell == *cell);

    let pending: Vec<(usize, CellKey)> =
        cells.iter().enumerate().filter(|(_, c)| existing(c).is_none()).map(|(i, c)| (i, *c)).collect();
    let skipped = cells.len() - pending.len();
    log::info!("sweep: {} cells, {} already recorded, {} to run", cells.len(), skipped, pending.len());

    let mut fresh: Vec<Option<ExperimentRecord>> = vec![None; cells.len()];
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, ExperimentRecord)>();
    let mut write_error = None;
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(pending.len().max(1)) {
            let tx = tx.clone();
            let (next, pending, hash) = (&next, &pending, &hash);
            scope.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(index, cell)) = pending.get(k) else { break };
                log::info!("cell {} started", cell.id());
                let record = run_record(cfg, hash, &cell, Some(out_dir));
                if tx.send((index, record)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (index, record) in rx {
            if write_error.is_none() {
                if let Err(e) = store.append(&record) {
                    write_error = Some(e);
                }
            }
            log::info!("cell {} done in {:.1}s", record.cell.id(), record.wall_time_secs);
            fresh[index] = Some(record);
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    let records = cells
        .iter()
        .zip(fresh)
        .map(|(cell, f)| f.unwrap_or_else(|| existing(cell).expect("skipped cells have records").clone()))
        .collect();
    Ok(SweepOutcome { records, trained: pending.len(), skipped, quarantined: loaded.quarantined })
}
