//! End-to-end runs: training with periodic detector fitting, benchmark and
//! novel-class protocols, and report files.

mod config;
mod report;
mod train;

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{
    featurize_examples, gen_synthetic, load_embeddings, load_text_corpus, split_novel_class,
    DataError, Dataset, Example, HashedFeaturizer, Split,
};
use crate::encoder::{EncoderError, EncoderParams, ForwardRecord};
use crate::linalg::{pca_project_2d, LinalgError};
use crate::losses::{LossError, LossMode};
use crate::metrics::{accuracy, EvalReport, MetricError, ScoreSample};
use crate::rng::SplitMix64;
use crate::scorers::{DetectorArtifact, FitOptions, ScorerError, ScorerKind};

pub use config::{DataSource, MahaFitSplit, RunConfig};
pub use report::{
    emit_reports, projection_csv, reports_csv, summary_markdown, ProjectionPoint, ReportRow,
    CSV_HEADER,
};
pub use train::{
    load_checkpoint, save_checkpoint, train_run, Checkpoint, TrainOutcome, ValSnapshot,
    CHECKPOINT_FORMAT,
};

#[derive(Debug, Error)]
pub enum Error {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: usize, loss: f64 },
    #[error("checkpoint has no {0} detector")]
    MissingDetector(ScorerKind),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the failure came from the filesystem rather than from the
    /// content of a config or data file.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Data(DataError::Io(_)) | Error::Scorer(ScorerError::Io(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

const TAG_NOVEL: u64 = 0x6e6f76;

/// ID dataset plus named OOD example sets.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub id: Dataset,
    pub ood_sets: Vec<(String, Vec<Example>)>,
}

fn as_ood(examples: impl IntoIterator<Item = Example>) -> Vec<Example> {
    examples
        .into_iter()
        .map(|mut e| {
            e.label = None;
            e
        })
        .collect()
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into())
}

pub fn prepare_data(source: &DataSource) -> Result<PreparedData> {
    match source {
        DataSource::Synthetic(s) => {
            let (id, ood) = gen_synthetic(s)?;
            let name = format!("{}-ood", id.name);
            Ok(PreparedData {
                id,
                ood_sets: vec![(name, ood)],
            })
        }
        DataSource::Embeddings { id, ood } => {
            let id = load_embeddings(id)?;
            let mut ood_sets = Vec::new();
            for p in ood {
                let ds = load_embeddings(p)?;
                if ds.dim != id.dim {
                    return Err(DataError::InvalidDataset(format!(
                        "{} has dim {}, ID data has {}",
                        p.display(),
                        ds.dim,
                        id.dim
                    ))
                    .into());
                }
                ood_sets.push((ds.name, as_ood(ds.examples)));
            }
            Ok(PreparedData { id, ood_sets })
        }
        DataSource::Text {
            corpus,
            ood,
            dim,
            seed,
        } => {
            let fz = HashedFeaturizer::new(*dim, *seed)?;
            let (mut examples, num_classes) = load_text_corpus(corpus)?;
            featurize_examples(&mut examples, &fz);
            let id = Dataset::new(file_stem(corpus), num_classes, *dim, examples)?;
            let mut ood_sets = Vec::new();
            for p in ood {
                let (mut examples, _) = load_text_corpus(p)?;
                featurize_examples(&mut examples, &fz);
                ood_sets.push((file_stem(p), as_ood(examples)));
            }
            Ok(PreparedData { id, ood_sets })
        }
    }
}

fn vector_of(e: &Example) -> Result<&[f64]> {
    e.vector().ok_or_else(|| {
        DataError::InvalidDataset(format!("example {} has no vector", e.id)).into()
    })
}

/// Forward pass over every example, in parallel with order preserved.
pub fn encode_examples(params: &EncoderParams, examples: &[Example]) -> Result<Vec<ForwardRecord>> {
    examples
        .par_iter()
        .map(|e| Ok(params.forward(vector_of(e)?)?))
        .collect()
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Classification accuracy on labeled records.
pub fn record_accuracy(records: &[ForwardRecord], labels: &[usize]) -> Result<f64> {
    let pred: Vec<usize> = records.iter().map(|r| argmax(&r.logits)).collect();
    Ok(accuracy(&pred, labels)?)
}

fn labels_of(examples: &[&Example]) -> Result<Vec<usize>> {
    examples
        .iter()
        .map(|e| {
            e.label.ok_or_else(|| {
                DataError::InvalidDataset(format!("example {} has no label", e.id)).into()
            })
        })
        .collect()
}

/// Fits each requested detector from `params` on the labeled `val` examples.
/// Maha additionally uses `maha_extra` (the train split under
/// `scorer.maha_fit = train+val`).
pub fn fit_detectors(
    params: &EncoderParams,
    val: &[Example],
    maha_extra: &[Example],
    kinds: &[ScorerKind],
    opts: FitOptions,
) -> Result<Vec<DetectorArtifact>> {
    let reps = |ex: &[Example]| -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let refs: Vec<&Example> = ex.iter().collect();
        let labels = labels_of(&refs)?;
        let h = encode_examples(params, ex)?.into_iter().map(|r| r.h).collect();
        Ok((h, labels))
    };
    let needs_reps = kinds.iter().any(|k| matches!(k, ScorerKind::Maha | ScorerKind::Cosine));
    let (val_h, val_l) = if needs_reps { reps(val)? } else { (Vec::new(), Vec::new()) };
    let (mut maha_h, mut maha_l) = (Vec::new(), Vec::new());
    if kinds.contains(&ScorerKind::Maha) && !maha_extra.is_empty() {
        let (h, l) = reps(maha_extra)?;
        maha_h = h;
        maha_l = l;
        maha_h.extend(val_h.iter().cloned());
        maha_l.extend(val_l.iter().copied());
    }
    kinds
        .iter()
        .map(|&k| {
            let det = if k == ScorerKind::Maha && !maha_h.is_empty() {
                DetectorArtifact::fit(k, params, &maha_h, &maha_l, opts)?
            } else {
                DetectorArtifact::fit(k, params, &val_h, &val_l, opts)?
            };
            Ok(det)
        })
        .collect()
}

/// Scores ID test and OOD examples with each requested detector of `ckpt`.
/// Accuracy is reported when every ID example is labeled.
pub fn evaluate_pair(
    ckpt: &Checkpoint,
    id_test: &[Example],
    ood: &[Example],
    kinds: &[ScorerKind],
) -> Result<Vec<EvalReport>> {
    let id_rec = encode_examples(&ckpt.params, id_test)?;
    let ood_rec = encode_examples(&ckpt.params, ood)?;
    let acc = if id_test.iter().all(|e| e.label.is_some()) && !id_test.is_empty() {
        let refs: Vec<&Example> = id_test.iter().collect();
        Some(record_accuracy(&id_rec, &labels_of(&refs)?)?)
    } else {
        None
    };
    kinds
        .iter()
        .map(|&k| {
            let det = ckpt.detector(k).ok_or(Error::MissingDetector(k))?;
            let sample = score_records(det, &id_rec, &ood_rec)?;
            Ok(sample.evaluate(acc)?)
        })
        .collect()
}

fn score_all(det: &DetectorArtifact, records: &[ForwardRecord]) -> Result<Vec<f64>> {
    records
        .par_iter()
        .map(|r| Ok(det.score(&r.h)?))
        .collect()
}

fn score_records(
    det: &DetectorArtifact,
    id: &[ForwardRecord],
    ood: &[ForwardRecord],
) -> Result<ScoreSample> {
    Ok(ScoreSample::new(score_all(det, id)?, score_all(det, ood)?)?)
}

/// Scores every example, encoding through `params` first when given.
pub fn score_examples(
    det: &DetectorArtifact,
    params: Option<&EncoderParams>,
    examples: &[Example],
) -> Result<Vec<f64>> {
    match params {
        Some(p) => score_all(det, &encode_examples(p, examples)?),
        None => examples
            .par_iter()
            .map(|e| Ok(det.score(vector_of(e)?)?))
            .collect(),
    }
}

/// 2-D PCA coordinates of the representations of `id` and `ood`.
pub fn project(
    params: &EncoderParams,
    id: &[Example],
    ood: &[Example],
) -> Result<Vec<ProjectionPoint>> {
    let rec: Vec<ForwardRecord> = encode_examples(params, id)?
        .into_iter()
        .chain(encode_examples(params, ood)?)
        .collect();
    let h: Vec<&[f64]> = rec.iter().map(|r| r.h.as_slice()).collect();
    let xy = pca_project_2d(&h)?;
    Ok(id
        .iter()
        .map(|e| (e, "id"))
        .chain(ood.iter().map(|e| (e, "ood")))
        .zip(xy)
        .map(|((e, source), [x, y])| ProjectionPoint {
            id: e.id.clone(),
            source: source.to_string(),
            label: e.label,
            x,
            y,
        })
        .collect())
}

fn test_split(ds: &Dataset) -> Vec<Example> {
    ds.split(Split::Test).cloned().collect()
}

/// One trained seed of a benchmark run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub runs: Vec<SeedRun>,
    pub projection: Option<Vec<ProjectionPoint>>,
}

impl Benchmark {
    pub fn rows(&self) -> Vec<ReportRow> {
        self.runs.iter().flat_map(|r| r.rows.iter().cloned()).collect()
    }

    /// Mean over seeds for one (OOD set, scorer) cell.
    pub fn mean(&self, ood_dataset: &str, scorer: ScorerKind) -> Option<EvalReport> {
        let picked: Vec<EvalReport> = self
            .runs
            .iter()
            .flat_map(|r| &r.rows)
            .filter(|row| row.ood_dataset == ood_dataset && row.scorer == scorer)
            .map(|row| row.report)
            .collect();
        mean_report(&picked)
    }
}

pub(crate) fn mean_report(reports: &[EvalReport]) -> Option<EvalReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let accuracy = reports
        .iter()
        .map(|r| r.accuracy)
        .sum::<Option<f64>>()
        .map(|s| s / n);
    Some(EvalReport {
        auroc: reports.iter().map(|r| r.auroc).sum::<f64>() / n,
        far95: reports.iter().map(|r| r.far95).sum::<f64>() / n,
        accuracy,
        n_id: reports.iter().map(|r| r.n_id).sum(),
        n_ood: reports.iter().map(|r| r.n_ood).sum(),
    })
}

fn eval_rows(
    ckpt: &Checkpoint,
    id: &Dataset,
    id_test: &[Example],
    ood_sets: &[(String, Vec<Example>)],
    cfg: &RunConfig,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for (name, ood) in ood_sets {
        let reports = evaluate_pair(ckpt, id_test, ood, &cfg.scorers)?;
        for (&scorer, report) in cfg.scorers.iter().zip(reports) {
            rows.push(ReportRow {
                id_dataset: id.name.clone(),
                ood_dataset: name.clone(),
                loss_mode: cfg.loss.mode,
                scorer,
                seed: seed.to_string(),
                report,
            });
        }
    }
    Ok(rows)
}

/// Trains one model per seed (seeds run in parallel) and evaluates every
/// (ID, OOD) pair. The projection uses the first seed and first OOD set.
pub fn run_benchmark(cfg: &RunConfig, data: &PreparedData) -> Result<Benchmark> {
    cfg.validate()?;
    let id_test = test_split(&data.id);
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let outcome = train_run(cfg, &data.id, seed)?;
            let rows = eval_rows(&outcome.checkpoint, &data.id, &id_test, &data.ood_sets, cfg, seed)?;
            Ok(SeedRun {
                seed,
                outcome,
                rows,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let projection = match (runs.first(), data.ood_sets.first()) {
        (Some(run), Some((_, ood))) if id_test.len() + ood.len() >= 3 => {
            Some(project(&run.outcome.checkpoint.params, &id_test, ood)?)
        }
        _ => None,
    };
    Ok(Benchmark { runs, projection })
}

#[derive(Debug, Clone)]
pub struct NovelTrial {
    pub trial: usize,
    pub held_out: usize,
    pub seed: u64,
    pub reports: Vec<(ScorerKind, EvalReport)>,
}

#[derive(Debug, Clone)]
pub struct NovelClassReport {
    pub dataset: String,
    pub loss_mode: LossMode,
    pub trials: Vec<NovelTrial>,
    /// Macro average over trials, per scorer.
    pub mean: Vec<(ScorerKind, EvalReport)>,
}

impl NovelClassReport {
    pub fn mean_for(&self, kind: ScorerKind) -> Option<EvalReport> {
        self.mean.iter().find(|(k, _)| *k == kind).map(|(_, r)| *r)
    }

    /// Per-trial rows under the OOD name `held-out`, tagged with the trial
    /// seed. [`reports_csv`] appends the macro-average `avg` rows.
    pub fn rows(&self) -> Vec<ReportRow> {
        self.trials
            .iter()
            .flat_map(|t| {
                t.reports.iter().map(move |&(scorer, report)| ReportRow {
                    id_dataset: self.dataset.clone(),
                    ood_dataset: "held-out".into(),
                    loss_mode: self.loss_mode,
                    scorer,
                    seed: t.seed.to_string(),
                    report,
                })
            })
            .collect()
    }
}

/// Holds out `held_out`, trains on the remaining classes and scores the
/// held-out test examples as OOD.
pub fn novel_class_trial(
    cfg: &RunConfig,
    base: &Dataset,
    held_out: usize,
    seed: u64,
) -> Result<Vec<(ScorerKind, EvalReport)>> {
    let (id_ds, ood_all) = split_novel_class(base, held_out)?;
    let mut ood: Vec<Example> = ood_all.iter().filter(|e| e.split == Split::Test).cloned().collect();
    if ood.is_empty() {
        ood = ood_all;
    }
    let outcome = train_run(cfg, &id_ds, seed)?;
    let reports = evaluate_pair(&outcome.checkpoint, &test_split(&id_ds), &ood, &cfg.scorers)?;
    Ok(cfg.scorers.iter().copied().zip(reports).collect())
}

/// Rotates the held-out class from a seeded offset: trial `t` holds out
/// `(offset + t) mod C` and trains with seed `seeds[t mod len]`.
pub fn run_novel_class(cfg: &RunConfig, base: &Dataset, trials: usize) -> Result<NovelClassReport> {
    cfg.validate()?;
    let c = base.num_classes;
    if c < 3 {
        return Err(DataError::TooFewClasses(c).into());
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let offset = SplitMix64::derive(cfg.seeds[0], TAG_NOVEL).below(c);
    let trials = (0..trials)
        .into_par_iter()
        .map(|t| {
            let held_out = (offset + t) % c;
            let seed = cfg.seeds[t % cfg.seeds.len()];
            Ok(NovelTrial {
                trial: t,
                held_out,
                seed,
                reports: novel_class_trial(cfg, base, held_out, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = cfg
        .scorers
        .iter()
        .map(|&k| {
            let rs: Vec<EvalReport> = trials
                .iter()
                .filter_map(|t| t.reports.iter().find(|(kk, _)| *kk == k).map(|(_, r)| *r))
                .collect();
            (k, mean_report(&rs).expect("at least one trial"))
        })
        .collect();
    Ok(NovelClassReport {
        dataset: base.name.clone(),
        loss_mode: cfg.loss.mode,
        trials,
        mean,
    })
}
