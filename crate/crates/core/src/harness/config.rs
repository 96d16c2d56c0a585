//! Run configuration and its flat `key = value` file format.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected. A
//! `preset` line is applied before every other key regardless of position.
//! Relative paths are resolved against the directory of the config file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SynthConfig;
use crate::losses::{DistanceMetric, LossConfig, LossMode, MarginGrad};
use crate::scorers::ScorerKind;

use super::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SynthConfig),
    /// `ood-embed/1` files: one ID file with train/val/test splits and any
    /// number of OOD files (every row is used as OOD).
    Embeddings { id: PathBuf, ood: Vec<PathBuf> },
    /// TSV corpora (`id, label, split, text`) featurized by hashed n-grams.
    Text {
        corpus: PathBuf,
        ood: Vec<PathBuf>,
        dim: usize,
        seed: u64,
    },
}

/// Which split(s) the Mahalanobis detector is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MahaFitSplit {
    Val,
    TrainVal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    pub loss: LossConfig,
    pub hidden_dims: Vec<usize>,
    pub rep_dim: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Steps between validation passes; `None` means once per epoch.
    pub eval_interval: Option<usize>,
    pub scorers: Vec<ScorerKind>,
    pub seeds: Vec<u64>,
    pub energy_ignore_bias: bool,
    pub maha_fit: MahaFitSplit,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// Small-scale defaults.
    pub fn desk() -> Self {
        Self {
            source: DataSource::Synthetic(SynthConfig::default()),
            loss: LossConfig::default(),
            hidden_dims: vec![64],
            rep_dim: 32,
            lr: 1e-3,
            epochs: 10,
            batch_size: 32,
            eval_interval: None,
            scorers: ScorerKind::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            energy_ignore_bias: false,
            maha_fit: MahaFitSplit::Val,
        }
    }

    /// Transformer fine-tuning schedule: lr 1e-5, batch 32, 10 epochs.
    pub fn finetune() -> Self {
        Self {
            lr: 1e-5,
            batch_size: 32,
            epochs: 10,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        self.loss.validate()?;
        if let DataSource::Synthetic(s) = &self.source {
            s.validate()?;
        }
        if self.scorers.is_empty() {
            return bad("at least one scorer is required");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.eval_interval == Some(0) {
            return bad("eval_interval must be at least 1 step");
        }
        if self.rep_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("layer widths must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        Ok(())
    }

    /// Replaces every seed with one derived from `base`: run seeds become
    /// `base, base+1, …` (same count) and synthetic data is drawn with `base`.
    pub fn reseed(&mut self, base: u64) {
        let n = self.seeds.len().max(1) as u64;
        self.seeds = (0..n).map(|i| base.wrapping_add(i)).collect();
        if let DataSource::Synthetic(s) = &mut self.source {
            s.seed = base;
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }

        let mut cfg = RunConfig::desk();
        if let Some((line, _, v)) = entries.iter().find(|(_, k, _)| k == "preset") {
            cfg = match v.as_str() {
                "desk" => RunConfig::desk(),
                "finetune" => RunConfig::finetune(),
                other => {
                    return Err(Error::Config {
                        line: *line,
                        msg: format!("unknown preset {other:?}"),
                    })
                }
            };
        }

        let mut b = Builder::default();
        for (line, key, value) in &entries {
            b.apply(&mut cfg, key, value, base_dir).map_err(|msg| Error::Config {
                line: *line,
                msg: format!("{key}: {msg}"),
            })?;
        }
        cfg.source = b.finish_source(cfg.source)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flat `key = value` rendering, echoed into checkpoints.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        let paths = |ps: &[PathBuf]| {
            ps.iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        match &self.source {
            DataSource::Synthetic(s) => {
                push("source", "synthetic".into());
                push("synth.num_classes", s.num_classes.to_string());
                push("synth.dim", s.dim.to_string());
                push("synth.per_class", s.per_class.to_string());
                push("synth.std", s.std.to_string());
                push("synth.separation", s.separation.to_string());
                push("synth.ood_displacement", s.ood_displacement.to_string());
                push("synth.ood_count", s.ood_count.to_string());
                push("synth.overlap", s.overlap.to_string());
                push("synth.seed", s.seed.to_string());
            }
            DataSource::Embeddings { id, ood } => {
                push("source", "embeddings".into());
                push("data.id", id.display().to_string());
                push("data.ood", paths(ood));
            }
            DataSource::Text {
                corpus,
                ood,
                dim,
                seed,
            } => {
                push("source", "text".into());
                push("text.corpus", corpus.display().to_string());
                push("text.ood", paths(ood));
                push("text.dim", dim.to_string());
                push("text.seed", seed.to_string());
            }
        }
        push("loss.mode", self.loss.mode.to_string());
        push("loss.tau", self.loss.tau.to_string());
        push("loss.lambda", self.loss.lambda.to_string());
        push("loss.metric", self.loss.metric.to_string());
        push("loss.margin_grad", self.loss.margin_grad.to_string());
        push("encoder.hidden", join(&self.hidden_dims));
        push("encoder.dim", self.rep_dim.to_string());
        push("train.lr", self.lr.to_string());
        push("train.epochs", self.epochs.to_string());
        push("train.batch_size", self.batch_size.to_string());
        push(
            "train.eval_interval",
            self.eval_interval.map_or("epoch".into(), |v| v.to_string()),
        );
        push("scorers", join(&self.scorers));
        push("seeds", join(&self.seeds));
        push("scorer.energy_ignore_bias", self.energy_ignore_bias.to_string());
        push(
            "scorer.maha_fit",
            match self.maha_fit {
                MahaFitSplit::Val => "val".into(),
                MahaFitSplit::TrainVal => "train+val".into(),
            },
        );
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse {v:?}: {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(parse)
        .collect()
}

/// Collects source-specific keys until the source kind is known.
#[derive(Default)]
struct Builder {
    source: Option<String>,
    synth: Vec<(String, String)>,
    data_id: Option<PathBuf>,
    data_ood: Vec<PathBuf>,
    text_corpus: Option<PathBuf>,
    text_ood: Vec<PathBuf>,
    text_dim: Option<usize>,
    text_seed: Option<u64>,
}

impl Builder {
    fn apply(&mut self, cfg: &mut RunConfig, key: &str, v: &str, base: &Path) -> std::result::Result<(), String> {
        let path = |p: &str| base.join(p);
        let paths = |v: &str| -> Vec<PathBuf> {
            v.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|p| base.join(p))
                .collect()
        };
        match key {
            "preset" => {}
            "source" => match v {
                "synthetic" | "embeddings" | "text" => self.source = Some(v.to_string()),
                other => return Err(format!("unknown source {other:?}")),
            },
            k if k.starts_with("synth.") => {
                let field = &k["synth.".len()..];
                if !SYNTH_KEYS.contains(&field) {
                    return Err("unknown key".into());
                }
                self.synth.push((field.to_string(), v.to_string()));
            }
            "data.id" => self.data_id = Some(path(v)),
            "data.ood" => self.data_ood = paths(v),
            "text.corpus" => self.text_corpus = Some(path(v)),
            "text.ood" => self.text_ood = paths(v),
            "text.dim" => self.text_dim = Some(parse(v)?),
            "text.seed" => self.text_seed = Some(parse(v)?),
            "loss.mode" => cfg.loss.mode = parse::<LossMode>(v)?,
            "loss.tau" => cfg.loss.tau = parse(v)?,
            "loss.lambda" => cfg.loss.lambda = parse(v)?,
            "loss.metric" => cfg.loss.metric = parse::<DistanceMetric>(v)?,
            "loss.margin_grad" => cfg.loss.margin_grad = parse::<MarginGrad>(v)?,
            "encoder.hidden" => cfg.hidden_dims = parse_list(v)?,
            "encoder.dim" => cfg.rep_dim = parse(v)?,
            "train.lr" => cfg.lr = parse(v)?,
            "train.epochs" => cfg.epochs = parse(v)?,
            "train.batch_size" => cfg.batch_size = parse(v)?,
            "train.eval_interval" => {
                cfg.eval_interval = if v == "epoch" { None } else { Some(parse(v)?) }
            }
            "scorers" => cfg.scorers = ScorerKind::parse_list(v)?,
            "seeds" => cfg.seeds = parse_list(v)?,
            "scorer.energy_ignore_bias" => cfg.energy_ignore_bias = parse(v)?,
            "scorer.maha_fit" => {
                cfg.maha_fit = match v {
                    "val" => MahaFitSplit::Val,
                    "train+val" => MahaFitSplit::TrainVal,
                    other => return Err(format!("unknown split {other:?}")),
                }
            }
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    fn finish_source(self, default: DataSource) -> Result<DataSource> {
        let kind = self.source.as_deref().unwrap_or(match default {
            DataSource::Synthetic(_) => "synthetic",
            DataSource::Embeddings { .. } => "embeddings",
            DataSource::Text { .. } => "text",
        });
        let missing = |k: &str| Error::InvalidConfig(format!("source {kind} requires `{k}`"));
        Ok(match kind {
            "synthetic" => {
                let mut s = match default {
                    DataSource::Synthetic(s) => s,
                    _ => SynthConfig::default(),
                };
                for (k, v) in &self.synth {
                    let err = |e: String| Error::InvalidConfig(format!("synth.{k}: {e}"));
                    match k.as_str() {
                        "num_classes" => s.num_classes = parse(v).map_err(err)?,
                        "dim" => s.dim = parse(v).map_err(err)?,
                        "per_class" => s.per_class = parse(v).map_err(err)?,
                        "std" => s.std = parse(v).map_err(err)?,
                        "separation" => s.separation = parse(v).map_err(err)?,
                        "ood_displacement" => s.ood_displacement = parse(v).map_err(err)?,
                        "ood_count" => s.ood_count = parse(v).map_err(err)?,
                        "overlap" => s.overlap = parse(v).map_err(err)?,
                        "seed" => s.seed = parse(v).map_err(err)?,
                        _ => unreachable!("filtered in apply"),
                    }
                }
                DataSource::Synthetic(s)
            }
            "embeddings" => DataSource::Embeddings {
                id: self.data_id.ok_or_else(|| missing("data.id"))?,
                ood: self.data_ood,
            },
            _ => DataSource::Text {
                corpus: self.text_corpus.ok_or_else(|| missing("text.corpus"))?,
                ood: self.text_ood,
                dim: self.text_dim.unwrap_or(256),
                seed: self.text_seed.unwrap_or(0),
            },
        })
    }
}

const SYNTH_KEYS: &[&str] = &[
    "num_classes",
    "dim",
    "per_class",
    "std",
    "separation",
    "ood_displacement",
    "ood_count",
    "overlap",
    "seed",
];
