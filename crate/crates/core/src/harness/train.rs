use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::data::{batch_iter, DataError, Dataset, Example, Split};
use crate::encoder::{adam_step, init_params, AdamState, EncoderParams, ForwardRecord};
use crate::losses::{batch_loss, contrastive, LossMode};
use crate::rng::SplitMix64;
use crate::scorers::{DetectorArtifact, FitOptions, ScorerKind};

use super::config::{MahaFitSplit, RunConfig};
use super::{encode_examples, fit_detectors, record_accuracy, Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ood-ckpt/1";

const TAG_INIT: u64 = 0x696e6974;
const TAG_EPOCH: u64 = 0x65706f63_00000000;

/// The selected snapshot of a training run and the detectors fitted on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: EncoderParams,
    pub detectors: Vec<DetectorArtifact>,
    pub step: usize,
    pub seed: u64,
    pub val_accuracy: f64,
    pub val_contrastive: f64,
    pub config: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn detector(&self, kind: ScorerKind) -> Option<&DetectorArtifact> {
        self.detectors.iter().find(|d| d.kind() == kind)
    }
}

/// Validation metrics at one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValSnapshot {
    pub step: usize,
    pub accuracy: f64,
    pub contrastive: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Every evaluation point, starting with step 0.
    pub history: Vec<ValSnapshot>,
    pub total_steps: usize,
}

fn labeled(examples: &[Example]) -> Result<Vec<usize>> {
    examples
        .iter()
        .map(|e| {
            e.label.ok_or_else(|| {
                Error::Data(DataError::InvalidDataset(format!("example {} has no label", e.id)))
            })
        })
        .collect()
}

fn val_contrastive(records: &[ForwardRecord], labels: &[usize], cfg: &RunConfig) -> Result<f64> {
    if cfg.loss.mode == LossMode::None || records.len() < 2 {
        return Ok(0.0);
    }
    let h: Vec<Vec<f64>> = records.iter().map(|r| r.h.clone()).collect();
    let z: Vec<Vec<f64>> = records.iter().map(|r| r.z.clone()).collect();
    Ok(contrastive(&h, &z, labels, &cfg.loss)?.loss)
}

/// Trains on the train split of `ds` with joint cross-entropy and contrastive
/// loss, evaluating on the val split at step 0, every `eval_interval` steps
/// and at the last step. The kept snapshot has the highest val accuracy, ties
/// broken by lower val contrastive loss, then by the later step. Detectors
/// are fitted whenever a snapshot is kept.
pub fn train_run(cfg: &RunConfig, ds: &Dataset, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.check_trainable()?;
    let val: Vec<Example> = ds.split(Split::Val).cloned().collect();
    if val.is_empty() {
        return Err(DataError::InvalidDataset("no validation examples".into()).into());
    }
    let val_labels = labeled(&val)?;
    let train_for_maha: Vec<Example> = match cfg.maha_fit {
        MahaFitSplit::Val => Vec::new(),
        MahaFitSplit::TrainVal => ds.split(Split::Train).cloned().collect(),
    };
    let fit_opts = FitOptions {
        energy_ignore_bias: cfg.energy_ignore_bias,
    };
    let config: BTreeMap<String, String> = cfg.to_pairs().into_iter().collect();

    let mut params = init_params(
        ds.dim,
        &cfg.hidden_dims,
        cfg.rep_dim,
        ds.num_classes,
        SplitMix64::derive(seed, TAG_INIT).next_u64(),
    )?;
    let per_epoch = ds.count(Split::Train).div_ceil(cfg.batch_size);
    let total_steps = per_epoch * cfg.epochs;
    let interval = cfg.eval_interval.unwrap_or(per_epoch).max(1);
    let mut adam = AdamState::for_params(&params, cfg.lr, total_steps);

    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut evaluate = |params: &EncoderParams, step: usize| -> Result<()> {
        let records = encode_examples(params, &val)?;
        let accuracy = record_accuracy(&records, &val_labels)?;
        let contrastive = val_contrastive(&records, &val_labels, cfg)?;
        history.push(ValSnapshot {
            step,
            accuracy,
            contrastive,
        });
        if !(accuracy.is_finite() && contrastive.is_finite()) || !params.is_finite() {
            return Ok(());
        }
        let better = match &best {
            None => true,
            Some(b) => {
                accuracy > b.val_accuracy
                    || (accuracy == b.val_accuracy && contrastive <= b.val_contrastive)
            }
        };
        if better {
            best = Some(Checkpoint {
                params: params.clone(),
                detectors: fit_detectors(params, &val, &train_for_maha, &cfg.scorers, fit_opts)?,
                step,
                seed,
                val_accuracy: accuracy,
                val_contrastive: contrastive,
                config: config.clone(),
            });
        }
        Ok(())
    };

    evaluate(&params, 0)?;
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let epoch_seed = SplitMix64::derive(seed, TAG_EPOCH | epoch as u64).next_u64();
        for batch in batch_iter(ds, cfg.batch_size, epoch_seed)? {
            let examples: Vec<&Example> = batch.iter().map(|&i| &ds.examples[i]).collect();
            let records = examples
                .iter()
                .map(|e| params.forward(e.vector().expect("checked trainable")))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let labels: Vec<usize> = examples
                .iter()
                .map(|e| e.label.expect("train examples are labeled"))
                .collect();
            let report = batch_loss(&records, &labels, &cfg.loss)?;
            step += 1;
            if !report.total.is_finite() {
                return Err(Error::Divergence {
                    step,
                    loss: report.total,
                });
            }
            let grads = params.backward(&records, &report.upstream())?;
            adam_step(&mut adam, &mut params, &grads)?;
            if step % interval == 0 || step == total_steps {
                evaluate(&params, step)?;
            }
        }
    }

    let checkpoint = best.ok_or(Error::Divergence {
        step,
        loss: f64::NAN,
    })?;
    Ok(TrainOutcome {
        checkpoint,
        history,
        total_steps,
    })
}

pub fn checkpoint_to_json(ckpt: &Checkpoint) -> Value {
    json!({
        "format": CHECKPOINT_FORMAT,
        "step": ckpt.step,
        "seed": ckpt.seed,
        "val_accuracy": ckpt.val_accuracy,
        "val_contrastive": ckpt.val_contrastive,
        "config": ckpt.config,
        "params": ckpt.params,
        "detectors": ckpt.detectors.iter().map(DetectorArtifact::to_json).collect::<Vec<_>>(),
    })
}

pub fn checkpoint_from_json(v: &Value) -> Result<Checkpoint> {
    let fmt_err = |m: String| Error::Format(m);
    match v.get("format").and_then(Value::as_str) {
        Some(CHECKPOINT_FORMAT) => {}
        Some(other) => return Err(fmt_err(format!("unsupported version {other:?}"))),
        None => return Err(fmt_err("missing format tag".into())),
    }
    let field = |k: &str| v.get(k).ok_or_else(|| fmt_err(format!("missing field {k:?}")));
    let params: EncoderParams =
        serde_json::from_value(field("params")?.clone()).map_err(|e| fmt_err(e.to_string()))?;
    let config: BTreeMap<String, String> =
        serde_json::from_value(field("config")?.clone()).map_err(|e| fmt_err(e.to_string()))?;
    let detectors = field("detectors")?
        .as_array()
        .ok_or_else(|| fmt_err("detectors must be an array".into()))?
        .iter()
        .map(|d| Ok(DetectorArtifact::from_json(d)?))
        .collect::<Result<Vec<_>>>()?;
    let num = |k: &str| -> Result<f64> {
        field(k)?
            .as_f64()
            .ok_or_else(|| fmt_err(format!("{k} must be a number")))
    };
    let int = |k: &str| -> Result<u64> {
        field(k)?
            .as_u64()
            .ok_or_else(|| fmt_err(format!("{k} must be a non-negative integer")))
    };
    Ok(Checkpoint {
        params,
        detectors,
        step: int("step")? as usize,
        seed: int("seed")?,
        val_accuracy: num("val_accuracy")?,
        val_contrastive: num("val_contrastive")?,
        config,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string(&checkpoint_to_json(ckpt)).expect("json value serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    checkpoint_from_json(&v)
}
