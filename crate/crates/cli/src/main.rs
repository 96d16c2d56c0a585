use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use oodkit::data::{gen_synthetic, load_embeddings, write_embeddings, Dataset, Example, Split};
use oodkit::harness::{
    emit_reports, evaluate_pair, fit_detectors, load_checkpoint, prepare_data, project,
    run_benchmark, run_novel_class, save_checkpoint, score_examples, DataSource, Error,
    ProjectionPoint, ReportRow, RunConfig,
};
use oodkit::harness::{projection_csv, reports_csv, Checkpoint};
use oodkit::losses::LossMode;
use oodkit::scorers::{
    fit_maha, load_detector, save_detector, CosineDetector, DetectorArtifact, FitOptions,
    ScorerKind,
};

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "oodkit", version, about = "Contrastive training and OOD detection")]
struct Cli {
    /// Base seed for every random draw (overrides the seeds in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the synthetic ID dataset and OOD cluster as embedding files.
    GenSynth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every configured seed, fit detectors and write reports.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one detector on the val split of an embedding file.
    Fit {
        /// Encode through this checkpoint first; without it only maha and
        /// cosine can be fitted, directly on the stored vectors.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        scorer: ScorerKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every example of an embedding file; writes `id,score` CSV.
    Score {
        #[arg(long)]
        det: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Encode through this checkpoint before scoring.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on an ID test split against OOD files.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        id: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ood: Vec<PathBuf>,
        #[arg(long, default_value = "msp,energy,maha,cosine")]
        scorers: String,
        /// Also write reports.csv and summary.md here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hold out one class per trial and detect it as OOD.
    NovelClass {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 2-D PCA of checkpoint representations; writes CSV.
    Project {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional OOD file projected alongside the input.
        #[arg(long)]
        ood: Option<PathBuf>,
    },
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.reseed(s);
    }
    Ok(cfg)
}

/// Val split if present, otherwise every labeled example.
fn fit_examples(ds: &Dataset) -> Vec<Example> {
    let val: Vec<Example> = ds.split(Split::Val).cloned().collect();
    if val.is_empty() {
        ds.examples.iter().filter(|e| e.label.is_some()).cloned().collect()
    } else {
        val
    }
}

/// Test split if present, otherwise every example.
fn test_examples(ds: &Dataset) -> Vec<Example> {
    let test: Vec<Example> = ds.split(Split::Test).cloned().collect();
    if test.is_empty() {
        ds.examples.clone()
    } else {
        test
    }
}

fn gen_synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<String> {
    let cfg = load_config(config, seed)?;
    let DataSource::Synthetic(s) = &cfg.source else {
        return Err(invalid("gen-synth needs `source = synthetic`"));
    };
    let (ds, ood) = gen_synthetic(s)?;
    fs::create_dir_all(out)?;
    let id_path = out.join(format!("{}.jsonl", ds.name));
    let ood_path = out.join(format!("{}-ood.jsonl", ds.name));
    write_embeddings(&ds, &id_path)?;
    let ood_ds = Dataset::new(format!("{}-ood", ds.name), ds.num_classes, ds.dim, ood)?;
    write_embeddings(&ood_ds, &ood_path)?;
    Ok(format!(
        "wrote {} ({} examples) and {} ({} examples)\n",
        id_path.display(),
        ds.examples.len(),
        ood_path.display(),
        ood_ds.examples.len()
    ))
}

fn train(config: &Path, out: &Path, seed: Option<u64>) -> Result<String> {
    let cfg = load_config(config, seed)?;
    let data = prepare_data(&cfg.source)?;
    let bench = run_benchmark(&cfg, &data)?;
    fs::create_dir_all(out)?;
    let mut log = String::new();
    for run in &bench.runs {
        let ck = &run.outcome.checkpoint;
        save_checkpoint(ck, out.join(format!("ckpt-seed{}.json", run.seed)))?;
        for det in &ck.detectors {
            save_detector(det, out.join(format!("det-{}-seed{}.json", det.kind(), run.seed)))?;
        }
        let _ = writeln!(
            log,
            "seed {}: kept step {}/{} (val accuracy {:.4}, val {} loss {:.6})",
            run.seed,
            ck.step,
            run.outcome.total_steps,
            ck.val_accuracy,
            cfg.loss.mode,
            ck.val_contrastive
        );
    }
    let rows = bench.rows();
    emit_reports(&rows, out, bench.projection.as_deref())?;
    log.push_str(&fs::read_to_string(out.join("summary.md"))?);
    Ok(log)
}

fn fit(ckpt: Option<&Path>, val: &Path, kind: ScorerKind, out: &Path) -> Result<String> {
    let ds = load_embeddings(val)?;
    let examples = fit_examples(&ds);
    let det = match ckpt {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let opts = FitOptions::default();
            fit_detectors(&ck.params, &examples, &[], &[kind], opts)?.remove(0)
        }
        None => {
            let h: Vec<&[f64]> = examples.iter().filter_map(|e| e.vector()).collect();
            match kind {
                ScorerKind::Maha => {
                    let y: Vec<usize> = examples.iter().filter_map(|e| e.label).collect();
                    DetectorArtifact::Maha(fit_maha(&h, &y, ds.num_classes)?)
                }
                ScorerKind::Cosine => DetectorArtifact::Cosine(CosineDetector::fit(&h)?),
                _ => return Err(invalid(format!("{kind} needs a classifier head: pass --ckpt"))),
            }
        }
    };
    save_detector(&det, out)?;
    Ok(format!(
        "fitted {kind} on {} examples -> {}\n",
        examples.len(),
        out.display()
    ))
}

fn score(det: &Path, input: &Path, out: &Path, ckpt: Option<&Path>) -> Result<String> {
    let det = load_detector(det)?;
    let ck = ckpt.map(load_checkpoint).transpose()?;
    let ds = load_embeddings(input)?;
    let scores = score_examples(&det, ck.as_ref().map(|c| &c.params), &ds.examples)?;
    let mut csv = String::from("id,score\n");
    for (e, s) in ds.examples.iter().zip(&scores) {
        let _ = writeln!(csv, "{},{}", e.id, s);
    }
    fs::write(out, csv)?;
    Ok(format!("scored {} examples -> {}\n", scores.len(), out.display()))
}

fn eval(
    ckpt: &Path,
    id: &Path,
    ood: &[PathBuf],
    scorers: &str,
    out: Option<&Path>,
) -> Result<String> {
    let kinds = ScorerKind::parse_list(scorers).map_err(invalid)?;
    if kinds.is_empty() {
        return Err(invalid("at least one scorer is required"));
    }
    let mut ck: Checkpoint = load_checkpoint(ckpt)?;
    let id_ds = load_embeddings(id)?;
    let missing: Vec<ScorerKind> = kinds.iter().copied().filter(|k| ck.detector(*k).is_none()).collect();
    if !missing.is_empty() {
        let fitted = fit_detectors(&ck.params, &fit_examples(&id_ds), &[], &missing, FitOptions::default())?;
        ck.detectors.extend(fitted);
    }
    let id_test = test_examples(&id_ds);
    let mut rows = Vec::new();
    for path in ood {
        let ood_ds = load_embeddings(path)?;
        let reports = evaluate_pair(&ck, &id_test, &ood_ds.examples, &kinds)?;
        for (&scorer, report) in kinds.iter().zip(reports) {
            rows.push(ReportRow {
                id_dataset: id_ds.name.clone(),
                ood_dataset: ood_ds.name.clone(),
                loss_mode: ck
                    .config
                    .get("loss.mode")
                    .and_then(|m| m.parse().ok())
                    .unwrap_or(LossMode::None),
                scorer,
                seed: ck.seed.to_string(),
                report,
            });
        }
    }
    if let Some(dir) = out {
        emit_reports(&rows, dir, None)?;
    }
    Ok(reports_csv(&rows))
}

fn novel_class(config: &Path, trials: usize, out: Option<&Path>, seed: Option<u64>) -> Result<String> {
    let cfg = load_config(config, seed)?;
    let data = prepare_data(&cfg.source)?;
    let rep = run_novel_class(&cfg, &data.id, trials)?;
    let rows = rep.rows();
    if let Some(dir) = out {
        emit_reports(&rows, dir, None)?;
    }
    let mut text = String::new();
    for t in &rep.trials {
        let _ = writeln!(text, "trial {}: held out class {} (seed {})", t.trial, t.held_out, t.seed);
    }
    text.push_str(&reports_csv(&rows));
    Ok(text)
}

fn project_cmd(ckpt: &Path, input: &Path, out: &Path, ood: Option<&Path>) -> Result<String> {
    let ck = load_checkpoint(ckpt)?;
    let ds = load_embeddings(input)?;
    let ood_examples = match ood {
        Some(p) => load_embeddings(p)?.examples,
        None => Vec::new(),
    };
    let points: Vec<ProjectionPoint> = project(&ck.params, &ds.examples, &ood_examples)?;
    fs::write(out, projection_csv(&points))?;
    Ok(format!("projected {} points -> {}\n", points.len(), out.display()))
}

fn run(cli: Cli) -> Result<String> {
    match cli.cmd {
        Cmd::GenSynth { config, out } => gen_synth(&config, &out, cli.seed),
        Cmd::Train { config, out } => train(&config, &out, cli.seed),
        Cmd::Fit {
            ckpt,
            val,
            scorer,
            out,
        } => fit(ckpt.as_deref(), &val, scorer, &out),
        Cmd::Score {
            det,
            input,
            out,
            ckpt,
        } => score(&det, &input, &out, ckpt.as_deref()),
        Cmd::Eval {
            ckpt,
            id,
            ood,
            scorers,
            out,
        } => eval(&ckpt, &id, &ood, &scorers, out.as_deref()),
        Cmd::NovelClass {
            config,
            trials,
            out,
        } => novel_class(&config, trials, out.as_deref(), cli.seed),
        Cmd::Project {
            ckpt,
            input,
            out,
            ood,
        } => project_cmd(&ckpt, &input, &out, ood.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
