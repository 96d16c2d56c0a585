//! Datasets, synthetic cluster generation, hashed n-gram featurization,
//! the `ood-embed/1` embedding file format, and batching.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{mix64, SplitMix64};

pub const EMBED_FORMAT: &str = "ood-embed/1";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: vector has {got} entries, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: label {label} out of range for {num_classes} classes")]
    LabelOutOfRange {
        line: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("line {line}: missing label on a {split} example")]
    MissingLabel { line: usize, split: Split },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("novel-class split needs at least 3 classes, got {0}")]
    TooFewClasses(usize),
    #[error("unknown class {class} (dataset has {num_classes})")]
    UnknownClass { class: usize, num_classes: usize },
    #[error("batch size {0} is too small (need at least 2)")]
    BatchTooSmall(usize),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    /// `None` for unlabeled test rows (typically OOD).
    pub label: Option<usize>,
    pub vector: Option<Vec<f64>>,
    pub text: Option<String>,
    pub split: Split,
}

impl Example {
    pub fn with_vector(id: impl Into<String>, label: Option<usize>, split: Split, v: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            label,
            vector: Some(v),
            text: None,
            split,
        }
    }

    pub fn vector(&self) -> Option<&[f64]> {
        self.vector.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub dim: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    /// Validates vector dimensions, label ranges and that train/val rows are
    /// labeled.
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        dim: usize,
        examples: Vec<Example>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            num_classes,
            dim,
            examples,
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.vector.is_none() && ex.text.is_none() {
                return Err(DataError::InvalidDataset(format!(
                    "example {:?} has neither text nor vector",
                    ex.id
                )));
            }
            if let Some(v) = &ex.vector {
                if v.len() != self.dim {
                    return Err(DataError::DimensionMismatch {
                        line: i + 1,
                        expected: self.dim,
                        got: v.len(),
                    });
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(DataError::InvalidDataset(format!(
                        "example {:?} has a non-finite entry",
                        ex.id
                    )));
                }
            }
            match ex.label {
                Some(l) if l >= self.num_classes => {
                    return Err(DataError::LabelOutOfRange {
                        line: i + 1,
                        label: l,
                        num_classes: self.num_classes,
                    })
                }
                None if ex.split != Split::Test => {
                    return Err(DataError::MissingLabel {
                        line: i + 1,
                        split: ex.split,
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Checks the extra requirements for training: every example carries a
    /// vector and every class appears in the train split.
    pub fn check_trainable(&self) -> Result<()> {
        if let Some(ex) = self.examples.iter().find(|e| e.vector.is_none()) {
            return Err(DataError::InvalidDataset(format!(
                "example {:?} has not been featurized",
                ex.id
            )));
        }
        let present: BTreeSet<usize> = self
            .split(Split::Train)
            .filter_map(|e| e.label)
            .collect();
        if let Some(missing) = (0..self.num_classes).find(|c| !present.contains(c)) {
            return Err(DataError::InvalidDataset(format!(
                "class {missing} has no training examples"
            )));
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> + '_ {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Isotropic standard deviation of every cluster.
    pub std: f64,
    /// Pairwise distance between class means.
    pub separation: f64,
    /// Distance of the OOD cluster center from the ID centroid, along a
    /// direction orthogonal to every class mean.
    pub ood_displacement: f64,
    pub ood_count: usize,
    /// Moves the last class mean toward class 0: 0 keeps it in place, 1 puts
    /// it on top of class 0.
    pub overlap: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            dim: 8,
            per_class: 100,
            std: 1.0,
            separation: 6.0,
            ood_displacement: 6.0,
            ood_count: 100,
            overlap: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1");
        }
        if self.dim < self.num_classes + 1 {
            return bad("dim must be at least num_classes + 1");
        }
        if self.per_class < 3 {
            return bad("per_class must be at least 3");
        }
        if self.ood_count == 0 {
            return bad("ood_count must be at least 1");
        }
        for (name, v) in [
            ("std", self.std),
            ("separation", self.separation),
            ("ood_displacement", self.ood_displacement),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DataError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad("overlap must lie in [0, 1]");
        }
        Ok(())
    }

    /// Class means: `separation/√2 · e_j`, with the optional overlap applied to
    /// the last class.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let r = self.separation / std::f64::consts::SQRT_2;
        let mut means: Vec<Vec<f64>> = (0..self.num_classes)
            .map(|j| {
                let mut m = vec![0.0; self.dim];
                m[j] = r;
                m
            })
            .collect();
        if self.overlap > 0.0 && self.num_classes >= 2 {
            let last = self.num_classes - 1;
            let target = means[0].clone();
            for (x, t) in means[last].iter_mut().zip(&target) {
                *x = (1.0 - self.overlap) * *x + self.overlap * t;
            }
        }
        means
    }

    pub fn ood_center(&self) -> Vec<f64> {
        let means = self.class_means();
        let mut c = crate::linalg::mean_vector(&means).expect("num_classes >= 1");
        c[self.num_classes] += self.ood_displacement;
        c
    }
}

/// Class-stratified split sizes `(train, val, test)` for one class.
fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held = (n / 10).max(1);
    (n - 2 * held, held, held)
}

/// Isotropic Gaussian clusters split 80/10/10 per class, plus an OOD cluster.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<(Dataset, Vec<Example>)> {
    cfg.validate()?;
    let mut rng = SplitMix64::new(cfg.seed);
    let means = cfg.class_means();
    let (n_train, n_val, _) = split_sizes(cfg.per_class);
    let mut examples = Vec::with_capacity(cfg.num_classes * cfg.per_class);
    for (class, mean) in means.iter().enumerate() {
        for k in 0..cfg.per_class {
            let v: Vec<f64> = mean.iter().map(|m| m + cfg.std * rng.normal()).collect();
            let split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            examples.push(Example::with_vector(format!("c{class}-{k}"), Some(class), split, v));
        }
    }
    let center = cfg.ood_center();
    let ood = (0..cfg.ood_count)
        .map(|k| {
            let v = center.iter().map(|m| m + cfg.std * rng.normal()).collect();
            Example::with_vector(format!("ood-{k}"), None, Split::Test, v)
        })
        .collect();
    let ds = Dataset::new("synthetic", cfg.num_classes, cfg.dim, examples)?;
    Ok((ds, ood))
}

/// Signed feature hashing of word unigrams and per-word character 3-grams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedFeaturizer {
    dim: usize,
    seed: u64,
}

impl HashedFeaturizer {
    pub const MIN_DIM: usize = 16;

    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < Self::MIN_DIM {
            return Err(DataError::InvalidConfig(format!(
                "hashed feature dim must be at least {}, got {dim}",
                Self::MIN_DIM
            )));
        }
        Ok(Self { dim, seed })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn hash(&self, namespace: u8, token: &str) -> u64 {
        // FNV-1a, then seeded finalization
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in std::iter::once(namespace).chain(token.bytes()) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        mix64(h ^ mix64(self.seed))
    }

    /// The hashed features in occurrence order, as `(bucket, sign)`.
    pub fn features(&self, text: &str) -> Vec<(usize, f64)> {
        let lower = text.to_lowercase();
        let mut out = Vec::new();
        for word in lower.split_whitespace() {
            out.push(self.bucket(b'w', word));
            let marked: Vec<char> = std::iter::once('<')
                .chain(word.chars())
                .chain(std::iter::once('>'))
                .collect();
            for tri in marked.windows(3) {
                let s: String = tri.iter().collect();
                out.push(self.bucket(b'c', &s));
            }
        }
        out
    }

    fn bucket(&self, namespace: u8, token: &str) -> (usize, f64) {
        let h = self.hash(namespace, token);
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }

    /// Signed bucket counts before normalization.
    pub fn counts(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for (b, s) in self.features(text) {
            v[b] += s;
        }
        v
    }

    /// Unit-norm feature vector; texts whose counts vanish map to `e_0`.
    pub fn featurize(&self, text: &str) -> Vec<f64> {
        let counts = self.counts(text);
        crate::linalg::l2_normalize(&counts).unwrap_or_else(|_| {
            let mut e0 = vec![0.0; self.dim];
            e0[0] = 1.0;
            e0
        })
    }
}

#[derive(Serialize, Deserialize)]
struct EmbedHeader {
    format: String,
    dim: usize,
    num_classes: usize,
    name: String,
}

#[derive(Serialize, Deserialize)]
struct EmbedRow {
    id: String,
    label: Option<usize>,
    split: Split,
    vector: Vec<f64>,
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Dataset> {
    read_embeddings(BufReader::new(File::open(path)?))
}

/// Parses an `ood-embed/1` stream. Line numbers in errors are 1-based and
/// count the header.
pub fn read_embeddings(reader: impl BufRead) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header: EmbedHeader = loop {
        match lines.next() {
            None => {
                return Err(DataError::Parse {
                    line: 1,
                    msg: "missing header".into(),
                })
            }
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| DataError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            }
        }
    };
    if header.format != EMBED_FORMAT {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("unsupported format {:?}", header.format),
        });
    }
    let mut examples = Vec::new();
    for (i, line) in lines {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let row: EmbedRow = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if row.vector.len() != header.dim {
            return Err(DataError::DimensionMismatch {
                line: lineno,
                expected: header.dim,
                got: row.vector.len(),
            });
        }
        match row.label {
            Some(label) if label >= header.num_classes => {
                return Err(DataError::LabelOutOfRange {
                    line: lineno,
                    label,
                    num_classes: header.num_classes,
                })
            }
            None if row.split != Split::Test => {
                return Err(DataError::MissingLabel {
                    line: lineno,
                    split: row.split,
                })
            }
            _ => {}
        }
        examples.push(Example::with_vector(row.id, row.label, row.split, row.vector));
    }
    Dataset::new(header.name, header.num_classes, header.dim, examples)
}

pub fn write_embeddings(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings_to(ds, &ds.examples, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes `examples` under the header of `ds` (which supplies dim, class
/// count and name).
pub fn write_embeddings_to(ds: &Dataset, examples: &[Example], mut w: impl Write) -> Result<()> {
    let header = EmbedHeader {
        format: EMBED_FORMAT.to_string(),
        dim: ds.dim,
        num_classes: ds.num_classes,
        name: ds.name.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for ex in examples {
        let vector = ex.vector.clone().ok_or_else(|| {
            DataError::InvalidDataset(format!("example {:?} has no vector", ex.id))
        })?;
        let row = EmbedRow {
            id: ex.id.clone(),
            label: ex.label,
            split: ex.split,
            vector,
        };
        writeln!(w, "{}", serde_json::to_string(&row).expect("row serializes"))?;
    }
    Ok(())
}

/// Reads a TSV corpus with columns `id, label-or-null, split, text`.
///
/// Returns the examples (text only, no vectors) and `1 + max label`.
pub fn load_text_corpus(path: impl AsRef<Path>) -> Result<(Vec<Example>, usize)> {
    let reader = BufReader::new(File::open(path)?);
    let mut examples = Vec::new();
    let mut num_classes = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.splitn(4, '\t').collect();
        let parse_err = |msg: String| DataError::Parse { line: i + 1, msg };
        if cols.len() != 4 {
            return Err(parse_err(format!("expected 4 tab-separated columns, got {}", cols.len())));
        }
        let label = match cols[1] {
            "" | "null" => None,
            s => Some(s.parse::<usize>().map_err(|e| parse_err(e.to_string()))?),
        };
        let split: Split = cols[2].parse().map_err(parse_err)?;
        if label.is_none() && split != Split::Test {
            return Err(DataError::MissingLabel { line: i + 1, split });
        }
        if let Some(l) = label {
            num_classes = num_classes.max(l + 1);
        }
        examples.push(Example {
            id: cols[0].to_string(),
            label,
            vector: None,
            text: Some(cols[3].to_string()),
            split,
        });
    }
    Ok((examples, num_classes))
}

/// Featurizes every example that carries text.
pub fn featurize_examples(examples: &mut [Example], featurizer: &HashedFeaturizer) {
    for ex in examples {
        if let Some(t) = &ex.text {
            ex.vector = Some(featurizer.featurize(t));
        }
    }
}

/// Removes class `held_out` from every split and returns its examples as OOD
/// (unlabeled). Remaining labels are re-indexed to `0..C-1`.
pub fn split_novel_class(ds: &Dataset, held_out: usize) -> Result<(Dataset, Vec<Example>)> {
    if ds.num_classes < 3 {
        return Err(DataError::TooFewClasses(ds.num_classes));
    }
    if held_out >= ds.num_classes {
        return Err(DataError::UnknownClass {
            class: held_out,
            num_classes: ds.num_classes,
        });
    }
    let mut id_examples = Vec::new();
    let mut ood = Vec::new();
    for ex in &ds.examples {
        match ex.label {
            Some(l) if l == held_out => {
                let mut e = ex.clone();
                e.label = None;
                ood.push(e);
            }
            Some(l) => {
                let mut e = ex.clone();
                e.label = Some(if l > held_out { l - 1 } else { l });
                id_examples.push(e);
            }
            None => id_examples.push(ex.clone()),
        }
    }
    let id_ds = Dataset::new(
        format!("{}-without-{held_out}", ds.name),
        ds.num_classes - 1,
        ds.dim,
        id_examples,
    )?;
    Ok((id_ds, ood))
}

/// One epoch of shuffled train-split batches, as indices into `ds.examples`.
/// The last batch may be short.
pub fn batch_iter(
    ds: &Dataset,
    batch_size: usize,
    epoch_seed: u64,
) -> Result<impl Iterator<Item = Vec<usize>>> {
    if batch_size < 2 {
        return Err(DataError::BatchTooSmall(batch_size));
    }
    let mut order: Vec<usize> = ds
        .examples
        .iter()
        .enumerate()
        .filter(|(_, e)| e.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    SplitMix64::new(epoch_seed).shuffle(&mut order);
    let batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(batches.into_iter())
}
