use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::losses::LossMode;
use crate::metrics::EvalReport;
use crate::scorers::ScorerKind;

use super::{mean_report, Result};

pub const CSV_HEADER: &str = "id_dataset,ood_dataset,loss_mode,scorer,auroc,far95,accuracy,seed";

/// One evaluated (ID, OOD, loss mode, scorer, seed) cell. `seed` is the run
/// seed, or `avg` for a mean row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub id_dataset: String,
    pub ood_dataset: String,
    pub loss_mode: LossMode,
    pub scorer: ScorerKind,
    pub seed: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPoint {
    pub id: String,
    /// `id` or `ood`.
    pub source: String,
    pub label: Option<usize>,
    pub x: f64,
    pub y: f64,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

type GroupKey = (String, String, LossMode, ScorerKind);

fn key(r: &ReportRow) -> GroupKey {
    (r.id_dataset.clone(), r.ood_dataset.clone(), r.loss_mode, r.scorer)
}

/// Groups in first-appearance order.
fn groups(rows: &[ReportRow]) -> Vec<(GroupKey, Vec<EvalReport>)> {
    let mut out: Vec<(GroupKey, Vec<EvalReport>)> = Vec::new();
    for r in rows.iter().filter(|r| r.seed != "avg") {
        let k = key(r);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r.report),
            None => out.push((k, vec![r.report])),
        }
    }
    out
}

fn averages(rows: &[ReportRow]) -> Vec<ReportRow> {
    groups(rows)
        .into_iter()
        .map(|((id_dataset, ood_dataset, loss_mode, scorer), reports)| ReportRow {
            id_dataset,
            ood_dataset,
            loss_mode,
            scorer,
            seed: "avg".into(),
            report: mean_report(&reports).expect("groups are non-empty"),
        })
        .collect()
}

/// CSV of the given rows followed by one `avg` row per group. Rows already
/// flagged `avg` are written as given and excluded from averaging.
pub fn reports_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows.iter().chain(averages(rows).iter()) {
        let acc = r.report.accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            csv_field(&r.id_dataset),
            csv_field(&r.ood_dataset),
            r.loss_mode,
            r.scorer,
            r.report.auroc,
            r.report.far95,
            acc,
            csv_field(&r.seed)
        );
    }
    s
}

/// Markdown table with one `AUROC / FAR95` cell (percent) per OOD set,
/// averaged over seeds.
pub fn summary_markdown(rows: &[ReportRow]) -> String {
    let groups = groups(rows);
    let mut oods: Vec<String> = Vec::new();
    let mut lines: Vec<(String, LossMode, ScorerKind)> = Vec::new();
    for ((id, ood, mode, scorer), _) in &groups {
        if !oods.contains(ood) {
            oods.push(ood.clone());
        }
        let l = (id.clone(), *mode, *scorer);
        if !lines.contains(&l) {
            lines.push(l);
        }
    }
    let mut s = String::from("# OOD detection summary\n\nCells are AUROC ↑ / FAR95 ↓ in percent, averaged over seeds.\n\n");
    let _ = write!(s, "| ID | loss | scorer |");
    for o in &oods {
        let _ = write!(s, " {o} |");
    }
    s.push_str(" avg | accuracy |\n|---|---|---|");
    for _ in 0..oods.len() + 2 {
        s.push_str("---|");
    }
    s.push('\n');
    for (id, mode, scorer) in &lines {
        let _ = write!(s, "| {id} | {mode} | {scorer} |");
        let mut cells = Vec::new();
        for o in &oods {
            let found = groups
                .iter()
                .find(|((gi, go, gm, gs), _)| gi == id && go == o && gm == mode && gs == scorer)
                .and_then(|(_, r)| mean_report(r));
            match found {
                Some(r) => {
                    let _ = write!(s, " {:.1} / {:.1} |", 100.0 * r.auroc, 100.0 * r.far95);
                    cells.push(r);
                }
                None => s.push_str(" - |"),
            }
        }
        match mean_report(&cells) {
            Some(r) => {
                let _ = write!(s, " {:.1} / {:.1} |", 100.0 * r.auroc, 100.0 * r.far95);
                match r.accuracy {
                    Some(a) => {
                        let _ = writeln!(s, " {:.1} |", 100.0 * a);
                    }
                    None => s.push_str(" - |\n"),
                }
            }
            None => s.push_str(" - | - |\n"),
        }
    }
    s
}

pub fn projection_csv(points: &[ProjectionPoint]) -> String {
    let mut s = String::from("id,source,label,x,y\n");
    for p in points {
        let label = p.label.map(|l| l.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{}", csv_field(&p.id), p.source, label, p.x, p.y);
    }
    s
}

/// Writes `reports.csv`, `summary.md` and, when given, `projection.csv`.
/// Output is a pure function of the inputs.
pub fn emit_reports(
    rows: &[ReportRow],
    outdir: impl AsRef<Path>,
    projection: Option<&[ProjectionPoint]>,
) -> Result<Vec<PathBuf>> {
    let dir = outdir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    put("reports.csv", reports_csv(rows))?;
    put("summary.md", summary_markdown(rows))?;
    if let Some(points) = projection {
        put("projection.csv", projection_csv(points))?;
    }
    Ok(written)
}
