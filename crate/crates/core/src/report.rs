//! Serialization of evaluation reports and highlight files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{Aggregate, MacroScores};
use crate::pipeline::{EvaluationReport, SentenceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Tsv,
    HighlightedText,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "tsv" => Ok(ReportFormat::Tsv),
            "highlighted-text" | "text" => Ok(ReportFormat::HighlightedText),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

pub const TSV_COLUMNS: [&str; 11] = [
    "dataset",
    "scope",
    "explainer",
    "sentences",
    "P",
    "R",
    "F1",
    "ED_1",
    "ED_1.5",
    "ED_2",
    "TER",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |v| format!("{v:.4}"))
}

fn macro_cells(m: &MacroScores) -> [String; 7] {
    [m.precision, m.recall, m.f1, m.ed_1, m.ed_1_5, m.ed_2, m.ter].map(cell)
}

/// One row per scope (overall, then each domain), followed by a seed column.
pub fn render_tsv(report: &EvaluationReport) -> String {
    let mut out = String::new();
    out.push_str(&TSV_COLUMNS.join("\t"));
    out.push_str("\tseed\n");
    let mut row = |scope: &str, agg: &Aggregate| {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            report.dataset,
            scope,
            report.explainer,
            agg.sentences,
            macro_cells(&agg.macro_scores).join("\t"),
            report.seed
        );
    };
    row("overall", &report.overall);
    for d in &report.per_domain {
        row(&d.domain, &d.aggregate);
    }
    out
}

pub fn render_json(report: &EvaluationReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Tokens joined by spaces with highlighted ones wrapped in `[[ ]]`.
pub fn render_highlighted(tokens: &[String], mask: &[u8]) -> String {
    tokens
        .iter()
        .zip(mask)
        .map(|(t, &m)| if m == 1 { format!("[[{t}]]") } else { t.clone() })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Serialize)]
struct HighlightLine<'a> {
    id: usize,
    mask: &'a [u8],
    explainer: &'a str,
    seed: u64,
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Identifies the run that produced a set of highlights.
#[derive(Debug, Clone, Copy)]
pub struct RunLabel<'a> {
    pub dataset: &'a str,
    pub explainer: &'a str,
    pub seed: u64,
}

impl<'a> From<&'a EvaluationReport> for RunLabel<'a> {
    fn from(r: &'a EvaluationReport) -> Self {
        RunLabel {
            dataset: &r.dataset,
            explainer: &r.explainer,
            seed: r.seed,
        }
    }
}

pub fn render_highlights_jsonl(run: RunLabel<'_>, sentences: &[SentenceRecord]) -> Result<String> {
    jsonl(sentences.iter().map(|s| HighlightLine {
        id: s.id,
        mask: &s.mask,
        explainer: run.explainer,
        seed: run.seed,
    }))
}

pub fn render_highlights_text(run: RunLabel<'_>, sentences: &[SentenceRecord]) -> String {
    let mut out = format!(
        "# dataset={} explainer={} seed={}\n",
        run.dataset, run.explainer, run.seed
    );
    for s in sentences {
        out.push_str(&render_highlighted(&s.tokens, &s.mask));
        out.push('\n');
    }
    out
}

pub fn render_sentences_jsonl(sentences: &[SentenceRecord]) -> Result<String> {
    jsonl(sentences)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes `report` into `dir` and returns the files created.
///
/// * `Json`: `report.json` and per-sentence `sentences.jsonl`
/// * `Tsv`: `report.tsv`
/// * `HighlightedText`: `highlights.txt` and `highlights.jsonl`
pub fn write_report(report: &EvaluationReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files: Vec<(&str, String)> = match format {
        ReportFormat::Json => vec![
            ("report.json", render_json(report)?),
            ("sentences.jsonl", render_sentences_jsonl(&report.sentences)?),
        ],
        ReportFormat::Tsv => vec![("report.tsv", render_tsv(report))],
        ReportFormat::HighlightedText => {
            return write_highlights(report.into(), &report.sentences, dir);
        }
    };
    write_all(dir, files)
}

/// Writes `highlights.txt` and `highlights.jsonl` into `dir`.
pub fn write_highlights(run: RunLabel<'_>, sentences: &[SentenceRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_all(
        dir,
        vec![
            ("highlights.txt", render_highlights_text(run, sentences)),
            ("highlights.jsonl", render_highlights_jsonl(run, sentences)?),
        ],
    )
}

fn write_all(dir: &Path, files: Vec<(&str, String)>) -> Result<Vec<PathBuf>> {
    files
        .into_iter()
        .map(|(name, contents)| {
            let path = dir.join(name);
            write_file(&path, &contents)?;
            Ok(path)
        })
        .collect()
}

/// Reads a `report.json` back.
pub fn read_report(path: &Path) -> Result<EvaluationReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
