//! Evaluation of highlight masks against parallel simple sentences, plus the
//! correlation coefficients used for per-domain analysis.

use std::cmp::Ordering;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{HighlightMask, Membership, Token};
use crate::error::{Error, Result};

/// Substitution costs reported for the edit distance.
pub const SUB_COSTS: [f64; 3] = [1.0, 1.5, 2.0];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenScores {
    /// `None` when nothing is highlighted.
    pub precision: Option<f64>,
    /// `None` when every complex token occurs in the simple sentence.
    pub recall: Option<f64>,
    /// `None` when precision or recall is undefined.
    pub f1: Option<f64>,
}

pub fn score_highlights(mask: &HighlightMask, complex: &[Token], simple: &[Token]) -> Result<TokenScores> {
    score_highlights_with(mask, complex, simple, Membership::default())
}

/// Tokenwise precision, recall and F1 of `mask` against the tokens of
/// `complex` that are absent from `simple`. Repeated tokens count once per
/// occurrence.
pub fn score_highlights_with(
    mask: &HighlightMask,
    complex: &[Token],
    simple: &[Token],
    rule: Membership,
) -> Result<TokenScores> {
    mask.check_len(complex.len())?;
    let absent = rule.absent_from(complex, simple);
    let highlighted = mask.count();
    let relevant = absent.iter().filter(|&&a| a).count();
    let hits = mask.bits.iter().zip(&absent).filter(|&(&c, &a)| c && a).count();
    let precision = (highlighted > 0).then(|| hits as f64 / highlighted as f64);
    let recall = (relevant > 0).then(|| hits as f64 / relevant as f64);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(TokenScores { precision, recall, f1 })
}

/// Weighted Levenshtein distance between two sequences: insertions and
/// deletions cost 1, substitutions `sub_cost`.
pub fn edit_distance_seq<T: PartialEq>(a: &[T], b: &[T], sub_cost: f64) -> f64 {
    assert!(sub_cost > 0.0, "substitution cost must be positive");
    let mut row: Vec<f64> = (0..=b.len()).map(|j| j as f64).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = (i + 1) as f64;
        for (j, y) in b.iter().enumerate() {
            let sub = diag + if x == y { 0.0 } else { sub_cost };
            let best = sub.min(row[j] + 1.0).min(row[j + 1] + 1.0);
            diag = row[j + 1];
            row[j + 1] = best;
        }
    }
    row[b.len()]
}

/// Word-level edit distance comparing normalized forms.
pub fn edit_distance(a: &[Token], b: &[Token], sub_cost: f64) -> f64 {
    let a: Vec<&str> = a.iter().map(|t| t.norm.as_str()).collect();
    let b: Vec<&str> = b.iter().map(|t| t.norm.as_str()).collect();
    edit_distance_seq(&a, &b, sub_cost)
}

/// Tokens of `d` whose mask bit is 0, in order.
pub fn unhighlighted_remainder(d: &[Token], mask: &HighlightMask) -> Result<Vec<Token>> {
    mask.check_len(d.len())?;
    Ok(d.iter()
        .zip(&mask.bits)
        .filter(|&(_, &b)| !b)
        .map(|(t, _)| t.clone())
        .collect())
}

/// Shift-free translation edit rate against a single reference.
pub fn ter(remainder: &[Token], reference: &[Token]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("TER reference"));
    }
    Ok(edit_distance(remainder, reference, 1.0) / reference.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    /// Edit distance at substitution costs 1, 1.5 and 2.
    pub ed_1: f64,
    pub ed_1_5: f64,
    pub ed_2: f64,
    pub ter: f64,
}

pub fn score_sentence(mask: &HighlightMask, complex: &[Token], simple: &[Token]) -> Result<SentenceScore> {
    let tokens = score_highlights(mask, complex, simple)?;
    let remainder = unhighlighted_remainder(complex, mask)?;
    Ok(SentenceScore {
        precision: tokens.precision,
        recall: tokens.recall,
        f1: tokens.f1,
        ed_1: edit_distance(&remainder, simple, SUB_COSTS[0]),
        ed_1_5: edit_distance(&remainder, simple, SUB_COSTS[1]),
        ed_2: edit_distance(&remainder, simple, SUB_COSTS[2]),
        ter: ter(&remainder, simple)?,
    })
}

/// What to do with sentences whose P, R or F1 is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UndefinedPolicy {
    /// Leave them out of the mean and count them.
    #[default]
    Exclude,
    /// Treat them as 0.
    Zero,
}

impl FromStr for UndefinedPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclude" => Ok(UndefinedPolicy::Exclude),
            "zero" => Ok(UndefinedPolicy::Zero),
            other => Err(Error::Config(format!("unknown undefined-value policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    #[serde(rename = "P")]
    pub precision: Option<f64>,
    #[serde(rename = "R")]
    pub recall: Option<f64>,
    #[serde(rename = "F1")]
    pub f1: Option<f64>,
    #[serde(rename = "ED_1")]
    pub ed_1: Option<f64>,
    #[serde(rename = "ED_1.5")]
    pub ed_1_5: Option<f64>,
    #[serde(rename = "ED_2")]
    pub ed_2: Option<f64>,
    #[serde(rename = "TER")]
    pub ter: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedCounts {
    #[serde(rename = "P")]
    pub precision: usize,
    #[serde(rename = "R")]
    pub recall: usize,
    #[serde(rename = "F1")]
    pub f1: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sentences: usize,
    #[serde(rename = "macro")]
    pub macro_scores: MacroScores,
    pub undefined_counts: UndefinedCounts,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>, policy: UndefinedPolicy) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut undefined = 0;
    for v in values {
        match (v, policy) {
            (Some(v), _) => {
                sum += v;
                n += 1;
            }
            (None, UndefinedPolicy::Zero) => {
                undefined += 1;
                n += 1;
            }
            (None, UndefinedPolicy::Exclude) => undefined += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), undefined)
}

/// Per-metric arithmetic mean over the sentences where the metric is defined.
pub fn macro_average(scores: &[SentenceScore], policy: UndefinedPolicy) -> Aggregate {
    let (precision, up) = mean_defined(scores.iter().map(|s| s.precision), policy);
    let (recall, ur) = mean_defined(scores.iter().map(|s| s.recall), policy);
    let (f1, uf) = mean_defined(scores.iter().map(|s| s.f1), policy);
    let mean = |f: fn(&SentenceScore) -> f64| mean_defined(scores.iter().map(|s| Some(f(s))), policy).0;
    Aggregate {
        sentences: scores.len(),
        macro_scores: MacroScores {
            precision,
            recall,
            f1,
            ed_1: mean(|s| s.ed_1),
            ed_1_5: mean(|s| s.ed_1_5),
            ed_2: mean(|s| s.ed_2),
            ter: mean(|s| s.ter),
        },
        undefined_counts: UndefinedCounts {
            precision: up,
            recall: ur,
            f1: uf,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
    KendallTauB,
}

impl CorrelationMethod {
    pub const ALL: [CorrelationMethod; 3] = [
        CorrelationMethod::Pearson,
        CorrelationMethod::Spearman,
        CorrelationMethod::KendallTauB,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CorrelationMethod::Pearson => "pearson",
            CorrelationMethod::Spearman => "spearman",
            CorrelationMethod::KendallTauB => "kendall_tau_b",
        }
    }
}

impl FromStr for CorrelationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(CorrelationMethod::Pearson),
            "spearman" => Ok(CorrelationMethod::Spearman),
            "kendall" | "kendall_tau_b" | "kendall-tau-b" => Ok(CorrelationMethod::KendallTauB),
            other => Err(Error::InvalidArgument(format!("unknown correlation method `{other}`"))),
        }
    }
}

/// Reads the named numeric columns of a headed, tab-separated file.
pub fn read_tsv_columns(path: &std::path::Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format {
                path: path.to_owned(),
                line: 1,
                message: format!("{other:?}"),
            },
        })?;
    let headers = reader.headers()?.clone();
    let idx = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h.trim() == *n)
                .ok_or_else(|| Error::MissingColumn((*n).to_owned()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut columns = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (col, &i) in idx.iter().enumerate() {
            let raw = record.get(i).unwrap_or("");
            let v = raw.trim().parse::<f64>().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                line: row + 2,
                message: format!("column `{}`: `{raw}` is not a number", names[col]),
            })?;
            columns[col].push(v);
        }
    }
    Ok(columns)
}

pub fn correlate(x: &[f64], y: &[f64], method: CorrelationMethod) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 points".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("correlation inputs must be finite".into()));
    }
    match method {
        CorrelationMethod::Pearson => pearson(x, y),
        CorrelationMethod::Spearman => pearson(&average_ranks(x), &average_ranks(y)),
        CorrelationMethod::KendallTauB => kendall_tau_b(x, y),
    }
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` and returns the number of strictly inverted pairs.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's tau-b in O(n log n) (Knight's algorithm).
fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as u64;
    let n0 = n * (n - 1) / 2;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let n1 = tied_pairs(&xs);
    let n3 = tied_pairs(&pairs);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = merge_count(&mut ys, &mut buf);
    let n2 = tied_pairs(&ys);

    if n0 == n1 || n0 == n2 {
        return Err(Error::Undefined("zero variance"));
    }
    let numerator = (n0 + n3) as f64 - (n1 + n2) as f64 - 2.0 * swaps as f64;
    let denom = (((n0 - n1) as f64) * ((n0 - n2) as f64)).sqrt();
    Ok((numerator / denom).clamp(-1.0, 1.0))
}

/// Sorting helper for reports: orders `Option<f64>` with `None` last.
pub fn cmp_defined(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(a), Some(b)) => a.total_cmp(&b),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}
