//! Parallel corpus ingestion, tokenization and ground-truth derivation.
//!
//! A corpus is a list of aligned complex/simple sentence pairs. From it we
//! derive two kinds of targets: a binary complexity label per sentence and a
//! reference highlight mask over the tokens of each complex sentence (every
//! token whose normalized form does not occur in the simple counterpart).

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub norm: String,
}

impl Token {
    /// Builds a token from its surface form. Tokens produced by [`tokenize`]
    /// never contain whitespace, which the n-gram keys rely on.
    pub fn new(surface: impl Into<String>) -> Self {
        let surface = surface.into();
        let norm = surface.to_lowercase();
        Token { surface, norm }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizeMode {
    #[default]
    Whitespace,
    #[serde(rename = "whitespace+punct")]
    WhitespacePunct,
}

impl FromStr for TokenizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(TokenizeMode::Whitespace),
            "whitespace+punct" | "punct" => Ok(TokenizeMode::WhitespacePunct),
            other => Err(Error::Config(format!("unknown tokenization mode `{other}`"))),
        }
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '«' | '»' | '…' | '–' | '—' | '¿' | '¡')
}

/// Splits a raw sentence into tokens.
///
/// In whitespace+punct mode leading and trailing punctuation marks of every
/// whitespace chunk become tokens of their own; a chunk made only of
/// punctuation (`...`, `--`) is kept whole.
pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<Token> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        match mode {
            TokenizeMode::Whitespace => out.push(Token::new(chunk)),
            TokenizeMode::WhitespacePunct => split_punct(chunk, &mut out),
        }
    }
    out
}

fn split_punct(chunk: &str, out: &mut Vec<Token>) {
    if chunk.chars().all(is_punct) {
        out.push(Token::new(chunk));
        return;
    }
    let start = chunk
        .char_indices()
        .find(|&(_, c)| !is_punct(c))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let end = chunk
        .char_indices()
        .rev()
        .find(|&(_, c)| !is_punct(c))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(chunk.len());
    out.extend(chunk[..start].chars().map(|c| Token::new(c.to_string())));
    out.push(Token::new(&chunk[start..end]));
    out.extend(chunk[end..].chars().map(|c| Token::new(c.to_string())));
}

pub fn join_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" | "dev" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// How token membership in the simple sentence is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Membership {
    /// Compare lowercased forms.
    #[default]
    CaseInsensitive,
    /// Compare surface forms.
    CaseSensitive,
}

impl Membership {
    fn key<'a>(&self, token: &'a Token) -> &'a str {
        match self {
            Membership::CaseInsensitive => &token.norm,
            Membership::CaseSensitive => &token.surface,
        }
    }

    /// For every token of `complex`, whether it is absent from `simple`.
    pub fn absent_from(&self, complex: &[Token], simple: &[Token]) -> Vec<bool> {
        let present: HashSet<&str> = simple.iter().map(|t| self.key(t)).collect();
        complex.iter().map(|t| !present.contains(self.key(t))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Reference,
    Predicted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighlightMask {
    pub bits: Vec<bool>,
    pub kind: MaskKind,
}

impl HighlightMask {
    pub fn predicted(bits: Vec<bool>) -> Self {
        HighlightMask {
            bits,
            kind: MaskKind::Predicted,
        }
    }

    pub fn reference(bits: Vec<bool>) -> Self {
        HighlightMask {
            bits,
            kind: MaskKind::Reference,
        }
    }

    pub fn zeros(n: usize, kind: MaskKind) -> Self {
        HighlightMask {
            bits: vec![false; n],
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn as_u8(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| b as u8).collect()
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.bits.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: self.bits.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: usize,
    pub complex: Vec<Token>,
    pub simple: Vec<Token>,
    pub split: Split,
    pub domain: Option<String>,
    pub reference_mask: HighlightMask,
}

impl SentencePair {
    /// Builds a pair and stores its reference mask under the default
    /// case-insensitive membership rule.
    pub fn new(id: usize, complex: Vec<Token>, simple: Vec<Token>) -> Result<Self> {
        if complex.is_empty() || simple.is_empty() {
            return Err(Error::InvalidArgument(format!("pair {id}: empty sentence")));
        }
        let reference_mask = HighlightMask::reference(Membership::default().absent_from(&complex, &simple));
        Ok(SentencePair {
            id,
            complex,
            simple,
            split: Split::Train,
            domain: None,
            reference_mask,
        })
    }

    pub fn is_identical(&self) -> bool {
        self.complex.len() == self.simple.len() && self.complex.iter().zip(&self.simple).all(|(a, b)| a.norm == b.norm)
    }

    /// Recomputes and stores the reference mask under another membership rule.
    pub fn set_membership(&mut self, rule: Membership) {
        self.reference_mask = derive_reference_mask_with(self, rule);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusSource {
    /// One pair per line, `complex<TAB>simple`.
    Tsv(PathBuf),
    /// Two line-aligned files.
    TwoFile { complex: PathBuf, simple: PathBuf },
}

impl CorpusSource {
    /// `<prefix>.complex` / `<prefix>.simple`.
    pub fn two_file_prefix(prefix: impl AsRef<Path>) -> Self {
        let prefix = prefix.as_ref().as_os_str().to_owned();
        let mut complex = prefix.clone();
        complex.push(".complex");
        let mut simple = prefix;
        simple.push(".simple");
        CorpusSource::TwoFile {
            complex: complex.into(),
            simple: simple.into(),
        }
    }

    pub fn paths(&self) -> Vec<&Path> {
        match self {
            CorpusSource::Tsv(p) => vec![p],
            CorpusSource::TwoFile { complex, simple } => vec![complex, simple],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    #[default]
    Tsv,
    TwoFile,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(CorpusFormat::Tsv),
            "two-file" => Ok(CorpusFormat::TwoFile),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    std::io::BufReader::new(file)
        .lines()
        .map(|l| {
            l.map(|l| l.strip_suffix('\r').map(str::to_owned).unwrap_or(l))
                .map_err(|e| Error::io(path, e))
        })
        .collect()
}

/// Loads aligned pairs in file order with ids `0..n`. Every pair starts in
/// the training split without a domain tag.
pub fn load_parallel_corpus(source: &CorpusSource, mode: TokenizeMode) -> Result<Vec<SentencePair>> {
    let rows: Vec<(PathBuf, usize, String, String)> = match source {
        CorpusSource::Tsv(path) => read_lines(path)?
            .into_iter()
            .enumerate()
            .map(|(i, line)| {
                let mut parts = line.split('\t');
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(c), Some(s), None) => Ok((path.clone(), i + 1, c.to_owned(), s.to_owned())),
                    _ => Err(Error::Format {
                        path: path.clone(),
                        line: i + 1,
                        message: format!("expected exactly one tab, found {}", line.matches('\t').count()),
                    }),
                }
            })
            .collect::<Result<_>>()?,
        CorpusSource::TwoFile { complex, simple } => {
            let c = read_lines(complex)?;
            let s = read_lines(simple)?;
            if c.len() != s.len() {
                return Err(Error::Alignment {
                    complex: c.len(),
                    simple: s.len(),
                });
            }
            c.into_iter()
                .zip(s)
                .enumerate()
                .map(|(i, (c, s))| (complex.clone(), i + 1, c, s))
                .collect()
        }
    };

    rows.into_iter()
        .enumerate()
        .map(|(id, (path, line, c, s))| {
            let complex = tokenize(&c, mode);
            let simple = tokenize(&s, mode);
            if complex.is_empty() || simple.is_empty() {
                return Err(Error::Format {
                    path,
                    line,
                    message: "empty sentence".into(),
                });
            }
            SentencePair::new(id, complex, simple)
        })
        .collect()
}

/// Reads one domain tag per line (blank line = untagged) and attaches them to
/// `pairs` in order.
pub fn attach_domains(pairs: &mut [SentencePair], path: &Path) -> Result<()> {
    let tags = read_lines(path)?;
    if tags.len() != pairs.len() {
        return Err(Error::Format {
            path: path.to_owned(),
            line: tags.len(),
            message: format!("expected {} domain lines, found {}", pairs.len(), tags.len()),
        });
    }
    for (pair, tag) in pairs.iter_mut().zip(tags) {
        let tag = tag.trim();
        pair.domain = (!tag.is_empty()).then(|| tag.to_owned());
    }
    Ok(())
}

/// Deterministic split for a single-file corpus: ids ending in 0 go to test,
/// ids ending in 1 to validation, everything else to training.
pub fn assign_splits_by_id(pairs: &mut [SentencePair]) {
    for pair in pairs {
        pair.split = match pair.id % 10 {
            0 => Split::Test,
            1 => Split::Valid,
            _ => Split::Train,
        };
    }
}

/// Writes pairs back in the TSV corpus format.
pub fn write_tsv<W: Write>(pairs: &[SentencePair], mut out: W) -> std::io::Result<()> {
    for pair in pairs {
        writeln!(out, "{}\t{}", join_tokens(&pair.complex), join_tokens(&pair.simple))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Complex,
    Simple,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub pair_id: usize,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub tokens: Vec<Token>,
    pub label: u8,
    pub origin: Origin,
    pub split: Split,
    pub domain: Option<String>,
}

/// Complex side of a non-identical pair gets label 1 and its simple side
/// label 0; an identical pair yields a single label-0 instance.
pub fn derive_labels(pairs: &[SentencePair]) -> Vec<LabeledInstance> {
    let mut out = Vec::with_capacity(pairs.len() * 2);
    for pair in pairs {
        let instance = |side, label| LabeledInstance {
            tokens: match side {
                Side::Complex => pair.complex.clone(),
                Side::Simple => pair.simple.clone(),
            },
            label,
            origin: Origin { pair_id: pair.id, side },
            split: pair.split,
            domain: pair.domain.clone(),
        };
        if pair.is_identical() {
            out.push(instance(Side::Complex, 0));
        } else {
            out.push(instance(Side::Complex, 1));
            out.push(instance(Side::Simple, 0));
        }
    }
    out
}

pub fn derive_reference_mask(pair: &SentencePair) -> HighlightMask {
    derive_reference_mask_with(pair, Membership::default())
}

pub fn derive_reference_mask_with(pair: &SentencePair, rule: Membership) -> HighlightMask {
    HighlightMask::reference(rule.absent_from(&pair.complex, &pair.simple))
}

/// One line of the serialized-instances JSON-lines file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: usize,
    pub side: Side,
    pub tokens: Vec<String>,
    pub label: u8,
    /// Present on complex sides only.
    pub ref_mask: Option<Vec<u8>>,
    pub domain: Option<String>,
    pub split: Split,
}

pub fn instance_records(pairs: &[SentencePair]) -> Vec<InstanceRecord> {
    let by_id: std::collections::HashMap<usize, &SentencePair> = pairs.iter().map(|p| (p.id, p)).collect();
    derive_labels(pairs)
        .into_iter()
        .map(|inst| {
            let ref_mask = match inst.origin.side {
                Side::Complex => by_id.get(&inst.origin.pair_id).map(|p| p.reference_mask.as_u8()),
                Side::Simple => None,
            };
            InstanceRecord {
                id: inst.origin.pair_id,
                side: inst.origin.side,
                tokens: inst.tokens.into_iter().map(|t| t.surface).collect(),
                label: inst.label,
                ref_mask,
                domain: inst.domain,
                split: inst.split,
            }
        })
        .collect()
}

pub fn write_instances_jsonl<W: Write>(pairs: &[SentencePair], mut out: W) -> Result<()> {
    for record in instance_records(pairs) {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io("<instances>", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Token> {
        tokenize(s, TokenizeMode::Whitespace)
    }

    fn pair(c: &str, s: &str) -> SentencePair {
        SentencePair::new(0, toks(c), toks(s)).unwrap()
    }

    #[test]
    fn tokenize_pretokenized_sentence() {
        let t = toks("Their fatigue changes their voices , but they 're still on the freedom highway .");
        assert_eq!(t.len(), 15);
        assert_eq!(t[5].surface, ",");
        assert_eq!(t[0].norm, "their");
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("", TokenizeMode::Whitespace).is_empty());
        assert!(tokenize("   \t ", TokenizeMode::WhitespacePunct).is_empty());
    }

    #[test]
    fn tokenize_punct_mode() {
        let t: Vec<_> = tokenize("Hello, world!", TokenizeMode::WhitespacePunct)
            .into_iter()
            .map(|t| t.surface)
            .collect();
        assert_eq!(t, ["Hello", ",", "world", "!"]);
        let t: Vec<_> = tokenize("(\"quoted\") ... ok", TokenizeMode::WhitespacePunct)
            .into_iter()
            .map(|t| t.surface)
            .collect();
        assert_eq!(t, ["(", "\"", "quoted", "\"", ")", "...", "ok"]);
    }

    #[test]
    fn labels_for_unequal_and_identical_pairs() {
        let labels = derive_labels(&[pair("a big dog", "a dog")]);
        assert_eq!(labels.len(), 2);
        assert_eq!((labels[0].label, labels[0].origin.side), (1, Side::Complex));
        assert_eq!((labels[1].label, labels[1].origin.side), (0, Side::Simple));

        let labels = derive_labels(&[pair("a dog", "A  dog")]);
        assert_eq!(labels.len(), 1);
        assert_eq!(labels[0].label, 0);

        assert!(derive_labels(&[]).is_empty());
    }

    #[test]
    fn reference_mask_membership() {
        let p = pair("a b c", "a c");
        assert_eq!(derive_reference_mask(&p).bits, [false, true, false]);
        assert_eq!(p.reference_mask, derive_reference_mask(&p));

        let p = pair("a b c", "a b c");
        assert_eq!(derive_reference_mask(&p).count(), 0);

        // duplicates share one bit value; case folds
        let p = pair("The b the b", "the");
        assert_eq!(p.reference_mask.bits, [false, true, false, true]);
        let mut p = p;
        p.set_membership(Membership::CaseSensitive);
        assert_eq!(p.reference_mask.bits, [true, true, false, true]);
    }

    #[test]
    fn empty_side_rejected() {
        assert!(SentencePair::new(0, vec![], toks("a")).is_err());
        assert!(SentencePair::new(0, toks("a"), vec![]).is_err());
    }

    #[test]
    fn tsv_rejects_bad_tab_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.tsv");
        fs::write(&path, "a b\ta\nno tab here\n").unwrap();
        let err = load_parallel_corpus(&CorpusSource::Tsv(path.clone()), TokenizeMode::Whitespace).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");

        fs::write(&path, "a\tb\tc\n").unwrap();
        assert!(load_parallel_corpus(&CorpusSource::Tsv(path.clone()), TokenizeMode::Whitespace).is_err());

        fs::write(&path, "a\t \n").unwrap();
        assert!(load_parallel_corpus(&CorpusSource::Tsv(path), TokenizeMode::Whitespace).is_err());
    }

    #[test]
    fn two_file_loading() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("news");
        let src = CorpusSource::two_file_prefix(&prefix);
        let CorpusSource::TwoFile { complex, simple } = &src else {
            unreachable!()
        };
        fs::write(complex, "a b\nc d\ne f\n").unwrap();
        fs::write(simple, "a\nc\ne\n").unwrap();
        let pairs = load_parallel_corpus(&src, TokenizeMode::Whitespace).unwrap();
        assert_eq!(pairs.iter().map(|p| p.id).collect::<Vec<_>>(), [0, 1, 2]);

        fs::write(simple, "a\nc\n").unwrap();
        let err = load_parallel_corpus(&src, TokenizeMode::Whitespace).unwrap_err();
        assert!(matches!(err, Error::Alignment { complex: 3, simple: 2 }));
    }

    #[test]
    fn split_and_domain_assignment() {
        let dir = tempfile::tempdir().unwrap();
        let mut pairs: Vec<_> = (0..12)
            .map(|i| SentencePair::new(i, toks("x y"), toks("x")).unwrap())
            .collect();
        assign_splits_by_id(&mut pairs);
        assert_eq!(pairs[0].split, Split::Test);
        assert_eq!(pairs[11].split, Split::Valid);
        assert_eq!(pairs[5].split, Split::Train);

        let path = dir.path().join("d.txt");
        fs::write(&path, "news\n\n".repeat(6)).unwrap();
        attach_domains(&mut pairs, &path).unwrap();
        assert_eq!(pairs[0].domain.as_deref(), Some("news"));
        assert_eq!(pairs[1].domain, None);
        fs::write(&path, "news\n").unwrap();
        assert!(attach_domains(&mut pairs, &path).is_err());
    }

    #[test]
    fn instance_records_carry_masks() {
        let pairs = vec![pair("a b c", "a c")];
        let recs = instance_records(&pairs);
        assert_eq!(recs[0].ref_mask.as_deref(), Some(&[0u8, 1, 0][..]));
        assert_eq!(recs[1].ref_mask, None);
        let mut buf = Vec::new();
        write_instances_jsonl(&pairs, &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let first: serde_json::Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
        for key in ["id", "side", "tokens", "label", "ref_mask", "domain"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }
}
