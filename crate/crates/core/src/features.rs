//! Sparse feature extraction: n-gram counts and lexical statistics backed by
//! an age-of-acquisition lexicon.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{LabeledInstance, Token};
use crate::error::{Error, Result};

/// Joins the norms of an n-gram. Tokens never contain whitespace, so a single
/// space cannot collide with token content.
pub const NGRAM_SEPARATOR: &str = " ";

/// Number of reserved lexical feature ids appended after the n-gram block.
pub const LEXICAL_DIM: usize = 8;

/// Offsets inside the lexical block.
pub mod lexical {
    pub const TOKEN_COUNT: usize = 0;
    pub const MEAN_CHARS: usize = 1;
    pub const MAX_CHARS: usize = 2;
    pub const MEAN_AOA: usize = 3;
    pub const MAX_AOA: usize = 4;
    pub const HARD_WORDS: usize = 5;
    pub const COVERAGE: usize = 6;
    pub const LONG_WORDS: usize = 7;

    pub const NAMES: [&str; super::LEXICAL_DIM] = [
        "lex:token_count",
        "lex:mean_chars",
        "lex:max_chars",
        "lex:mean_aoa",
        "lex:max_aoa",
        "lex:hard_words",
        "lex:coverage",
        "lex:long_words",
    ];
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub ratings: HashMap<String, f64>,
    /// Rows dropped while loading: rating missing or not a number.
    #[serde(default)]
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconColumns {
    pub word: String,
    pub rating: String,
}

impl Default for LexiconColumns {
    fn default() -> Self {
        LexiconColumns {
            word: "Word".into(),
            rating: "Rating.Mean".into(),
        }
    }
}

impl Lexicon {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: AsRef<str>,
    {
        let mut ratings = HashMap::new();
        let mut skipped_rows = 0;
        for (word, rating) in pairs {
            if !rating.is_finite() || rating < 0.0 {
                skipped_rows += 1;
                continue;
            }
            ratings.entry(word.as_ref().to_lowercase()).or_insert(rating);
        }
        Lexicon { ratings, skipped_rows }
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn rating(&self, norm: &str) -> Option<f64> {
        self.ratings.get(norm).copied()
    }
}

/// Loads an AoA CSV. Words are lowercased, the first rating of a duplicated
/// word wins, and rows whose rating is not a finite non-negative number are
/// skipped and counted in [`Lexicon::skipped_rows`].
pub fn load_aoa_lexicon(path: &Path, columns: &LexiconColumns) -> Result<Lexicon> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
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
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let word_col = find(&columns.word)?;
    let rating_col = find(&columns.rating)?;

    let mut ratings = HashMap::new();
    let mut skipped_rows = 0;
    for record in reader.records() {
        let record = record?;
        let word = record.get(word_col).map(str::trim).unwrap_or("");
        let rating = record
            .get(rating_col)
            .and_then(|r| r.trim().parse::<f64>().ok())
            .filter(|r| r.is_finite() && *r >= 0.0);
        match rating {
            Some(r) if !word.is_empty() => {
                ratings.entry(word.to_lowercase()).or_insert(r);
            }
            _ => skipped_rows += 1,
        }
    }
    if skipped_rows > 0 {
        log::warn!("{}: skipped {skipped_rows} unparseable rows", path.display());
    }
    Ok(Lexicon { ratings, skipped_rows })
}

/// Iterates over every n-gram window of `tokens` with `1 <= n <= max_n` as
/// `(start, n, key)`.
pub fn ngram_windows(tokens: &[Token], max_n: usize) -> impl Iterator<Item = (usize, usize, String)> + '_ {
    (1..=max_n).flat_map(move |n| {
        (0..tokens.len().saturating_sub(n - 1)).map(move |start| {
            let key = tokens[start..start + n]
                .iter()
                .map(|t| t.norm.as_str())
                .collect::<Vec<_>>()
                .join(NGRAM_SEPARATOR);
            (start, n, key)
        })
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub entries: BTreeMap<String, usize>,
    pub max_n: usize,
    pub min_df: usize,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, key: &str) -> Option<usize> {
        self.entries.get(key).copied()
    }

    /// Keys indexed by feature id.
    pub fn keys_by_id(&self) -> Vec<&str> {
        let mut keys = vec![""; self.entries.len()];
        for (k, &id) in &self.entries {
            keys[id] = k;
        }
        keys
    }

    pub fn is_unigram(key: &str) -> bool {
        !key.contains(NGRAM_SEPARATOR)
    }

    /// Hex SHA-256 prefix over the settings and the ordered key list.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("max_n={};min_df={};", self.max_n, self.min_df).as_bytes());
        for key in self.entries.keys() {
            hasher.update(key.as_bytes());
            hasher.update([0u8]);
        }
        hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Collects every n-gram (up to `max_n`) whose document frequency over
/// `instances` is at least `min_df`. Ids follow lexicographic key order.
pub fn build_vocabulary(instances: &[LabeledInstance], max_n: usize, min_df: usize) -> Result<Vocabulary> {
    if instances.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if max_n == 0 || min_df == 0 {
        return Err(Error::InvalidArgument("max_n and min_df must be >= 1".into()));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    for inst in instances {
        let unique: BTreeSet<String> = ngram_windows(&inst.tokens, max_n).map(|(_, _, k)| k).collect();
        for key in unique {
            *df.entry(key).or_default() += 1;
        }
    }
    let kept: BTreeSet<String> = df
        .into_iter()
        .filter(|&(_, count)| count >= min_df)
        .map(|(k, _)| k)
        .collect();
    let entries = kept.into_iter().enumerate().map(|(id, k)| (k, id)).collect();
    Ok(Vocabulary { entries, max_n, min_df })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub pairs: BTreeMap<usize, f64>,
}

impl SparseVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `value` to feature `id`, removing the entry if it becomes zero.
    pub fn add(&mut self, id: usize, value: f64) {
        let v = self.pairs.entry(id).or_insert(0.0);
        *v += value;
        if *v == 0.0 {
            self.pairs.remove(&id);
        }
    }

    pub fn get(&self, id: usize) -> f64 {
        self.pairs.get(&id).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.pairs.iter().map(|(&k, &v)| (k, v))
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(j, v)| dense[j] * v).sum()
    }

    pub fn extend(&mut self, other: &SparseVector) {
        for (j, v) in other.iter() {
            self.add(j, v);
        }
    }
}

pub fn featurize_ngrams(tokens: &[Token], vocab: &Vocabulary) -> SparseVector {
    let mut out = SparseVector::new();
    for (_, _, key) in ngram_windows(tokens, vocab.max_n) {
        if let Some(id) = vocab.id(&key) {
            out.add(id, 1.0);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexicalConfig {
    /// AoA rating (years) from which a word counts as hard.
    pub hard_threshold: f64,
    /// Character length from which a token counts as long.
    pub long_token_chars: usize,
}

impl Default for LexicalConfig {
    fn default() -> Self {
        LexicalConfig {
            hard_threshold: 10.0,
            long_token_chars: 7,
        }
    }
}

/// Lexical statistics placed at ids `offset..offset + LEXICAL_DIM`. AoA
/// aggregates only consider tokens covered by the lexicon and are 0 when
/// nothing is covered.
pub fn featurize_lexical(tokens: &[Token], lexicon: &Lexicon, config: &LexicalConfig, offset: usize) -> SparseVector {
    let values = lexical_values(tokens, lexicon, config);
    let mut out = SparseVector::new();
    for (i, v) in values.into_iter().enumerate() {
        out.add(offset + i, v);
    }
    out
}

pub fn lexical_values(tokens: &[Token], lexicon: &Lexicon, config: &LexicalConfig) -> [f64; LEXICAL_DIM] {
    let mut values = [0.0; LEXICAL_DIM];
    let n = tokens.len();
    if n == 0 {
        return values;
    }
    let lengths: Vec<usize> = tokens.iter().map(|t| t.surface.chars().count()).collect();
    let covered: Vec<f64> = tokens.iter().filter_map(|t| lexicon.rating(&t.norm)).collect();

    values[lexical::TOKEN_COUNT] = n as f64;
    values[lexical::MEAN_CHARS] = lengths.iter().sum::<usize>() as f64 / n as f64;
    values[lexical::MAX_CHARS] = lengths.iter().copied().max().unwrap_or(0) as f64;
    if !covered.is_empty() {
        values[lexical::MEAN_AOA] = covered.iter().sum::<f64>() / covered.len() as f64;
        values[lexical::MAX_AOA] = covered.iter().copied().fold(f64::MIN, f64::max);
    }
    values[lexical::HARD_WORDS] = covered.iter().filter(|&&r| r >= config.hard_threshold).count() as f64;
    values[lexical::COVERAGE] = covered.len() as f64 / n as f64;
    values[lexical::LONG_WORDS] = lengths.iter().filter(|&&l| l >= config.long_token_chars).count() as f64;
    values
}

/// Feature map shared by training, prediction and explanation: n-gram ids
/// first, then the reserved lexical block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub vocab: Vocabulary,
    /// `None` leaves the lexical block empty.
    pub lexicon: Option<Lexicon>,
    pub lexical: LexicalConfig,
}

impl Featurizer {
    pub fn ngrams_only(vocab: Vocabulary) -> Self {
        Featurizer {
            vocab,
            lexicon: None,
            lexical: LexicalConfig::default(),
        }
    }

    pub fn with_lexicon(vocab: Vocabulary, lexicon: Lexicon) -> Self {
        Featurizer {
            vocab,
            lexicon: Some(lexicon),
            lexical: LexicalConfig::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.vocab.len() + LEXICAL_DIM
    }

    pub fn lexical_offset(&self) -> usize {
        self.vocab.len()
    }

    pub fn featurize(&self, tokens: &[Token]) -> SparseVector {
        let mut x = featurize_ngrams(tokens, &self.vocab);
        if let Some(lexicon) = &self.lexicon {
            x.extend(&featurize_lexical(
                tokens,
                lexicon,
                &self.lexical,
                self.lexical_offset(),
            ));
        }
        x
    }

    pub fn fingerprint(&self) -> String {
        self.vocab.fingerprint()
    }

    pub fn feature_name(&self, id: usize) -> Option<String> {
        if id < self.vocab.len() {
            self.vocab.keys_by_id().get(id).map(|s| s.to_string())
        } else {
            lexical::NAMES.get(id - self.vocab.len()).map(|s| s.to_string())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Origin, Side, Split, TokenizeMode};

    fn toks(s: &str) -> Vec<Token> {
        tokenize(s, TokenizeMode::Whitespace)
    }

    fn inst(s: &str) -> LabeledInstance {
        LabeledInstance {
            tokens: toks(s),
            label: 0,
            origin: Origin {
                pair_id: 0,
                side: Side::Complex,
            },
            split: Split::Train,
            domain: None,
        }
    }

    #[test]
    fn vocabulary_keys_and_ids() {
        let v = build_vocabulary(&[inst("a b")], 2, 1).unwrap();
        let keys: Vec<_> = v.entries.keys().cloned().collect();
        assert_eq!(keys, ["a", "a b", "b"]);
        assert_eq!(v.entries.values().copied().collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(v.keys_by_id(), ["a", "a b", "b"]);
    }

    #[test]
    fn vocabulary_min_df_and_determinism() {
        let data = [inst("a b"), inst("a c"), inst("a a")];
        let v = build_vocabulary(&data, 2, 2).unwrap();
        assert_eq!(v.entries.keys().collect::<Vec<_>>(), ["a"]);
        let v1 = build_vocabulary(&data, 3, 1).unwrap();
        let v2 = build_vocabulary(&data, 3, 1).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1.fingerprint(), v2.fingerprint());
        assert_ne!(v1.fingerprint(), v.fingerprint());
    }

    #[test]
    fn vocabulary_errors() {
        assert!(matches!(build_vocabulary(&[], 1, 1), Err(Error::Empty(_))));
        assert!(build_vocabulary(&[inst("a")], 0, 1).is_err());
        assert!(build_vocabulary(&[inst("a")], 1, 0).is_err());
    }

    #[test]
    fn ngram_counts() {
        let v = build_vocabulary(&[inst("a b")], 2, 1).unwrap();
        let x = featurize_ngrams(&toks("a b"), &v);
        assert_eq!(x.iter().collect::<Vec<_>>(), [(0, 1.0), (1, 1.0), (2, 1.0)]);
        assert!(featurize_ngrams(&toks("z"), &v).is_empty());
        let x = featurize_ngrams(&toks("a a"), &v);
        assert_eq!(x.iter().collect::<Vec<_>>(), [(0, 2.0)]);
    }

    #[test]
    fn lexical_features() {
        let lex = Lexicon::from_pairs([("dog", 3.5)]);
        let cfg = LexicalConfig::default();
        let v = lexical_values(&toks("dog"), &lex, &cfg);
        assert_eq!(v[lexical::MEAN_AOA], 3.5);
        assert_eq!(v[lexical::MAX_AOA], 3.5);
        assert_eq!(v[lexical::COVERAGE], 1.0);

        let v = lexical_values(&toks("a bb ccc"), &Lexicon::default(), &cfg);
        assert_eq!(v[lexical::TOKEN_COUNT], 3.0);
        assert_eq!(v[lexical::MEAN_CHARS], 2.0);
        assert_eq!(v[lexical::MAX_CHARS], 3.0);
        assert_eq!(v[lexical::MEAN_AOA], 0.0);
        assert_eq!(v[lexical::COVERAGE], 0.0);

        let lex = Lexicon::from_pairs([("ubiquitous", 12.3), ("the", 3.0)]);
        let v = lexical_values(&toks("The ubiquitous cat"), &lex, &cfg);
        assert_eq!(v[lexical::HARD_WORDS], 1.0);
        assert_eq!(v[lexical::LONG_WORDS], 1.0);
        assert!((v[lexical::COVERAGE] - 2.0 / 3.0).abs() < 1e-15);

        let x = featurize_lexical(&toks("a bb ccc"), &Lexicon::default(), &cfg, 10);
        assert!(x.iter().all(|(id, v)| (10..18).contains(&id) && v != 0.0));
    }

    #[test]
    fn lexicon_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aoa.csv");
        std::fs::write(&path, "Word,Rating.Mean\nDog,3.5\ndog,9\ncat,NA\nfish,4\n").unwrap();
        let lex = load_aoa_lexicon(&path, &LexiconColumns::default()).unwrap();
        assert_eq!(lex.rating("dog"), Some(3.5));
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.skipped_rows, 1);

        let cols = LexiconColumns {
            word: "Word".into(),
            rating: "AoA".into(),
        };
        assert!(matches!(load_aoa_lexicon(&path, &cols), Err(Error::MissingColumn(_))));
        assert!(matches!(
            load_aoa_lexicon(&dir.path().join("missing.csv"), &LexiconColumns::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn featurizer_layout() {
        let v = build_vocabulary(&[inst("a b")], 1, 1).unwrap();
        let f = Featurizer::with_lexicon(v, Lexicon::from_pairs([("a", 2.0)]));
        assert_eq!(f.dim(), 2 + LEXICAL_DIM);
        let x = f.featurize(&toks("a q"));
        assert_eq!(x.get(0), 1.0);
        assert_eq!(x.get(f.lexical_offset() + lexical::TOKEN_COUNT), 2.0);
        assert_eq!(f.feature_name(0).as_deref(), Some("a"));
        assert_eq!(f.feature_name(2).as_deref(), Some("lex:token_count"));
    }
}
