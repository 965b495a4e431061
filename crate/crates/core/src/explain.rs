//! Token-highlight explainers.
//!
//! Each explainer maps the tokens of a complex sentence to a
//! [`HighlightMask`] of the same length. Randomized explainers take an
//! explicit seed; the pipeline derives it per sentence (`seed ^ id`) so the
//! output does not depend on scheduling.

use std::collections::{BTreeSet, HashSet};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{Classifier, LinearModel};
use crate::corpus::{HighlightMask, Token};
use crate::error::{Error, Result};
use crate::features::{ngram_windows, Featurizer, Lexicon, SparseVector, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LexiconMode {
    /// Highlight every word listed in the lexicon.
    Presence,
    /// Highlight words rated at or above the threshold.
    #[default]
    Threshold,
}

impl FromStr for LexiconMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "presence" => Ok(LexiconMode::Presence),
            "threshold" => Ok(LexiconMode::Threshold),
            other => Err(Error::Config(format!("unknown lexicon mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainerConfig {
    /// Highlight budget for the top-feature and surrogate explainers.
    pub max_highlights: usize,
    pub lime_samples: usize,
    /// Kernel width over the normalized Hamming distance; `None` uses
    /// `0.75 * sqrt(n)`.
    pub lime_kernel_width: Option<f64>,
    /// Ridge penalty of the surrogate fit.
    pub lime_ridge: f64,
    pub lexicon_mode: LexiconMode,
    /// AoA years.
    pub lexicon_threshold: f64,
    pub seed: u64,
}

impl Default for ExplainerConfig {
    fn default() -> Self {
        ExplainerConfig {
            max_highlights: 10,
            lime_samples: 1000,
            lime_kernel_width: None,
            lime_ridge: 1.0,
            lexicon_mode: LexiconMode::Threshold,
            lexicon_threshold: 10.0,
            seed: 42,
        }
    }
}

impl ExplainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lime_samples == 0 {
            return Err(Error::InvalidArgument("lime_samples must be >= 1".into()));
        }
        if let Some(w) = self.lime_kernel_width {
            if w.is_nan() || w <= 0.0 {
                return Err(Error::InvalidArgument("kernel width must be > 0".into()));
            }
        }
        if self.lime_ridge.is_nan() || self.lime_ridge < 0.0 {
            return Err(Error::InvalidArgument("ridge penalty must be >= 0".into()));
        }
        Ok(())
    }
}

/// Dataset-specific highlight budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Newsela,
    WikiLarge,
    Biendata,
}

impl Preset {
    /// Number of top LR features highlighted.
    pub fn top_features_k(&self) -> usize {
        match self {
            Preset::Newsela => 200,
            Preset::WikiLarge => 20_000,
            Preset::Biendata => 200,
        }
    }

    /// Surrogate highlight budget when explaining LR.
    pub fn lime_k(&self) -> usize {
        match self {
            Preset::Newsela => 10,
            Preset::WikiLarge => 50,
            Preset::Biendata => 10,
        }
    }

    /// Budget used by `kind` under this preset.
    pub fn budget(&self, kind: ExplainerKind) -> Option<usize> {
        match kind {
            ExplainerKind::TopFeatures => Some(self.top_features_k()),
            ExplainerKind::Lime => Some(self.lime_k()),
            _ => None,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "newsela" => Ok(Preset::Newsela),
            "wikilarge" => Ok(Preset::WikiLarge),
            "biendata" => Ok(Preset::Biendata),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplainerKind {
    Random,
    Lexicon,
    TopFeatures,
    Lime,
    Shap,
    /// Copies the reference mask; an upper bound for sanity checks.
    Oracle,
    /// Highlights nothing.
    None,
}

impl ExplainerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExplainerKind::Random => "random",
            ExplainerKind::Lexicon => "lexicon",
            ExplainerKind::TopFeatures => "top-features",
            ExplainerKind::Lime => "lime",
            ExplainerKind::Shap => "shap",
            ExplainerKind::Oracle => "oracle",
            ExplainerKind::None => "none",
        }
    }
}

impl FromStr for ExplainerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(ExplainerKind::Random),
            "lexicon" | "aoa" => Ok(ExplainerKind::Lexicon),
            "top-features" | "lr-features" | "features" => Ok(ExplainerKind::TopFeatures),
            "lime" => Ok(ExplainerKind::Lime),
            "shap" => Ok(ExplainerKind::Shap),
            "oracle" | "reference" => Ok(ExplainerKind::Oracle),
            "none" => Ok(ExplainerKind::None),
            other => Err(Error::Config(format!("unknown explainer `{other}`"))),
        }
    }
}

/// Draws a highlight count uniformly from `0..=n`, then that many distinct
/// positions uniformly.
pub fn explain_random(tokens: &[Token], seed: u64) -> HighlightMask {
    let n = tokens.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.gen_range(0..=n);
    let mut bits = vec![false; n];
    for i in rand::seq::index::sample(&mut rng, n, k) {
        bits[i] = true;
    }
    HighlightMask::predicted(bits)
}

pub fn explain_lexicon(tokens: &[Token], lexicon: &Lexicon, config: &ExplainerConfig) -> HighlightMask {
    HighlightMask::predicted(
        tokens
            .iter()
            .map(|t| match (config.lexicon_mode, lexicon.rating(&t.norm)) {
                (LexiconMode::Presence, rating) => rating.is_some(),
                (LexiconMode::Threshold, Some(r)) => r >= config.lexicon_threshold,
                (LexiconMode::Threshold, None) => false,
            })
            .collect(),
    )
}

/// The global set of the `k` unigrams with the largest positive weights
/// (lower feature id first on equal weights).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopFeatures {
    pub keys: HashSet<String>,
}

impl TopFeatures {
    pub fn new(model: &LinearModel, vocab: &Vocabulary, k: usize) -> Self {
        let mut ranked: Vec<(usize, f64)> = vocab
            .entries
            .iter()
            .filter(|(key, _)| Vocabulary::is_unigram(key))
            .map(|(_, &id)| (id, model.weights[id]))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        if k > ranked.len() {
            log::warn!(
                "requested {k} top features but only {} unigrams have positive weight",
                ranked.len()
            );
        }
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let keys_by_id = vocab.keys_by_id();
        TopFeatures {
            keys: ranked
                .into_iter()
                .take(k)
                .map(|(id, _)| keys_by_id[id].to_owned())
                .collect(),
        }
    }

    pub fn mask(&self, tokens: &[Token]) -> HighlightMask {
        HighlightMask::predicted(tokens.iter().map(|t| self.keys.contains(&t.norm)).collect())
    }
}

pub fn explain_top_features(model: &LinearModel, featurizer: &Featurizer, tokens: &[Token], k: usize) -> HighlightMask {
    TopFeatures::new(model, &featurizer.vocab, k).mask(tokens)
}

/// Anything that can score an arbitrary token sequence with the probability
/// of label 1.
pub trait TokenScorer: Sync {
    fn score_tokens(&self, tokens: &[Token]) -> f64;
}

impl<F> TokenScorer for F
where
    F: Fn(&[Token]) -> f64 + Sync,
{
    fn score_tokens(&self, tokens: &[Token]) -> f64 {
        self(tokens)
    }
}

/// A trained classifier together with the featurizer it was trained on.
#[derive(Debug, Clone, Copy)]
pub struct ModelScorer<'a> {
    pub classifier: &'a Classifier,
    pub featurizer: &'a Featurizer,
}

impl<'a> ModelScorer<'a> {
    pub fn new(classifier: &'a Classifier, featurizer: &'a Featurizer) -> Result<Self> {
        classifier.check_fingerprint(featurizer)?;
        Ok(ModelScorer { classifier, featurizer })
    }
}

impl TokenScorer for ModelScorer<'_> {
    fn score_tokens(&self, tokens: &[Token]) -> f64 {
        self.classifier.predict_vector(&self.featurizer.featurize(tokens)).score
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    /// One coefficient per token position.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// True when all perturbation samples were identical.
    pub degenerate: bool,
}

/// Fits a locally weighted ridge surrogate around `tokens`.
///
/// Each sample keeps every position with probability 0.5; dropped tokens are
/// removed before scoring. Samples are weighted by
/// `exp(-d^2 / width^2)` with `d` the fraction of dropped positions.
pub fn lime_surrogate<S: TokenScorer + ?Sized>(
    scorer: &S,
    tokens: &[Token],
    config: &ExplainerConfig,
    seed: u64,
) -> Result<Surrogate> {
    config.validate()?;
    let n = tokens.len();
    if n == 0 {
        return Ok(Surrogate {
            coefficients: vec![],
            intercept: scorer.score_tokens(tokens),
            degenerate: true,
        });
    }
    let width = config.lime_kernel_width.unwrap_or(0.75 * (n as f64).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let m = config.lime_samples;
    let mut design = DMatrix::<f64>::zeros(m, n);
    let mut target = DVector::<f64>::zeros(m);
    let mut weight = DVector::<f64>::zeros(m);
    let mut kept = Vec::with_capacity(n);
    for s in 0..m {
        kept.clear();
        let mut dropped = 0usize;
        for (i, tok) in tokens.iter().enumerate() {
            if rng.gen_bool(0.5) {
                design[(s, i)] = 1.0;
                kept.push(tok.clone());
            } else {
                dropped += 1;
            }
        }
        let d = dropped as f64 / n as f64;
        weight[s] = (-(d * d) / (width * width)).exp();
        target[s] = scorer.score_tokens(&kept);
    }

    let first = design.row(0).clone_owned();
    if (1..m).all(|s| design.row(s) == first) {
        log::warn!("all {m} perturbation samples are identical; surrogate is undefined");
        return Ok(Surrogate {
            coefficients: vec![0.0; n],
            intercept: target.mean(),
            degenerate: true,
        });
    }

    // Weighted centering keeps the intercept out of the penalty.
    let total: f64 = weight.sum();
    let z_mean: DVector<f64> = design.tr_mul(&weight) / total;
    let y_mean = weight.dot(&target) / total;
    let mut centered = design.clone();
    for s in 0..m {
        let sw = weight[s].sqrt();
        for i in 0..n {
            centered[(s, i)] = (centered[(s, i)] - z_mean[i]) * sw;
        }
    }
    let y_centered = DVector::from_iterator(m, (0..m).map(|s| (target[s] - y_mean) * weight[s].sqrt()));

    let mut gram = centered.tr_mul(&centered);
    for i in 0..n {
        gram[(i, i)] += config.lime_ridge;
    }
    let rhs = centered.tr_mul(&y_centered);
    let beta = match gram.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or(Error::Undefined("singular surrogate system"))?,
    };
    let intercept = y_mean - beta.dot(&z_mean);
    Ok(Surrogate {
        coefficients: beta.iter().copied().collect(),
        intercept,
        degenerate: false,
    })
}

/// Indices of the up-to-`k` largest positive values, lower index first on
/// ties.
pub fn top_positive(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.0).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn explain_lime<S: TokenScorer + ?Sized>(
    scorer: &S,
    tokens: &[Token],
    config: &ExplainerConfig,
    seed: u64,
) -> Result<HighlightMask> {
    let surrogate = lime_surrogate(scorer, tokens, config, seed)?;
    let mut bits = vec![false; tokens.len()];
    if !surrogate.degenerate {
        for i in top_positive(&surrogate.coefficients, config.max_highlights) {
            bits[i] = true;
        }
    }
    Ok(HighlightMask::predicted(bits))
}

/// Mean feature vector of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub mean: Vec<f64>,
}

impl Background {
    pub fn zeros(dim: usize) -> Self {
        Background { mean: vec![0.0; dim] }
    }

    pub fn from_vectors<'a>(vectors: impl IntoIterator<Item = &'a SparseVector>, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut n = 0usize;
        for x in vectors {
            for (j, v) in x.iter() {
                mean[j] += v;
            }
            n += 1;
        }
        if n > 0 {
            mean.iter_mut().for_each(|m| *m /= n as f64);
        }
        Background { mean }
    }

    pub fn from_tokens<'a>(featurizer: &Featurizer, sentences: impl IntoIterator<Item = &'a [Token]>) -> Self {
        let vectors: Vec<SparseVector> = sentences.into_iter().map(|t| featurizer.featurize(t)).collect();
        Self::from_vectors(&vectors, featurizer.dim())
    }
}

/// Exact Shapley values of a linear model under feature independence:
/// `phi_j = w_j * (x_j - mu_j)`.
pub fn shap_values(model: &LinearModel, x: &SparseVector, background: &Background) -> Result<Vec<f64>> {
    if background.mean.len() != model.weights.len() {
        return Err(Error::LengthMismatch {
            expected: model.weights.len(),
            got: background.mean.len(),
        });
    }
    Ok(model
        .weights
        .iter()
        .zip(&background.mean)
        .enumerate()
        .map(|(j, (w, mu))| w * (x.get(j) - mu))
        .collect())
}

/// Sums, for every token, the attributions of the distinct in-vocabulary
/// n-gram features covering it.
pub fn token_attributions(vocab: &Vocabulary, tokens: &[Token], phi: &[f64]) -> Vec<f64> {
    let mut covering: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); tokens.len()];
    for (start, n, key) in ngram_windows(tokens, vocab.max_n) {
        if let Some(id) = vocab.id(&key) {
            for set in &mut covering[start..start + n] {
                set.insert(id);
            }
        }
    }
    covering.iter().map(|ids| ids.iter().map(|&j| phi[j]).sum()).collect()
}

/// Highlights every token with positive linear-Shapley attribution.
pub fn explain_shap_linear(
    model: &LinearModel,
    featurizer: &Featurizer,
    tokens: &[Token],
    background: &Background,
) -> Result<HighlightMask> {
    let phi = shap_values(model, &featurizer.featurize(tokens), background)?;
    Ok(HighlightMask::predicted(
        token_attributions(&featurizer.vocab, tokens, &phi)
            .into_iter()
            .map(|a| a > 0.0)
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{LrHyper, TrainingMeta};
    use crate::corpus::{tokenize, LabeledInstance, Origin, Side, Split, TokenizeMode};
    use crate::features::build_vocabulary;

    fn toks(s: &str) -> Vec<Token> {
        tokenize(s, TokenizeMode::Whitespace)
    }

    fn featurizer(texts: &[&str], max_n: usize) -> Featurizer {
        let inst: Vec<_> = texts
            .iter()
            .map(|t| LabeledInstance {
                tokens: toks(t),
                label: 0,
                origin: Origin {
                    pair_id: 0,
                    side: Side::Complex,
                },
                split: Split::Train,
                domain: None,
            })
            .collect();
        Featurizer::ngrams_only(build_vocabulary(&inst, max_n, 1).unwrap())
    }

    fn model_with(f: &Featurizer, weights: &[(&str, f64)], bias: f64) -> LinearModel {
        let mut w = vec![0.0; f.dim()];
        for (k, v) in weights {
            w[f.vocab.id(k).unwrap()] = *v;
        }
        LinearModel {
            weights: w,
            bias,
            vocab_fingerprint: f.fingerprint(),
            hyper: LrHyper::default(),
            meta: TrainingMeta::default(),
        }
    }

    #[test]
    fn random_is_seeded_and_sized() {
        let t = toks("a b c d e f g");
        assert_eq!(explain_random(&t, 9), explain_random(&t, 9));
        for seed in 0..50 {
            assert_eq!(explain_random(&t, seed).len(), t.len());
        }
        assert!(explain_random(&[], 1).is_empty());
    }

    #[test]
    fn lexicon_modes() {
        let lex = Lexicon::from_pairs([("ubiquitous", 12.3), ("dog", 3.0)]);
        let t = toks("the ubiquitous dog");
        let cfg = ExplainerConfig::default();
        assert_eq!(explain_lexicon(&t, &lex, &cfg).bits, [false, true, false]);
        let cfg = ExplainerConfig {
            lexicon_mode: LexiconMode::Presence,
            ..cfg
        };
        assert_eq!(explain_lexicon(&t, &lex, &cfg).bits, [false, true, true]);
    }

    #[test]
    fn top_features_rank_and_monotonicity() {
        let f = featurizer(&["a b c d"], 1);
        let m = model_with(&f, &[("a", 3.0), ("b", 1.0), ("c", 2.0), ("d", -1.0)], 0.0);
        let t = toks("a b c d zzz");
        assert_eq!(
            explain_top_features(&m, &f, &t, 1).bits,
            [true, false, false, false, false]
        );
        assert_eq!(
            explain_top_features(&m, &f, &t, 2).bits,
            [true, false, true, false, false]
        );
        // clipped to the 3 positive unigrams
        assert_eq!(
            explain_top_features(&m, &f, &t, 10).bits,
            [true, true, true, false, false]
        );
        assert_eq!(explain_top_features(&m, &f, &t, 0).count(), 0);
    }

    #[test]
    fn top_features_ignore_bigrams() {
        let f = featurizer(&["a b"], 2);
        let m = model_with(&f, &[("a b", 9.0), ("b", 1.0)], 0.0);
        assert_eq!(explain_top_features(&m, &f, &toks("a b"), 1).bits, [false, true]);
    }

    #[test]
    fn lime_rejects_zero_samples() {
        let cfg = ExplainerConfig {
            lime_samples: 0,
            ..ExplainerConfig::default()
        };
        let scorer = |_: &[Token]| 0.5;
        assert!(explain_lime(&scorer, &toks("a"), &cfg, 0).is_err());
    }

    #[test]
    fn lime_degenerate_samples() {
        let cfg = ExplainerConfig {
            lime_samples: 1,
            ..ExplainerConfig::default()
        };
        let scorer = |t: &[Token]| t.len() as f64;
        let mask = explain_lime(&scorer, &toks("a b"), &cfg, 3).unwrap();
        assert_eq!(mask.count(), 0);
        assert!(lime_surrogate(&scorer, &toks("a b"), &cfg, 3).unwrap().degenerate);
    }

    #[test]
    fn lime_single_token() {
        let cfg = ExplainerConfig::default();
        let up = |t: &[Token]| if t.is_empty() { 0.2 } else { 0.9 };
        let down = |t: &[Token]| if t.is_empty() { 0.9 } else { 0.2 };
        let t = toks("word");
        let s = lime_surrogate(&up, &t, &cfg, 1).unwrap();
        assert!(s.coefficients[0] > 0.0);
        assert_eq!(explain_lime(&up, &t, &cfg, 1).unwrap().bits, [true]);
        assert_eq!(explain_lime(&down, &t, &cfg, 1).unwrap().bits, [false]);
    }

    #[test]
    fn lime_recovers_dominant_token() {
        let f = featurizer(&["the ubiquitous cat sat on a mat"], 1);
        let m = Classifier::Lr(model_with(&f, &[("ubiquitous", 4.0), ("cat", 0.3)], -1.0));
        let scorer = ModelScorer::new(&m, &f).unwrap();
        let cfg = ExplainerConfig {
            max_highlights: 1,
            ..ExplainerConfig::default()
        };
        let mask = explain_lime(&scorer, &toks("the ubiquitous cat sat on a mat"), &cfg, 5).unwrap();
        assert_eq!(mask.bits, [false, true, false, false, false, false, false]);
    }

    #[test]
    fn top_positive_ties() {
        assert_eq!(top_positive(&[1.0, 2.0, 2.0, -1.0, 0.0], 2), [1, 2]);
        assert_eq!(top_positive(&[1.0, 2.0, 2.0, -1.0, 0.0], 10), [1, 2, 0]);
    }

    #[test]
    fn shap_identities() {
        let f = featurizer(&["a b c"], 1);
        let m = model_with(&f, &[("a", 1.5), ("b", -2.0), ("c", 0.5)], 0.3);
        let x = f.featurize(&toks("a b"));
        let phi = shap_values(&m, &x, &Background::zeros(f.dim())).unwrap();
        for (j, (p, w)) in phi.iter().zip(&m.weights).enumerate() {
            assert_eq!(*p, w * x.get(j));
        }
        let bg = Background::from_tokens(&f, [toks("a").as_slice(), toks("c c").as_slice()]);
        let phi = shap_values(&m, &x, &bg).unwrap();
        let bg_sparse = {
            let mut v = SparseVector::new();
            for (j, &mu) in bg.mean.iter().enumerate() {
                v.add(j, mu);
            }
            v
        };
        let lhs: f64 = phi.iter().sum();
        let rhs = m.margin(&x) - m.margin(&bg_sparse);
        assert!((lhs - rhs).abs() < 1e-12);

        assert!(shap_values(&m, &x, &Background::zeros(2)).is_err());
    }

    #[test]
    fn shap_highlights_positive_attribution() {
        let f = featurizer(&["a b c"], 2);
        let m = model_with(&f, &[("a", 1.0), ("b", -2.0), ("a b", 0.5), ("c", 0.1)], 0.0);
        let mask = explain_shap_linear(&m, &f, &toks("a b c"), &Background::zeros(f.dim())).unwrap();
        // a: 1 + 0.5, b: -2 + 0.5 + 0 ("b c" has weight 0), c: 0.1 + 0
        assert_eq!(mask.bits, [true, false, true]);
    }

    #[test]
    fn presets() {
        assert_eq!(Preset::Newsela.top_features_k(), 200);
        assert_eq!(Preset::WikiLarge.top_features_k(), 20_000);
        assert_eq!(Preset::Biendata.lime_k(), 10);
        assert_eq!(Preset::WikiLarge.budget(ExplainerKind::Lime), Some(50));
        assert_eq!("wikilarge".parse::<Preset>().unwrap(), Preset::WikiLarge);
    }
}
