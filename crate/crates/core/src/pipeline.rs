//! End-to-end evaluation: ingest, train, explain, score, aggregate.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    compare_accuracy_ztest, confusion, train_logistic_regression, train_naive_bayes, tune_logistic_regression,
    Classifier, Confusion, LrGrid, LrHyper, ZTest,
};
use crate::corpus::{
    assign_splits_by_id, attach_domains, derive_labels, load_parallel_corpus, CorpusFormat, CorpusSource,
    HighlightMask, LabeledInstance, Membership, SentencePair, Split, TokenizeMode,
};
use crate::error::{Error, Result};
use crate::explain::{
    explain_lexicon, explain_lime, explain_random, explain_shap_linear, Background, ExplainerConfig, ExplainerKind,
    LexiconMode, ModelScorer, Preset, TopFeatures,
};
use crate::features::{build_vocabulary, load_aoa_lexicon, Featurizer, Lexicon, LexiconColumns, Vocabulary};
use crate::metrics::{
    correlate, macro_average, score_sentence, Aggregate, CorrelationMethod, SentenceScore, UndefinedPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    #[default]
    Lr,
    Nb,
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(ClassifierKind::Lr),
            "nb" => Ok(ClassifierKind::Nb),
            other => Err(Error::Config(format!("unknown classifier `{other}`"))),
        }
    }
}

/// Every setting of a run. Parsed from a flat `key = value` file; later
/// [`RunConfig::set`] calls (command-line flags) override earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    /// Single corpus split deterministically by pair id.
    pub corpus: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: CorpusFormat,
    /// Domain tags for `corpus`, one per line.
    pub domains: Option<PathBuf>,
    pub train_domains: Option<PathBuf>,
    pub valid_domains: Option<PathBuf>,
    pub test_domains: Option<PathBuf>,
    pub tokenize: TokenizeMode,
    pub membership: Membership,

    pub max_n: usize,
    pub min_df: usize,
    pub lexicon: Option<PathBuf>,
    pub lexicon_word_column: String,
    pub lexicon_rating_column: String,
    /// Append the lexical feature block to the n-gram features.
    pub lexical_features: bool,

    pub classifier: ClassifierKind,
    /// Load a trained model instead of training one.
    pub model: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub nb_alpha: f64,
    /// Fixed LR hyperparameters; when either is unset the default grid is searched.
    pub learning_rate: Option<f64>,
    pub l2: Option<f64>,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Second classifier to compare against with a z-test.
    pub compare: Option<ClassifierKind>,

    pub explainer: ExplainerKind,
    pub preset: Option<Preset>,
    pub max_highlights: Option<usize>,
    pub lime_samples: usize,
    pub lime_kernel_width: Option<f64>,
    pub lime_ridge: f64,
    pub lexicon_mode: LexiconMode,
    pub lexicon_threshold: f64,

    pub undefined: UndefinedPolicy,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let explainer = ExplainerConfig::default();
        RunConfig {
            dataset: "corpus".into(),
            corpus: None,
            train: None,
            valid: None,
            test: None,
            format: CorpusFormat::Tsv,
            domains: None,
            train_domains: None,
            valid_domains: None,
            test_domains: None,
            tokenize: TokenizeMode::Whitespace,
            membership: Membership::CaseInsensitive,
            max_n: 3,
            min_df: 2,
            lexicon: None,
            lexicon_word_column: LexiconColumns::default().word,
            lexicon_rating_column: LexiconColumns::default().rating,
            lexical_features: false,
            classifier: ClassifierKind::Lr,
            model: None,
            vocab: None,
            nb_alpha: 1.0,
            learning_rate: None,
            l2: None,
            epochs: 50,
            patience: 5,
            batch_size: 32,
            compare: None,
            explainer: ExplainerKind::Lime,
            preset: None,
            max_highlights: None,
            lime_samples: explainer.lime_samples,
            lime_kernel_width: None,
            lime_ridge: explainer.lime_ridge,
            lexicon_mode: explainer.lexicon_mode,
            lexicon_threshold: explainer.lexicon_threshold,
            undefined: UndefinedPolicy::Exclude,
            seed: 42,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn optional<T, F: FnOnce(&str) -> Result<T>>(value: &str, f: F) -> Result<Option<T>> {
    match value {
        "" | "none" => Ok(None),
        v => f(v).map(Some),
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = |v: &str| Ok(PathBuf::from(v));
        match key.replace('-', "_").as_str() {
            "dataset" => self.dataset = value.to_owned(),
            "corpus" => self.corpus = optional(value, path)?,
            "train" => self.train = optional(value, path)?,
            "valid" => self.valid = optional(value, path)?,
            "test" => self.test = optional(value, path)?,
            "format" => self.format = parse(key, value)?,
            "domains" => self.domains = optional(value, path)?,
            "train_domains" => self.train_domains = optional(value, path)?,
            "valid_domains" => self.valid_domains = optional(value, path)?,
            "test_domains" => self.test_domains = optional(value, path)?,
            "tokenize" => self.tokenize = value.parse()?,
            "membership" => {
                self.membership = match value {
                    "case-insensitive" => Membership::CaseInsensitive,
                    "case-sensitive" => Membership::CaseSensitive,
                    other => return Err(Error::Config(format!("unknown membership rule `{other}`"))),
                }
            }
            "max_n" => self.max_n = parse(key, value)?,
            "min_df" => self.min_df = parse(key, value)?,
            "lexicon" => self.lexicon = optional(value, path)?,
            "lexicon_word_column" => self.lexicon_word_column = value.to_owned(),
            "lexicon_rating_column" => self.lexicon_rating_column = value.to_owned(),
            "lexical_features" => self.lexical_features = parse_bool(key, value)?,
            "classifier" => self.classifier = value.parse()?,
            "model" => self.model = optional(value, path)?,
            "vocab" => self.vocab = optional(value, path)?,
            "nb_alpha" => self.nb_alpha = parse(key, value)?,
            "learning_rate" => self.learning_rate = optional(value, |v| parse(key, v))?,
            "l2" => self.l2 = optional(value, |v| parse(key, v))?,
            "epochs" => self.epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "compare" => self.compare = optional(value, |v| v.parse())?,
            "explainer" => self.explainer = value.parse()?,
            "preset" => self.preset = optional(value, |v| v.parse())?,
            "max_highlights" => self.max_highlights = optional(value, |v| parse(key, v))?,
            "lime_samples" => self.lime_samples = parse(key, value)?,
            "lime_kernel_width" => self.lime_kernel_width = optional(value, |v| parse(key, v))?,
            "lime_ridge" => self.lime_ridge = parse(key, value)?,
            "lexicon_mode" => self.lexicon_mode = value.parse()?,
            "lexicon_threshold" => self.lexicon_threshold = parse(key, value)?,
            "undefined" => self.undefined = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn sources(&self) -> Vec<(Option<Split>, CorpusSource, Option<&PathBuf>)> {
        let source = |p: &PathBuf| match self.format {
            CorpusFormat::Tsv => CorpusSource::Tsv(p.clone()),
            CorpusFormat::TwoFile => CorpusSource::two_file_prefix(p),
        };
        if let Some(corpus) = &self.corpus {
            return vec![(None, source(corpus), self.domains.as_ref())];
        }
        [
            (Split::Train, &self.train, &self.train_domains),
            (Split::Valid, &self.valid, &self.valid_domains),
            (Split::Test, &self.test, &self.test_domains),
        ]
        .into_iter()
        .filter_map(|(split, p, d)| p.as_ref().map(|p| (Some(split), source(p), d.as_ref())))
        .collect()
    }

    /// Checks internal consistency and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        if self.corpus.is_some() && (self.train.is_some() || self.valid.is_some() || self.test.is_some()) {
            return Err(Error::Config(
                "set either `corpus` or `train`/`valid`/`test`, not both".into(),
            ));
        }
        if self.corpus.is_none() && (self.train.is_none() || self.test.is_none()) {
            return Err(Error::Config(
                "a corpus is required (`corpus`, or `train` and `test`)".into(),
            ));
        }
        let mut inputs: Vec<PathBuf> = self
            .sources()
            .iter()
            .flat_map(|(_, src, d)| {
                src.paths()
                    .into_iter()
                    .map(Path::to_path_buf)
                    .chain(d.map(|d| d.to_path_buf()))
                    .collect::<Vec<_>>()
            })
            .collect();
        inputs.extend(self.lexicon.iter().cloned());
        inputs.extend(self.model.iter().cloned());
        inputs.extend(self.vocab.iter().cloned());
        for p in inputs {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.model.is_some() != self.vocab.is_some() {
            return Err(Error::Config("`model` and `vocab` must be given together".into()));
        }
        if self.max_n == 0 || self.min_df == 0 {
            return Err(Error::Config("max_n and min_df must be >= 1".into()));
        }
        if self.lexical_features && self.lexicon.is_none() {
            return Err(Error::Config("lexical_features requires `lexicon`".into()));
        }
        if self.explainer == ExplainerKind::Lexicon && self.lexicon.is_none() {
            return Err(Error::Config("the lexicon explainer requires `lexicon`".into()));
        }
        if matches!(self.explainer, ExplainerKind::TopFeatures | ExplainerKind::Shap)
            && self.classifier != ClassifierKind::Lr
        {
            return Err(Error::Config(format!(
                "the {} explainer needs a logistic regression classifier",
                self.explainer.name()
            )));
        }
        self.explainer_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Highlight budget: explicit setting, then preset, then per-explainer default.
    pub fn budget(&self) -> usize {
        self.max_highlights
            .or_else(|| self.preset.and_then(|p| p.budget(self.explainer)))
            .unwrap_or(match self.explainer {
                ExplainerKind::TopFeatures => Preset::Newsela.top_features_k(),
                _ => Preset::Newsela.lime_k(),
            })
    }

    pub fn explainer_config(&self) -> ExplainerConfig {
        ExplainerConfig {
            max_highlights: self.budget(),
            lime_samples: self.lime_samples,
            lime_kernel_width: self.lime_kernel_width,
            lime_ridge: self.lime_ridge,
            lexicon_mode: self.lexicon_mode,
            lexicon_threshold: self.lexicon_threshold,
            seed: self.seed,
        }
    }

    pub fn lexicon_columns(&self) -> LexiconColumns {
        LexiconColumns {
            word: self.lexicon_word_column.clone(),
            rating: self.lexicon_rating_column.clone(),
        }
    }
}

/// Loads every configured corpus file, assigns splits and domains, and
/// numbers pairs consecutively across files.
pub fn load_corpus(cfg: &RunConfig) -> Result<Vec<SentencePair>> {
    let mut all = Vec::new();
    for (split, source, domains) in cfg.sources() {
        let mut pairs = load_parallel_corpus(&source, cfg.tokenize)?;
        if let Some(d) = domains {
            attach_domains(&mut pairs, d)?;
        }
        match split {
            Some(split) => pairs.iter_mut().for_each(|p| p.split = split),
            None => assign_splits_by_id(&mut pairs),
        }
        let offset = all.len();
        for mut p in pairs {
            p.id += offset;
            if cfg.membership != Membership::default() {
                p.set_membership(cfg.membership);
            }
            all.push(p);
        }
    }
    Ok(all)
}

pub fn split_instances(instances: Vec<LabeledInstance>) -> HashMap<Split, Vec<LabeledInstance>> {
    let mut out: HashMap<Split, Vec<LabeledInstance>> = HashMap::new();
    for inst in instances {
        out.entry(inst.split).or_default().push(inst);
    }
    out
}

pub fn load_lexicon(cfg: &RunConfig) -> Result<Option<Lexicon>> {
    cfg.lexicon
        .as_ref()
        .map(|p| load_aoa_lexicon(p, &cfg.lexicon_columns()))
        .transpose()
}

/// Serialized model: the classifier plus what is needed to rebuild its
/// featurizer from a vocabulary dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub classifier: Classifier,
    pub max_n: usize,
    pub min_df: usize,
    pub lexical_features: bool,
    pub seed: u64,
}

impl ModelFile {
    pub fn featurizer(&self, vocab: BTreeMap<String, usize>, lexicon: Option<Lexicon>) -> Result<Featurizer> {
        let vocab = Vocabulary {
            entries: vocab,
            max_n: self.max_n,
            min_df: self.min_df,
        };
        let featurizer = match (self.lexical_features, lexicon) {
            (true, Some(lex)) => Featurizer::with_lexicon(vocab, lex),
            (true, None) => {
                return Err(Error::Config(
                    "model uses lexical features but no lexicon was given".into(),
                ))
            }
            (false, _) => Featurizer::ngrams_only(vocab),
        };
        self.classifier.check_fingerprint(&featurizer)?;
        Ok(featurizer)
    }
}

pub struct Trained {
    pub featurizer: Featurizer,
    pub classifier: Classifier,
}

impl Trained {
    pub fn model_file(&self, cfg: &RunConfig) -> ModelFile {
        ModelFile {
            classifier: self.classifier.clone(),
            max_n: self.featurizer.vocab.max_n,
            min_df: self.featurizer.vocab.min_df,
            lexical_features: self.featurizer.lexicon.is_some(),
            seed: cfg.seed,
        }
    }

    pub fn save(&self, cfg: &RunConfig, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let model_path = dir.join("model.json");
        let vocab_path = dir.join("vocab.json");
        let mut model = serde_json::to_string(&self.model_file(cfg))?;
        model.push('\n');
        fs::write(&model_path, model).map_err(|e| Error::io(&model_path, e))?;
        let mut vocab = serde_json::to_string_pretty(&self.featurizer.vocab.entries)?;
        vocab.push('\n');
        fs::write(&vocab_path, vocab).map_err(|e| Error::io(&vocab_path, e))?;
        Ok((model_path, vocab_path))
    }

    pub fn load(model: &Path, vocab: &Path, lexicon: Option<Lexicon>) -> Result<Self> {
        let text = fs::read_to_string(model).map_err(|e| Error::io(model, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        let text = fs::read_to_string(vocab).map_err(|e| Error::io(vocab, e))?;
        let entries: BTreeMap<String, usize> = serde_json::from_str(&text)?;
        let featurizer = file.featurizer(entries, lexicon)?;
        Ok(Trained {
            featurizer,
            classifier: file.classifier,
        })
    }
}

fn fit(
    kind: ClassifierKind,
    cfg: &RunConfig,
    train: &[LabeledInstance],
    valid: &[LabeledInstance],
    featurizer: &Featurizer,
) -> Result<Classifier> {
    Ok(match kind {
        ClassifierKind::Nb => Classifier::Nb(train_naive_bayes(train, featurizer, cfg.nb_alpha)?),
        ClassifierKind::Lr => match (cfg.learning_rate, cfg.l2) {
            (Some(learning_rate), Some(l2)) => {
                let hyper = LrHyper {
                    learning_rate,
                    l2,
                    epochs: cfg.epochs,
                    seed: cfg.seed,
                    patience: cfg.patience,
                    batch_size: cfg.batch_size,
                };
                Classifier::Lr(train_logistic_regression(train, valid, featurizer, &hyper)?)
            }
            (lr, l2) => {
                let defaults = LrGrid::default();
                let grid = LrGrid {
                    learning_rates: lr.map(|v| vec![v]).unwrap_or(defaults.learning_rates),
                    l2s: l2.map(|v| vec![v]).unwrap_or(defaults.l2s),
                    epochs: cfg.epochs,
                    patience: cfg.patience,
                    batch_size: cfg.batch_size,
                };
                Classifier::Lr(tune_logistic_regression(train, valid, featurizer, &grid, cfg.seed)?)
            }
        },
    })
}

/// Builds the vocabulary on the training split and trains the configured
/// classifier, or loads a saved one.
pub fn train_classifier(cfg: &RunConfig, splits: &HashMap<Split, Vec<LabeledInstance>>) -> Result<Trained> {
    let lexicon = load_lexicon(cfg)?;
    if let (Some(model), Some(vocab)) = (&cfg.model, &cfg.vocab) {
        return Trained::load(model, vocab, lexicon);
    }
    let empty = Vec::new();
    let train = splits.get(&Split::Train).unwrap_or(&empty);
    let valid = splits.get(&Split::Valid).unwrap_or(&empty);
    let vocab = build_vocabulary(train, cfg.max_n, cfg.min_df)?;
    let featurizer = match (cfg.lexical_features, lexicon) {
        (true, Some(lex)) => Featurizer::with_lexicon(vocab, lex),
        _ => Featurizer::ngrams_only(vocab),
    };
    let classifier = fit(cfg.classifier, cfg, train, valid, &featurizer)?;
    Ok(Trained { featurizer, classifier })
}

/// Explainer state shared across sentences.
pub struct Explainer<'a> {
    kind: ExplainerKind,
    config: ExplainerConfig,
    trained: &'a Trained,
    lexicon: Option<Lexicon>,
    top: Option<TopFeatures>,
    background: Option<Background>,
}

impl<'a> Explainer<'a> {
    pub fn new(cfg: &RunConfig, trained: &'a Trained, train: &[LabeledInstance]) -> Result<Self> {
        let kind = cfg.explainer;
        let config = cfg.explainer_config();
        let linear = || {
            trained.classifier.as_linear().ok_or_else(|| {
                Error::Config(format!(
                    "the {} explainer needs a logistic regression model",
                    kind.name()
                ))
            })
        };
        let lexicon = match kind {
            ExplainerKind::Lexicon => Some(
                load_lexicon(cfg)?.ok_or_else(|| Error::Config("the lexicon explainer requires `lexicon`".into()))?,
            ),
            _ => None,
        };
        let top = match kind {
            ExplainerKind::TopFeatures => Some(TopFeatures::new(
                linear()?,
                &trained.featurizer.vocab,
                config.max_highlights,
            )),
            _ => None,
        };
        let background = match kind {
            ExplainerKind::Shap => {
                linear()?;
                Some(Background::from_tokens(
                    &trained.featurizer,
                    train.iter().map(|i| i.tokens.as_slice()),
                ))
            }
            _ => None,
        };
        Ok(Explainer {
            kind,
            config,
            trained,
            lexicon,
            top,
            background,
        })
    }

    pub fn kind(&self) -> ExplainerKind {
        self.kind
    }

    pub fn explain(&self, pair: &SentencePair) -> Result<HighlightMask> {
        let tokens = &pair.complex;
        let seed = self.config.seed ^ pair.id as u64;
        let mask = match self.kind {
            ExplainerKind::Random => explain_random(tokens, seed),
            ExplainerKind::Lexicon => explain_lexicon(tokens, self.lexicon.as_ref().expect("loaded"), &self.config),
            ExplainerKind::TopFeatures => self.top.as_ref().expect("built").mask(tokens),
            ExplainerKind::Lime => {
                let scorer = ModelScorer::new(&self.trained.classifier, &self.trained.featurizer)?;
                explain_lime(&scorer, tokens, &self.config, seed)?
            }
            ExplainerKind::Shap => explain_shap_linear(
                self.trained.classifier.as_linear().expect("checked"),
                &self.trained.featurizer,
                tokens,
                self.background.as_ref().expect("built"),
            )?,
            ExplainerKind::Oracle => HighlightMask::predicted(pair.reference_mask.bits.clone()),
            ExplainerKind::None => HighlightMask::predicted(vec![false; tokens.len()]),
        };
        Ok(mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub classifier: String,
    pub accuracy: f64,
    pub ztest: ZTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub classifier: String,
    pub test_instances: usize,
    pub accuracy: f64,
    pub f1: Option<f64>,
    pub confusion: Confusion,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub comparison: Option<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub domain: String,
    pub classification_accuracy: Option<f64>,
    pub classification_f1: Option<f64>,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    /// Explanation metric correlated with per-domain classification F1.
    pub metric: String,
    pub method: CorrelationMethod,
    pub domains: usize,
    /// `None` when undefined (constant input).
    pub coefficient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: usize,
    pub domain: Option<String>,
    pub tokens: Vec<String>,
    pub mask: Vec<u8>,
    pub reference: Vec<u8>,
    pub scores: SentenceScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub explainer: String,
    pub seed: u64,
    pub classification: ClassificationSummary,
    #[serde(flatten)]
    pub overall: Aggregate,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub per_domain: Vec<DomainReport>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub correlations: Vec<CorrelationRow>,
    /// Written separately as JSON lines.
    #[serde(skip)]
    pub sentences: Vec<SentenceRecord>,
}

/// Explains and scores every test pair whose complex side has gold label 1.
pub fn explain_test_pairs(pairs: &[SentencePair], explainer: &Explainer<'_>) -> Result<Vec<SentenceRecord>> {
    let targets: Vec<&SentencePair> = pairs
        .iter()
        .filter(|p| p.split == Split::Test && !p.is_identical())
        .collect();
    targets
        .par_iter()
        .map(|pair| {
            let run = || -> Result<SentenceRecord> {
                let mask = explainer.explain(pair)?;
                mask.check_len(pair.complex.len())?;
                let scores = score_sentence(&mask, &pair.complex, &pair.simple)?;
                Ok(SentenceRecord {
                    id: pair.id,
                    domain: pair.domain.clone(),
                    tokens: pair.complex.iter().map(|t| t.surface.clone()).collect(),
                    mask: mask.as_u8(),
                    reference: pair.reference_mask.as_u8(),
                    scores,
                })
            };
            run().map_err(|e| e.in_sentence(pair.id))
        })
        .collect()
}

type DomainMetric = fn(&DomainReport) -> Option<f64>;

fn domain_correlations(domains: &[DomainReport]) -> Vec<CorrelationRow> {
    let metrics: [(&str, DomainMetric); 3] = [
        ("F1", |d| d.aggregate.macro_scores.f1),
        ("ED_1.5", |d| d.aggregate.macro_scores.ed_1_5),
        ("TER", |d| d.aggregate.macro_scores.ter),
    ];
    let mut rows = Vec::new();
    for (name, metric) in metrics {
        let (x, y): (Vec<f64>, Vec<f64>) = domains
            .iter()
            .filter_map(|d| Some((d.classification_f1?, metric(d)?)))
            .unzip();
        if x.len() < 2 {
            continue;
        }
        for method in CorrelationMethod::ALL {
            rows.push(CorrelationRow {
                metric: name.to_owned(),
                method,
                domains: x.len(),
                coefficient: correlate(&x, &y, method).ok(),
            });
        }
    }
    rows
}

/// Trains (or loads) the classifier and explains the gold-complex test pairs
/// without aggregating.
pub fn explain_dataset(cfg: &RunConfig) -> Result<Vec<SentenceRecord>> {
    cfg.validate()?;
    let pairs = load_corpus(cfg)?;
    let splits = split_instances(derive_labels(&pairs));
    let trained = train_classifier(cfg, &splits)?;
    let train = splits.get(&Split::Train).map_or(&[][..], Vec::as_slice);
    let explainer = Explainer::new(cfg, &trained, train)?;
    explain_test_pairs(&pairs, &explainer)
}

/// Runs the whole pipeline for one configuration.
pub fn evaluate_dataset(cfg: &RunConfig) -> Result<EvaluationReport> {
    cfg.validate()?;
    let pairs = load_corpus(cfg)?;
    evaluate_pairs(cfg, &pairs)
}

/// [`evaluate_dataset`] on already-loaded pairs.
pub fn evaluate_pairs(cfg: &RunConfig, pairs: &[SentencePair]) -> Result<EvaluationReport> {
    let splits = split_instances(derive_labels(pairs));
    let empty = Vec::new();
    let train = splits.get(&Split::Train).unwrap_or(&empty);
    let test = splits.get(&Split::Test).unwrap_or(&empty);
    if test.is_empty() {
        return Err(Error::Config("the test split is empty".into()));
    }

    let trained = train_classifier(cfg, &splits)?;
    let conf = confusion(&trained.classifier, &trained.featurizer, test)?;
    let accuracy = conf.accuracy().expect("non-empty test split");
    let comparison = match cfg.compare {
        Some(kind) => {
            let valid = splits.get(&Split::Valid).unwrap_or(&empty);
            let other = fit(kind, cfg, train, valid, &trained.featurizer)?;
            let other_acc = confusion(&other, &trained.featurizer, test)?
                .accuracy()
                .expect("non-empty test split");
            Some(Comparison {
                classifier: other.name().to_owned(),
                accuracy: other_acc,
                ztest: compare_accuracy_ztest(accuracy, test.len(), other_acc, test.len())?,
            })
        }
        None => None,
    };

    let explainer = Explainer::new(cfg, &trained, train)?;
    let sentences = explain_test_pairs(pairs, &explainer)?;
    let scores: Vec<SentenceScore> = sentences.iter().map(|s| s.scores).collect();
    let overall = macro_average(&scores, cfg.undefined);

    let mut by_domain: BTreeMap<&str, Vec<SentenceScore>> = BTreeMap::new();
    for s in &sentences {
        if let Some(d) = &s.domain {
            by_domain.entry(d).or_default().push(s.scores);
        }
    }
    let mut test_by_domain: BTreeMap<&str, Vec<LabeledInstance>> = BTreeMap::new();
    for inst in test {
        if let Some(d) = &inst.domain {
            test_by_domain.entry(d).or_default().push(inst.clone());
        }
    }
    let per_domain = by_domain
        .into_iter()
        .map(|(domain, scores)| {
            let conf = match test_by_domain.get(domain) {
                Some(insts) => confusion(&trained.classifier, &trained.featurizer, insts)?,
                None => Confusion::default(),
            };
            Ok(DomainReport {
                domain: domain.to_owned(),
                classification_accuracy: conf.accuracy(),
                classification_f1: conf.f1(),
                aggregate: macro_average(&scores, cfg.undefined),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let correlations = domain_correlations(&per_domain);

    Ok(EvaluationReport {
        dataset: cfg.dataset.clone(),
        explainer: explainer.kind().name().to_owned(),
        seed: cfg.seed,
        classification: ClassificationSummary {
            classifier: trained.classifier.name().to_owned(),
            test_instances: test.len(),
            accuracy,
            f1: conf.f1(),
            confusion: conf,
            comparison,
        },
        overall,
        per_domain,
        correlations,
        sentences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_and_overrides() {
        let cfg = RunConfig::parse_str(
            "# run\ncorpus = data/pairs.tsv\nexplainer = shap   # comment\nmax-n = 2\nseed=7\nlearning_rate = none\n",
        )
        .unwrap();
        assert_eq!(cfg.corpus.as_deref(), Some(Path::new("data/pairs.tsv")));
        assert_eq!(cfg.explainer, ExplainerKind::Shap);
        assert_eq!(cfg.max_n, 2);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.learning_rate, None);

        assert!(RunConfig::parse_str("bogus = 1").is_err());
        assert!(RunConfig::parse_str("max_n = two").is_err());
        assert!(RunConfig::parse_str("no equals sign").is_err());
    }

    #[test]
    fn budgets() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.budget(), 10);
        cfg.preset = Some(Preset::WikiLarge);
        assert_eq!(cfg.budget(), 50);
        cfg.explainer = ExplainerKind::TopFeatures;
        assert_eq!(cfg.budget(), 20_000);
        cfg.max_highlights = Some(3);
        assert_eq!(cfg.budget(), 3);
    }

    #[test]
    fn validation_errors() {
        let cfg = RunConfig::default();
        assert!(cfg.validate().unwrap_err().is_validation());
        let cfg = RunConfig {
            corpus: Some("/definitely/missing.tsv".into()),
            ..RunConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
