//! Python bindings for `complexity_lens`.

use std::collections::HashMap;

use complexity_lens::classify::{
    compare_accuracy_ztest as ztest, predict, train_logistic_regression, train_naive_bayes, Classifier, LrHyper,
};
use complexity_lens::corpus::{
    derive_labels, tokenize as tokenize_text, HighlightMask, Membership, SentencePair, Token,
};
use complexity_lens::explain::{
    explain_lime, explain_random as random_mask, explain_shap_linear, Background, ExplainerConfig, ModelScorer,
    TopFeatures,
};
use complexity_lens::features::{build_vocabulary, Featurizer};
use complexity_lens::metrics::{self, CorrelationMethod, SentenceScore};
use complexity_lens::pipeline::{evaluate_dataset, RunConfig};
use complexity_lens::report::render_json;
use complexity_lens::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    if e.is_validation()
        || matches!(
            e,
            Error::InvalidArgument(_) | Error::LengthMismatch { .. } | Error::Undefined(_)
        )
    {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn tokens(words: &[String]) -> Vec<Token> {
    words.iter().map(Token::new).collect()
}

fn mask(bits: &[u8]) -> HighlightMask {
    HighlightMask::predicted(bits.iter().map(|&b| b != 0).collect())
}

/// Masks go back to Python as lists of 0/1 ints.
fn bits(mask: &HighlightMask) -> Vec<u32> {
    mask.bits.iter().map(|&b| u32::from(b)).collect()
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Split text into tokens (`"whitespace"` or `"whitespace+punct"`).
#[pyfunction]
#[pyo3(signature = (text, mode = "whitespace"))]
fn tokenize(text: &str, mode: &str) -> PyResult<Vec<String>> {
    Ok(tokenize_text(text, parse(mode)?)
        .into_iter()
        .map(|t| t.surface)
        .collect())
}

/// 1 for every complex token absent from the simple sentence.
#[pyfunction]
#[pyo3(signature = (complex, simple, case_sensitive = false))]
fn reference_mask(complex: Vec<String>, simple: Vec<String>, case_sensitive: bool) -> Vec<u32> {
    let rule = if case_sensitive {
        Membership::CaseSensitive
    } else {
        Membership::CaseInsensitive
    };
    rule.absent_from(&tokens(&complex), &tokens(&simple))
        .into_iter()
        .map(u32::from)
        .collect()
}

/// Tokenwise `(precision, recall, f1)`; undefined values are `None`.
#[pyfunction]
fn score_highlights(
    mask_bits: Vec<u8>,
    complex: Vec<String>,
    simple: Vec<String>,
) -> PyResult<(Option<f64>, Option<f64>, Option<f64>)> {
    let s = metrics::score_highlights(&mask(&mask_bits), &tokens(&complex), &tokens(&simple)).map_err(py_err)?;
    Ok((s.precision, s.recall, s.f1))
}

/// Every sentence-level metric as a dict.
#[pyfunction]
fn score_sentence<'py>(
    py: Python<'py>,
    mask_bits: Vec<u8>,
    complex: Vec<String>,
    simple: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let s: SentenceScore =
        metrics::score_sentence(&mask(&mask_bits), &tokens(&complex), &tokens(&simple)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("P", s.precision)?;
    d.set_item("R", s.recall)?;
    d.set_item("F1", s.f1)?;
    d.set_item("ED_1", s.ed_1)?;
    d.set_item("ED_1.5", s.ed_1_5)?;
    d.set_item("ED_2", s.ed_2)?;
    d.set_item("TER", s.ter)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (a, b, sub_cost = 1.5))]
fn edit_distance(a: Vec<String>, b: Vec<String>, sub_cost: f64) -> PyResult<f64> {
    if sub_cost.is_nan() || sub_cost <= 0.0 {
        return Err(PyValueError::new_err("sub_cost must be > 0"));
    }
    Ok(metrics::edit_distance(&tokens(&a), &tokens(&b), sub_cost))
}

#[pyfunction]
fn ter(remainder: Vec<String>, reference: Vec<String>) -> PyResult<f64> {
    metrics::ter(&tokens(&remainder), &tokens(&reference)).map_err(py_err)
}

/// `method` is `"pearson"`, `"spearman"` or `"kendall"`.
#[pyfunction]
#[pyo3(signature = (x, y, method = "pearson"))]
fn correlate(x: Vec<f64>, y: Vec<f64>, method: &str) -> PyResult<f64> {
    let method: CorrelationMethod = parse(method)?;
    metrics::correlate(&x, &y, method).map_err(py_err)
}

/// Two-proportion z-test; returns `(z, p_two_tailed)`.
#[pyfunction]
fn compare_accuracy_ztest(acc_a: f64, n_a: usize, acc_b: f64, n_b: usize) -> PyResult<(f64, f64)> {
    let t = ztest(acc_a, n_a, acc_b, n_b).map_err(py_err)?;
    Ok((t.z, t.p_two_tailed))
}

#[pyfunction]
#[pyo3(signature = (tokens_in, seed = 42))]
fn explain_random(tokens_in: Vec<String>, seed: u64) -> Vec<u32> {
    bits(&random_mask(&tokens(&tokens_in), seed))
}

/// Runs the full pipeline from a dict of configuration keys and returns the
/// report as a dict. Per-sentence records are under `"sentence_records"`.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, config: HashMap<String, Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = RunConfig::default();
    let mut keys: Vec<_> = config.into_iter().collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0));
    for (k, v) in keys {
        let value = if v.is_instance_of::<pyo3::types::PyBool>() {
            v.extract::<bool>()?.to_string()
        } else {
            v.str()?.to_string()
        };
        cfg.set(&k, &value).map_err(py_err)?;
    }
    let report = py.detach(|| evaluate_dataset(&cfg)).map_err(py_err)?;
    let json = py.import("json")?;
    let out = json.call_method1("loads", (render_json(&report).map_err(py_err)?,))?;
    let sentences = serde_json::to_string(&report.sentences).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    out.set_item("sentence_records", json.call_method1("loads", (sentences,))?)?;
    Ok(out)
}

/// A trained classifier with its featurizer.
#[pyclass(module = "complexity_lens", frozen)]
struct Model {
    classifier: Classifier,
    featurizer: Featurizer,
    background: Background,
}

#[pymethods]
impl Model {
    /// Trains on parallel sentences: complex sides are label 1, simple sides
    /// label 0, identical pairs contribute one label-0 instance.
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (complex, simple, classifier = "lr", max_n = 3, min_df = 1, seed = 42, epochs = 50))]
    fn train(
        py: Python<'_>,
        complex: Vec<String>,
        simple: Vec<String>,
        classifier: &str,
        max_n: usize,
        min_df: usize,
        seed: u64,
        epochs: usize,
    ) -> PyResult<Self> {
        if complex.len() != simple.len() {
            return Err(PyValueError::new_err("complex and simple must have the same length"));
        }
        let kind = classifier.to_owned();
        py.detach(move || {
            let pairs = complex
                .iter()
                .zip(&simple)
                .enumerate()
                .map(|(i, (c, s))| {
                    SentencePair::new(
                        i,
                        tokenize_text(c, Default::default()),
                        tokenize_text(s, Default::default()),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            let instances = derive_labels(&pairs);
            let featurizer = Featurizer::ngrams_only(build_vocabulary(&instances, max_n, min_df)?);
            let classifier = match kind.as_str() {
                "lr" => {
                    let hyper = LrHyper {
                        seed,
                        epochs,
                        ..LrHyper::default()
                    };
                    Classifier::Lr(train_logistic_regression(&instances, &[], &featurizer, &hyper)?)
                }
                "nb" => Classifier::Nb(train_naive_bayes(&instances, &featurizer, 1.0)?),
                other => return Err(Error::Config(format!("unknown classifier `{other}`"))),
            };
            let background = Background::from_tokens(&featurizer, instances.iter().map(|i| i.tokens.as_slice()));
            Ok(Model {
                classifier,
                featurizer,
                background,
            })
        })
        .map_err(py_err)
    }

    /// `(label, score)` for a sentence.
    fn predict(&self, sentence: &str) -> PyResult<(u8, f64)> {
        let p = predict(
            &self.classifier,
            &self.featurizer,
            &tokenize_text(sentence, Default::default()),
        )
        .map_err(py_err)?;
        Ok((p.label, p.score))
    }

    /// Highlight mask for `sentence` by `"lime"`, `"shap"`, `"top-features"` or `"random"`.
    #[pyo3(signature = (sentence, explainer = "lime", k = 10, samples = 1000, seed = 42))]
    fn explain(
        &self,
        py: Python<'_>,
        sentence: &str,
        explainer: &str,
        k: usize,
        samples: usize,
        seed: u64,
    ) -> PyResult<Vec<u32>> {
        let toks = tokenize_text(sentence, Default::default());
        let config = ExplainerConfig {
            max_highlights: k,
            lime_samples: samples,
            seed,
            ..ExplainerConfig::default()
        };
        let linear = || {
            self.classifier
                .as_linear()
                .ok_or_else(|| PyValueError::new_err(format!("{explainer} needs an lr model")))
        };
        let m = match explainer {
            "lime" => py
                .detach(|| {
                    let scorer = ModelScorer::new(&self.classifier, &self.featurizer)?;
                    explain_lime(&scorer, &toks, &config, seed)
                })
                .map_err(py_err)?,
            "shap" => explain_shap_linear(linear()?, &self.featurizer, &toks, &self.background).map_err(py_err)?,
            "top-features" => TopFeatures::new(linear()?, &self.featurizer.vocab, k).mask(&toks),
            "random" => random_mask(&toks, seed),
            other => return Err(PyValueError::new_err(format!("unknown explainer `{other}`"))),
        };
        Ok(bits(&m))
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.classifier.name()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.featurizer.vocab.len()
    }

    /// Serialized classifier (weights or probability tables plus metadata).
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.classifier).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={:?}, vocab_size={})",
            self.classifier.name(),
            self.featurizer.vocab.len()
        )
    }
}

#[pymodule]
#[pyo3(name = "complexity_lens")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(reference_mask, m)?)?;
    m.add_function(wrap_pyfunction!(score_highlights, m)?)?;
    m.add_function(wrap_pyfunction!(score_sentence, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(ter, m)?)?;
    m.add_function(wrap_pyfunction!(correlate, m)?)?;
    m.add_function(wrap_pyfunction!(compare_accuracy_ztest, m)?)?;
    m.add_function(wrap_pyfunction!(explain_random, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
