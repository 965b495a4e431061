//! Complexity predictors: multinomial Naive Bayes and L2-regularized logistic
//! regression over sparse features, plus accuracy evaluation and a
//! two-proportion z-test for comparing classifiers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledInstance, Token};
use crate::error::{Error, Result};
use crate::features::{Featurizer, SparseVector};

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrHyper {
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping. 0 disables
    /// early stopping and keeps the weights of the last epoch.
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for LrHyper {
    fn default() -> Self {
        LrHyper {
            learning_rate: 0.1,
            l2: 1e-4,
            epochs: 50,
            seed: 42,
            patience: 5,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Accuracy used for early stopping (validation set, or the training set
    /// when no validation data was given).
    pub selection_accuracy: f64,
    pub selected_on: String,
    pub train_instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub vocab_fingerprint: String,
    pub hyper: LrHyper,
    pub meta: TrainingMeta,
}

impl LinearModel {
    pub fn margin(&self, x: &SparseVector) -> f64 {
        x.dot(&self.weights) + self.bias
    }

    pub fn score(&self, x: &SparseVector) -> f64 {
        sigmoid(self.margin(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    /// Log priors of labels 0 and 1.
    pub log_prior: [f64; 2],
    /// Per-label smoothed log-likelihood of each n-gram feature.
    pub log_likelihood: [Vec<f64>; 2],
    pub alpha: f64,
    pub vocab_fingerprint: String,
}

impl NbModel {
    /// Unnormalized joint log probabilities of labels 0 and 1.
    pub fn joint_log(&self, x: &SparseVector) -> [f64; 2] {
        let dim = self.log_likelihood[0].len();
        let mut out = self.log_prior;
        for (j, v) in x.iter().filter(|&(j, _)| j < dim) {
            out[0] += v * self.log_likelihood[0][j];
            out[1] += v * self.log_likelihood[1][j];
        }
        out
    }

    /// Posterior of labels 0 and 1.
    pub fn posterior(&self, x: &SparseVector) -> [f64; 2] {
        let [l0, l1] = self.joint_log(x);
        let m = l0.max(l1);
        let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
        [e0 / (e0 + e1), e1 / (e0 + e1)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Classifier {
    #[serde(rename = "lr")]
    Lr(LinearModel),
    #[serde(rename = "nb")]
    Nb(NbModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    /// Probability of label 1.
    pub score: f64,
}

impl Classifier {
    pub fn vocab_fingerprint(&self) -> &str {
        match self {
            Classifier::Lr(m) => &m.vocab_fingerprint,
            Classifier::Nb(m) => &m.vocab_fingerprint,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Classifier::Lr(_) => "lr",
            Classifier::Nb(_) => "nb",
        }
    }

    pub fn as_linear(&self) -> Option<&LinearModel> {
        match self {
            Classifier::Lr(m) => Some(m),
            Classifier::Nb(_) => None,
        }
    }

    /// LR labels 1 iff the score is at least 0.5. NB takes the argmax of the
    /// posterior and resolves exact ties toward label 0.
    pub fn predict_vector(&self, x: &SparseVector) -> Prediction {
        match self {
            Classifier::Lr(m) => {
                let score = m.score(x);
                Prediction {
                    label: (score >= 0.5) as u8,
                    score,
                }
            }
            Classifier::Nb(m) => {
                let [l0, l1] = m.joint_log(x);
                Prediction {
                    label: (l1 > l0) as u8,
                    score: m.posterior(x)[1],
                }
            }
        }
    }

    pub fn check_fingerprint(&self, featurizer: &Featurizer) -> Result<()> {
        let vocab = featurizer.fingerprint();
        if self.vocab_fingerprint() != vocab {
            return Err(Error::FingerprintMismatch {
                model: self.vocab_fingerprint().to_owned(),
                vocab,
            });
        }
        Ok(())
    }
}

pub fn predict(model: &Classifier, featurizer: &Featurizer, tokens: &[Token]) -> Result<Prediction> {
    model.check_fingerprint(featurizer)?;
    Ok(model.predict_vector(&featurizer.featurize(tokens)))
}

fn check_both_labels(instances: &[LabeledInstance]) -> Result<()> {
    if instances.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let ones = instances.iter().filter(|i| i.label == 1).count();
    if ones == 0 || ones == instances.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

/// Multinomial NB over n-gram counts with Laplace smoothing `alpha`. The
/// lexical block of the featurizer is ignored.
pub fn train_naive_bayes(instances: &[LabeledInstance], featurizer: &Featurizer, alpha: f64) -> Result<NbModel> {
    check_both_labels(instances)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be > 0, got {alpha}")));
    }
    let dim = featurizer.vocab.len();
    let mut counts = [vec![0.0; dim], vec![0.0; dim]];
    let mut docs = [0usize; 2];
    for inst in instances {
        let c = inst.label as usize;
        docs[c] += 1;
        for (j, v) in crate::features::featurize_ngrams(&inst.tokens, &featurizer.vocab).iter() {
            counts[c][j] += v;
        }
    }
    let n = instances.len() as f64;
    let log_prior = [(docs[0] as f64 / n).ln(), (docs[1] as f64 / n).ln()];
    let log_likelihood = counts.map(|class_counts| {
        let total: f64 = class_counts.iter().sum::<f64>() + alpha * dim as f64;
        class_counts.iter().map(|c| ((c + alpha) / total).ln()).collect()
    });
    Ok(NbModel {
        log_prior,
        log_likelihood,
        alpha,
        vocab_fingerprint: featurizer.fingerprint(),
    })
}

/// A featurized example.
pub type Example = (SparseVector, u8);

pub fn featurize_all(instances: &[LabeledInstance], featurizer: &Featurizer) -> Vec<Example> {
    instances
        .iter()
        .map(|i| (featurizer.featurize(&i.tokens), i.label))
        .collect()
}

/// Mean logistic loss plus `l2 / 2 * ||w||^2` (bias unregularized).
pub fn objective(weights: &[f64], bias: f64, data: &[Example], l2: f64) -> f64 {
    let loss: f64 = data
        .iter()
        .map(|(x, y)| {
            let z = x.dot(weights) + bias;
            if *y == 1 {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum::<f64>()
        / data.len() as f64;
    loss + 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`objective`] with respect to the weights and the bias.
pub fn gradient(weights: &[f64], bias: f64, data: &[Example], l2: f64) -> (Vec<f64>, f64) {
    let (sparse, gb) = data_gradient(data.iter(), |x| x.dot(weights) + bias);
    let mut gw: Vec<f64> = weights.iter().map(|w| l2 * w).collect();
    for (j, g) in sparse.iter() {
        gw[j] += g;
    }
    (gw, gb)
}

/// Mean gradient of the logistic loss over a batch; sparse in the weights.
fn data_gradient<'a, I, F>(batch: I, margin: F) -> (SparseVector, f64)
where
    I: ExactSizeIterator<Item = &'a Example>,
    F: Fn(&SparseVector) -> f64,
{
    let n = batch.len() as f64;
    let mut gw = SparseVector::new();
    let mut gb = 0.0;
    for (x, y) in batch {
        let residual = (sigmoid(margin(x)) - *y as f64) / n;
        gb += residual;
        for (j, v) in x.iter() {
            gw.add(j, residual * v);
        }
    }
    (gw, gb)
}

fn accuracy_of(weights: &[f64], bias: f64, data: &[Example]) -> f64 {
    let correct = data
        .iter()
        .filter(|(x, y)| ((x.dot(weights) + bias >= 0.0) as u8) == *y)
        .count();
    correct as f64 / data.len() as f64
}

/// Mini-batch SGD on the L2-regularized logistic loss.
///
/// Weights are stored as `scale * v`; L2 shrinkage per step is O(1).
/// Early stopping tracks `valid` accuracy (training accuracy when `valid` is
/// empty) and the weights of the best epoch are returned.
pub fn train_logistic_regression(
    train: &[LabeledInstance],
    valid: &[LabeledInstance],
    featurizer: &Featurizer,
    hyper: &LrHyper,
) -> Result<LinearModel> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let train_data = featurize_all(train, featurizer);
    let valid_data = featurize_all(valid, featurizer);
    train_on_examples(
        &train_data,
        &valid_data,
        featurizer.dim(),
        featurizer.fingerprint(),
        hyper,
    )
}

pub fn train_on_examples(
    train: &[Example],
    valid: &[Example],
    dim: usize,
    vocab_fingerprint: String,
    hyper: &LrHyper,
) -> Result<LinearModel> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if hyper.learning_rate.is_nan() || hyper.learning_rate <= 0.0 || hyper.epochs == 0 || hyper.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "learning_rate must be > 0, epochs and batch_size >= 1".into(),
        ));
    }
    let shrink = 1.0 - hyper.learning_rate * hyper.l2;
    if hyper.l2.is_nan() || hyper.l2 < 0.0 || shrink <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "l2 = {} is incompatible with learning_rate = {}",
            hyper.l2, hyper.learning_rate
        )));
    }
    let (select_on, selected_on) = if valid.is_empty() {
        (train, "train")
    } else {
        (valid, "valid")
    };

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut v = vec![0.0; dim];
    let mut scale = 1.0;
    let mut bias = 0.0;

    let mut best = (f64::NEG_INFINITY, vec![0.0; dim], 0.0, 0usize);
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 1..=hyper.epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let (gw, gb) = data_gradient(batch.iter().copied(), |x| scale * x.dot(&v) + bias);
            epoch_loss += batch
                .iter()
                .map(|(x, y)| {
                    let z = scale * x.dot(&v) + bias;
                    if *y == 1 {
                        softplus(-z)
                    } else {
                        softplus(z)
                    }
                })
                .sum::<f64>();

            scale *= shrink;
            for (j, g) in gw.iter() {
                v[j] -= hyper.learning_rate * g / scale;
            }
            bias -= hyper.learning_rate * gb;
            if scale < 1e-9 {
                v.iter_mut().for_each(|w| *w *= scale);
                scale = 1.0;
            }
        }
        if !epoch_loss.is_finite() || !bias.is_finite() {
            return Err(Error::Diverged { epoch });
        }

        let weights: Vec<f64> = v.iter().map(|w| w * scale).collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let acc = accuracy_of(&weights, bias, select_on);
        if hyper.patience == 0 {
            best = (acc, weights, bias, epoch);
        } else if acc > best.0 {
            best = (acc, weights, bias, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= hyper.patience {
                break;
            }
        }
    }

    let (selection_accuracy, weights, bias, best_epoch) = best;
    Ok(LinearModel {
        weights,
        bias,
        vocab_fingerprint,
        hyper: *hyper,
        meta: TrainingMeta {
            epochs_run,
            best_epoch,
            selection_accuracy,
            selected_on: selected_on.into(),
            train_instances: train.len(),
        },
    })
}

/// Hyperparameter grid searched on validation accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrGrid {
    pub learning_rates: Vec<f64>,
    pub l2s: Vec<f64>,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for LrGrid {
    fn default() -> Self {
        LrGrid {
            learning_rates: vec![0.01, 0.1],
            l2s: vec![1e-5, 1e-4, 1e-3],
            epochs: 50,
            patience: 5,
            batch_size: 32,
        }
    }
}

/// Trains one model per grid point and keeps the best on validation accuracy
/// (first grid point wins ties).
pub fn tune_logistic_regression(
    train: &[LabeledInstance],
    valid: &[LabeledInstance],
    featurizer: &Featurizer,
    grid: &LrGrid,
    seed: u64,
) -> Result<LinearModel> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let train_data = featurize_all(train, featurizer);
    let valid_data = featurize_all(valid, featurizer);
    let mut best: Option<LinearModel> = None;
    for &learning_rate in &grid.learning_rates {
        for &l2 in &grid.l2s {
            let hyper = LrHyper {
                learning_rate,
                l2,
                epochs: grid.epochs,
                seed,
                patience: grid.patience,
                batch_size: grid.batch_size,
            };
            let model = train_on_examples(
                &train_data,
                &valid_data,
                featurizer.dim(),
                featurizer.fingerprint(),
                &hyper,
            )?;
            log::debug!(
                "lr={learning_rate} l2={l2}: {} accuracy {:.4}",
                model.meta.selected_on,
                model.meta.selection_accuracy
            );
            if best
                .as_ref()
                .is_none_or(|b| model.meta.selection_accuracy > b.meta.selection_accuracy)
            {
                best = Some(model);
            }
        }
    }
    best.ok_or_else(|| Error::Config("empty hyperparameter grid".into()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, gold: u8, predicted: u8) {
        match (gold, predicted) {
            (1, 1) => self.tp += 1,
            (0, 1) => self.fp += 1,
            (0, 0) => self.tn += 1,
            _ => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.total() > 0).then(|| (self.tp + self.tn) as f64 / self.total() as f64)
    }

    /// F1 of label 1; `None` when there are no positive predictions or gold
    /// positives at all.
    pub fn f1(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| 2.0 * self.tp as f64 / denom as f64)
    }
}

pub fn confusion(model: &Classifier, featurizer: &Featurizer, instances: &[LabeledInstance]) -> Result<Confusion> {
    model.check_fingerprint(featurizer)?;
    let mut c = Confusion::default();
    for inst in instances {
        c.add(
            inst.label,
            model.predict_vector(&featurizer.featurize(&inst.tokens)).label,
        );
    }
    Ok(c)
}

pub fn evaluate_accuracy(model: &Classifier, featurizer: &Featurizer, instances: &[LabeledInstance]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(confusion(model, featurizer, instances)?.accuracy().expect("non-empty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub p_two_tailed: f64,
}

/// Two-proportion z-test with pooled variance. When the pooled proportion is
/// 0 or 1 the statistic is degenerate: equal accuracies give `p = 1`, unequal
/// ones `p = 0` (with an infinite `z`).
pub fn compare_accuracy_ztest(acc_a: f64, n_a: usize, acc_b: f64, n_b: usize) -> Result<ZTest> {
    if n_a == 0 || n_b == 0 {
        return Err(Error::InvalidArgument("sample sizes must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&acc_a) || !(0.0..=1.0).contains(&acc_b) {
        return Err(Error::InvalidArgument("accuracies must lie in [0, 1]".into()));
    }
    let (na, nb) = (n_a as f64, n_b as f64);
    let pooled = (acc_a * na + acc_b * nb) / (na + nb);
    let var = pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb);
    let diff = acc_a - acc_b;
    if var <= 0.0 {
        return Ok(if diff == 0.0 {
            ZTest {
                z: 0.0,
                p_two_tailed: 1.0,
            }
        } else {
            ZTest {
                z: diff.signum() * f64::INFINITY,
                p_two_tailed: 0.0,
            }
        });
    }
    let z = diff / var.sqrt();
    let p = statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2);
    Ok(ZTest {
        z,
        p_two_tailed: p.min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, Origin, Side, Split, TokenizeMode};
    use crate::features::{build_vocabulary, Vocabulary};
    use std::collections::BTreeMap;

    fn inst(s: &str, label: u8) -> LabeledInstance {
        LabeledInstance {
            tokens: tokenize(s, TokenizeMode::Whitespace),
            label,
            origin: Origin {
                pair_id: 0,
                side: Side::Complex,
            },
            split: Split::Train,
            domain: None,
        }
    }

    fn featurizer(data: &[LabeledInstance]) -> Featurizer {
        Featurizer::ngrams_only(build_vocabulary(data, 1, 1).unwrap())
    }

    #[test]
    fn nb_posterior_favors_class_specific_token() {
        let data = [inst("x a", 1), inst("x b", 1), inst("a b", 0), inst("b a", 0)];
        let f = featurizer(&data);
        let nb = train_naive_bayes(&data, &f, 1.0).unwrap();
        // Hand computation with alpha = 1, vocab {a, b, x}:
        // label 1 counts a1 b1 x2 (total 4) -> P(x|1) = 3/7
        // label 0 counts a2 b2 x0 (total 4) -> P(x|0) = 1/7
        // equal priors -> P(1|x) = 3 / (3 + 1) = 0.75
        let p = nb.posterior(&f.featurize(&tokenize("x", TokenizeMode::Whitespace)));
        assert!((p[1] - 0.75).abs() < 1e-12, "{p:?}");
        let pred = predict(&Classifier::Nb(nb), &f, &tokenize("x", TokenizeMode::Whitespace)).unwrap();
        assert_eq!(pred.label, 1);
    }

    #[test]
    fn nb_unseen_words_fall_back_to_prior() {
        let data = [inst("a", 1), inst("b", 0), inst("c", 0)];
        let f = featurizer(&data);
        let nb = Classifier::Nb(train_naive_bayes(&data, &f, 1.0).unwrap());
        let pred = predict(&nb, &f, &tokenize("zzz", TokenizeMode::Whitespace)).unwrap();
        assert_eq!(pred.label, 0);
        assert!((pred.score - 1.0 / 3.0).abs() < 1e-12);

        // balanced priors -> exact tie -> label 0
        let data = [inst("a", 1), inst("b", 0)];
        let f = featurizer(&data);
        let nb = Classifier::Nb(train_naive_bayes(&data, &f, 1.0).unwrap());
        let pred = predict(&nb, &f, &tokenize("zzz", TokenizeMode::Whitespace)).unwrap();
        assert_eq!(pred.score, 0.5);
        assert_eq!(pred.label, 0);
    }

    #[test]
    fn nb_rejects_bad_input() {
        let data = [inst("a", 1), inst("b", 1)];
        let f = featurizer(&data);
        assert!(matches!(train_naive_bayes(&data, &f, 1.0), Err(Error::SingleClass)));
        assert!(matches!(train_naive_bayes(&[], &f, 1.0), Err(Error::Empty(_))));
        let data = [inst("a", 1), inst("b", 0)];
        assert!(train_naive_bayes(&data, &f, 0.0).is_err());
    }

    fn fixed_lr(weights: Vec<f64>, bias: f64, fp: &str) -> Classifier {
        Classifier::Lr(LinearModel {
            weights,
            bias,
            vocab_fingerprint: fp.into(),
            hyper: LrHyper::default(),
            meta: TrainingMeta::default(),
        })
    }

    #[test]
    fn lr_prediction_values() {
        let m = fixed_lr(vec![2.0], 0.0, "x");
        let mut x = SparseVector::new();
        x.add(0, 1.0);
        let p = m.predict_vector(&x);
        // 1 / (1 + e^-2)
        assert!((p.score - 0.880_797_077_977_882_3).abs() < 1e-15);
        assert_eq!(p.label, 1);

        let p = m.predict_vector(&SparseVector::new());
        assert_eq!(p.score, 0.5);
        assert_eq!(p.label, 1);

        let m = fixed_lr(vec![2.0], -1.5, "x");
        assert!((m.predict_vector(&SparseVector::new()).score - sigmoid(-1.5)).abs() < 1e-15);
    }

    #[test]
    fn fingerprint_mismatch_is_rejected() {
        let data = [inst("a", 1), inst("b", 0)];
        let f = featurizer(&data);
        let m = fixed_lr(vec![0.0; f.dim()], 0.0, "deadbeef");
        let err = predict(&m, &f, &data[0].tokens).unwrap_err();
        assert!(matches!(err, Error::FingerprintMismatch { .. }));
    }

    #[test]
    fn lr_separable_and_deterministic() {
        let mut data = Vec::new();
        for i in 0..40 {
            let filler = ["a", "b", "c", "d"][i % 4];
            data.push(inst(&format!("{filler} q {filler}"), 1));
            data.push(inst(&format!("{filler} {filler}"), 0));
        }
        let f = featurizer(&data);
        let hyper = LrHyper {
            patience: 50,
            ..LrHyper::default()
        };
        let m1 = train_logistic_regression(&data, &[], &f, &hyper).unwrap();
        let m2 = train_logistic_regression(&data, &[], &f, &hyper).unwrap();
        assert_eq!(m1, m2);
        let model = Classifier::Lr(m1);
        assert_eq!(evaluate_accuracy(&model, &f, &data).unwrap(), 1.0);
    }

    #[test]
    fn lr_weight_norm_shrinks_with_l2() {
        let mut data = Vec::new();
        for i in 0..30 {
            let w = ["a", "b", "c"][i % 3];
            data.push(inst(&format!("{w} q"), 1));
            data.push(inst(&format!("{w} r"), (i % 5 == 0) as u8));
        }
        let f = featurizer(&data);
        let norms: Vec<f64> = [0.0, 1e-3, 1e-2, 1e-1, 1.0]
            .iter()
            .map(|&l2| {
                let hyper = LrHyper {
                    l2,
                    epochs: 20,
                    patience: 0,
                    ..LrHyper::default()
                };
                let m = train_logistic_regression(&data, &[], &f, &hyper).unwrap();
                assert_eq!(m.meta.best_epoch, 20);
                m.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
            })
            .collect();
        for w in norms.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{norms:?}");
        }
    }

    #[test]
    fn lr_errors() {
        let data = [inst("a", 1), inst("b", 0)];
        let f = featurizer(&data);
        assert!(matches!(
            train_logistic_regression(&[], &[], &f, &LrHyper::default()),
            Err(Error::Empty(_))
        ));
        let bad = LrHyper {
            learning_rate: 0.0,
            ..LrHyper::default()
        };
        assert!(train_logistic_regression(&data, &[], &f, &bad).is_err());
        let bad = LrHyper {
            epochs: 0,
            ..LrHyper::default()
        };
        assert!(train_logistic_regression(&data, &[], &f, &bad).is_err());
        let diverging = LrHyper {
            learning_rate: 1e308,
            l2: 0.0,
            ..LrHyper::default()
        };
        let big = [inst(&"a ".repeat(50), 1), inst("b", 0)];
        let f = featurizer(&big);
        assert!(matches!(
            train_logistic_regression(&big, &[], &f, &diverging),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut x1 = SparseVector::new();
        x1.add(0, 1.0);
        x1.add(2, 2.0);
        let mut x2 = SparseVector::new();
        x2.add(1, 1.0);
        let data = vec![(x1, 1u8), (x2, 0u8)];
        let w = vec![0.3, -0.2, 0.1];
        let (gw, gb) = gradient(&w, 0.05, &data, 0.1);
        let h = 1e-6;
        for j in 0..3 {
            let mut wp = w.clone();
            wp[j] += h;
            let mut wm = w.clone();
            wm[j] -= h;
            let fd = (objective(&wp, 0.05, &data, 0.1) - objective(&wm, 0.05, &data, 0.1)) / (2.0 * h);
            assert!((fd - gw[j]).abs() < 1e-8);
        }
        let fd = (objective(&w, 0.05 + h, &data, 0.1) - objective(&w, 0.05 - h, &data, 0.1)) / (2.0 * h);
        assert!((fd - gb).abs() < 1e-8);
    }

    #[test]
    fn tuning_picks_a_grid_point() {
        let mut data = Vec::new();
        for i in 0..20 {
            data.push(inst(&format!("w{} q", i % 4), 1));
            data.push(inst(&format!("w{}", i % 4), 0));
        }
        let f = featurizer(&data);
        let grid = LrGrid {
            epochs: 5,
            ..LrGrid::default()
        };
        let m = tune_logistic_regression(&data, &data, &f, &grid, 7).unwrap();
        assert!(grid.learning_rates.contains(&m.hyper.learning_rate));
        assert!(grid.l2s.contains(&m.hyper.l2));
        assert_eq!(m.hyper.seed, 7);
    }

    #[test]
    fn accuracy_values() {
        let data = [inst("a", 1), inst("b", 0)];
        let f = featurizer(&data);
        let ida = f.vocab.id("a").unwrap();
        let mut w = vec![0.0; f.dim()];
        w[ida] = 5.0;
        let m = fixed_lr(w, -1.0, &f.fingerprint());
        assert_eq!(evaluate_accuracy(&m, &f, &data).unwrap(), 1.0);
        let flipped = [inst("a", 0), inst("b", 0)];
        assert_eq!(evaluate_accuracy(&m, &f, &flipped).unwrap(), 0.5);
        assert!(matches!(evaluate_accuracy(&m, &f, &[]), Err(Error::Empty(_))));
        let c = confusion(&m, &f, &flipped).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (0, 1, 1, 0));
    }

    #[test]
    fn ztest_cases() {
        let t = compare_accuracy_ztest(0.7, 100, 0.7, 300).unwrap();
        assert_eq!(t.z, 0.0);
        assert_eq!(t.p_two_tailed, 1.0);

        let t = compare_accuracy_ztest(1.0, 100, 0.0, 100).unwrap();
        assert!(t.p_two_tailed < 1e-10);

        let t = compare_accuracy_ztest(1.0, 100, 1.0, 100).unwrap();
        assert_eq!(t.p_two_tailed, 1.0);

        let ab = compare_accuracy_ztest(0.8, 500, 0.75, 400).unwrap();
        let ba = compare_accuracy_ztest(0.75, 400, 0.8, 500).unwrap();
        assert_eq!(ab.z, -ba.z);
        assert_eq!(ab.p_two_tailed, ba.p_two_tailed);

        assert!(compare_accuracy_ztest(0.5, 0, 0.5, 10).is_err());
        assert!(compare_accuracy_ztest(1.5, 10, 0.5, 10).is_err());
    }

    #[test]
    fn model_json_shape() {
        let v = Vocabulary {
            entries: BTreeMap::new(),
            max_n: 1,
            min_df: 1,
        };
        let m = fixed_lr(vec![1.0], 0.0, &v.fingerprint());
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["type"], "lr");
        assert!(json.get("hyper").is_some());
        assert!(json.get("vocab_fingerprint").is_some());
        assert!(json.get("weights").is_some());
        let back: Classifier = serde_json::from_value(json).unwrap();
        assert_eq!(back, m);
    }
}
