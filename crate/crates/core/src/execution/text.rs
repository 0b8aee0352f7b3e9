//! A small bag-of-n-grams text classification pipeline, trained from scratch.
//!
//! Variables: `lowercasing` ∈ {yes, no}, `ngram_order` ∈ {1, 2},
//! `weighting` ∈ {binary, tf, tfidf}, `learner` ∈ {naive_bayes, logistic_regression}.
//! Everything fitted (vocabulary, idf, parameters) comes from the training
//! documents only.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::population::Assignment;
use crate::sampling::ArmedSystem;

use super::{DataPool, Executor, ExecutorOutput, MetricSpec};

const EXECUTOR_ID: &str = "text_pipeline";
const VARIABLES: [&str; 4] = ["lowercasing", "ngram_order", "weighting", "learner"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Binary,
    Tf,
    TfIdf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Learner {
    NaiveBayes,
    LogisticRegression,
}

/// Fixed learner hyperparameters. Never tuned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerSettings {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        LearnerSettings {
            epochs: 200,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextPipelineConfig {
    pub lowercase: bool,
    pub ngram_order: usize,
    pub weighting: Weighting,
    pub learner: Learner,
}

impl TextPipelineConfig {
    pub fn from_values(values: &Assignment) -> Result<Self> {
        if let Some(extra) = values.keys().find(|k| !VARIABLES.contains(&k.as_str())) {
            return Err(Error::UnknownVariable {
                executor: EXECUTOR_ID.into(),
                variable: extra.clone(),
            });
        }
        let get = |name: &str| {
            values.get(name).map(String::as_str).ok_or_else(|| Error::MissingVariable {
                executor: EXECUTOR_ID.into(),
                variable: name.into(),
            })
        };
        let unknown = |name: &str, value: &str| Error::UnknownMethodValue {
            executor: EXECUTOR_ID.into(),
            variable: name.into(),
            value: value.into(),
        };
        let lowercase = match get("lowercasing")? {
            "yes" => true,
            "no" => false,
            v => return Err(unknown("lowercasing", v)),
        };
        let ngram_order = match get("ngram_order")? {
            "1" => 1,
            "2" => 2,
            v => return Err(unknown("ngram_order", v)),
        };
        let weighting = match get("weighting")? {
            "binary" => Weighting::Binary,
            "tf" => Weighting::Tf,
            "tfidf" => Weighting::TfIdf,
            v => return Err(unknown("weighting", v)),
        };
        let learner = match get("learner")? {
            "naive_bayes" => Learner::NaiveBayes,
            "logistic_regression" => Learner::LogisticRegression,
            v => return Err(unknown("learner", v)),
        };
        Ok(TextPipelineConfig {
            lowercase,
            ngram_order,
            weighting,
            learner,
        })
    }
}

/// Splits on anything that is not alphanumeric.
pub(crate) fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| if lowercase { t.to_lowercase() } else { t.to_string() })
        .collect()
}

/// Unigrams, plus bigrams when `order` is 2.
fn ngrams(tokens: &[String], order: usize) -> Vec<String> {
    let mut out = tokens.to_vec();
    if order >= 2 {
        out.extend(tokens.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    }
    out
}

fn term_counts(text: &str, config: &TextPipelineConfig) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for g in ngrams(&tokenize(text, config.lowercase), config.ngram_order) {
        *counts.entry(g).or_insert(0.0) += 1.0;
    }
    counts
}

/// Sparse feature row: `(feature index, value)` sorted by index.
type Row = Vec<(usize, f64)>;

struct Featurizer {
    config: TextPipelineConfig,
    vocab: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl Featurizer {
    fn fit(train: &[&str], config: TextPipelineConfig) -> Self {
        let docs: Vec<BTreeMap<String, f64>> = train.iter().map(|t| term_counts(t, &config)).collect();
        let mut terms: Vec<&String> = docs.iter().flat_map(|d| d.keys()).collect();
        terms.sort();
        terms.dedup();
        let vocab: HashMap<String, usize> = terms.iter().enumerate().map(|(i, t)| ((*t).clone(), i)).collect();
        let mut df = vec![0usize; vocab.len()];
        for d in &docs {
            for t in d.keys() {
                df[vocab[t]] += 1;
            }
        }
        let n = train.len() as f64;
        // Smoothed idf: ln((1 + n) / (1 + df)) + 1.
        let idf = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        Featurizer { config, vocab, idf }
    }

    fn transform(&self, text: &str) -> Row {
        let mut row: Row = term_counts(text, &self.config)
            .into_iter()
            .filter_map(|(t, c)| {
                let j = *self.vocab.get(&t)?;
                let v = match self.config.weighting {
                    Weighting::Binary => 1.0,
                    Weighting::Tf => c,
                    Weighting::TfIdf => c * self.idf[j],
                };
                Some((j, v))
            })
            .collect();
        row.sort_unstable_by_key(|&(j, _)| j);
        row
    }

    fn dim(&self) -> usize {
        self.vocab.len()
    }
}

/// First index of the maximum; ties go to the lowest class index.
fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

struct NaiveBayes {
    log_prior: Vec<f64>,
    log_likelihood: Vec<Vec<f64>>,
}

impl NaiveBayes {
    /// Multinomial naive Bayes with add-one smoothing over the weighted features.
    fn fit(rows: &[Row], labels: &[usize], n_classes: usize, dim: usize) -> Self {
        let mut class_counts = vec![0usize; n_classes];
        let mut feature_mass = vec![vec![0.0f64; dim]; n_classes];
        for (row, &y) in rows.iter().zip(labels) {
            class_counts[y] += 1;
            for &(j, v) in row {
                feature_mass[y][j] += v;
            }
        }
        let n = rows.len() as f64;
        let log_prior = class_counts.iter().map(|&c| (c as f64 / n).ln()).collect();
        let log_likelihood = feature_mass
            .iter()
            .map(|mass| {
                let total: f64 = mass.iter().sum::<f64>() + dim as f64;
                mass.iter().map(|&m| ((m + 1.0) / total).ln()).collect()
            })
            .collect();
        NaiveBayes {
            log_prior,
            log_likelihood,
        }
    }

    fn scores(&self, row: &Row) -> Vec<f64> {
        self.log_prior
            .iter()
            .zip(&self.log_likelihood)
            .map(|(&prior, ll)| prior + row.iter().map(|&(j, v)| v * ll[j]).sum::<f64>())
            .collect()
    }
}

struct SoftmaxRegression {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl SoftmaxRegression {
    /// Full-batch gradient descent on mean cross-entropy from zero initialization.
    fn fit(rows: &[Row], labels: &[usize], n_classes: usize, dim: usize, settings: LearnerSettings) -> Self {
        let mut model = SoftmaxRegression {
            weights: vec![vec![0.0; dim]; n_classes],
            bias: vec![0.0; n_classes],
        };
        let n = rows.len() as f64;
        for _ in 0..settings.epochs {
            let mut grad_w = vec![vec![0.0; dim]; n_classes];
            let mut grad_b = vec![0.0; n_classes];
            for (row, &y) in rows.iter().zip(labels) {
                let p = softmax(&model.scores(row));
                for k in 0..n_classes {
                    let g = p[k] - if k == y { 1.0 } else { 0.0 };
                    grad_b[k] += g;
                    for &(j, v) in row {
                        grad_w[k][j] += g * v;
                    }
                }
            }
            let step = settings.learning_rate / n;
            for k in 0..n_classes {
                model.bias[k] -= step * grad_b[k];
                for (w, g) in model.weights[k].iter_mut().zip(&grad_w[k]) {
                    *w -= step * g;
                }
            }
        }
        model
    }

    fn scores(&self, row: &Row) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(w, &b)| b + row.iter().map(|&(j, v)| v * w[j]).sum::<f64>())
            .collect()
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineOutput {
    pub predictions: Vec<usize>,
    /// Training data held a single class; the majority class was predicted.
    pub degenerate: bool,
}

/// Trains the configured pipeline on `train` and predicts `test`.
///
/// Labels are class indices below `n_classes`. A training set with a single
/// class falls back to predicting that class everywhere.
pub fn run_text_pipeline(
    config: &TextPipelineConfig,
    train: &[(&str, usize)],
    test: &[&str],
    n_classes: usize,
    settings: LearnerSettings,
) -> Result<PipelineOutput> {
    if train.is_empty() {
        return Err(Error::Contract("text pipeline needs at least one training document".into()));
    }
    if let Some(&(_, bad)) = train.iter().find(|(_, y)| *y >= n_classes) {
        return Err(Error::Contract(format!("label {bad} outside {n_classes} classes")));
    }
    let labels: Vec<usize> = train.iter().map(|&(_, y)| y).collect();
    if labels.iter().all(|&y| y == labels[0]) {
        return Ok(PipelineOutput {
            predictions: vec![labels[0]; test.len()],
            degenerate: true,
        });
    }

    let texts: Vec<&str> = train.iter().map(|&(t, _)| t).collect();
    let featurizer = Featurizer::fit(&texts, *config);
    let rows: Vec<Row> = texts.iter().map(|t| featurizer.transform(t)).collect();
    let test_rows = test.iter().map(|t| featurizer.transform(t));

    let predictions = match config.learner {
        Learner::NaiveBayes => {
            let nb = NaiveBayes::fit(&rows, &labels, n_classes, featurizer.dim());
            test_rows.map(|r| argmax(&nb.scores(&r))).collect()
        }
        Learner::LogisticRegression => {
            let lr = SoftmaxRegression::fit(&rows, &labels, n_classes, featurizer.dim(), settings);
            test_rows.map(|r| argmax(&lr.scores(&r))).collect()
        }
    };
    Ok(PipelineOutput {
        predictions,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TextPipelineExecutor {
    pub settings: LearnerSettings,
}

impl Executor for TextPipelineExecutor {
    fn id(&self) -> &str {
        EXECUTOR_ID
    }

    fn run(&self, armed: &ArmedSystem, pool: &DataPool, metric: &MetricSpec) -> Result<ExecutorOutput> {
        let config = TextPipelineConfig::from_values(&armed.full_values)?;
        let split = &armed.base.split;
        let train: Vec<(&str, usize)> = split
            .train_indices
            .iter()
            .map(|&i| (pool.instances[i].text.as_str(), pool.instances[i].label))
            .collect();
        let test: Vec<&str> = split.test_indices.iter().map(|&i| pool.instances[i].text.as_str()).collect();
        let out = run_text_pipeline(&config, &train, &test, pool.class_set.len(), self.settings)?;
        let losses = out
            .predictions
            .iter()
            .zip(&split.test_indices)
            .map(|(&p, &i)| metric.score(p, pool.instances[i].label))
            .collect();
        Ok(ExecutorOutput {
            losses,
            degenerate: out.degenerate,
        })
    }
}
