use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

use super::{DataPool, Instance};

/// Parameters of the generated two-class corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusParams {
    pub n_docs: usize,
    /// Even split: the first half of the vocabulary signals class 0, the second class 1.
    pub vocab_size: usize,
    /// Probability that a token is drawn from its class's signal half rather
    /// than the whole vocabulary.
    pub class_signal_strength: f64,
    pub doc_length: usize,
    /// Probability that a token is capitalized.
    pub case_noise: f64,
    pub seed: u64,
}

impl CorpusParams {
    pub fn new(n_docs: usize, vocab_size: usize, class_signal_strength: f64, doc_length: usize, seed: u64) -> Self {
        CorpusParams {
            n_docs,
            vocab_size,
            class_signal_strength,
            doc_length,
            case_noise: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_docs < 2 {
            return Err(Error::Config("corpus needs at least 2 documents".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("corpus vocabulary needs at least 2 tokens".into()));
        }
        if self.doc_length < 1 {
            return Err(Error::Config("corpus doc_length must be at least 1".into()));
        }
        for (name, p) in [
            ("class_signal_strength", self.class_signal_strength),
            ("case_noise", self.case_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("corpus {name} {p} is not in [0, 1]")));
            }
        }
        Ok(())
    }
}

fn token(i: usize, capitalize: bool) -> String {
    if capitalize {
        format!("W{i}")
    } else {
        format!("w{i}")
    }
}

/// A balanced two-class pool; labels alternate 0, 1, 0, 1, ...
pub fn generate_synthetic_corpus(params: &CorpusParams) -> Result<DataPool> {
    params.validate()?;
    let mut rng = rng_from_seed(params.seed);
    let half = params.vocab_size / 2;
    let signal_range = |label: usize| {
        if label == 0 {
            0..half
        } else {
            half..params.vocab_size
        }
    };
    let instances = (0..params.n_docs)
        .map(|d| {
            let label = d % 2;
            let words: Vec<String> = (0..params.doc_length)
                .map(|_| {
                    let i = if rng.random_bool(params.class_signal_strength) {
                        rng.random_range(signal_range(label))
                    } else {
                        rng.random_range(0..params.vocab_size)
                    };
                    token(i, rng.random_bool(params.case_noise))
                })
                .collect();
            Instance {
                text: format!("{}.", words.join(" ")),
                label,
            }
        })
        .collect();
    DataPool::new(instances, vec!["class_0".into(), "class_1".into()])
}
