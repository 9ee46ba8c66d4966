//! Synthetic corpora drawn from the generative model, with the planted
//! patterns written to a ground-truth sidecar.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Pattern, SequenceDatabase, TokenTable};
use crate::model::{sample_sequence, ModelError, OccurrenceProbabilities, PatternSet};
use crate::patternfile::write_pattern_set;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("every occurrence probability is zero; no sequence can be generated")]
    Unsatisfiable,
    #[error("invalid planted pattern: {0}")]
    Planted(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedPattern {
    pub tokens: Vec<String>,
    pub probs: OccurrenceProbabilities,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub planted: Vec<PlantedPattern>,
    pub vocab_size: usize,
    /// First-occurrence probability of every vocabulary singleton; 0 disables
    /// singleton noise.
    pub noise: f64,
    pub n_sequences: usize,
    pub seed: u64,
}

/// Name of the `i`-th synthetic vocabulary token.
pub fn vocabulary_name(i: usize) -> String {
    format!("api.m{i:03}")
}

/// Parameters for drawing random planted patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantingSpec {
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_prob: f64,
    pub max_prob: f64,
}

/// Draws `spec.count` planted patterns over disjoint vocabulary tokens, each
/// with a single first-occurrence probability uniform in the given range.
pub fn random_planted<R: Rng + ?Sized>(
    spec: &PlantingSpec,
    vocab_size: usize,
    rng: &mut R,
) -> Result<Vec<PlantedPattern>, SynthError> {
    if spec.min_len < 1 || spec.min_len > spec.max_len {
        return Err(SynthError::Planted("length range is empty".into()));
    }
    if !(0.0..=1.0).contains(&spec.min_prob)
        || !(0.0..=1.0).contains(&spec.max_prob)
        || spec.min_prob > spec.max_prob
    {
        return Err(SynthError::Planted("probability range is invalid".into()));
    }
    let mut pool: Vec<usize> = (0..vocab_size).collect();
    pool.shuffle(rng);
    let mut pool = pool.into_iter();
    let mut planted = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let tokens: Vec<String> = pool.by_ref().take(len).map(vocabulary_name).collect();
        if tokens.len() < len {
            return Err(SynthError::Planted(
                "vocabulary too small for disjoint planted patterns".into(),
            ));
        }
        let p = if spec.min_prob == spec.max_prob {
            spec.min_prob
        } else {
            rng.gen_range(spec.min_prob..spec.max_prob)
        };
        planted.push(PlantedPattern {
            tokens,
            probs: OccurrenceProbabilities::new(vec![p])?,
        });
    }
    Ok(planted)
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Corpus in the plain line format.
    pub corpus: String,
    /// Planted patterns in pattern-file format, with their support in the
    /// generated corpus.
    pub truth: String,
}

/// Samples `n_sequences` non-empty sequences from the planted patterns plus
/// one noise singleton per vocabulary token.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    synth_generate_with(config, &mut rng)
}

pub fn synth_generate_with<R: Rng + ?Sized>(
    config: &SynthConfig,
    rng: &mut R,
) -> Result<SynthOutput, SynthError> {
    if !(0.0..=1.0).contains(&config.noise) {
        return Err(SynthError::Planted("noise must be in [0, 1]".into()));
    }
    let mut tokens = TokenTable::new();
    for i in 0..config.vocab_size {
        tokens.intern(&vocabulary_name(i));
    }
    let mut model = PatternSet::new();
    for p in &config.planted {
        if p.tokens.is_empty() || !p.tokens.iter().all(|t| crate::corpus::is_valid_token(t)) {
            return Err(SynthError::Planted(format!("bad tokens {:?}", p.tokens)));
        }
        let ids = p.tokens.iter().map(|t| tokens.intern(t)).collect();
        model
            .insert(Pattern::new(ids), p.probs.clone(), 0)
            .map_err(|_| SynthError::Planted(format!("duplicate pattern {:?}", p.tokens)))?;
    }
    let planted_count = model.len();
    if config.noise > 0.0 {
        for i in 0..config.vocab_size {
            let singleton = Pattern::singleton(tokens.get(&vocabulary_name(i)).unwrap());
            if model.find(&singleton).is_none() {
                model.insert(
                    singleton,
                    OccurrenceProbabilities::new(vec![config.noise])?,
                    0,
                )?;
            }
        }
    }
    if model.entries().iter().all(|e| e.probs.first() == 0.0) {
        return Err(SynthError::Unsatisfiable);
    }

    let mut corpus = String::new();
    for _ in 0..config.n_sequences {
        let sequence = loop {
            let (x, _) = sample_sequence(&model, rng);
            if !x.is_empty() {
                break x;
            }
        };
        corpus.push_str(&tokens.render(&sequence));
        corpus.push('\n');
    }

    let db = crate::corpus::parse_database_str(&corpus, &Default::default());
    let mut truth_set = PatternSet::new();
    for e in &model.entries()[..planted_count] {
        let names: Vec<&str> = e.pattern.tokens().iter().map(|&t| tokens.name(t)).collect();
        let support = support_by_name(&db, &names);
        truth_set.insert(e.pattern.clone(), e.probs.clone(), support)?;
    }
    Ok(SynthOutput {
        corpus,
        truth: write_pattern_set(&truth_set, &tokens),
    })
}

fn support_by_name(db: &SequenceDatabase, names: &[&str]) -> usize {
    let ids: Option<Vec<_>> = names.iter().map(|n| db.tokens().get(n)).collect();
    ids.map_or(0, |ids| db.support(&ids))
}
