//! Greedy covering inference.
//!
//! Finding the covering that maximizes `ln p(z | X, π)` is NP-hard, so each
//! sequence is covered greedily: at every step the occurrence with the best
//! gain in log-joint per newly explained call is added, until every position
//! is explained. Singleton patterns guarantee that a step is always possible.

use std::cmp::Ordering;

use thiserror::Error;

use crate::corpus::{is_subsequence, TokenId};
use crate::model::{
    ln_prob, ln_splice_count, ln_stop, log_joint, Covering, ModelView, Occurrence, PatternId,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InferenceError {
    #[error("token {token} at position {position} has no singleton pattern")]
    MissingSingleton { token: TokenId, position: usize },
}

/// Per-sequence cache of the patterns contained in the sequence, valid for
/// the first `version` patterns of the model, plus the last covering.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct SequenceCache {
    version: usize,
    candidates: Vec<PatternId>,
    last: Option<Covering>,
}

impl SequenceCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of leading model patterns already scanned.
    pub fn version(&self) -> usize {
        self.version
    }

    pub fn candidates(&self) -> &[PatternId] {
        &self.candidates
    }

    pub fn last_covering(&self) -> Option<&Covering> {
        self.last.as_ref()
    }

    pub fn set_last_covering(&mut self, covering: Covering) {
        self.last = Some(covering);
    }

    /// Records that patterns `version..new_version` were checked and only
    /// `added` (ascending) are contained in the sequence.
    pub fn extend(&mut self, new_version: usize, added: &[PatternId]) {
        debug_assert!(new_version >= self.version);
        self.candidates.extend_from_slice(added);
        self.version = new_version;
    }

    fn rewind(&mut self, version: usize) {
        self.candidates.retain(|id| id.index() < version);
        self.version = version;
        self.last = None;
    }
}

/// Patterns of `model` contained in `sequence`, scanning only the patterns
/// added since the cache was last refreshed.
pub fn supported_patterns<'c>(
    sequence: &[TokenId],
    model: &impl ModelView,
    cache: &'c mut SequenceCache,
) -> &'c [PatternId] {
    let n = model.num_patterns();
    if cache.version > n {
        cache.rewind(n);
    }
    for i in cache.version..n {
        let id = PatternId(i as u32);
        if !sequence.is_empty() && is_subsequence(model.pattern(id).tokens(), sequence) {
            cache.candidates.push(id);
        }
    }
    cache.version = n;
    &cache.candidates
}

/// Change in a log term when moving from `old` to `new`, with impossible
/// (`-inf`) states handled explicitly instead of producing NaN.
fn log_gain(old: f64, new: f64) -> f64 {
    if new == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if old == f64::NEG_INFINITY {
        f64::INFINITY
    } else {
        new - old
    }
}

/// Left-most match of `pattern` using only uncovered positions.
fn match_uncovered(
    pattern: &[TokenId],
    sequence: &[TokenId],
    covered: &[bool],
    out: &mut Vec<u32>,
) -> bool {
    out.clear();
    let mut k = 0;
    for (i, (&t, &c)) in sequence.iter().zip(covered).enumerate() {
        if !c && t == pattern[k] {
            out.push(i as u32);
            k += 1;
            if k == pattern.len() {
                return true;
            }
        }
    }
    false
}

struct Choice {
    slot: usize,
    score: f64,
    positions: Vec<u32>,
}

/// Greedy covering of `sequence` using the given candidate patterns (which
/// must include the singleton of every token in the sequence).
///
/// Candidates are ranked by `Δ / |S|`, where `Δ` is the change in log-joint
/// from adding the next occurrence of `S`; ties prefer longer patterns, then
/// lexicographically smaller token ids, then an earlier match.
pub fn greedy_cover(
    sequence: &[TokenId],
    model: &impl ModelView,
    candidates: &[PatternId],
) -> Result<Covering, InferenceError> {
    for (position, &token) in sequence.iter().enumerate() {
        let has_singleton = candidates
            .iter()
            .any(|&id| model.pattern(id).tokens() == [token]);
        if !has_singleton {
            return Err(InferenceError::MissingSingleton { token, position });
        }
    }

    let mut covered = vec![false; sequence.len()];
    let mut remaining = sequence.len();
    let mut counts = vec![0usize; candidates.len()];
    let mut occurrences = Vec::new();
    let mut scratch = Vec::new();

    while remaining > 0 {
        let mut best: Option<Choice> = None;
        for (slot, &id) in candidates.iter().enumerate() {
            let pattern = model.pattern(id).tokens();
            if pattern.len() > remaining
                || !match_uncovered(pattern, sequence, &covered, &mut scratch)
            {
                continue;
            }
            let probs = model.probs(id);
            let c = counts[slot];
            let chain = log_gain(
                ln_stop(probs.get(c + 1)),
                ln_prob(probs.get(c + 1)) + ln_stop(probs.get(c + 2)),
            );
            let covered_len = sequence.len() - remaining;
            let delta = chain - ln_splice_count(covered_len, pattern.len());
            let score = delta / pattern.len() as f64;
            let better = match &best {
                None => true,
                Some(b) => {
                    let incumbent = model.pattern(candidates[b.slot]).tokens();
                    score
                        .total_cmp(&b.score)
                        .then(pattern.len().cmp(&incumbent.len()))
                        .then(incumbent.cmp(pattern))
                        .then(b.positions[0].cmp(&scratch[0]))
                        == Ordering::Greater
                }
            };
            if better {
                best = Some(Choice {
                    slot,
                    score,
                    positions: scratch.clone(),
                });
            }
        }
        // the singleton of any uncovered token always matches
        let choice = best.expect("singleton candidates guarantee progress");
        for &p in &choice.positions {
            covered[p as usize] = true;
        }
        remaining -= choice.positions.len();
        counts[choice.slot] += 1;
        occurrences.push(Occurrence {
            pattern: candidates[choice.slot],
            n: counts[choice.slot] as u32,
            positions: choice.positions,
        });
    }
    Ok(Covering { occurrences })
}

/// [`greedy_cover`] over the cached candidate list; stores the result as the
/// cache's last covering.
pub fn greedy_cover_cached(
    sequence: &[TokenId],
    model: &impl ModelView,
    cache: &mut SequenceCache,
) -> Result<Covering, InferenceError> {
    let candidates = supported_patterns(sequence, model, cache);
    let covering = greedy_cover(sequence, model, candidates)?;
    cache.set_last_covering(covering.clone());
    Ok(covering)
}

/// The covering objective `ln p(z | X, π)` up to the evidence term, which
/// does not depend on `z`.
pub fn covering_objective(
    sequence: &[TokenId],
    covering: &Covering,
    model: &impl ModelView,
) -> f64 {
    log_joint(sequence, covering, model)
}
