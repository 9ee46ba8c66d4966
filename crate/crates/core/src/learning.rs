//! Parameter learning (EM), pattern-set growth (structural EM) and
//! support-ordered candidate generation.
//!
//! The state keeps, per pattern, the histogram of its occurrence counts over
//! the current coverings. Because the count model is a chain of Bernoullis,
//! the total log-likelihood splits into one term per pattern (a function of
//! its histogram and probabilities) minus the per-sequence interleaving
//! terms, so a candidate can be scored by re-covering only the sequences
//! that contain it.

use std::cmp::{Ordering, Reverse};
use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{occurrence_capacity, Pattern, SequenceDatabase};
use crate::inference::{greedy_cover, supported_patterns, InferenceError, SequenceCache};
use crate::model::{
    chain_log_likelihood, ln_interleaving_count, log_joint, CountHistogram, Covering, ModelView,
    OccurrenceProbabilities, PatternId, PatternSet,
};

/// Minimum gain in average log-likelihood for a candidate to be admitted.
pub const ACCEPTANCE_MARGIN: f64 = 1e-10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LearningError {
    #[error("the sequence database is empty")]
    EmptyDatabase,
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

/// Patterns, parameters and the current covering of every sequence.
#[derive(Debug, Clone)]
pub struct LearningState<'db> {
    db: &'db SequenceDatabase,
    pats: PatternSet,
    caches: Vec<SequenceCache>,
    histograms: Vec<CountHistogram>,
    chain_terms: Vec<f64>,
    ln_interleavings: Vec<f64>,
    total_log_likelihood: f64,
}

impl<'db> LearningState<'db> {
    /// Singletons of the whole vocabulary, parameters set from their
    /// occurrence frequencies, and one E-step.
    pub fn initialize(db: &'db SequenceDatabase) -> Result<Self, LearningError> {
        if db.is_empty() {
            return Err(LearningError::EmptyDatabase);
        }
        let mut pats = PatternSet::new();
        for (token, _) in db.tokens().iter() {
            let mut hist = CountHistogram::default();
            for &i in db.postings(token) {
                hist.add(occurrence_capacity(
                    &[token],
                    &db.sequences()[i as usize].tokens,
                ));
            }
            let probs = OccurrenceProbabilities::from_histogram(&hist, db.len());
            pats.insert(Pattern::singleton(token), probs, db.postings(token).len())
                .expect("vocabulary tokens are distinct");
        }
        Self::from_patterns(db, pats)
    }

    /// Starts from an existing pattern set (e.g. a checkpoint), then runs one
    /// E-step and one M-step. Missing vocabulary singletons are added with
    /// their frequency-based parameters.
    pub fn from_patterns(
        db: &'db SequenceDatabase,
        mut pats: PatternSet,
    ) -> Result<Self, LearningError> {
        if db.is_empty() {
            return Err(LearningError::EmptyDatabase);
        }
        for (token, _) in db.tokens().iter() {
            if pats.singleton(token).is_none() {
                let mut hist = CountHistogram::default();
                for &i in db.postings(token) {
                    hist.add(occurrence_capacity(
                        &[token],
                        &db.sequences()[i as usize].tokens,
                    ));
                }
                let probs = OccurrenceProbabilities::from_histogram(&hist, db.len());
                pats.insert(Pattern::singleton(token), probs, db.postings(token).len())
                    .expect("checked absent");
            }
        }
        let n = pats.len();
        let mut state = LearningState {
            db,
            pats,
            caches: vec![SequenceCache::new(); db.len()],
            histograms: vec![CountHistogram::default(); n],
            chain_terms: vec![0.0; n],
            ln_interleavings: vec![0.0; db.len()],
            total_log_likelihood: 0.0,
        };
        state.e_step()?;
        state.m_step();
        Ok(state)
    }

    pub fn database(&self) -> &'db SequenceDatabase {
        self.db
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.pats
    }

    pub fn covering(&self, sequence: usize) -> &Covering {
        self.caches[sequence]
            .last_covering()
            .expect("every sequence is covered after initialization")
    }

    pub fn cache(&self, sequence: usize) -> &SequenceCache {
        &self.caches[sequence]
    }

    pub fn histogram(&self, id: PatternId) -> &CountHistogram {
        &self.histograms[id.index()]
    }

    /// `Σ_X ln p(X, z_X | π)` over the current coverings.
    pub fn total_log_likelihood(&self) -> f64 {
        self.total_log_likelihood
    }

    pub fn average_log_likelihood(&self) -> f64 {
        self.total_log_likelihood / self.db.len() as f64
    }

    /// Re-evaluates the total log-likelihood sequence by sequence through
    /// [`log_joint`], independently of the cached statistics.
    pub fn recompute_total_log_likelihood(&self) -> f64 {
        self.db
            .sequences()
            .iter()
            .enumerate()
            .map(|(i, seq)| log_joint(&seq.tokens, self.covering(i), &self.pats))
            .sum()
    }

    /// Replaces the parameters of one pattern, keeping coverings fixed.
    pub fn set_probabilities(&mut self, id: PatternId, probs: OccurrenceProbabilities) {
        self.chain_terms[id.index()] =
            chain_log_likelihood(&self.histograms[id.index()], self.db.len(), &probs);
        self.pats.set_probs(id, probs);
        self.total_log_likelihood =
            self.total_from_terms(&self.chain_terms, &self.ln_interleavings);
    }

    /// Hash of everything the learning procedure can change.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for e in self.pats.entries() {
            e.pattern.hash(&mut h);
            e.support.hash(&mut h);
            for p in e.probs.as_slice() {
                p.to_bits().hash(&mut h);
            }
        }
        self.caches.hash(&mut h);
        self.histograms.hash(&mut h);
        for v in self.chain_terms.iter().chain(&self.ln_interleavings) {
            v.to_bits().hash(&mut h);
        }
        self.total_log_likelihood.to_bits().hash(&mut h);
        h.finish()
    }

    fn total_from_terms(&self, chain_terms: &[f64], ln_interleavings: &[f64]) -> f64 {
        chain_terms.iter().sum::<f64>() - ln_interleavings.iter().sum::<f64>()
    }

    /// Re-covers every sequence greedily under the current parameters.
    pub fn e_step(&mut self) -> Result<(), LearningError> {
        let pats = &self.pats;
        let sequences = self.db.sequences();
        let results: Vec<Result<f64, InferenceError>> = self
            .caches
            .par_iter_mut()
            .zip(sequences.par_iter())
            .map(|(cache, seq)| {
                let candidates = supported_patterns(&seq.tokens, pats, cache);
                let covering = greedy_cover(&seq.tokens, pats, candidates)?;
                let ln_p = ln_interleaving_count(&covering.occurrence_lengths());
                cache.set_last_covering(covering);
                Ok(ln_p)
            })
            .collect();
        for (slot, r) in self.ln_interleavings.iter_mut().zip(results) {
            *slot = r?;
        }
        self.rebuild_histograms();
        let n = self.db.len();
        for (i, term) in self.chain_terms.iter_mut().enumerate() {
            *term = chain_log_likelihood(&self.histograms[i], n, &self.pats.entries()[i].probs);
        }
        self.total_log_likelihood =
            self.total_from_terms(&self.chain_terms, &self.ln_interleavings);
        Ok(())
    }

    fn rebuild_histograms(&mut self) {
        self.histograms = vec![CountHistogram::default(); self.pats.len()];
        for cache in &self.caches {
            if let Some(cov) = cache.last_covering() {
                for (id, c) in cov.counts() {
                    self.histograms[id.index()].add(c);
                }
            }
        }
    }

    /// Sets every `π[n]` to `N_n / N_{n-1}` for the current coverings.
    pub fn m_step(&mut self) {
        let n = self.db.len();
        for i in 0..self.pats.len() {
            let id = PatternId(i as u32);
            let probs = OccurrenceProbabilities::from_histogram(&self.histograms[i], n);
            self.chain_terms[i] = chain_log_likelihood(&self.histograms[i], n, &probs);
            self.pats.set_probs(id, probs);
        }
        self.total_log_likelihood =
            self.total_from_terms(&self.chain_terms, &self.ln_interleavings);
    }

    /// Alternates E- and M-steps until the relative change of the total
    /// log-likelihood drops below `tol` or `max_iters` is reached.
    pub fn em_optimize(&mut self, max_iters: usize, tol: f64) -> Result<EmReport, LearningError> {
        let mut report = EmReport::default();
        for _ in 0..max_iters {
            let before = self.total_log_likelihood;
            self.e_step()?;
            self.m_step();
            report.iterations += 1;
            if relative_change(before, self.total_log_likelihood) < tol {
                report.converged = true;
                break;
            }
        }
        Ok(report)
    }

    /// Proposes `candidate` for the pattern set.
    ///
    /// The candidate is forced into every sequence that contains it (as many
    /// times as fits), those sequences are re-covered, all parameters are
    /// re-estimated from the tentative coverings, and the candidate is kept
    /// only if the average log-likelihood rises by more than
    /// [`ACCEPTANCE_MARGIN`]. A rejection leaves the state untouched.
    pub fn structural_em_step(&mut self, candidate: &Candidate) -> Result<Proposal, LearningError> {
        let before = self.average_log_likelihood();
        let mut outcome = Proposal {
            accepted: false,
            average_before: before,
            average_after: before,
        };
        if candidate.pattern.len() < 2
            || candidate.supporters.is_empty()
            || self.pats.find(&candidate.pattern).is_some()
        {
            return Ok(outcome);
        }

        let cand_id = PatternId(self.pats.len() as u32);
        let pats = &self.pats;
        let db = self.db;
        let caches = &self.caches;
        let tentative: Vec<(usize, Covering, f64)> = candidate
            .supporters
            .par_iter()
            .map(|&i| {
                let i = i as usize;
                let seq = &db.sequences()[i].tokens;
                let capacity = occurrence_capacity(candidate.pattern.tokens(), seq);
                let view = WithCandidate {
                    base: pats,
                    pattern: &candidate.pattern,
                    probs: OccurrenceProbabilities::forced(capacity),
                };
                let mut candidates = caches[i].candidates().to_vec();
                candidates.push(cand_id);
                let covering = greedy_cover(seq, &view, &candidates)?;
                let ln_p = ln_interleaving_count(&covering.occurrence_lengths());
                Ok((i, covering, ln_p))
            })
            .collect::<Result<_, InferenceError>>()?;

        let mut changed: BTreeMap<PatternId, CountHistogram> = BTreeMap::new();
        let mut cand_hist = CountHistogram::default();
        for (i, covering, _) in &tentative {
            for (id, c) in self.covering(*i).counts() {
                changed
                    .entry(id)
                    .or_insert_with(|| self.histograms[id.index()].clone())
                    .remove(c);
            }
            for (id, c) in covering.counts() {
                if id == cand_id {
                    cand_hist.add(c);
                } else {
                    changed
                        .entry(id)
                        .or_insert_with(|| self.histograms[id.index()].clone())
                        .add(c);
                }
            }
        }

        let n = self.db.len();
        let mut chain_terms = self.chain_terms.clone();
        let mut new_probs = Vec::with_capacity(changed.len());
        for (&id, hist) in &changed {
            let probs = OccurrenceProbabilities::from_histogram(hist, n);
            chain_terms[id.index()] = chain_log_likelihood(hist, n, &probs);
            new_probs.push((id, probs));
        }
        let cand_probs = OccurrenceProbabilities::from_histogram(&cand_hist, n);
        chain_terms.push(chain_log_likelihood(&cand_hist, n, &cand_probs));
        let mut ln_interleavings = self.ln_interleavings.clone();
        for (i, _, ln_p) in &tentative {
            ln_interleavings[*i] = *ln_p;
        }
        let new_total = self.total_from_terms(&chain_terms, &ln_interleavings);
        let after = new_total / n as f64;
        let improved = after > before + ACCEPTANCE_MARGIN;
        if !improved {
            outcome.average_after = after;
            return Ok(outcome);
        }

        // commit
        self.pats
            .insert(
                candidate.pattern.clone(),
                cand_probs,
                candidate.supporters.len(),
            )
            .expect("checked absent");
        for (id, probs) in new_probs {
            self.pats.set_probs(id, probs);
        }
        for (id, hist) in changed {
            self.histograms[id.index()] = hist;
        }
        self.histograms.push(cand_hist);
        self.chain_terms = chain_terms;
        self.ln_interleavings = ln_interleavings;
        let new_len = self.pats.len();
        let mut tentative = tentative.into_iter().peekable();
        for (i, cache) in self.caches.iter_mut().enumerate() {
            match tentative.peek() {
                Some((j, _, _)) if *j == i => {
                    let (_, covering, _) = tentative.next().unwrap();
                    cache.extend(new_len, &[cand_id]);
                    cache.set_last_covering(covering);
                }
                _ => cache.extend(new_len, &[]),
            }
        }
        self.total_log_likelihood = new_total;
        debug_assert_eq!(
            self.total_log_likelihood,
            self.total_from_terms(&self.chain_terms, &self.ln_interleavings)
        );
        outcome.accepted = true;
        outcome.average_after = self.average_log_likelihood();
        Ok(outcome)
    }
}

fn relative_change(before: f64, after: f64) -> f64 {
    if before == after {
        0.0
    } else {
        ((after - before) / before).abs()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EmReport {
    pub iterations: usize,
    pub converged: bool,
}

/// Result of one structural EM proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub accepted: bool,
    pub average_before: f64,
    /// Average log-likelihood of the tentative model (equal to
    /// `average_before` when the candidate was not evaluated).
    pub average_after: f64,
}

/// The current pattern set extended by one candidate pattern.
struct WithCandidate<'a> {
    base: &'a PatternSet,
    pattern: &'a Pattern,
    probs: OccurrenceProbabilities,
}

impl ModelView for WithCandidate<'_> {
    fn num_patterns(&self) -> usize {
        self.base.len() + 1
    }
    fn pattern(&self, id: PatternId) -> &Pattern {
        if id.index() == self.base.len() {
            self.pattern
        } else {
            self.base.pattern(id)
        }
    }
    fn probs(&self, id: PatternId) -> &OccurrenceProbabilities {
        if id.index() == self.base.len() {
            &self.probs
        } else {
            self.base.probs(id)
        }
    }
}

/// A proposed pattern with the (ascending) indices of the sequences that
/// contain it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub pattern: Pattern,
    pub supporters: Vec<u32>,
    /// Smaller of the two parents' supports.
    pub priority: usize,
}

impl Candidate {
    pub fn new(db: &SequenceDatabase, pattern: Pattern) -> Self {
        let supporters = db.supporting_sequences(pattern.tokens());
        Candidate {
            priority: supporters.len(),
            pattern,
            supporters,
        }
    }

    pub fn support(&self) -> usize {
        self.supporters.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PairEntry {
    priority: usize,
    summed: usize,
    concat: Pattern,
    split: usize,
}

impl Ord for PairEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .cmp(&other.priority)
            .then(self.summed.cmp(&other.summed))
            .then_with(|| other.concat.cmp(&self.concat))
            .then(other.split.cmp(&self.split))
    }
}

impl PartialOrd for PairEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lazily enumerates concatenations of pattern pairs in non-increasing order
/// of the smaller parent support.
///
/// Patterns are expanded in decreasing support order; a pattern is expanded
/// (paired, in both orders, with every already-expanded pattern and itself)
/// only once no queued pair could outrank its pairs.
#[derive(Debug, Clone, Default)]
pub struct CandidateQueue {
    known: usize,
    pending: BinaryHeap<(usize, Reverse<PatternId>)>,
    expanded: Vec<PatternId>,
    pairs: BinaryHeap<PairEntry>,
    seen: HashSet<Pattern>,
    last_priority: Option<usize>,
}

impl CandidateQueue {
    /// A queue over `pats`; multi-token patterns already present count as
    /// seen.
    pub fn new(pats: &PatternSet) -> Self {
        let mut queue = CandidateQueue::default();
        queue.seen.extend(
            pats.entries()
                .iter()
                .filter(|e| !e.pattern.is_singleton())
                .map(|e| e.pattern.clone()),
        );
        queue
    }

    pub fn has_seen(&self, pattern: &Pattern) -> bool {
        self.seen.contains(pattern)
    }

    fn sync(&mut self, pats: &PatternSet) {
        for i in self.known..pats.len() {
            let id = PatternId(i as u32);
            self.pending.push((pats.entry(id).support, Reverse(id)));
        }
        self.known = pats.len();
    }

    fn expand(&mut self, pats: &PatternSet, id: PatternId) {
        let entry = pats.entry(id);
        self.expanded.push(id);
        for &other in &self.expanded {
            let o = pats.entry(other);
            let priority = entry.support.min(o.support);
            let summed = entry.support + o.support;
            self.pairs.push(PairEntry {
                priority,
                summed,
                concat: entry.pattern.concat(&o.pattern),
                split: entry.pattern.len(),
            });
            if other != id {
                self.pairs.push(PairEntry {
                    priority,
                    summed,
                    concat: o.pattern.concat(&entry.pattern),
                    split: o.pattern.len(),
                });
            }
        }
    }

    /// Next unseen candidate with support ≥ 1, or `None` when exhausted.
    pub fn next_candidate(&mut self, state: &LearningState<'_>) -> Option<Candidate> {
        let pats = state.patterns();
        self.sync(pats);
        loop {
            while let Some(&(support, Reverse(id))) = self.pending.peek() {
                match self.pairs.peek() {
                    Some(top) if top.priority > support => break,
                    _ => {
                        self.pending.pop();
                        self.expand(pats, id);
                    }
                }
            }
            let pair = self.pairs.pop()?;
            if !self.seen.insert(pair.concat.clone()) {
                continue;
            }
            let supporters = state.database().supporting_sequences(pair.concat.tokens());
            if supporters.is_empty() {
                continue;
            }
            debug_assert!(self.last_priority.is_none_or(|p| pair.priority <= p));
            self.last_priority = Some(pair.priority);
            return Some(Candidate {
                pattern: pair.concat,
                supporters,
                priority: pair.priority,
            });
        }
    }
}

/// Up to `batch` candidates from `queue`; empty when the queue is exhausted.
pub fn generate_candidates(
    state: &LearningState<'_>,
    queue: &mut CandidateQueue,
    batch: usize,
) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(batch);
    while out.len() < batch {
        match queue.next_candidate(state) {
            Some(c) => out.push(c),
            None => break,
        }
    }
    out
}
