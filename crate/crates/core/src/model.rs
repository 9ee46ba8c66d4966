//! The generative interleaving model.
//!
//! Each pattern `S` carries a chain of conditional occurrence probabilities
//! `π[n] = P(c_S ≥ n | c_S ≥ n-1)`; a client sequence is generated by drawing
//! the counts independently and splicing all drawn occurrences together
//! uniformly at random. The joint probability of a sequence and its covering
//! is the product of the count probabilities divided by the number of
//! distinct labeled interleavings.

use std::collections::HashMap;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Pattern, TokenId};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("occurrence probability vector is empty")]
    EmptyProbabilities,
    #[error("occurrence probability {value} at index {index} is outside [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },
    #[error("pattern is already present in the pattern set")]
    DuplicatePattern,
}

/// `ln p`, with `ln 0 = -inf`.
pub fn ln_prob(p: f64) -> f64 {
    p.ln()
}

/// `ln (1 - p)`, with `ln 0 = -inf` at `p = 1`.
pub fn ln_stop(p: f64) -> f64 {
    (-p).ln_1p()
}

/// `ln n!`
pub fn ln_factorial(n: usize) -> f64 {
    statrs::function::factorial::ln_factorial(n as u64)
}

/// Conditional occurrence probabilities `π[1..=M]` of one pattern. Indices
/// past `M` are implicitly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct OccurrenceProbabilities(Vec<f64>);

impl OccurrenceProbabilities {
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        if probs.is_empty() {
            return Err(ModelError::EmptyProbabilities);
        }
        if let Some((index, &value)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(ModelError::ProbabilityOutOfRange { index, value });
        }
        Ok(OccurrenceProbabilities(probs))
    }

    /// All-ones vector of length `m`: forces exactly `min(m, capacity)`
    /// occurrences wherever they fit.
    pub fn forced(m: usize) -> Self {
        OccurrenceProbabilities(vec![1.0; m.max(1)])
    }

    /// Maximum-likelihood chain for a count histogram over `n_sequences`
    /// sequences: `π[n] = N_n / N_{n-1}` with `N_0 = n_sequences`.
    pub fn from_histogram(hist: &CountHistogram, n_sequences: usize) -> Self {
        let mut probs = Vec::with_capacity(hist.max_count().max(1));
        let mut prev = n_sequences;
        for n in 1..=hist.max_count() {
            let at_least = hist.at_least(n);
            probs.push(if prev == 0 {
                0.0
            } else {
                at_least as f64 / prev as f64
            });
            prev = at_least;
        }
        if probs.is_empty() {
            probs.push(0.0);
        }
        OccurrenceProbabilities(probs)
    }

    /// `M`, the largest representable occurrence count.
    pub fn max_occurrences(&self) -> usize {
        self.0.len()
    }

    /// `π[n]` for `n ≥ 1`; zero past `M`.
    pub fn get(&self, n: usize) -> f64 {
        debug_assert!(n >= 1);
        self.0.get(n - 1).copied().unwrap_or(0.0)
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `P(c_S = c) = π[1]···π[c]·(1 − π[c+1])`.
    pub fn count_probability(&self, c: usize) -> f64 {
        let head: f64 = (1..=c).map(|n| self.get(n)).product();
        head * (1.0 - self.get(c + 1))
    }

    /// `ln P(c_S = c)`, evaluated term by term in log space.
    pub fn ln_count_probability(&self, c: usize) -> f64 {
        let mut total = ln_stop(self.get(c + 1));
        for n in 1..=c {
            total += ln_prob(self.get(n));
        }
        total
    }
}

impl TryFrom<Vec<f64>> for OccurrenceProbabilities {
    type Error = ModelError;
    fn try_from(v: Vec<f64>) -> Result<Self, ModelError> {
        OccurrenceProbabilities::new(v)
    }
}

impl From<OccurrenceProbabilities> for Vec<f64> {
    fn from(p: OccurrenceProbabilities) -> Vec<f64> {
        p.0
    }
}

/// Number of sequences in which a pattern is used exactly `c` times, for
/// every `c ≥ 1`. The zero bucket is implied by the database size.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct CountHistogram(Vec<u32>);

impl CountHistogram {
    pub fn add(&mut self, c: usize) {
        if c == 0 {
            return;
        }
        if self.0.len() < c {
            self.0.resize(c, 0);
        }
        self.0[c - 1] += 1;
    }

    pub fn remove(&mut self, c: usize) {
        if c == 0 {
            return;
        }
        self.0[c - 1] -= 1;
        while self.0.last() == Some(&0) {
            self.0.pop();
        }
    }

    pub fn max_count(&self) -> usize {
        self.0.len()
    }

    /// `N_n`: sequences using the pattern at least `n ≥ 1` times.
    pub fn at_least(&self, n: usize) -> usize {
        self.0
            .iter()
            .skip(n.saturating_sub(1))
            .map(|&x| x as usize)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sum over all sequences of a pattern's count log-probability, computed from
/// its count histogram: `Σ_n N_n ln π[n] + (N_{n-1} − N_n) ln(1 − π[n])`.
pub fn chain_log_likelihood(
    hist: &CountHistogram,
    n_sequences: usize,
    probs: &OccurrenceProbabilities,
) -> f64 {
    let mut total = 0.0;
    let mut prev = n_sequences;
    for n in 1..=hist.max_count() + 1 {
        let at_least = hist.at_least(n);
        if at_least > 0 {
            total += at_least as f64 * ln_prob(probs.get(n));
        }
        let stops = prev - at_least;
        if stops > 0 {
            total += stops as f64 * ln_stop(probs.get(n));
        }
        prev = at_least;
    }
    total
}

/// Index of a pattern inside a [`PatternSet`]; stable for the set's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatternId(pub u32);

impl PatternId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternEntry {
    pub pattern: Pattern,
    pub probs: OccurrenceProbabilities,
    pub support: usize,
}

/// Read access to patterns and their probabilities, by id.
pub trait ModelView: Sync {
    fn num_patterns(&self) -> usize;
    fn pattern(&self, id: PatternId) -> &Pattern;
    fn probs(&self, id: PatternId) -> &OccurrenceProbabilities;
}

/// The set of interesting patterns with their parameters, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatternSet {
    entries: Vec<PatternEntry>,
    index: HashMap<Pattern, PatternId>,
}

impl PatternSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        pattern: Pattern,
        probs: OccurrenceProbabilities,
        support: usize,
    ) -> Result<PatternId, ModelError> {
        if self.index.contains_key(&pattern) {
            return Err(ModelError::DuplicatePattern);
        }
        let id = PatternId(self.entries.len() as u32);
        self.index.insert(pattern.clone(), id);
        self.entries.push(PatternEntry {
            pattern,
            probs,
            support,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: PatternId) -> &PatternEntry {
        &self.entries[id.index()]
    }

    pub fn entries(&self) -> &[PatternEntry] {
        &self.entries
    }

    pub fn find(&self, pattern: &Pattern) -> Option<PatternId> {
        self.index.get(pattern).copied()
    }

    pub fn singleton(&self, token: TokenId) -> Option<PatternId> {
        self.find(&Pattern::singleton(token))
    }

    pub fn set_probs(&mut self, id: PatternId, probs: OccurrenceProbabilities) {
        self.entries[id.index()].probs = probs;
    }

    pub fn ids(&self) -> impl Iterator<Item = PatternId> {
        (0..self.entries.len() as u32).map(PatternId)
    }
}

impl ModelView for PatternSet {
    fn num_patterns(&self) -> usize {
        self.entries.len()
    }
    fn pattern(&self, id: PatternId) -> &Pattern {
        &self.entries[id.index()].pattern
    }
    fn probs(&self, id: PatternId) -> &OccurrenceProbabilities {
        &self.entries[id.index()].probs
    }
}

/// The `n`-th occurrence of a pattern, pinned to positions of a sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Occurrence {
    pub pattern: PatternId,
    pub n: u32,
    pub positions: Vec<u32>,
}

/// A partition of a sequence's positions into pattern occurrences.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Covering {
    pub occurrences: Vec<Occurrence>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoveringError {
    #[error("occurrence refers to unknown pattern {0:?}")]
    UnknownPattern(PatternId),
    #[error("occurrence positions do not spell pattern {0:?}")]
    Misspelled(PatternId),
    #[error("position {0} is used by more than one occurrence")]
    Overlap(u32),
    #[error("occurrence indices of pattern {0:?} are not 1..=c")]
    IndexGap(PatternId),
    #[error("position {0} is not covered")]
    Uncovered(usize),
}

impl Covering {
    /// Per-pattern occurrence counts `c_S`, ascending by id.
    pub fn counts(&self) -> Vec<(PatternId, usize)> {
        let mut ids: Vec<PatternId> = self.occurrences.iter().map(|o| o.pattern).collect();
        ids.sort_unstable();
        let mut out: Vec<(PatternId, usize)> = Vec::new();
        for id in ids {
            match out.last_mut() {
                Some((last, c)) if *last == id => *c += 1,
                _ => out.push((id, 1)),
            }
        }
        out
    }

    pub fn count_of(&self, id: PatternId) -> usize {
        self.occurrences.iter().filter(|o| o.pattern == id).count()
    }

    pub fn occurrence_lengths(&self) -> Vec<usize> {
        self.occurrences.iter().map(|o| o.positions.len()).collect()
    }

    pub fn covered_len(&self) -> usize {
        self.occurrences.iter().map(|o| o.positions.len()).sum()
    }

    /// Structural validity: spelling, exclusivity and gap-free occurrence
    /// indices. Completeness is checked separately by [`Covering::check_complete`].
    pub fn validate(
        &self,
        sequence: &[TokenId],
        model: &impl ModelView,
    ) -> Result<(), CoveringError> {
        let mut used = vec![false; sequence.len()];
        for occ in &self.occurrences {
            if occ.pattern.index() >= model.num_patterns() {
                return Err(CoveringError::UnknownPattern(occ.pattern));
            }
            let pattern = model.pattern(occ.pattern).tokens();
            let increasing = occ.positions.windows(2).all(|w| w[0] < w[1]);
            let spelled = occ.positions.len() == pattern.len()
                && increasing
                && occ
                    .positions
                    .iter()
                    .zip(pattern)
                    .all(|(&p, &t)| sequence.get(p as usize) == Some(&t));
            if !spelled {
                return Err(CoveringError::Misspelled(occ.pattern));
            }
            for &p in &occ.positions {
                if std::mem::replace(&mut used[p as usize], true) {
                    return Err(CoveringError::Overlap(p));
                }
            }
        }
        for (id, c) in self.counts() {
            let mut ns: Vec<u32> = self
                .occurrences
                .iter()
                .filter(|o| o.pattern == id)
                .map(|o| o.n)
                .collect();
            ns.sort_unstable();
            if ns.iter().enumerate().any(|(i, &n)| n as usize != i + 1) || ns.len() != c {
                return Err(CoveringError::IndexGap(id));
            }
        }
        Ok(())
    }

    /// Every position of a sequence of length `len` is covered (assuming
    /// the covering is structurally valid).
    pub fn check_complete(&self, len: usize) -> Result<(), CoveringError> {
        let mut used = vec![false; len];
        for occ in &self.occurrences {
            for &p in &occ.positions {
                if let Some(u) = used.get_mut(p as usize) {
                    *u = true;
                }
            }
        }
        match used.iter().position(|u| !u) {
            Some(p) => Err(CoveringError::Uncovered(p)),
            None => Ok(()),
        }
    }
}

/// `|P|`: the number of distinct labeled interleavings of occurrences with
/// the given lengths, in exact arithmetic.
pub fn interleaving_count(lengths: &[usize]) -> BigUint {
    let mut acc = BigUint::from(1u32);
    let mut total = 0usize;
    for &len in lengths {
        // acc · C(total + len, len), one factor at a time so every division is exact
        for i in 1..=len {
            acc *= BigUint::from(total + i);
            acc /= BigUint::from(i);
        }
        total += len;
    }
    acc
}

/// `ln |P| = ln (Σl)! − Σ ln l!`.
pub fn ln_interleaving_count(lengths: &[usize]) -> f64 {
    let total: usize = lengths.iter().sum();
    ln_factorial(total) - lengths.iter().map(|&l| ln_factorial(l)).sum::<f64>()
}

/// `ln C(covered + len, len)`: growth of `ln |P|` when an occurrence of
/// length `len` is spliced into `covered` already-placed calls.
pub fn ln_splice_count(covered: usize, len: usize) -> f64 {
    ln_factorial(covered + len) - ln_factorial(covered) - ln_factorial(len)
}

/// `ln p(X, z | π)`. Returns `-inf` when `z` is not a valid complete
/// partition of `X`, or when it requires an impossible count.
pub fn log_joint(sequence: &[TokenId], covering: &Covering, model: &impl ModelView) -> f64 {
    if covering.validate(sequence, model).is_err()
        || covering.check_complete(sequence.len()).is_err()
    {
        return f64::NEG_INFINITY;
    }
    let counts = covering.counts();
    let mut by_id = counts.iter().peekable();
    let mut total = -ln_interleaving_count(&covering.occurrence_lengths());
    for i in 0..model.num_patterns() {
        let id = PatternId(i as u32);
        let c = match by_id.peek() {
            Some(&&(cid, c)) if cid == id => {
                by_id.next();
                c
            }
            _ => 0,
        };
        total += model.probs(id).ln_count_probability(c);
    }
    total
}

/// Draws one client sequence together with its true covering: counts are
/// drawn independently per pattern, then occurrences are spliced in one at a
/// time at uniformly random positions, which is a uniform draw over all
/// labeled interleavings.
pub fn sample_sequence<R: Rng + ?Sized>(
    model: &impl ModelView,
    rng: &mut R,
) -> (Vec<TokenId>, Covering) {
    let mut occurrences: Vec<(PatternId, u32)> = Vec::new();
    for i in 0..model.num_patterns() {
        let id = PatternId(i as u32);
        let probs = model.probs(id);
        let mut c = 0;
        while c < probs.max_occurrences() && rng.gen::<f64>() < probs.get(c + 1) {
            c += 1;
            occurrences.push((id, c as u32));
        }
    }

    // (token, owning occurrence)
    let mut merged: Vec<(TokenId, usize)> = Vec::new();
    for (k, &(id, _)) in occurrences.iter().enumerate() {
        let tokens = model.pattern(id).tokens();
        let total = merged.len() + tokens.len();
        let mut slots = rand::seq::index::sample(rng, total, tokens.len()).into_vec();
        slots.sort_unstable();
        let mut next = Vec::with_capacity(total);
        let mut old = merged.into_iter();
        let mut slot = slots.iter().peekable();
        let mut own = tokens.iter();
        for i in 0..total {
            if slot.peek() == Some(&&i) {
                slot.next();
                next.push((*own.next().unwrap(), k));
            } else {
                next.push(old.next().unwrap());
            }
        }
        merged = next;
    }

    let mut covering = Covering {
        occurrences: occurrences
            .iter()
            .map(|&(pattern, n)| Occurrence {
                pattern,
                n,
                positions: Vec::new(),
            })
            .collect(),
    };
    let mut sequence = Vec::with_capacity(merged.len());
    for (pos, (token, k)) in merged.into_iter().enumerate() {
        sequence.push(token);
        covering.occurrences[k].positions.push(pos as u32);
    }
    (sequence, covering)
}
