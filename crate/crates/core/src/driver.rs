//! The mining driver: grow the pattern set with structural EM, refit with
//! EM, repeat until the candidate stream stalls, then rank the non-singleton
//! patterns by their first-occurrence probability.

use std::cmp::Ordering;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Pattern, TokenTable, DEFAULT_MAX_SEQUENCE_LENGTH};
use crate::learning::{CandidateQueue, LearningError, LearningState};
use crate::model::PatternSet;
use crate::patternfile::CheckpointCounters;

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error("could not start worker pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

/// Stopping controls for a mining run. None of these decides what counts as
/// interesting; they only bound the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub top_k: Option<usize>,
    pub seed: u64,
    pub threads: usize,
    /// Maximum number of candidate proposals over the whole run.
    pub max_candidates: usize,
    /// Stop after this many consecutive rejected proposals.
    pub rejection_streak: usize,
    pub time_limit_secs: Option<f64>,
    pub em_iters: usize,
    pub em_tol: f64,
    pub max_sequence_length: usize,
    /// Record fingerprints and recomputed likelihoods around every proposal.
    #[serde(skip)]
    pub audit: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            top_k: None,
            seed: 0,
            threads: 1,
            max_candidates: 100_000,
            rejection_streak: 500,
            time_limit_secs: None,
            em_iters: 10,
            em_tol: 1e-6,
            max_sequence_length: DEFAULT_MAX_SEQUENCE_LENGTH,
            audit: false,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MiningError> {
        let bad = |msg: &str| Err(MiningError::Config(msg.to_owned()));
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if self.top_k == Some(0) {
            return bad("top-k must be at least 1");
        }
        if self.max_candidates == 0 || self.rejection_streak == 0 || self.em_iters == 0 {
            return bad("budgets must be positive");
        }
        if !(self.em_tol > 0.0 && self.em_tol.is_finite()) {
            return bad("em tolerance must be a positive number");
        }
        if self.time_limit_secs.is_some_and(|t| t.is_nan() || t <= 0.0) {
            return bad("time limit must be positive");
        }
        if self.max_sequence_length == 0 {
            return bad("max sequence length must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convergence {
    QueueExhausted,
    RejectionStreak,
    CandidateBudget,
    TimeBudget,
}

impl Convergence {
    pub fn is_budget(self) -> bool {
        matches!(self, Convergence::CandidateBudget | Convergence::TimeBudget)
    }
}

impl fmt::Display for Convergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convergence::QueueExhausted => "converged: candidates exhausted",
            Convergence::RejectionStreak => "converged: rejection streak",
            Convergence::CandidateBudget | Convergence::TimeBudget => "converged: budget",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub outer_rounds: u64,
    pub em_iterations: u64,
    pub proposals: u64,
    pub accepted: u64,
    pub convergence: Convergence,
    pub wall_time_secs: f64,
}

impl RunStats {
    pub fn counters(&self) -> CheckpointCounters {
        CheckpointCounters {
            outer_rounds: self.outer_rounds,
            em_iterations: self.em_iterations,
            proposals: self.proposals,
            accepted: self.accepted,
        }
    }
}

/// One audited proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub pattern: Pattern,
    pub accepted: bool,
    pub fingerprint_before: u64,
    pub fingerprint_after: u64,
    /// Average log-likelihood recomputed sequence by sequence.
    pub recomputed_before: f64,
    pub recomputed_after: f64,
}

pub struct MiningRun<'db> {
    pub state: LearningState<'db>,
    pub stats: RunStats,
    pub audit: Vec<AuditRecord>,
}

/// Mines `state.database()` starting from `state`.
///
/// `on_round` is called after every outer round (structural phase plus EM
/// refit), e.g. to write a checkpoint.
pub fn run_from<'db>(
    mut state: LearningState<'db>,
    config: &MiningConfig,
    resumed: CheckpointCounters,
    on_round: &mut dyn FnMut(&LearningState<'db>, &RunStats),
) -> Result<MiningRun<'db>, MiningError> {
    config.validate()?;
    let start = Instant::now();
    let deadline = config
        .time_limit_secs
        .map(|s| start + Duration::from_secs_f64(s));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()?;

    let mut stats = RunStats {
        outer_rounds: resumed.outer_rounds,
        em_iterations: resumed.em_iterations,
        proposals: resumed.proposals,
        accepted: resumed.accepted,
        convergence: Convergence::QueueExhausted,
        wall_time_secs: 0.0,
    };
    let mut audit = Vec::new();
    let mut queue = CandidateQueue::new(state.patterns());
    let mut proposals_this_run = 0usize;
    let mut streak = 0usize;

    // only the heavy steps run inside the pool, so `on_round` need not be Send
    let report = pool.install(|| state.em_optimize(config.em_iters, config.em_tol))?;
    stats.em_iterations += report.iterations as u64;
    loop {
        let mut stop = None;
        // structural phase: propose until one candidate is admitted
        loop {
            if proposals_this_run >= config.max_candidates {
                stop = Some(Convergence::CandidateBudget);
                break;
            }
            if deadline.is_some_and(|d| Instant::now() >= d) {
                stop = Some(Convergence::TimeBudget);
                break;
            }
            let Some(candidate) = queue.next_candidate(&state) else {
                stop = Some(Convergence::QueueExhausted);
                break;
            };
            let before = config.audit.then(|| {
                (
                    state.fingerprint(),
                    pool.install(|| state.recompute_total_log_likelihood()),
                )
            });
            let proposal = pool.install(|| state.structural_em_step(&candidate))?;
            proposals_this_run += 1;
            stats.proposals += 1;
            if let Some((fingerprint_before, total_before)) = before {
                let n = state.database().len() as f64;
                audit.push(AuditRecord {
                    pattern: candidate.pattern.clone(),
                    accepted: proposal.accepted,
                    fingerprint_before,
                    fingerprint_after: state.fingerprint(),
                    recomputed_before: total_before / n,
                    recomputed_after: pool.install(|| state.recompute_total_log_likelihood()) / n,
                });
            }
            if proposal.accepted {
                log::debug!(
                    "accepted {:?} (support {}): {:.6} -> {:.6}",
                    state.database().tokens().render(candidate.pattern.tokens()),
                    candidate.support(),
                    proposal.average_before,
                    proposal.average_after
                );
                stats.accepted += 1;
                streak = 0;
                break;
            }
            streak += 1;
            if streak >= config.rejection_streak {
                stop = Some(Convergence::RejectionStreak);
                break;
            }
        }
        let report = pool.install(|| state.em_optimize(config.em_iters, config.em_tol))?;
        stats.em_iterations += report.iterations as u64;
        stats.outer_rounds += 1;
        stats.wall_time_secs = start.elapsed().as_secs_f64();
        on_round(&state, &stats);
        log::info!(
            "round {}: {} patterns, {} proposals, avg log-likelihood {:.6}",
            stats.outer_rounds,
            state.patterns().len(),
            stats.proposals,
            state.average_log_likelihood()
        );
        if let Some(reason) = stop {
            stats.convergence = reason;
            break;
        }
    }
    stats.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(MiningRun {
        state,
        stats,
        audit,
    })
}

/// Initializes from the database's singletons and mines it.
pub fn run<'db>(
    db: &'db crate::corpus::SequenceDatabase,
    config: &MiningConfig,
) -> Result<MiningRun<'db>, MiningError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()?;
    let state = pool.install(|| LearningState::initialize(db))?;
    run_from(state, config, CheckpointCounters::default(), &mut |_, _| {})
}

/// A mined pattern in ranked output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPattern {
    pub rank: usize,
    pub pattern: Vec<String>,
    pub probability: f64,
    pub support: usize,
    pub occurrence_probs: Vec<f64>,
}

/// Non-singleton patterns ordered by first-occurrence probability, then
/// support, then length (all descending), then token names; truncated to
/// `top_k`.
pub fn rank(pats: &PatternSet, tokens: &TokenTable, top_k: Option<usize>) -> Vec<RankedPattern> {
    let mut rows: Vec<RankedPattern> = pats
        .entries()
        .iter()
        .filter(|e| !e.pattern.is_singleton())
        .map(|e| RankedPattern {
            rank: 0,
            pattern: e
                .pattern
                .tokens()
                .iter()
                .map(|&t| tokens.name(t).to_owned())
                .collect(),
            probability: e.probs.first(),
            support: e.support,
            occurrence_probs: e.probs.as_slice().to_vec(),
        })
        .collect();
    rows.sort_by(rank_order);
    if let Some(k) = top_k {
        rows.truncate(k);
    }
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    rows
}

/// The ranking order of [`rank`].
pub fn rank_order(a: &RankedPattern, b: &RankedPattern) -> Ordering {
    b.probability
        .total_cmp(&a.probability)
        .then(b.support.cmp(&a.support))
        .then(b.pattern.len().cmp(&a.pattern.len()))
        .then_with(|| a.pattern.cmp(&b.pattern))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SequenceDatabase, TokenId};
    use crate::model::OccurrenceProbabilities;

    fn add(pats: &mut PatternSet, toks: &[u32], pi: f64, support: usize) {
        pats.insert(
            Pattern::new(toks.iter().map(|&i| TokenId(i)).collect()),
            OccurrenceProbabilities::new(vec![pi]).unwrap(),
            support,
        )
        .unwrap();
    }

    fn table(n: u32) -> TokenTable {
        let mut t = TokenTable::new();
        for i in 0..n {
            t.intern(&format!("t{i}"));
        }
        t
    }

    #[test]
    fn ranks_by_probability_then_support() {
        let mut pats = PatternSet::new();
        add(&mut pats, &[0], 0.99, 50);
        add(&mut pats, &[0, 1], 0.4, 3);
        add(&mut pats, &[1, 2], 0.9, 3);
        add(&mut pats, &[2, 3], 0.5, 3);
        add(&mut pats, &[3, 0], 0.5, 10);
        let ranked = rank(&pats, &table(4), None);
        let probs: Vec<f64> = ranked.iter().map(|r| r.probability).collect();
        assert_eq!(probs, vec![0.9, 0.5, 0.5, 0.4]);
        assert_eq!(ranked[1].pattern, vec!["t3", "t0"]);
        assert_eq!(ranked[1].support, 10);
        assert_eq!(
            ranked.iter().map(|r| r.rank).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        assert!(ranked.iter().all(|r| r.pattern.len() > 1));
        assert_eq!(rank(&pats, &table(4), Some(2)).len(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(MiningConfig::default().validate().is_ok());
        for bad in [
            MiningConfig {
                threads: 0,
                ..Default::default()
            },
            MiningConfig {
                top_k: Some(0),
                ..Default::default()
            },
            MiningConfig {
                rejection_streak: 0,
                ..Default::default()
            },
            MiningConfig {
                em_tol: 0.0,
                ..Default::default()
            },
            MiningConfig {
                time_limit_secs: Some(-1.0),
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn mines_repeated_pair() {
        let db = SequenceDatabase::from_sequences(vec![vec!["a", "b"]; 3]);
        let run = run(&db, &MiningConfig::default()).unwrap();
        let ranked = rank(run.state.patterns(), db.tokens(), None);
        assert_eq!(ranked[0].pattern, vec!["a", "b"]);
        assert!((ranked[0].probability - 1.0).abs() < 1e-12);
        assert_eq!(ranked[0].support, 3);
    }

    #[test]
    fn distinct_singletons_yield_nothing() {
        let db = SequenceDatabase::from_sequences(vec![vec!["a"], vec!["b"], vec!["c"]]);
        let run = run(&db, &MiningConfig::default()).unwrap();
        assert!(rank(run.state.patterns(), db.tokens(), None).is_empty());
        assert_eq!(run.stats.convergence, Convergence::QueueExhausted);
    }

    #[test]
    fn candidate_budget_is_reported() {
        let db = SequenceDatabase::from_sequences(vec![
            vec!["a", "b", "c"],
            vec!["c", "b", "a"],
            vec!["b", "a", "c"],
        ]);
        let cfg = MiningConfig {
            max_candidates: 1,
            ..Default::default()
        };
        let run = run(&db, &cfg).unwrap();
        assert_eq!(run.stats.proposals, 1);
        assert_eq!(run.stats.convergence, Convergence::CandidateBudget);
        assert_eq!(run.stats.convergence.to_string(), "converged: budget");
    }
}
