//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

mod common;

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pamine::corpus::{parse_database_str, SequenceDatabase, TokenId};
use pamine::driver::{self, MiningConfig, RankedPattern};
use pamine::inference::greedy_cover;
use pamine::learning::{CandidateQueue, LearningState};
use pamine::model::{
    interleaving_count, log_joint, sample_sequence, OccurrenceProbabilities, PatternId,
};
use pamine::output::{emit_json, emit_tsv, parse_json, parse_tsv, OutputMetadata};
use pamine::synth::{
    random_planted, synth_generate_with, PlantedPattern, PlantingSpec, SynthConfig,
};

/// Greedy-equals-exhaustive rate measured once over the 1,000 seeded
/// instances of criterion 4 (700 of 1,000).
const CALIBRATED_MATCH_RATE: f64 = 0.700;
const MATCH_RATE_SLACK: f64 = 0.02;

const SAMPLER_DRAWS: usize = 100_000;
const SAMPLER_TOLERANCE: f64 = 0.01;
const NORMALIZATION_TOLERANCE: f64 = 1e-12;
const PERTURBATION: f64 = 1e-3;
const PERTURBATION_SLACK: f64 = 1e-12;
const OBJECTIVE_SLACK: f64 = 1e-9;
const RECOVERY_SEED: u64 = 42;
const RECOVERY_NEEDED: usize = 8;
const RECOVERY_TOP: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, secs: u64) -> bool {
    elapsed < Duration::from_secs(secs)
}

fn interleaving_oracle() -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    let mut mismatches = Vec::new();
    for n in 0..=8 {
        for lengths in compositions(n) {
            let brute = enumerate_interleavings(&lengths).len();
            if interleaving_count(&lengths) != BigUint::from(brute) {
                mismatches.push(lengths);
            }
            cases += 1;
        }
    }
    let paper_case = interleaving_count(&[2, 2]) == BigUint::from(6u32);
    let elapsed = start.elapsed();
    check(
        mismatches.is_empty() && paper_case && within(elapsed, 10),
        format!(
            "{cases} compositions, {} mismatches, {{2,2}} -> 6: {paper_case}, {:.2}s",
            mismatches.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn sampler_uniformity() -> Outcome {
    let start = Instant::now();
    let model = model_of(&[], &[(ids(&[1, 2]), vec![1.0]), (ids(&[3, 4]), vec![1.0])]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut freq: HashMap<Vec<TokenId>, usize> = HashMap::new();
    for _ in 0..SAMPLER_DRAWS {
        let (x, _) = sample_sequence(&model, &mut rng);
        *freq.entry(x).or_default() += 1;
    }
    let worst = freq
        .values()
        .map(|&c| (c as f64 / SAMPLER_DRAWS as f64 - 1.0 / 6.0).abs())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    check(
        freq.len() == 6 && worst <= SAMPLER_TOLERANCE && within(elapsed, 10),
        format!(
            "{} arrangements, max |freq - 1/6| = {worst:.5}, {:.2}s",
            freq.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.gen_range(1..=6);
        let p: Vec<f64> = (0..m)
            .map(|_| match rng.gen_range(0..8) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.gen(),
            })
            .collect();
        let probs = OccurrenceProbabilities::new(p).unwrap();
        let total: f64 = (0..=m).map(|c| probs.count_probability(c)).sum();
        worst = worst.max((total - 1.0).abs());
    }
    check(
        worst <= NORMALIZATION_TOLERANCE,
        format!("1000 vectors, max |sum - 1| = {worst:.2e}"),
    )
}

fn random_probs(rng: &mut impl Rng) -> Vec<f64> {
    let m = rng.gen_range(1..=3);
    (0..m).map(|_| rng.gen()).collect()
}

fn greedy_vs_exhaustive() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut matches = 0;
    let mut exceed = 0;
    let instances = 1000;
    for _ in 0..instances {
        let alphabet = rng.gen_range(2..=4u32);
        let len = rng.gen_range(1..=8);
        let x: Vec<TokenId> = (0..len)
            .map(|_| TokenId(rng.gen_range(0..alphabet)))
            .collect();
        let singles: Vec<(TokenId, Vec<f64>)> = (0..alphabet)
            .map(|t| (TokenId(t), random_probs(&mut rng)))
            .collect();
        let mut extra = Vec::new();
        if len >= 2 {
            for _ in 0..rng.gen_range(0..=6) {
                // a random subsequence of X, so the pattern is usable
                let plen = rng.gen_range(2..=len.min(3));
                let mut picks = rand::seq::index::sample(&mut rng, len, plen).into_vec();
                picks.sort_unstable();
                extra.push((
                    picks.iter().map(|&i| x[i]).collect(),
                    random_probs(&mut rng),
                ));
            }
        }
        let model = model_of(&singles, &extra);
        let all: Vec<PatternId> = model.ids().collect();
        let greedy = log_joint(&x, &greedy_cover(&x, &model, &all).unwrap(), &model);
        let best = all_coverings(&x, &model)
            .iter()
            .map(|c| log_joint(&x, c, &model))
            .fold(f64::NEG_INFINITY, f64::max);
        if greedy > best + OBJECTIVE_SLACK {
            exceed += 1;
        }
        if greedy == best || (greedy - best).abs() <= OBJECTIVE_SLACK {
            matches += 1;
        }
    }
    let rate = matches as f64 / instances as f64;
    let bar = CALIBRATED_MATCH_RATE - MATCH_RATE_SLACK;
    let elapsed = start.elapsed();
    check(
        exceed == 0 && rate >= bar && within(elapsed, 60),
        format!(
            "{instances} instances, greedy above optimum: {exceed}, match rate {rate:.3} (bar {bar:.3}), {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn small_corpus(rng: &mut ChaCha8Rng, n: usize) -> SequenceDatabase {
    let rows: Vec<Vec<String>> = (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=10);
            (0..len)
                .map(|_| format!("m{}", rng.gen_range(0..8)))
                .collect()
        })
        .collect();
    SequenceDatabase::from_sequences(rows)
}

fn mstep_probes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut probes = 0;
    let mut violations = 0;
    for _ in 0..100 {
        let n = rng.gen_range(5..40);
        let db = small_corpus(&mut rng, n);
        let mut state = LearningState::initialize(&db).unwrap();
        let mut queue = CandidateQueue::new(state.patterns());
        for _ in 0..rng.gen_range(0..15) {
            let Some(c) = queue.next_candidate(&state) else {
                break;
            };
            state.structural_em_step(&c).unwrap();
        }
        state.em_optimize(3, 0.0).unwrap();
        let base = state.total_log_likelihood();
        let ids: Vec<PatternId> = state.patterns().ids().collect();
        for id in ids {
            let original = state.patterns().entry(id).probs.clone();
            let slice = original.as_slice();
            for n in 0..=slice.len() {
                for sign in [-1.0, 1.0] {
                    let mut p = slice.to_vec();
                    if n == p.len() {
                        p.push(0.0);
                    }
                    p[n] = (p[n] + sign * PERTURBATION).clamp(0.0, 1.0);
                    if p[n] == slice.get(n).copied().unwrap_or(0.0) {
                        continue;
                    }
                    state.set_probabilities(id, OccurrenceProbabilities::new(p).unwrap());
                    probes += 1;
                    if state.total_log_likelihood() > base + PERTURBATION_SLACK {
                        violations += 1;
                    }
                }
            }
            state.set_probabilities(id, original);
        }
    }
    check(
        violations == 0 && probes > 0,
        format!("100 states, {probes} perturbations, {violations} increases"),
    )
}

fn planted_corpus(
    seed: u64,
    spec: &PlantingSpec,
    vocab_size: usize,
    noise: f64,
    n: usize,
) -> (SequenceDatabase, Vec<PlantedPattern>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted = random_planted(spec, vocab_size, &mut rng).unwrap();
    let config = SynthConfig {
        planted: planted.clone(),
        vocab_size,
        noise,
        n_sequences: n,
        seed,
    };
    let out = synth_generate_with(&config, &mut rng).unwrap();
    (
        parse_database_str(&out.corpus, &Default::default()),
        planted,
    )
}

fn acceptance_soundness() -> Outcome {
    let spec = PlantingSpec {
        count: 5,
        min_len: 2,
        max_len: 4,
        min_prob: 0.3,
        max_prob: 0.6,
    };
    let (db, _) = planted_corpus(6, &spec, 40, 0.03, 300);
    let config = MiningConfig {
        audit: true,
        ..MiningConfig::default()
    };
    let run = driver::run(&db, &config).unwrap();
    let mut accepted = 0;
    let mut rejected = 0;
    let mut bad_accept = 0;
    let mut bad_reject = 0;
    for rec in &run.audit {
        if rec.accepted {
            accepted += 1;
            if rec.recomputed_after <= rec.recomputed_before || rec.recomputed_after.is_nan() {
                bad_accept += 1;
            }
        } else {
            rejected += 1;
            if rec.fingerprint_after != rec.fingerprint_before {
                bad_reject += 1;
            }
        }
    }
    check(
        bad_accept == 0 && bad_reject == 0 && accepted > 0 && rejected > 0,
        format!(
            "{accepted} accepted ({bad_accept} without strict gain), {rejected} rejected ({bad_reject} state changes)"
        ),
    )
}

struct RecoveryRun {
    ranked: Vec<RankedPattern>,
    metadata: OutputMetadata,
    tsv: String,
    json: String,
    elapsed: Duration,
}

fn recovery_corpus() -> (SequenceDatabase, Vec<PlantedPattern>) {
    let spec = PlantingSpec {
        count: 10,
        min_len: 2,
        max_len: 4,
        min_prob: 0.3,
        max_prob: 0.6,
    };
    planted_corpus(RECOVERY_SEED, &spec, 100, 0.02, 1000)
}

fn mine(db: &SequenceDatabase, threads: usize) -> RecoveryRun {
    let start = Instant::now();
    let config = MiningConfig {
        threads,
        ..MiningConfig::default()
    };
    let run = driver::run(db, &config).unwrap();
    let ranked = driver::rank(run.state.patterns(), db.tokens(), config.top_k);
    let metadata = OutputMetadata {
        config,
        database: db.stats(),
        stats: run.stats,
        convergence: run.stats.convergence.to_string(),
    };
    RecoveryRun {
        tsv: emit_tsv(&ranked),
        json: emit_json(&ranked, None),
        ranked,
        metadata,
        elapsed: start.elapsed(),
    }
}

fn planted_recovery(run: &RecoveryRun, planted: &[PlantedPattern]) -> Outcome {
    let top: Vec<&Vec<String>> = run
        .ranked
        .iter()
        .take(RECOVERY_TOP)
        .map(|r| &r.pattern)
        .collect();
    let found = planted.iter().filter(|p| top.contains(&&p.tokens)).count();
    check(
        found >= RECOVERY_NEEDED && within(run.elapsed, 300),
        format!(
            "{found}/{} planted patterns in top {RECOVERY_TOP} (need {RECOVERY_NEEDED}), {}, {:.1}s",
            planted.len(),
            run.metadata.convergence,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn determinism(single: &RecoveryRun, multi: &RecoveryRun) -> Outcome {
    let tsv = single.tsv == multi.tsv;
    let json = single.json == multi.json;
    check(
        tsv && json,
        format!(
            "threads 1 vs 8: TSV identical {tsv}, JSON patterns identical {json} ({} bytes)",
            single.tsv.len()
        ),
    )
}

fn format_round_trip(run: &RecoveryRun) -> Result<(), String> {
    if let Some(r) = run.ranked.iter().find(|r| r.pattern.len() < 2) {
        return Err(format!("singleton {:?} in output", r.pattern));
    }
    let rows = parse_tsv(&run.tsv).map_err(|e| e.to_string())?;
    if rows.len() != run.ranked.len() {
        return Err("TSV row count differs".into());
    }
    for (row, r) in rows.iter().zip(&run.ranked) {
        if row.rank != r.rank
            || row.pattern != r.pattern
            || row.support != r.support
            || (row.probability - r.probability).abs() > 5e-7
        {
            return Err(format!("TSV row {} differs", r.rank));
        }
    }
    let doc =
        parse_json(&emit_json(&run.ranked, Some(&run.metadata))).map_err(|e| e.to_string())?;
    if doc.patterns != run.ranked || doc.metadata.as_ref() != Some(&run.metadata) {
        return Err("JSON round trip differs".into());
    }
    Ok(())
}

fn singleton_exclusion(runs: &[&RecoveryRun]) -> Outcome {
    let small = [
        vec![vec!["a", "b"]; 3],
        vec![vec!["a"], vec!["b"], vec!["c"]],
        vec![vec!["x", "y", "z", "x", "y"], vec!["x", "y"], vec!["z"]],
    ];
    let small_runs: Vec<RecoveryRun> = small
        .iter()
        .map(|rows| mine(&SequenceDatabase::from_sequences(rows.clone()), 1))
        .collect();
    let mut failures = Vec::new();
    for run in runs.iter().copied().chain(small_runs.iter()) {
        if let Err(e) = format_round_trip(run) {
            failures.push(e);
        }
    }
    check(
        failures.is_empty(),
        format!(
            "{} runs, no singletons and TSV/JSON round trips: {}",
            runs.len() + small_runs.len(),
            if failures.is_empty() {
                "ok".into()
            } else {
                failures.join("; ")
            }
        ),
    )
}

fn main() -> ExitCode {
    let mut results = vec![
        ("1 interleaving-count oracle", interleaving_oracle()),
        ("2 sampler uniformity", sampler_uniformity()),
        ("3 count-distribution normalization", normalization()),
        ("4 greedy vs exhaustive covering", greedy_vs_exhaustive()),
        ("5 M-step optimality probes", mstep_probes()),
        (
            "6 structural-EM acceptance soundness",
            acceptance_soundness(),
        ),
    ];
    let (db, planted) = recovery_corpus();
    let single = mine(&db, 1);
    let multi = mine(&db, 8);
    results.push((
        "7 planted-pattern recovery",
        planted_recovery(&single, &planted),
    ));
    results.push((
        "8 determinism across thread counts",
        determinism(&single, &multi),
    ));
    results.push((
        "9 singleton exclusion and format",
        singleton_exclusion(&[&single, &multi]),
    ));

    let mut failed = 0;
    for (name, outcome) in &results {
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {name}: {status} ({})", outcome.detail);
        if !outcome.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
