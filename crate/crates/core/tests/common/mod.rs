//! Brute-force reference implementations used by the integration tests.
//! None of these share code with the library beyond its data types.

#![allow(dead_code)]

use std::collections::HashSet;

use pamine::corpus::{Pattern, TokenId};
use pamine::model::{
    Covering, ModelView, Occurrence, OccurrenceProbabilities, PatternId, PatternSet,
};

/// Every distinct arrangement of occurrences with the given lengths, each
/// occurrence drawing its tokens from its own alphabet.
pub fn enumerate_interleavings(lengths: &[usize]) -> HashSet<Vec<(usize, usize)>> {
    fn go(
        lengths: &[usize],
        next: &mut Vec<usize>,
        acc: &mut Vec<(usize, usize)>,
        out: &mut HashSet<Vec<(usize, usize)>>,
    ) {
        let mut done = true;
        for k in 0..lengths.len() {
            if next[k] < lengths[k] {
                done = false;
                acc.push((k, next[k]));
                next[k] += 1;
                go(lengths, next, acc, out);
                next[k] -= 1;
                acc.pop();
            }
        }
        if done {
            out.insert(acc.clone());
        }
    }
    let mut out = HashSet::new();
    go(
        lengths,
        &mut vec![0; lengths.len()],
        &mut Vec::new(),
        &mut out,
    );
    out
}

/// All compositions (ordered lists of positive parts) of `n`.
pub fn compositions(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 1..=n {
        for mut rest in compositions(n - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// `P(c)` by multiplying the chained Bernoullis in probability space.
pub fn direct_count_probability(probs: &[f64], c: usize) -> f64 {
    let at = |n: usize| probs.get(n - 1).copied().unwrap_or(0.0);
    let mut p = 1.0;
    for n in 1..=c {
        p *= at(n);
    }
    p * (1.0 - at(c + 1))
}

/// `n!` as a float, by repeated multiplication.
fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// `ln p(X, z | π)` evaluated in probability space then logged. Assumes a
/// valid complete covering.
pub fn direct_log_joint(covering: &Covering, model: &impl ModelView) -> f64 {
    let mut p = 1.0;
    for i in 0..model.num_patterns() {
        let id = PatternId(i as u32);
        let c = covering
            .occurrences
            .iter()
            .filter(|o| o.pattern == id)
            .count();
        p *= direct_count_probability(model.probs(id).as_slice(), c);
    }
    let lengths: Vec<usize> = covering
        .occurrences
        .iter()
        .map(|o| o.positions.len())
        .collect();
    let total: usize = lengths.iter().sum();
    let arrangements = factorial(total) / lengths.iter().map(|&l| factorial(l)).product::<f64>();
    (p / arrangements).ln()
}

/// True iff the `n`-fold concatenation of `pattern` is a subsequence of
/// `sequence`, via an exhaustive search over position subsets.
pub fn contains_brute(pattern: &[TokenId], sequence: &[TokenId]) -> bool {
    fn go(p: &[TokenId], s: &[TokenId]) -> bool {
        match p.split_first() {
            None => true,
            Some((first, rest)) => (0..s.len()).any(|i| s[i] == *first && go(rest, &s[i + 1..])),
        }
    }
    go(pattern, sequence)
}

pub fn capacity_brute(pattern: &[TokenId], sequence: &[TokenId]) -> usize {
    let mut n = 0;
    loop {
        let repeated: Vec<TokenId> = pattern
            .iter()
            .copied()
            .cycle()
            .take(pattern.len() * (n + 1))
            .collect();
        if repeated.len() > sequence.len() || !contains_brute(&repeated, sequence) {
            return n;
        }
        n += 1;
    }
}

/// Every valid complete covering of `sequence` by patterns of `model`.
pub fn all_coverings(sequence: &[TokenId], model: &PatternSet) -> Vec<Covering> {
    fn choose(
        sequence: &[TokenId],
        used: &mut Vec<bool>,
        pattern: &[TokenId],
        from: usize,
        picked: &mut Vec<u32>,
        out: &mut Vec<Vec<u32>>,
    ) {
        if picked.len() == pattern.len() {
            out.push(picked.clone());
            return;
        }
        let want = pattern[picked.len()];
        for p in from..sequence.len() {
            if !used[p] && sequence[p] == want {
                picked.push(p as u32);
                choose(sequence, used, pattern, p + 1, picked, out);
                picked.pop();
            }
        }
    }

    fn go(
        sequence: &[TokenId],
        model: &PatternSet,
        used: &mut Vec<bool>,
        acc: &mut Vec<(PatternId, Vec<u32>)>,
        out: &mut Vec<Covering>,
    ) {
        let Some(first) = used.iter().position(|u| !u) else {
            let mut counts = vec![0u32; model.len()];
            let occurrences = acc
                .iter()
                .map(|(id, positions)| {
                    counts[id.index()] += 1;
                    Occurrence {
                        pattern: *id,
                        n: counts[id.index()],
                        positions: positions.clone(),
                    }
                })
                .collect();
            out.push(Covering { occurrences });
            return;
        };
        // the lowest uncovered position starts some occurrence
        for id in model.ids() {
            let pattern = model.entry(id).pattern.tokens();
            if pattern[0] != sequence[first] {
                continue;
            }
            let mut options = Vec::new();
            used[first] = true;
            choose(
                sequence,
                used,
                pattern,
                first + 1,
                &mut vec![first as u32],
                &mut options,
            );
            for positions in options {
                for &p in &positions {
                    used[p as usize] = true;
                }
                acc.push((id, positions.clone()));
                go(sequence, model, used, acc, out);
                acc.pop();
                for &p in &positions[1..] {
                    used[p as usize] = false;
                }
            }
            used[first] = false;
        }
    }

    let mut out = Vec::new();
    go(
        sequence,
        model,
        &mut vec![false; sequence.len()],
        &mut Vec::new(),
        &mut out,
    );
    out
}

/// A model over `alphabet` singletons plus `extra` patterns, all with the
/// given probabilities.
pub fn model_of(
    singletons: &[(TokenId, Vec<f64>)],
    extra: &[(Vec<TokenId>, Vec<f64>)],
) -> PatternSet {
    let mut pats = PatternSet::new();
    for (t, p) in singletons {
        pats.insert(
            Pattern::singleton(*t),
            OccurrenceProbabilities::new(p.clone()).unwrap(),
            0,
        )
        .unwrap();
    }
    for (tokens, p) in extra {
        let _ = pats.insert(
            Pattern::new(tokens.clone()),
            OccurrenceProbabilities::new(p.clone()).unwrap(),
            0,
        );
    }
    pats
}

pub fn ids(v: &[u32]) -> Vec<TokenId> {
    v.iter().map(|&i| TokenId(i)).collect()
}

/// log(Σ exp(x)) over finite and infinite terms.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
