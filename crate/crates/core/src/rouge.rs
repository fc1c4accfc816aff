//! ROUGE-1/2/L F1 scoring over token sequences.
//!
//! Tokens are generic; the CLI scores characters (matching the
//! character-level models) or whitespace-split words. ROUGE-L is
//! sentence-level LCS with β = 1.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// `P = matched/cand`, `R = matched/ref`, and the β=1 F-measure in its
    /// reduced form `2·matched/(cand + ref)`, which is exact where the
    /// textbook `2PR/(P+R)` picks up intermediate rounding.
    fn from_counts(matched: f64, cand_units: f64, ref_units: f64) -> Self {
        if matched == 0.0 {
            return RougeScore::default();
        }
        RougeScore {
            precision: matched / cand_units,
            recall: matched / ref_units,
            f1: 2.0 * matched / (cand_units + ref_units),
        }
    }
}

/// Clipped n-gram overlap. Empty n-gram sets on either side score zero.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    assert!(n >= 1, "n-gram order must be >= 1");
    if candidate.len() < n || reference.len() < n {
        return RougeScore::default();
    }
    let mut ref_counts: HashMap<&[T], usize> = HashMap::new();
    for gram in reference.windows(n) {
        *ref_counts.entry(gram).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for gram in candidate.windows(n) {
        if let Some(count) = ref_counts.get_mut(gram) {
            if *count > 0 {
                *count -= 1;
                overlap += 1;
            }
        }
    }
    let cand_grams = candidate.len() - n + 1;
    let ref_grams = reference.len() - n + 1;
    RougeScore::from_counts(overlap as f64, cand_grams as f64, ref_grams as f64)
}

/// Longest-common-subsequence length by the standard dynamic program.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            row[j + 1] = if x == y { prev[j] + 1 } else { row[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    prev[b.len()]
}

/// Sentence-level ROUGE-L: `R = LCS/|ref|`, `P = LCS/|cand|`, F1 at β = 1.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::default();
    }
    let lcs = lcs_length(candidate, reference) as f64;
    RougeScore::from_counts(lcs, candidate.len() as f64, reference.len() as f64)
}

/// Mean P/R/F1 per metric over a corpus of `(candidate, reference)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusRouge {
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_l: RougeScore,
}

pub fn corpus_rouge<T: Eq + Hash>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<CorpusRouge> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput { what: "rouge pair list" });
    }
    let mean = |scores: Vec<RougeScore>| {
        let n = scores.len() as f64;
        RougeScore {
            precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
            recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
            f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
        }
    };
    Ok(CorpusRouge {
        rouge_1: mean(pairs.iter().map(|(c, r)| rouge_n(c, r, 1)).collect()),
        rouge_2: mean(pairs.iter().map(|(c, r)| rouge_n(c, r, 2)).collect()),
        rouge_l: mean(pairs.iter().map(|(c, r)| rouge_l(c, r)).collect()),
    })
}

/// Token unit for text scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tokenization {
    /// One token per Unicode scalar value — the unit the character-level
    /// models are scored with.
    Char,
    /// Whitespace-delimited words, for space-separated text.
    Whitespace,
}

pub fn tokenize(text: &str, mode: Tokenization) -> Vec<String> {
    match mode {
        Tokenization::Char => text.chars().map(|c| c.to_string()).collect(),
        Tokenization::Whitespace => text.split_whitespace().map(|w| w.to_string()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    /// Exponential reference: try every subsequence of `a`.
    fn brute_force_lcs(a: &[u8], b: &[u8]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
            if sub.len() > best && is_subsequence(&sub, b) {
                best = sub.len();
            }
        }
        best
    }

    fn is_subsequence(needle: &[u8], hay: &[u8]) -> bool {
        let mut it = hay.iter();
        needle.iter().all(|x| it.any(|y| y == x))
    }

    #[test]
    fn lcs_hand_values() {
        let a: Vec<char> = "abcde".chars().collect();
        let b: Vec<char> = "ace".chars().collect();
        assert_eq!(lcs_length(&a, &b), 3);
        assert_eq!(lcs_length(&a, &a), 5);
        assert_eq!(lcs_length(&a, &[]), 0);
        assert_eq!(lcs_length::<char>(&[], &b), 0);
    }

    #[test]
    fn lcs_matches_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let la = rng.gen_range(0..=10);
            let lb = rng.gen_range(0..=10);
            let a: Vec<u8> = (0..la).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<u8> = (0..lb).map(|_| rng.gen_range(0..4)).collect();
            assert_eq!(lcs_length(&a, &b), brute_force_lcs(&a, &b), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn rouge_n_hand_values() {
        let cand = ['a', 'b', 'c'];
        let reference = ['a', 'b', 'd'];
        let s = rouge_n(&cand, &reference, 1);
        assert!(close(s.precision, 2.0 / 3.0));
        assert!(close(s.recall, 2.0 / 3.0));
        assert!(close(s.f1, 2.0 / 3.0));

        let same = rouge_n(&cand, &cand, 1);
        assert!(close(same.f1, 1.0));

        let disjoint = rouge_n(&['a', 'b'], &['c', 'd'], 1);
        assert_eq!(disjoint, RougeScore::default());
    }

    #[test]
    fn rouge_n_clips_repeats() {
        // candidate repeats a token more often than the reference has it
        let s = rouge_n(&['a', 'a', 'a'], &['a', 'b'], 1);
        assert!(close(s.precision, 1.0 / 3.0));
        assert!(close(s.recall, 0.5));
    }

    #[test]
    fn rouge_l_hand_values() {
        let reference: Vec<char> = "abcde".chars().collect();
        let cand: Vec<char> = "ace".chars().collect();
        let s = rouge_l(&cand, &reference);
        assert!(close(s.recall, 0.6));
        assert!(close(s.precision, 1.0));
        assert!(close(s.f1, 0.75));

        assert!(close(rouge_l(&reference, &reference).f1, 1.0));
        assert_eq!(rouge_l(&[] as &[char], &reference), RougeScore::default());
    }

    #[test]
    fn corpus_rouge_averages() {
        let a = (vec![1u32, 2, 3], vec![1u32, 2, 3]);
        let b = (vec![4u32, 5], vec![6u32, 7]);
        let single = corpus_rouge(std::slice::from_ref(&a)).unwrap();
        assert!(close(single.rouge_1.f1, 1.0));

        let both = corpus_rouge(&[a.clone(), b.clone()]).unwrap();
        assert!(close(both.rouge_1.f1, 0.5));

        let swapped = corpus_rouge(&[b, a]).unwrap();
        assert_eq!(both, swapped);

        assert!(corpus_rouge::<u32>(&[]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn identical_sequences_score_one(
            xs in proptest::collection::vec(0u8..6, 2..12),
            n in 1usize..3,
        ) {
            let s = rouge_n(&xs, &xs, n);
            prop_assert!(close(s.f1, 1.0));
            prop_assert!(close(rouge_l(&xs, &xs).f1, 1.0));
        }

        #[test]
        fn swapping_sides_swaps_p_and_r(
            a in proptest::collection::vec(0u8..6, 1..12),
            b in proptest::collection::vec(0u8..6, 1..12),
        ) {
            for (fwd, rev) in [
                (rouge_n(&a, &b, 1), rouge_n(&b, &a, 1)),
                (rouge_n(&a, &b, 2), rouge_n(&b, &a, 2)),
                (rouge_l(&a, &b), rouge_l(&b, &a)),
            ] {
                prop_assert!(close(fwd.precision, rev.recall));
                prop_assert!(close(fwd.recall, rev.precision));
                prop_assert!(close(fwd.f1, rev.f1));
            }
        }
    }
}
