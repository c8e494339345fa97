//! Smoothed sentence-level BLEU.
//!
//! Modified n-gram precisions for n = 1..4 with uniform weights, brevity
//! penalty `exp(1 - r/h)` when the hypothesis is shorter than the reference.
//! A precision with no matches uses numerator 0.1 instead of 0, and orders for
//! which the hypothesis has no n-grams at all are dropped with the remaining
//! weights renormalised.

use std::collections::HashMap;

pub const MAX_ORDER: usize = 4;
pub const ZERO_MATCH_NUMERATOR: f64 = 0.1;

/// Whitespace tokenisation, no case folding.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped matches and total hypothesis n-grams for order `n`.
pub fn modified_precision(hypothesis: &[&str], reference: &[&str], n: usize) -> (usize, usize) {
    if hypothesis.len() < n {
        return (0, 0);
    }
    let hyp = ngram_counts(hypothesis, n);
    let reference = if reference.len() >= n { ngram_counts(reference, n) } else { HashMap::new() };
    let matched = hyp
        .iter()
        .map(|(gram, &count)| count.min(reference.get(gram).copied().unwrap_or(0)))
        .sum();
    (matched, hypothesis.len() + 1 - n)
}

pub fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    }
}

pub fn sentence_bleu(hypothesis: &[&str], reference: &[&str]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 1..=MAX_ORDER {
        let (matched, total) = modified_precision(hypothesis, reference, n);
        if total == 0 {
            continue;
        }
        let numerator = if matched == 0 { ZERO_MATCH_NUMERATOR } else { matched as f64 };
        log_sum += (numerator / total as f64).ln();
        orders += 1;
    }
    let score = brevity_penalty(hypothesis.len(), reference.len()) * (log_sum / orders as f64).exp();
    score.clamp(0.0, 1.0)
}

/// BLEU of `hypothesis` text against `reference` text.
pub fn bleu(hypothesis: &str, reference: &str) -> f64 {
    sentence_bleu(&tokenize(hypothesis), &tokenize(reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sentences_score_one() {
        let s = "one two three four five six seven eight nine ten";
        assert_eq!(bleu(s, s), 1.0);
    }

    #[test]
    fn short_hypothesis_only_pays_brevity() {
        let got = bleu("a b c d", "a b c d e");
        assert!((got - (-0.25f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn disjoint_vocabularies_are_small_but_positive() {
        let got = bleu("a b c d e", "v w x y z");
        let expected = ZERO_MATCH_NUMERATOR * (1.0f64 / 120.0).powf(0.25);
        assert!((got - expected).abs() < 1e-12);
        assert!(got > 0.0 && got < 0.05);
    }

    #[test]
    fn empty_sides_score_zero() {
        assert_eq!(bleu("", "a b"), 0.0);
        assert_eq!(bleu("a b", ""), 0.0);
        assert_eq!(bleu("  ", "  "), 0.0);
    }

    #[test]
    fn clipping_limits_repeated_words() {
        assert_eq!(modified_precision(&["the"; 4], &["the", "cat"], 1), (1, 4));
    }

    #[test]
    fn case_is_significant() {
        assert!(bleu("The cat", "the cat") < 1.0);
    }
}
