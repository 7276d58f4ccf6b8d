//! Reference-based n-gram metrics: corpus BLEU-1..4, sentence GLEU,
//! ROUGE-1/2 and ROUGE-L, over a CJK-aware token stream.
//!
//! Definitions pinned here:
//! - BLEU pools clipped n-gram counts over the corpus, takes the geometric
//!   mean over orders 1..max_n, and multiplies by the brevity penalty
//!   `min(1, e^(1 - r/c))`. Orders where neither side can form an n-gram
//!   are skipped; any other order with zero matches yields 0 (no smoothing).
//! - GLEU is the sentence-level variant: over all n-grams for n = 1..4
//!   pooled, `min(matches/candidate_total, matches/reference_total)`; the
//!   corpus value is the mean over pairs.
//! - ROUGE-N uses clipped n-gram overlap; ROUGE-L uses the longest common
//!   subsequence. Both report precision, recall, and F1; tables use F1.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("candidate and reference lists differ in length ({candidates} vs {references})")]
    LengthMismatch {
        candidates: usize,
        references: usize,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("n-gram order {0} out of range 1..=4")]
    BadOrder(usize),
}

/// An ordered token list. Empty-string tokens are rejected at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        debug_assert!(tokens.iter().all(|t| !t.is_empty()));
        Self(tokens.into_iter().filter(|t| !t.is_empty()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<&str>> for TokenSequence {
    fn from(tokens: Vec<&str>) -> Self {
        Self::new(tokens.into_iter().map(str::to_string).collect())
    }
}

fn is_cjk_ideograph(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF)
}

/// Tokenize text for metric computation: CJK ideographs become single-character
/// tokens, contiguous alphanumeric runs become one case-folded token, and
/// punctuation and whitespace are dropped.
pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if is_cjk_ideograph(c) {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            tokens.push(c.to_string());
        } else if c.is_alphanumeric() {
            run.extend(c.to_lowercase());
        } else if !run.is_empty() {
            tokens.push(std::mem::take(&mut run));
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    TokenSequence(tokens)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

fn clipped_matches(candidate: &[String], reference: &[String], n: usize) -> (usize, usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let cand_total: usize = cand.values().sum();
    let ref_total: usize = refs.values().sum();
    let matched: usize = cand
        .iter()
        .map(|(gram, &count)| count.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    (matched, cand_total, ref_total)
}

/// Corpus-level BLEU with orders 1..=max_n and the standard brevity penalty.
pub fn bleu(
    candidates: &[TokenSequence],
    references: &[TokenSequence],
    max_n: usize,
) -> Result<f64, MetricsError> {
    if !(1..=4).contains(&max_n) {
        return Err(MetricsError::BadOrder(max_n));
    }
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }

    let cand_len: usize = candidates.iter().map(TokenSequence::len).sum();
    let ref_len: usize = references.iter().map(TokenSequence::len).sum();
    if cand_len == 0 {
        return Ok(0.0);
    }

    let mut log_precision_sum = 0.0;
    let mut orders_used = 0usize;
    for n in 1..=max_n {
        let mut matched = 0usize;
        let mut cand_total = 0usize;
        let mut ref_total = 0usize;
        for (cand, reference) in candidates.iter().zip(references) {
            let (m, c, r) = clipped_matches(cand.tokens(), reference.tokens(), n);
            matched += m;
            cand_total += c;
            ref_total += r;
        }
        if cand_total == 0 && ref_total == 0 {
            // No sequence on either side is long enough to form this order.
            continue;
        }
        if matched == 0 || cand_total == 0 {
            return Ok(0.0);
        }
        log_precision_sum += (matched as f64 / cand_total as f64).ln();
        orders_used += 1;
    }
    if orders_used == 0 {
        return Ok(0.0);
    }

    let brevity = (1.0 - ref_len as f64 / cand_len as f64).exp().min(1.0);
    Ok(brevity * (log_precision_sum / orders_used as f64).exp())
}

/// Sentence-level GLEU over pooled n-grams for n = 1..4.
pub fn gleu(candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut matched = 0usize;
    let mut cand_total = 0usize;
    let mut ref_total = 0usize;
    for n in 1..=4 {
        let (m, c, r) = clipped_matches(candidate.tokens(), reference.tokens(), n);
        matched += m;
        cand_total += c;
        ref_total += r;
    }
    if cand_total == 0 || ref_total == 0 {
        return 0.0;
    }
    let precision = matched as f64 / cand_total as f64;
    let recall = matched as f64 / ref_total as f64;
    precision.min(recall)
}

/// Mean sentence GLEU over a paired corpus.
pub fn gleu_corpus(
    candidates: &[TokenSequence],
    references: &[TokenSequence],
) -> Result<f64, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| gleu(c, r))
        .sum();
    Ok(total / candidates.len() as f64)
}

/// Precision / recall / F1 triple reported by the ROUGE family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    const ZERO: RougeScore = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn from_parts(matched: usize, cand_total: usize, ref_total: usize) -> Self {
        if cand_total == 0 || ref_total == 0 {
            return Self::ZERO;
        }
        let precision = matched as f64 / cand_total as f64;
        let recall = matched as f64 / ref_total as f64;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

/// ROUGE-N: clipped n-gram overlap between candidate and reference.
pub fn rouge_n(candidate: &TokenSequence, reference: &TokenSequence, n: usize) -> RougeScore {
    let (matched, cand_total, ref_total) =
        clipped_matches(candidate.tokens(), reference.tokens(), n);
    RougeScore::from_parts(matched, cand_total, ref_total)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    // Two-row dynamic program; the test-side oracle uses the full matrix.
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-L: longest-common-subsequence overlap.
pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::ZERO;
    }
    let lcs = lcs_len(candidate.tokens(), reference.tokens());
    RougeScore::from_parts(lcs, candidate.len(), reference.len())
}

/// One row of n-gram metrics over a paired corpus. ROUGE values are the
/// mean per-pair F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub gleu: f64,
    pub rouge_1: f64,
    pub rouge_2: f64,
    pub rouge_l: f64,
}

/// BLEU aggregation: pooled corpus counts (the standard definition) or the
/// mean of per-pair sentence scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BleuMode {
    #[default]
    Corpus,
    SentenceMean,
}

/// Mean single-pair BLEU over the corpus.
pub fn bleu_sentence_mean(
    candidates: &[TokenSequence],
    references: &[TokenSequence],
    max_n: usize,
) -> Result<f64, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut total = 0.0;
    for (cand, reference) in candidates.iter().zip(references) {
        total += bleu(
            std::slice::from_ref(cand),
            std::slice::from_ref(reference),
            max_n,
        )?;
    }
    Ok(total / candidates.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MetricOptions {
    #[serde(default)]
    pub bleu_mode: BleuMode,
}

/// Compute the full metric row for a paired corpus with the given options.
pub fn metric_row_with(
    candidates: &[TokenSequence],
    references: &[TokenSequence],
    options: &MetricOptions,
) -> Result<MetricRow, MetricsError> {
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let bleu_n = |n: usize| match options.bleu_mode {
        BleuMode::Corpus => bleu(candidates, references, n),
        BleuMode::SentenceMean => bleu_sentence_mean(candidates, references, n),
    };
    let pairs = candidates.len() as f64;
    let mean = |f: &dyn Fn(&TokenSequence, &TokenSequence) -> f64| -> f64 {
        candidates
            .iter()
            .zip(references)
            .map(|(c, r)| f(c, r))
            .sum::<f64>()
            / pairs
    };
    Ok(MetricRow {
        bleu_1: bleu_n(1)?,
        bleu_2: bleu_n(2)?,
        bleu_3: bleu_n(3)?,
        bleu_4: bleu_n(4)?,
        gleu: gleu_corpus(candidates, references)?,
        rouge_1: mean(&|c, r| rouge_n(c, r, 1).f1),
        rouge_2: mean(&|c, r| rouge_n(c, r, 2).f1),
        rouge_l: mean(&|c, r| rouge_l(c, r).f1),
    })
}

/// Compute the full metric row with default options (corpus BLEU).
pub fn metric_row(
    candidates: &[TokenSequence],
    references: &[TokenSequence],
) -> Result<MetricRow, MetricsError> {
    metric_row_with(candidates, references, &MetricOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: &[&str]) -> TokenSequence {
        TokenSequence::from(tokens.to_vec())
    }

    #[test]
    fn tokenize_latin_and_punctuation() {
        assert_eq!(tokenize("Hello, World").tokens(), ["hello", "world"]);
    }

    #[test]
    fn tokenize_splits_cjk_ideographs() {
        assert_eq!(tokenize("OFDM 调制").tokens(), ["ofdm", "调", "制"]);
    }

    #[test]
    fn tokenize_empty() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn bleu_identity_is_exactly_one() {
        let corpus = vec![seq(&["a", "b", "c", "d", "e"]), seq(&["x", "y", "z", "w"])];
        for n in 1..=4 {
            assert_eq!(bleu(&corpus, &corpus, n).unwrap(), 1.0);
        }
    }

    #[test]
    fn bleu_unigram_clipped_precision() {
        // Clipped unigram counts: a, b match; c does not. BP = 1.
        let got = bleu(&[seq(&["a", "b", "c"])], &[seq(&["a", "b", "d"])], 1).unwrap();
        assert!((got - 2.0 / 3.0).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn bleu_brevity_penalty() {
        // Perfect precision but candidate half the reference length: e^(1-2).
        let got = bleu(&[seq(&["a", "b"])], &[seq(&["a", "b", "c", "d"])], 1).unwrap();
        assert!((got - (-1.0f64).exp()).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn bleu_zero_when_any_order_has_no_match() {
        let got = bleu(
            &[seq(&["a", "x", "b", "y"])],
            &[seq(&["a", "q", "b", "r"])],
            2,
        )
        .unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn bleu_rejects_mismatched_corpora() {
        let err = bleu(&[seq(&["a"])], &[], 1).unwrap_err();
        assert!(matches!(err, MetricsError::LengthMismatch { .. }));
        let err = bleu(&[], &[], 1).unwrap_err();
        assert!(matches!(err, MetricsError::EmptyCorpus));
    }

    #[test]
    fn bleu_clipping_ignores_repeated_matched_tokens() {
        let reference = seq(&["a", "b"]);
        let short = bleu(&[seq(&["a", "b"])], std::slice::from_ref(&reference), 1).unwrap();
        let padded = bleu(&[seq(&["a", "b", "a", "a"])], &[reference], 1).unwrap();
        assert!(padded < short);
    }

    #[test]
    fn gleu_identity_and_empty() {
        let s = seq(&["a", "b", "c", "d"]);
        assert_eq!(gleu(&s, &s), 1.0);
        assert_eq!(gleu(&seq(&[]), &s), 0.0);
        assert_eq!(gleu(&s, &seq(&[])), 0.0);
    }

    #[test]
    fn gleu_pooled_ngram_example() {
        // Candidate n-grams (n=1..4): 3+2+1+0 = 6, all matched.
        // Reference n-grams: 4+3+2+1 = 10. min(6/6, 6/10) = 0.6.
        let got = gleu(&seq(&["a", "b", "c"]), &seq(&["a", "b", "c", "d"]));
        assert!((got - 0.6).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn rouge_n_identity_overlap_and_disjoint() {
        let s = seq(&["a", "b", "c"]);
        assert_eq!(
            rouge_n(&s, &s, 1),
            RougeScore {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );

        let got = rouge_n(&seq(&["a", "b", "c"]), &seq(&["a", "b", "d"]), 1);
        assert!((got.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((got.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((got.f1 - 2.0 / 3.0).abs() < 1e-12);

        assert_eq!(rouge_n(&seq(&["a"]), &seq(&["b"]), 1), RougeScore::ZERO);
    }

    #[test]
    fn rouge_l_lcs_example() {
        let got = rouge_l(&seq(&["a", "c", "e"]), &seq(&["a", "b", "c", "d", "e"]));
        assert!((got.recall - 3.0 / 5.0).abs() < 1e-12);
        assert!((got.precision - 1.0).abs() < 1e-12);

        assert_eq!(rouge_l(&seq(&[]), &seq(&["a"])), RougeScore::ZERO);
        let s = seq(&["a", "b", "c"]);
        assert_eq!(rouge_l(&s, &s).f1, 1.0);
    }

    #[test]
    fn rouge_l_swap_exchanges_precision_and_recall() {
        let a = seq(&["a", "b", "c", "d"]);
        let b = seq(&["a", "c", "d", "e", "f"]);
        let fwd = rouge_l(&a, &b);
        let rev = rouge_l(&b, &a);
        assert_eq!(fwd.precision, rev.recall);
        assert_eq!(fwd.recall, rev.precision);
        assert!((fwd.f1 - rev.f1).abs() < 1e-15);
    }

    #[test]
    fn sentence_mean_bleu_averages_per_pair_scores() {
        let candidates = vec![seq(&["a", "b", "c"]), seq(&["a", "b"])];
        let references = vec![seq(&["a", "b", "c"]), seq(&["a", "b", "c", "d"])];
        // Pair one scores 1.0; pair two scores e^(1 - 4/2).
        let expected = (1.0 + (-1.0f64).exp()) / 2.0;
        let got = bleu_sentence_mean(&candidates, &references, 1).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}");

        let row = metric_row_with(
            &candidates,
            &references,
            &MetricOptions {
                bleu_mode: BleuMode::SentenceMean,
            },
        )
        .unwrap();
        assert!((row.bleu_1 - expected).abs() < 1e-12);
        assert_ne!(
            row.bleu_1,
            metric_row(&candidates, &references).unwrap().bleu_1
        );
    }

    #[test]
    fn metric_row_identity_scores_one() {
        let corpus = vec![seq(&["a", "b", "c", "d"]), seq(&["e", "f", "g", "h", "i"])];
        let row = metric_row(&corpus, &corpus).unwrap();
        for value in [
            row.bleu_1,
            row.bleu_2,
            row.bleu_3,
            row.bleu_4,
            row.gleu,
            row.rouge_1,
            row.rouge_2,
            row.rouge_l,
        ] {
            assert_eq!(value, 1.0);
        }
    }
}
