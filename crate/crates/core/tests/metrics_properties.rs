//! Property tests over the n-gram metrics: range bounds, identity and
//! disjoint extremes, clipping monotonicity, ROUGE-L symmetry, and
//! agreement with the brute-force oracles on random inputs.

mod common;

use proptest::prelude::*;
use qadistill::text_metrics::{bleu, gleu, rouge_l, rouge_n, tokenize, TokenSequence};

fn tokens(strategy_len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(vec!["a", "b", "c", "d", "e"]),
        strategy_len,
    )
    .prop_map(|v| v.into_iter().map(str::to_string).collect())
}

fn seq(tokens: &[String]) -> TokenSequence {
    TokenSequence::new(tokens.to_vec())
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_interval(c in tokens(0..=30), r in tokens(0..=30)) {
        let cand = seq(&c);
        let reference = seq(&r);
        for n in 1..=4usize {
            let b = bleu(std::slice::from_ref(&cand), std::slice::from_ref(&reference), n).unwrap();
            prop_assert!((0.0..=1.0).contains(&b), "bleu_{n} = {b}");
            let rn = rouge_n(&cand, &reference, n);
            for v in [rn.precision, rn.recall, rn.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        let g = gleu(&cand, &reference);
        prop_assert!((0.0..=1.0).contains(&g));
        let rl = rouge_l(&cand, &reference);
        prop_assert!((0.0..=1.0).contains(&rl.f1));
    }

    #[test]
    fn identity_scores_exactly_one(c in tokens(4..=30)) {
        let cand = seq(&c);
        for n in 1..=4usize {
            prop_assert_eq!(bleu(std::slice::from_ref(&cand), std::slice::from_ref(&cand), n).unwrap(), 1.0);
        }
        prop_assert_eq!(gleu(&cand, &cand), 1.0);
        prop_assert_eq!(rouge_n(&cand, &cand, 1).f1, 1.0);
        prop_assert_eq!(rouge_n(&cand, &cand, 2).f1, 1.0);
        prop_assert_eq!(rouge_l(&cand, &cand).f1, 1.0);
    }

    #[test]
    fn disjoint_vocabulary_scores_zero(len_c in 1..=20usize, len_r in 1..=20usize) {
        let cand = seq(&vec!["x".to_string(); len_c]);
        let reference = seq(&vec!["y".to_string(); len_r]);
        prop_assert_eq!(bleu(std::slice::from_ref(&cand), std::slice::from_ref(&reference), 1).unwrap(), 0.0);
        prop_assert_eq!(gleu(&cand, &reference), 0.0);
        prop_assert_eq!(rouge_n(&cand, &reference, 1).f1, 0.0);
        prop_assert_eq!(rouge_l(&cand, &reference).f1, 0.0);
    }

    #[test]
    fn padding_with_repeated_matched_tokens_never_raises_bleu(
        r in tokens(2..=15),
        pad in 1..=10usize,
    ) {
        let reference = seq(&r);
        let base = bleu(std::slice::from_ref(&reference), std::slice::from_ref(&reference), 1).unwrap();
        let mut padded_tokens = r.clone();
        for _ in 0..pad {
            padded_tokens.push(r[0].clone());
        }
        let padded = bleu(&[seq(&padded_tokens)], std::slice::from_ref(&reference), 1).unwrap();
        prop_assert!(padded <= base + 1e-12, "padding raised BLEU: {padded} > {base}");
    }

    #[test]
    fn rouge_l_swap_exchanges_precision_and_recall(c in tokens(1..=20), r in tokens(1..=20)) {
        let cand = seq(&c);
        let reference = seq(&r);
        let fwd = rouge_l(&cand, &reference);
        let rev = rouge_l(&reference, &cand);
        prop_assert_eq!(fwd.precision, rev.recall);
        prop_assert_eq!(fwd.recall, rev.precision);
        prop_assert!((fwd.f1 - rev.f1).abs() < 1e-15);
    }

    #[test]
    fn implementation_matches_oracles_on_random_pairs(c in tokens(1..=30), r in tokens(1..=30)) {
        let cand = seq(&c);
        let reference = seq(&r);
        for n in 1..=4usize {
            let ours = bleu(std::slice::from_ref(&cand), std::slice::from_ref(&reference), n).unwrap();
            let oracle = common::oracle_bleu(std::slice::from_ref(&c), std::slice::from_ref(&r), n);
            prop_assert!((ours - oracle).abs() < 1e-12, "bleu_{n}: {ours} vs {oracle}");
        }
        let oracle = common::oracle_gleu(&c, &r);
        prop_assert!((gleu(&cand, &reference) - oracle).abs() < 1e-12);
        for n in 1..=2usize {
            let ours = rouge_n(&cand, &reference, n);
            let (p, rc, f1) = common::oracle_rouge_n(&c, &r, n);
            prop_assert!((ours.precision - p).abs() < 1e-12);
            prop_assert!((ours.recall - rc).abs() < 1e-12);
            prop_assert!((ours.f1 - f1).abs() < 1e-12);
        }
        let ours = rouge_l(&cand, &reference);
        let (p, rc, f1) = common::oracle_rouge_l(&c, &r);
        prop_assert!((ours.precision - p).abs() < 1e-12);
        prop_assert!((ours.recall - rc).abs() < 1e-12);
        prop_assert!((ours.f1 - f1).abs() < 1e-12);
    }
}

#[test]
fn tokenizer_feeds_metrics_consistently() {
    // Mixed-script sanity: tokenization then metrics on equal strings is 1.
    let text = "OFDM 调制 maps bits onto 子载波 subcarriers.";
    let toks = tokenize(text);
    assert!(toks.len() > 5);
    assert_eq!(gleu(&toks, &toks), 1.0);
}
