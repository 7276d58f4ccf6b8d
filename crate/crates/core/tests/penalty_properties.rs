//! Properties of the length-penalized comprehensive score: branch
//! continuity, monotonicity, and invariance of penalties (hence rankings)
//! under a common rescaling of all lengths.

use proptest::prelude::*;
use qadistill::prompt_opt::{comprehensive_score, length_penalty};

proptest! {
    #[test]
    fn penalty_is_continuous_and_zero_at_the_branch_point(l_ref in 1usize..=5000, alpha in 0.0f64..=2.0) {
        prop_assert_eq!(length_penalty(l_ref, l_ref, alpha), 0.0);
        if l_ref > 1 {
            prop_assert_eq!(length_penalty(l_ref - 1, l_ref, alpha), 0.0);
        }
        // One character over the reference: a penalty strictly between the
        // branch value and a vanishing excess.
        let just_over = length_penalty(l_ref + 1, l_ref, alpha);
        prop_assert!(just_over >= 0.0);
        prop_assert!(just_over <= alpha / l_ref as f64 + 1e-15);
    }

    #[test]
    fn penalty_grows_with_response_length(
        l_ref in 1usize..=2000,
        shorter in 0usize..=4000,
        delta in 0usize..=500,
        alpha in 0.0f64..=2.0,
    ) {
        let a = length_penalty(shorter, l_ref, alpha);
        let b = length_penalty(shorter + delta, l_ref, alpha);
        prop_assert!(b >= a, "penalty fell from {a} to {b}");
    }

    #[test]
    fn comprehensive_score_moves_the_right_way(
        judge in 1.0f64..=10.0,
        l_res in 0usize..=4000,
        l_ref in 1usize..=2000,
    ) {
        let base = comprehensive_score(judge, l_res, l_ref, 0.5);
        prop_assert!(comprehensive_score(judge + 0.5, l_res, l_ref, 0.5) >= base);
        prop_assert!(comprehensive_score(judge, l_res + 100, l_ref, 0.5) <= base);
    }

    #[test]
    fn scaling_all_lengths_leaves_penalties_unchanged(
        l_res in 0usize..=3000,
        l_ref in 1usize..=3000,
        scale in 1usize..=7,
        alpha in 0.0f64..=2.0,
    ) {
        // The penalty depends only on the length ratio, so a common factor
        // on both lengths cancels exactly and no ranking can change.
        let original = length_penalty(l_res, l_ref, alpha);
        let scaled = length_penalty(l_res * scale, l_ref * scale, alpha);
        prop_assert_eq!(original, scaled);
    }
}

#[test]
fn no_clamping_below_the_judge_scale() {
    // A wildly long answer drives the comprehensive score below 1.
    let score = comprehensive_score(2.0, 3000, 200, 0.5);
    assert!(score < 0.0, "expected an unclamped score, got {score}");
}
