mod common;

use common::SUBEM_CASES;
use hyperrag::eval::{normalize_answer, recall_at_k, subem};
use proptest::prelude::*;

#[test]
fn subem_hand_labelled_pairs() {
    for &(prediction, answers, expected) in SUBEM_CASES {
        assert_eq!(
            subem(prediction, answers),
            expected,
            "{prediction:?} vs {answers:?}"
        );
    }
}

#[test]
fn recall_counts_only_the_first_k() {
    let ranked = ["d3", "d1", "d7"];
    assert!(recall_at_k(&ranked, &["d7"], 3));
    assert!(!recall_at_k(&ranked, &["d7"], 2));
    assert!(!recall_at_k(&ranked, &["d9"], 3));
    assert!(!recall_at_k::<&str, &str>(&[], &["d1"], 5));
}

proptest! {
    #[test]
    fn normalization_is_idempotent(s in "\\PC{0,40}") {
        let once = normalize_answer(&s);
        prop_assert_eq!(normalize_answer(&once), once.clone());
    }

    #[test]
    fn surrounding_text_keeps_a_match(
        answer in "[A-Za-z]{1,8}( [A-Za-z]{1,8}){0,2}",
        before in "[a-z ,.]{0,20}",
        after in "[a-z ,.!]{0,20}",
    ) {
        prop_assume!(subem(&answer, &[answer.as_str()]));
        let padded = format!("{before} {answer} {after}");
        prop_assert!(subem(&padded, &[answer.as_str()]));
    }

    #[test]
    fn extra_answers_never_remove_a_match(
        pred in "[a-z ]{0,30}",
        answers in prop::collection::vec("[a-z]{1,6}", 1..4),
        extra in "[a-z]{1,6}",
    ) {
        let mut more = answers.clone();
        more.push(extra);
        prop_assert!(!subem(&pred, &answers) || subem(&pred, &more));
    }
}
