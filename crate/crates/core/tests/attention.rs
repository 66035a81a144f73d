mod common;

use proptest::prelude::*;

use common::attention_trial;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn query_permutation_permutes_rows_exactly(seed in any::<u64>()) {
        prop_assert!(attention_trial(seed).0);
    }

    #[test]
    fn context_permutation_leaves_output_unchanged(seed in any::<u64>()) {
        let (_, err) = attention_trial(seed);
        prop_assert!(err < 1e-6, "{}", err);
    }
}
