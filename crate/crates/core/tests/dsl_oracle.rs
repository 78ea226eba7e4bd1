mod common;

use common::*;
use klafate::ruledsl::{eval_bool, parse_rule, DslError, ThresholdSet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn evaluation_matches_truth_tables(seed in any::<u64>(), depth in 1u32..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_expr(&mut rng, depth);
        let src = to_source(&t);
        let parsed = parse_rule(&src).unwrap();
        for a in assignments() {
            let got = eval_bool(&parsed, &realize(a), &ThresholdSet::new()).unwrap();
            prop_assert_eq!(got, truth(&t, a), "{} under {:?}", src, a);
        }
    }

    #[test]
    fn canonical_print_is_a_fixed_point(seed in any::<u64>(), depth in 1u32..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parsed = parse_rule(&to_source(&random_expr(&mut rng, depth))).unwrap();
        let printed = parsed.to_string();
        let again = parse_rule(&printed).unwrap();
        prop_assert_eq!(&again, &parsed);
        prop_assert_eq!(again.to_string(), printed);
    }
}

#[test]
fn precedence_without_parentheses() {
    let t = ThresholdSet::new();
    let cases = [
        ("c0 or c1 and not c0", [false, true, false, false], true),
        ("not c0 and c1", [true, true, false, false], false),
        ("c0 if c1 else not c0", [false, false, false, false], true),
        ("not level < 3", [false, false, true, false], false),
        ("c0 == c1 or pressure >= 5", [true, false, false, true], true),
    ];
    for (src, a, want) in cases {
        let e = parse_rule(src).unwrap();
        assert_eq!(eval_bool(&e, &realize(a), &t).unwrap(), want, "{src}");
    }
}

#[test]
fn syntax_errors_carry_positions() {
    match parse_rule("c0 and (c1 or") {
        Err(DslError::Syntax { pos, .. }) => assert_eq!((pos.line, pos.column), (1, 14)),
        other => panic!("{other:?}"),
    }
    assert!(parse_rule("c0 and and c1").is_err());
    assert!(parse_rule("").is_err());
}
