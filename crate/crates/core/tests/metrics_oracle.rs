mod common;

use common::{oracle_accuracy, oracle_eer, oracle_fmr_point, same_fraction};
use identikit::bioeval::{
    collect_scores, compute_eer, compute_fmr_point, verification_accuracy, Rate, ScoreSet,
    FMR1000_BOUND, FMR100_BOUND,
};
use identikit::Matrix;
use proptest::prelude::*;

fn frac(r: Rate) -> (u128, u128) {
    (r.numerator() as u128, r.denominator() as u128)
}

/// Scores on a coarse grid so ties between and within lists are common.
fn score_list(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((-40i32..=40).prop_map(|k| k as f64 / 40.0), 1..max)
}

fn fine_list(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..=1.0, 1..max)
}

fn check_against_oracle(g: Vec<f64>, i: Vec<f64>) -> Result<(), TestCaseError> {
    let s = ScoreSet {
        genuine: g.clone(),
        imposter: i.clone(),
    };
    let (eer, t) = compute_eer(&s).unwrap();
    let (on, od, ot) = oracle_eer(&g, &i);
    prop_assert!(
        same_fraction(frac(eer), (on, od)),
        "eer {eer:?} vs {on}/{od}"
    );
    prop_assert_eq!(t, ot);
    for bound in [FMR100_BOUND, FMR1000_BOUND] {
        let (r, t) = compute_fmr_point(&s, bound).unwrap();
        let (on, od, ot) = oracle_fmr_point(&g, &i, bound);
        prop_assert!(same_fraction(frac(r), (on, od)));
        prop_assert_eq!(t, ot);
    }
    let (acc, t) = verification_accuracy(&s).unwrap();
    let (on, od, ot) = oracle_accuracy(&g, &i);
    prop_assert!(same_fraction(frac(acc), (on, od)));
    prop_assert_eq!(t, ot);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn metrics_match_exhaustive_sweep_with_ties(g in score_list(250), i in score_list(250)) {
        check_against_oracle(g, i)?;
    }

    #[test]
    fn metrics_match_exhaustive_sweep_continuous(g in fine_list(250), i in fine_list(250)) {
        check_against_oracle(g, i)?;
    }

    #[test]
    fn stricter_bound_never_lowers_fnmr(g in fine_list(200), i in fine_list(400)) {
        let s = ScoreSet { genuine: g, imposter: i };
        let (r100, _) = compute_fmr_point(&s, FMR100_BOUND).unwrap();
        let (r1000, _) = compute_fmr_point(&s, FMR1000_BOUND).unwrap();
        prop_assert!(r1000.value() >= r100.value());
    }

    #[test]
    fn eer_is_half_the_error_sum_at_its_threshold(g in score_list(100), i in score_list(100)) {
        let s = ScoreSet { genuine: g.clone(), imposter: i.clone() };
        let (eer, t) = compute_eer(&s).unwrap();
        let fmr = i.iter().filter(|&&x| x >= t).count() as f64 / i.len() as f64;
        let fnmr = g.iter().filter(|&&x| x < t).count() as f64 / g.len() as f64;
        prop_assert!((eer.value() - (fmr + fnmr) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn scores_are_invariant_to_power_of_two_scaling(
        rows in prop::collection::vec(prop::collection::vec(-4.0f64..4.0, 5), 6..12),
        shift in -8i32..8,
    ) {
        prop_assume!(rows.iter().all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6));
        let e = Matrix::from_rows(&rows).unwrap();
        let mut scaled = e.clone();
        scaled.scale(2f64.powi(shift));
        let labels: Vec<usize> = (0..rows.len()).map(|k| k % 3).collect();
        let a = collect_scores(&e, &labels, &e, &labels).unwrap();
        let b = collect_scores(&scaled, &labels, &e, &labels).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn identical_lists_sit_at_one_half() {
    let xs: Vec<f64> = (0..37).map(|k| (k as f64 * 0.37).sin()).collect();
    let s = ScoreSet {
        genuine: xs.clone(),
        imposter: xs,
    };
    assert_eq!(compute_eer(&s).unwrap().0, Rate::new(1, 2));
}
