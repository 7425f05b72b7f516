//! Fleiss' kappa for agreement between a fixed number of raters over
//! categorical items.

use super::AnalysisError;

/// Fleiss' kappa over an items × categories count table. Every row must sum
/// to the same number of ratings (the rater count), at least two.
///
/// Returns 1.0 by convention when the expected agreement is already perfect
/// (all ratings in a single category), where the usual formula is 0/0.
pub fn fleiss_kappa(ratings: &[Vec<usize>]) -> Result<f64, AnalysisError> {
    if ratings.is_empty() || ratings[0].is_empty() {
        return Err(AnalysisError::EmptyRatings);
    }
    let n_categories = ratings[0].len();
    let n_raters: usize = ratings[0].iter().sum();
    if n_raters < 2 {
        return Err(AnalysisError::TooFewRaters { got: n_raters });
    }
    for (item, row) in ratings.iter().enumerate() {
        let got: usize = row.iter().sum();
        if row.len() != n_categories || got != n_raters {
            return Err(AnalysisError::UnequalRaterCounts {
                item,
                got,
                expected: n_raters,
            });
        }
    }

    let n_items = ratings.len() as f64;
    let n = n_raters as f64;
    // Per-item agreement: share of rater pairs that agree.
    let p_bar: f64 = ratings
        .iter()
        .map(|row| {
            let sum_sq: usize = row.iter().map(|&c| c * c).sum();
            (sum_sq as f64 - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / n_items;
    // Chance agreement from the marginal category shares.
    let p_e: f64 = (0..n_categories)
        .map(|j| {
            let share =
                ratings.iter().map(|row| row[j]).sum::<usize>() as f64 / (n_items * n);
            share * share
        })
        .sum();

    if (1.0 - p_e).abs() < f64::EPSILON {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_three_rater_example() {
        // Four items, three raters, two categories. Per-item pair agreement:
        // (3,0) and (0,3) give 1, (2,1) and (1,2) give 1/3, so P̄ = 2/3.
        // Marginals are (6/12, 6/12), so P̄e = 1/2 and κ = (2/3 − 1/2)/(1/2).
        let ratings = vec![vec![3, 0], vec![0, 3], vec![2, 1], vec![1, 2]];
        let kappa = fleiss_kappa(&ratings).unwrap();
        assert!((kappa - 1.0 / 3.0).abs() < 1e-12, "got {kappa}");
    }

    #[test]
    fn perfect_agreement_across_categories_is_one() {
        let ratings = vec![vec![4, 0, 0], vec![0, 4, 0], vec![0, 0, 4], vec![4, 0, 0]];
        assert_eq!(fleiss_kappa(&ratings).unwrap(), 1.0);
    }

    #[test]
    fn unanimous_single_category_uses_the_convention() {
        // P̄e == 1 makes the formula 0/0; defined as full agreement.
        let ratings = vec![vec![5, 0], vec![5, 0], vec![5, 0]];
        assert_eq!(fleiss_kappa(&ratings).unwrap(), 1.0);
    }

    #[test]
    fn systematic_disagreement_is_negative() {
        // Every item splits 1–1: observed agreement 0, chance 1/2, κ = −1.
        let ratings = vec![vec![1, 1], vec![1, 1]];
        let kappa = fleiss_kappa(&ratings).unwrap();
        assert!((kappa - (-1.0)).abs() < 1e-12, "got {kappa}");
    }

    #[test]
    fn unequal_rater_counts_are_rejected() {
        let ratings = vec![vec![2, 1], vec![2, 2]];
        assert!(matches!(
            fleiss_kappa(&ratings),
            Err(AnalysisError::UnequalRaterCounts {
                item: 1,
                got: 4,
                expected: 3
            })
        ));
    }

    #[test]
    fn single_rater_is_rejected() {
        let ratings = vec![vec![1, 0], vec![0, 1]];
        assert!(matches!(
            fleiss_kappa(&ratings),
            Err(AnalysisError::TooFewRaters { got: 1 })
        ));
    }

    #[test]
    fn empty_tables_are_rejected() {
        assert!(matches!(
            fleiss_kappa(&[]),
            Err(AnalysisError::EmptyRatings)
        ));
        assert!(matches!(
            fleiss_kappa(&[vec![]]),
            Err(AnalysisError::EmptyRatings)
        ));
    }

    fn ratings_strategy() -> impl Strategy<Value = Vec<Vec<usize>>> {
        // 2..6 raters, 2..5 categories, 1..8 items; each row distributes the
        // raters over the categories.
        (2usize..6, 2usize..5, 1usize..8).prop_flat_map(|(raters, cats, items)| {
            proptest::collection::vec(
                proptest::collection::vec(0usize..=raters, cats - 1).prop_map(move |cuts| {
                    // Turn sorted cut points into a composition of `raters`.
                    let mut cuts = cuts;
                    cuts.sort_unstable();
                    let mut row = Vec::with_capacity(cats);
                    let mut prev = 0;
                    for &c in &cuts {
                        row.push(c - prev);
                        prev = c;
                    }
                    row.push(raters - prev);
                    row
                }),
                items,
            )
        })
    }

    proptest! {
        #[test]
        fn kappa_is_invariant_to_item_order(ratings in ratings_strategy()) {
            let forward = fleiss_kappa(&ratings).unwrap();
            let mut reversed = ratings.clone();
            reversed.reverse();
            let backward = fleiss_kappa(&reversed).unwrap();
            prop_assert!((forward - backward).abs() < 1e-12);
        }

        #[test]
        fn kappa_is_invariant_to_category_relabeling(ratings in ratings_strategy()) {
            let original = fleiss_kappa(&ratings).unwrap();
            let relabeled: Vec<Vec<usize>> = ratings
                .iter()
                .map(|row| row.iter().rev().copied().collect())
                .collect();
            let swapped = fleiss_kappa(&relabeled).unwrap();
            prop_assert!((original - swapped).abs() < 1e-12);
        }

        #[test]
        fn kappa_never_exceeds_one(ratings in ratings_strategy()) {
            let kappa = fleiss_kappa(&ratings).unwrap();
            prop_assert!(kappa <= 1.0 + 1e-12);
        }
    }
}
