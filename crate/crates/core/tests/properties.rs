use std::collections::BTreeMap;

use num_traits::Zero;
use proptest::prelude::*;
use shillbench::distributions::{check_regular, optimal_reserve};
use shillbench::enumerate::{arrangements, multiset_count, multisets};
use shillbench::equilibrium::{lit_first_price_bid, tie_corrected_fp_payment_at};
use shillbench::revenue::{dark_revenue_formula, exact_revenue, optimal_posted_price, posted_price_revenue};
use shillbench::{ContinuousModel, FormatTag, MechanismSpec, PopulationModel, Rational, Scalar, TypeModel};

type Q = Rational;

fn grid(weights: &[i64]) -> TypeModel<Q> {
    let k = weights.len() as i64;
    let total: i64 = weights.iter().sum();
    TypeModel::finite(
        (0..k).map(|i| Q::ratio(i, k - 1)).collect(),
        weights.iter().map(|w| Q::ratio(*w, total)).collect(),
    )
    .unwrap()
}

fn prior(weights: &[i64]) -> PopulationModel<Q> {
    let total: i64 = weights.iter().sum();
    let map: BTreeMap<usize, Q> =
        weights.iter().enumerate().filter(|(_, w)| **w > 0).map(|(i, w)| (i + 1, Q::ratio(*w, total))).collect();
    PopulationModel::from_participant_prior(map).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_lit_bid_is_linear(n in 2usize..12, theta in 0.0f64..=1.0) {
        let b = lit_first_price_bid(&ContinuousModel::Uniform, n, 0.0, theta).unwrap();
        prop_assert!((b - theta * (n as f64 - 1.0) / n as f64).abs() <= 1e-9);
    }

    #[test]
    fn lit_bid_stays_below_type(n in 2usize..8, exponent in 0.5f64..3.0, theta in 0.05f64..=1.0) {
        let b = lit_first_price_bid(&ContinuousModel::Power { exponent }, n, 0.0, theta).unwrap();
        prop_assert!(b >= 0.0 && b < theta);
    }

    #[test]
    fn multiset_weights_cover_every_ordered_profile(points in 1usize..6, size in 0usize..6) {
        let total: Q = multisets(points, size).map(|m| arrangements::<Q>(&m)).fold(Q::zero(), |a, b| a + b);
        prop_assert_eq!(total, Q::ratio((points as i64).pow(size as u32), 1));
        prop_assert_eq!(multiset_count(points, size), multisets(points, size).count() as u64);
    }

    #[test]
    fn tie_corrected_payment_rises_with_competition(weights in prop::collection::vec(1i64..6, 3..5)) {
        let model = grid(&weights);
        let g = model.as_finite().unwrap();
        let top = g.len() - 1;
        let mut last = Q::zero();
        for n in 1..8 {
            let pay = tie_corrected_fp_payment_at(g, n, top, 0).unwrap();
            prop_assert!(pay <= g.value(top).clone());
            if n > 1 {
                prop_assert!(pay > last);
            }
            last = pay;
        }
    }

    #[test]
    fn tie_corrected_revenue_matches_virtual_surplus(
        weights in prop::collection::vec(1i64..5, 3..5),
        pop in prop::collection::vec(0i64..4, 3),
        reserve in any::<bool>(),
    ) {
        prop_assume!(pop.iter().any(|w| *w > 0));
        let model = grid(&weights);
        prop_assume!(check_regular(&model).is_ok());
        let population = prior(&pop);
        for format in [FormatTag::TieCorrectedSecondPrice, FormatTag::TieCorrectedFirstPrice] {
            let mut spec = MechanismSpec::new(format);
            if reserve {
                spec = spec.optimal_reserve();
            }
            let m = spec.build(&model, &population).unwrap();
            let formula = dark_revenue_formula(&m, &model, &population, &Q::zero()).unwrap();
            let enumerated = exact_revenue(&m, model.as_finite().unwrap(), &population, u64::MAX).unwrap();
            prop_assert_eq!(formula, enumerated);
        }
    }

    #[test]
    fn optimal_posted_price_dominates_grid_prices(
        weights in prop::collection::vec(1i64..6, 2..6),
        pop in prop::collection::vec(0i64..4, 3),
    ) {
        prop_assume!(pop.iter().any(|w| *w > 0));
        let model = grid(&weights);
        let population = prior(&pop);
        let (_, best) = optimal_posted_price(&model, &population).unwrap();
        for v in model.as_finite().unwrap().grid() {
            prop_assert!(posted_price_revenue(&model, &population, v) <= best);
        }
    }

    #[test]
    fn reserve_has_nonnegative_virtual_value(weights in prop::collection::vec(1i64..6, 2..6)) {
        let model = grid(&weights);
        prop_assume!(check_regular(&model).is_ok());
        let g = model.as_finite().unwrap();
        let r = optimal_reserve(&model).unwrap();
        let k = r.index.unwrap();
        let v = g.virtual_values();
        prop_assert!(v[k] >= Q::zero() || k == g.len() - 1);
        prop_assert!(v[..k].iter().all(|x| *x < Q::zero()));
    }
}
