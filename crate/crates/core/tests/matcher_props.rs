use matchbias::matcher::{
    brute_force_match, has_crossing, has_crossing_quadratic, match_banded, match_capacitated, match_optimal_exact,
    match_with_replacement, MatchMethod,
};
use proptest::prelude::*;

fn instance(max_t: usize, max_c: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max_t).prop_flat_map(move |n1| {
        (n1..=max_c.max(n1))
            .prop_flat_map(move |n0| (prop::collection::vec(0.0..1.0f64, n1), prop::collection::vec(0.0..1.0f64, n0)))
    })
}

fn gridded(max_t: usize, max_c: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    // Coarse grid scores exercise ties.
    (1..=max_t).prop_flat_map(move |n1| {
        (n1..=max_c).prop_flat_map(move |n0| {
            (
                prop::collection::vec((0u8..6).prop_map(|k| f64::from(k) / 5.0), n1),
                prop::collection::vec((0u8..6).prop_map(|k| f64::from(k) / 5.0), n0),
            )
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn exact_matches_brute_force((t, c) in instance(5, 8)) {
        let e = match_optimal_exact(&t, &c).unwrap();
        let b = brute_force_match(&t, &c).unwrap();
        prop_assert!((e.total_cost - b.total_cost).abs() <= 1e-12);
        e.validate(t.len(), c.len()).unwrap();
    }

    #[test]
    fn exact_matches_brute_force_with_ties((t, c) in gridded(5, 8)) {
        let e = match_optimal_exact(&t, &c).unwrap();
        let b = brute_force_match(&t, &c).unwrap();
        prop_assert!((e.total_cost - b.total_cost).abs() <= 1e-12);
        prop_assert!(!has_crossing(&e, &t, &c));
    }

    #[test]
    fn exact_output_never_crosses((t, c) in instance(60, 120)) {
        let e = match_optimal_exact(&t, &c).unwrap();
        prop_assert!(!has_crossing(&e, &t, &c));
        prop_assert!(!has_crossing_quadratic(&e, &t, &c));
    }

    #[test]
    fn crossing_sweep_agrees_with_quadratic((t, c) in gridded(8, 12), seed in any::<u64>()) {
        // Any injective assignment, not only optimal ones.
        let mut order: Vec<usize> = (0..c.len()).collect();
        let mut x = seed | 1;
        for i in (1..order.len()).rev() {
            x ^= x << 13; x ^= x >> 7; x ^= x << 17;
            order.swap(i, (x % (i as u64 + 1)) as usize);
        }
        let mut m = match_optimal_exact(&t, &c).unwrap();
        m.pairs = (0..t.len()).map(|i| (i, order[i])).collect();
        prop_assert_eq!(has_crossing(&m, &t, &c), has_crossing_quadratic(&m, &t, &c));
    }

    #[test]
    fn total_cost_is_recomputed_sum((t, c) in instance(30, 60)) {
        for m in [
            match_optimal_exact(&t, &c).unwrap(),
            match_with_replacement(&t, &c).unwrap(),
            match_capacitated(&t, &c, 2).unwrap(),
            match_banded(&t, &c, 3).unwrap(),
        ] {
            let re = m.recompute_cost(&t, &c);
            prop_assert!((m.total_cost - re).abs() <= 1e-12 * re.max(1.0));
            m.validate(t.len(), c.len()).unwrap();
        }
    }

    #[test]
    fn permutation_leaves_cost_unchanged((t, c) in instance(20, 40)) {
        let base = match_optimal_exact(&t, &c).unwrap().total_cost;
        let mut tr = t.clone();
        tr.reverse();
        let mut cr = c.clone();
        cr.rotate_left(c.len() / 2);
        let other = match_optimal_exact(&tr, &cr).unwrap().total_cost;
        prop_assert!((base - other).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn banded_cost_is_monotone_in_band((t, c) in instance(25, 60)) {
        let d = c.len() - t.len();
        let exact = match_optimal_exact(&t, &c).unwrap().total_cost;
        let mut last = f64::INFINITY;
        for band in 0..=d {
            let cost = match_banded(&t, &c, band).unwrap().total_cost;
            prop_assert!(cost <= last + 1e-12);
            prop_assert!(cost >= exact - 1e-12);
            last = cost;
        }
        prop_assert!((last - exact).abs() <= 1e-12);
    }

    #[test]
    fn capacitated_cost_is_monotone_in_k((t, c) in instance(20, 20)) {
        let mut last = f64::INFINITY;
        for k in 1..=t.len() {
            if t.len() > k * c.len() {
                continue;
            }
            let m = match_capacitated(&t, &c, k).unwrap();
            prop_assert_eq!(m.injective, k == 1);
            prop_assert!(m.total_cost <= last + 1e-12);
            last = m.total_cost;
        }
        let nn = match_with_replacement(&t, &c).unwrap().total_cost;
        prop_assert!(nn <= last + 1e-12);
    }

    #[test]
    fn with_replacement_is_nearest_neighbour((t, c) in instance(20, 30)) {
        let m = match_with_replacement(&t, &c).unwrap();
        prop_assert_eq!(m.method, MatchMethod::WithReplacement);
        for &(i, j) in &m.pairs {
            let best = c.iter().map(|&x| (x - t[i]).abs()).fold(f64::INFINITY, f64::min);
            prop_assert_eq!((c[j] - t[i]).abs(), best);
        }
    }
}

#[test]
fn equal_scores_pair_without_fuzzing() {
    let t = [0.5, 0.5];
    let c = [0.5, 0.5, 0.5];
    let m = match_optimal_exact(&t, &c).unwrap();
    assert_eq!(m.total_cost, 0.0);
    assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
    assert!(!has_crossing(&m, &t, &c));
}
