use matchbias::estimator::{att_caliper, att_matching, att_weighted, control_weights};
use matchbias::matcher::{apply_caliper, match_capacitated, match_optimal_exact, match_with_replacement};
use matchbias::popgen::{make_prognostic_spec, sample, PopulationSpec, Sample, ScoreLaw, Unit, Noise};
use matchbias::simlab::{run_cell, MethodPlan};
use proptest::prelude::*;

fn sample_strategy() -> impl Strategy<Value = Sample> {
    (1usize..15)
        .prop_flat_map(|n1| (Just(n1), n1..40))
        .prop_flat_map(|(n1, n0)| {
            prop::collection::vec((0.0..1.0f64, -5.0..5.0f64), n1 + n0).prop_map(move |v| {
                let units = v
                    .into_iter()
                    .enumerate()
                    .map(|(i, (s, y))| Unit { id: i as u64, w: i < n1, s, y0: None, y1: None, y })
                    .collect();
                Sample::from_units(units)
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn weighting_identity(s in sample_strategy(), k in 1usize..4) {
        let t = s.treated_scores();
        let c = s.control_scores();
        let mut ms = vec![match_optimal_exact(&t, &c).unwrap(), match_with_replacement(&t, &c).unwrap()];
        if t.len() <= k * c.len() {
            ms.push(match_capacitated(&t, &c, k).unwrap());
        }
        for m in ms {
            let nu = control_weights(&m, c.len());
            prop_assert_eq!(nu.total(), t.len() as u64);
            let a = att_matching(&s, &m).unwrap().value;
            let b = att_weighted(&s, &nu).unwrap().value;
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn treated_shift_moves_estimate(s in sample_strategy(), shift in -10.0..10.0f64) {
        let m = match_optimal_exact(&s.treated_scores(), &s.control_scores()).unwrap();
        let base = att_matching(&s, &m).unwrap().value;
        let mut moved = s.clone();
        for &i in &moved.treated_idx.clone() {
            moved.units[i].y += shift;
        }
        let after = att_matching(&moved, &m).unwrap().value;
        prop_assert!((after - base - shift).abs() <= 1e-9);
    }

    #[test]
    fn caliper_without_drops_is_plain_estimate(s in sample_strategy()) {
        let t = s.treated_scores();
        let c = s.control_scores();
        let m = match_optimal_exact(&t, &c).unwrap();
        let (kept, dropped) = apply_caliper(&m, &t, &c, 2.0).unwrap();
        prop_assert!(dropped.is_empty());
        let a = att_caliper(&s, &kept, &dropped).unwrap().value;
        prop_assert!((a - att_matching(&s, &m).unwrap().value).abs() <= 1e-12);
    }
}

#[test]
fn constant_control_outcome_means_no_bias() {
    let spec = PopulationSpec::new("flat-mu0", ScoreLaw::Triangular { lo: 0.0, mode: 1.0, hi: 2.0 }, |s| s / 3.0, |_| 1.0, |_| 2.0)
        .with_noise(Noise::Normal { sd: 1.0 }, Noise::Normal { sd: 1.0 })
        .with_tau_att(1.0);
    let c = run_cell(&spec, 1000, 500, 17, &MethodPlan::default()).unwrap();
    let se_mean = c.emp_se / (c.reps_done as f64).sqrt();
    assert!(c.emp_bias.abs() <= 4.0 * se_mean, "bias {} se {}", c.emp_bias, se_mean);
}

#[test]
fn realized_outcomes_are_consistent() {
    let spec = make_prognostic_spec(0.5).unwrap();
    let s = sample(&spec, 5_000, 3);
    for u in &s.units {
        let expected = if u.w { u.y1 } else { u.y0 };
        assert_eq!(Some(u.y), expected);
    }
}
