// Optimal matching without replacement on a handful of scores, checked
// against exhaustive search, followed by with-replacement and capacitated
// matchings of the same units and a caliper.

use matchbias::estimator::{att_matching, att_weighted, control_weights};
use matchbias::matcher::{
    apply_caliper, brute_force_match, has_crossing, match_capacitated, match_optimal_exact, match_with_replacement,
};
use matchbias::popgen::{Sample, Unit};

fn unit(id: u64, w: bool, s: f64, y: f64) -> Unit {
    Unit { id, w, s, y0: None, y1: None, y }
}

pub fn run_example() -> matchbias::Result<()> {
    let sample = Sample::from_units(vec![
        unit(1, true, 0.62, 3.1),
        unit(2, true, 0.71, 2.4),
        unit(3, true, 0.35, 1.9),
        unit(4, false, 0.60, 1.0),
        unit(5, false, 0.30, 0.7),
        unit(6, false, 0.90, 2.2),
        unit(7, false, 0.10, 0.1),
        unit(8, false, 0.66, 1.6),
    ]);
    let t = sample.treated_scores();
    let c = sample.control_scores();

    let exact = match_optimal_exact(&t, &c)?;
    let brute = brute_force_match(&t, &c)?;
    println!("{}", exact.summary());
    println!("brute force cost {:.6}", brute.total_cost);
    assert!((exact.total_cost - brute.total_cost).abs() < 1e-12);
    assert!(!has_crossing(&exact, &t, &c));
    for &(i, j) in &exact.pairs {
        println!("  treated s={:.2} -> control s={:.2}", t[i], c[j]);
    }

    let att = att_matching(&sample, &exact)?;
    println!("ATT without replacement: {:.4}", att.value);

    let repl = match_with_replacement(&t, &c)?;
    let nu = control_weights(&repl, c.len());
    println!("with replacement: {} (control weights {:?})", repl.summary(), nu.nu);
    let w = att_weighted(&sample, &nu)?;
    assert!((w.value - att_matching(&sample, &repl)?.value).abs() < 1e-12);
    println!("ATT with replacement: {:.4}", w.value);

    let cap = match_capacitated(&t, &c, 2)?;
    println!("capacity 2: {}", cap.summary());

    let (kept, dropped) = apply_caliper(&exact, &t, &c, 0.04)?;
    println!("caliper 0.04 keeps {} pairs, drops treated positions {:?}", kept.pairs.len(), dropped);
    Ok(())
}

#[allow(dead_code)]
fn main() -> matchbias::Result<()> {
    run_example()
}
