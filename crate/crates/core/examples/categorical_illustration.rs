// A small high-propensity category runs out of its own controls when
// matching without replacement, so a share of its treated units is matched
// to the low-propensity category.

use matchbias::matcher::match_optimal_exact;
use matchbias::popgen::{forced_outside_share, make_categorical_spec, sample, within_category_match_fraction};

pub fn run_example() -> matchbias::Result<()> {
    let (mass_a, p_in_a, p_out) = (0.1, 0.75, 0.2);
    let spec = make_categorical_spec(mass_a, p_in_a, p_out)?;
    let s = sample(&spec, 20_000, 2024);
    let t = s.treated_scores();
    let c = s.control_scores();
    let m = match_optimal_exact(&t, &c)?;

    let treated_in_a = t.iter().filter(|&&x| x == p_in_a).count();
    let within = m.pairs.iter().filter(|&&(i, j)| t[i] == p_in_a && c[j] == p_in_a).count();
    println!(
        "category A treated: {treated_in_a}, matched inside A: {within} ({:.3}; large-sample value {:.3})",
        within as f64 / treated_in_a as f64,
        within_category_match_fraction(mass_a, p_in_a)
    );
    println!("share of sample forced outside A: {:.4}", forced_outside_share(mass_a, p_in_a));
    Ok(())
}

#[allow(dead_code)]
fn main() -> matchbias::Result<()> {
    run_example()
}
