// Locating p* for propensity-score populations and the bias it implies.

use matchbias::popgen::{make_categorical_spec, make_uniform_propensity_spec};
use matchbias::theory::{asymptotic_bias_propensity, pstar};

pub fn run_example() -> matchbias::Result<()> {
    for upper in [0.4, 0.8, 1.0] {
        let spec = make_uniform_propensity_spec(upper)?;
        let p = pstar(&spec, 1e-12)?;
        let r = asymptotic_bias_propensity(&spec, 1e-10)?;
        println!(
            "uniform[0, {upper}]: p* = {:.6} defaulted = {} Pr(upper) = {:.4} bias = {:.6}",
            p.pstar, p.defaulted, r.prob_upper, r.bias
        );
    }
    // Discrete propensity: the category at 0.75 holds enough treated units.
    let spec = make_categorical_spec(0.1, 0.75, 0.2)?;
    let p = pstar(&spec, 1e-12)?;
    println!("categorical: p* = {:.6} left closed = {}", p.pstar, p.left_closed);
    Ok(())
}

#[allow(dead_code)]
fn main() -> matchbias::Result<()> {
    run_example()
}
