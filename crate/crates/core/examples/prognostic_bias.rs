// Asymptotic bias of matching without replacement in the prognostic-score
// population, closed form next to the numeric engine, plus the weighted
// Wasserstein objective at the threshold.

use matchbias::popgen::make_prognostic_spec;
use matchbias::theory::{asymptotic_bias_score, sstar_threshold, weighted_wasserstein_objective, PrognosticClosedForm};

pub fn run_example() -> matchbias::Result<()> {
    println!("{:>7} {:>8} {:>10} {:>10} {:>10}", "a", "b", "closed", "numeric", "W*");
    for a in [1.0 / 3.0, 4.0 / 9.0, 0.6, 0.8, 1.0] {
        let spec = make_prognostic_spec(a)?;
        let cf = PrognosticClosedForm::new(a)?;
        let b = sstar_threshold(&spec, 1e-12)?;
        let numeric = asymptotic_bias_score(&spec, 1e-10)?;
        let w = weighted_wasserstein_objective(&spec, b, 4096)?;
        println!("{a:>7.4} {b:>8.4} {:>10.6} {:>10.6} {w:>10.6}", cf.bias, numeric.bias);
        assert!((cf.bias - numeric.bias).abs() < 1e-6);
    }
    // Beyond a = 1 the treated never outnumber controls at any score.
    let spec = make_prognostic_spec(1.5)?;
    println!("a = 1.5: bias {}", asymptotic_bias_score(&spec, 1e-10)?.bias);
    Ok(())
}

#[allow(dead_code)]
fn main() -> matchbias::Result<()> {
    run_example()
}
