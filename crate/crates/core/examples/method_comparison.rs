// Without replacement, with replacement, capacity two and a caliper, run on
// the same replicated samples. Usage: `method_comparison [a] [n] [reps]`.

use matchbias::popgen::make_prognostic_spec;
use matchbias::simlab::{compare_methods, default_comparison_plans};

pub fn run_with(a: f64, n: usize, reps: usize) -> matchbias::Result<()> {
    let spec = make_prognostic_spec(a)?;
    println!("a = {a:.4}, n = {n}, reps = {reps}");
    println!("{:<36} {:>10} {:>10} {:>10}", "method", "emp bias", "emp SE", "degenerate");
    for (label, cell) in compare_methods(&spec, n, reps, 7, &default_comparison_plans())? {
        println!("{label:<36} {:>10.4} {:>10.4} {:>10}", cell.emp_bias, cell.emp_se, cell.degenerate_count);
    }
    Ok(())
}

pub fn run_example() -> matchbias::Result<()> {
    run_with(1.0 / 3.0, 1000, 40)
}

#[allow(dead_code)]
fn main() -> matchbias::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let a = args.first().map_or(Ok(1.0 / 3.0), |s| matchbias::cli::parse_real(s));
    let a = a.map_err(matchbias::Error::InvalidParameter)?;
    let n = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let reps = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    run_with(a, n, reps)
}
