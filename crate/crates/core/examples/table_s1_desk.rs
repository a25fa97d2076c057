// Monte Carlo table for the prognostic example at workstation scale.
// Usage: `table_s1_desk [reps] [max_n]`; defaults to 1000 replications and
// sample sizes up to 10⁵.

use matchbias::simlab::{run_table, table_markdown, SimConfig};

pub fn run_with(reps: usize, max_n: usize) -> matchbias::Result<()> {
    let mut config = SimConfig::desk_table(20_240_611);
    config.reps = reps;
    config.n_values = [100, 1_000, 10_000, 100_000, 1_000_000].into_iter().filter(|&n| n <= max_n).collect();
    let rows = run_table(&config)?;
    print!("{}", table_markdown(&rows));
    Ok(())
}

pub fn run_example() -> matchbias::Result<()> {
    run_with(20, 1_000)
}

#[allow(dead_code)]
fn main() -> matchbias::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|s| s.parse().ok()).collect();
    run_with(args.first().copied().unwrap_or(1000), args.get(1).copied().unwrap_or(100_000))
}
