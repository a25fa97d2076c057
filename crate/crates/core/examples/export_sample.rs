// Draws a prognostic sample, writes it as CSV, reads it back and estimates
// the ATT from the file. The output feeds `matchbias match --input`.

use std::fs::File;

use matchbias::estimator::{att_matching, att_true_sample, diagnose_overlap_by};
use matchbias::matcher::{match_scores, MatchConfig, Strategy};
use matchbias::popgen::{make_prognostic_spec, read_sample_csv, sample, write_sample_csv};

pub fn run_to(path: &std::path::Path) -> matchbias::Result<()> {
    let a = 1.0 / 3.0;
    let spec = make_prognostic_spec(a)?;
    let s = sample(&spec, 2_000, 99);
    write_sample_csv(&s, File::create(path)?)?;
    let back = read_sample_csv(File::open(path)?)?;
    assert_eq!(back.len(), s.len());

    let m = match_scores(&back.treated_scores(), &back.control_scores(), Strategy::Auto, &MatchConfig::default())?;
    let est = att_matching(&back, &m)?;
    let overlap = diagnose_overlap_by(&back, 0.5, |x| x / (2.0 * a + 2.0));
    println!("wrote {} ({} treated, {} controls)", path.display(), back.n1(), back.n0());
    println!("ATT estimate {:.4}, in-sample ATT {:.4}", est.value, att_true_sample(&back)?);
    println!("units with propensity >= 1/2: {}", overlap.count);
    Ok(())
}

pub fn run_example() -> matchbias::Result<()> {
    let path = std::env::temp_dir().join(format!("matchbias-sample-{}.csv", std::process::id()));
    let out = run_to(&path);
    let _ = std::fs::remove_file(&path);
    out
}

#[allow(dead_code)]
fn main() -> matchbias::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "prognostic_sample.csv".into());
    run_to(std::path::Path::new(&path))
}
