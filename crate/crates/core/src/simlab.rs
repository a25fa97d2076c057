//! Monte Carlo replication of matching estimators.
//!
//! Every replication draws its sample from a seed derived from the cell seed
//! and the replication index, so results do not depend on how the work pool
//! schedules replications. Aggregation runs in replication order.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{att_caliper, att_matching, att_true_sample, AttEstimate};
use crate::matcher::{apply_caliper, match_scores, MatchConfig, Strategy};
use crate::popgen::{
    derive_seed, make_categorical_spec, make_prognostic_covariate_spec, make_prognostic_spec, sample,
    PopulationSpec, Sample,
};
use crate::theory::{asymptotic_bias_propensity, asymptotic_bias_score, prognostic_bias_closed_form};

const THEORY_TOL: f64 = 1e-10;

/// A matcher plus its knobs; `config.caliper` switches to the caliper
/// estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MethodPlan {
    pub strategy: Strategy,
    pub config: MatchConfig,
}

impl MethodPlan {
    pub fn new(strategy: Strategy) -> Self {
        MethodPlan { strategy, config: MatchConfig::default() }
    }

    pub fn with_band(mut self, band: usize) -> Self {
        self.config.band = band;
        self
    }

    pub fn with_capacity(mut self, k: usize) -> Self {
        self.config.capacity = k;
        self
    }

    pub fn with_caliper(mut self, caliper: f64) -> Self {
        self.config.caliper = Some(caliper);
        self
    }

    pub fn label(&self) -> String {
        let base = match self.strategy {
            Strategy::Auto => "without_replacement".to_string(),
            Strategy::Exact => "exact".to_string(),
            Strategy::Banded => format!("banded(band={})", self.config.band),
            Strategy::Replacement => "with_replacement".to_string(),
            Strategy::Capacitated => format!("capacitated(k={})", self.config.capacity),
        };
        match self.config.caliper {
            Some(c) => format!("{base}+caliper({c})"),
            None => base,
        }
    }

    fn slots(&self, n0: usize) -> usize {
        match self.strategy {
            Strategy::Replacement => {
                if n0 > 0 {
                    usize::MAX
                } else {
                    0
                }
            }
            Strategy::Capacitated => n0.saturating_mul(self.config.capacity),
            _ => n0,
        }
    }
}

/// Matches and estimates on one sample. Falls back to the zero convention
/// when the sample admits no matching under the plan.
pub fn estimate(sample: &Sample, plan: &MethodPlan) -> Result<AttEstimate> {
    let (n1, n0) = (sample.n1(), sample.n0());
    if n1 == 0 || n1 > plan.slots(n0) {
        return Ok(AttEstimate { value: 0.0, n1_used: 0, method: plan.label(), degenerate: true });
    }
    let t = sample.treated_scores();
    let c = sample.control_scores();
    let matching = match_scores(&t, &c, plan.strategy, &plan.config)?;
    match plan.config.caliper {
        Some(caliper) => {
            let (kept, dropped) = apply_caliper(&matching, &t, &c, caliper)?;
            att_caliper(sample, &kept, &dropped)
        }
        None => att_matching(sample, &matching),
    }
}

/// Aggregate of one Monte Carlo cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub n: usize,
    pub reps: usize,
    pub reps_done: usize,
    /// Mean of `τ̂ - τ` over completed replications.
    pub emp_bias: f64,
    /// Sample standard deviation of `τ̂`.
    pub emp_se: f64,
    pub mean_estimate: f64,
    pub degenerate_count: usize,
    pub first_error: Option<String>,
}

struct Replication {
    estimate: f64,
    error: f64,
    degenerate: bool,
}

fn replicate(spec: &PopulationSpec, n: usize, seed: u64, plan: &MethodPlan) -> Result<Replication> {
    let s = sample(spec, n, seed);
    let tau = match spec.tau_att_true {
        Some(t) => t,
        None => att_true_sample(&s)?,
    };
    let e = estimate(&s, plan)?;
    Ok(Replication { estimate: e.value, error: e.value - tau, degenerate: e.degenerate })
}

/// Runs `reps` replications of sample → match → estimate for one `(spec, n)`.
///
/// The ATT target is `spec.tau_att_true` when known and the in-sample ATT
/// otherwise. Fails only when every replication fails.
pub fn run_cell(spec: &PopulationSpec, n: usize, reps: usize, seed: u64, plan: &MethodPlan) -> Result<CellResult> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    plan.config.validate()?;
    let outcomes: Vec<Result<Replication>> =
        (0..reps as u64).into_par_iter().map(|r| replicate(spec, n, derive_seed(seed, r), plan)).collect();

    let mut first_error = None;
    let mut done = Vec::with_capacity(reps);
    for o in outcomes {
        match o {
            Ok(r) => done.push(r),
            Err(e) => {
                first_error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    if done.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "all {reps} replications failed: {}",
            first_error.unwrap_or_default()
        )));
    }
    let k = done.len() as f64;
    let emp_bias = done.iter().map(|r| r.error).sum::<f64>() / k;
    let mean_estimate = done.iter().map(|r| r.estimate).sum::<f64>() / k;
    let emp_se = if done.len() > 1 {
        (done.iter().map(|r| (r.estimate - mean_estimate).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(CellResult {
        n,
        reps,
        reps_done: done.len(),
        emp_bias,
        emp_se,
        mean_estimate,
        degenerate_count: done.iter().filter(|r| r.degenerate).count(),
        first_error,
    })
}

/// Which population family a table sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpecKind {
    /// Prognostic example sampled at the score level, swept over `a`.
    Prognostic,
    /// Prognostic example sampled through its three covariates.
    Covariates,
    /// Two-category population; `a_values` are ignored.
    Categorical { mass_a: f64, p_in_a: f64, p_out: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub spec_kind: SpecKind,
    pub a_values: Vec<f64>,
    pub n_values: Vec<usize>,
    pub reps: usize,
    pub master_seed: u64,
    pub plan: MethodPlan,
    /// Work-pool size; `None` leaves the global pool in charge.
    pub threads: Option<usize>,
}

impl SimConfig {
    /// The published grid: `a ∈ {1/3, 4/9, 1}`, `n ∈ {10², …, 10⁶}`.
    pub fn full_table(reps: usize, master_seed: u64) -> Self {
        SimConfig {
            spec_kind: SpecKind::Prognostic,
            a_values: vec![1.0 / 3.0, 4.0 / 9.0, 1.0],
            n_values: vec![100, 1_000, 10_000, 100_000, 1_000_000],
            reps,
            master_seed,
            plan: MethodPlan::new(Strategy::Auto),
            threads: None,
        }
    }

    /// Workstation-sized version of [`SimConfig::full_table`].
    pub fn desk_table(master_seed: u64) -> Self {
        SimConfig { n_values: vec![100, 1_000, 10_000, 100_000], ..SimConfig::full_table(1000, master_seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidParameter("reps must be at least 1".into()));
        }
        if self.n_values.is_empty() {
            return Err(Error::InvalidParameter("n_values must not be empty".into()));
        }
        if !matches!(self.spec_kind, SpecKind::Categorical { .. }) && self.a_values.is_empty() {
            return Err(Error::InvalidParameter("a_values must not be empty".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidParameter("threads must be at least 1".into()));
        }
        self.plan.config.validate()
    }
}

/// One row of a simulation table.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub a: Option<f64>,
    pub n: usize,
    pub asymp_bias: f64,
    pub emp_bias: f64,
    pub emp_se: f64,
    pub reps_done: usize,
    pub degenerate_count: usize,
    pub error: Option<String>,
}

fn spec_for(kind: &SpecKind, a: Option<f64>) -> Result<PopulationSpec> {
    match (kind, a) {
        (SpecKind::Prognostic, Some(a)) => make_prognostic_spec(a),
        (SpecKind::Covariates, Some(a)) => make_prognostic_covariate_spec(a),
        (SpecKind::Categorical { mass_a, p_in_a, p_out }, _) => make_categorical_spec(*mass_a, *p_in_a, *p_out),
        _ => Err(Error::InvalidParameter("prognostic tables need a values".into())),
    }
}

fn asymptotic_bias_for(kind: &SpecKind, a: Option<f64>, spec: &PopulationSpec) -> f64 {
    let value = match kind {
        SpecKind::Prognostic | SpecKind::Covariates => a
            .ok_or(Error::NoThreshold)
            .and_then(prognostic_bias_closed_form)
            .or_else(|_| asymptotic_bias_score(spec, THEORY_TOL).map(|r| r.bias)),
        SpecKind::Categorical { .. } => asymptotic_bias_propensity(spec, THEORY_TOL).map(|r| r.bias),
    };
    value.unwrap_or(f64::NAN)
}

/// Runs the `(a, n)` grid and reports each cell's wall-clock seconds.
pub fn run_table_timed(config: &SimConfig) -> Result<(Vec<SimRow>, Vec<f64>)> {
    config.validate()?;
    let run = || {
        let mut a_values: Vec<Option<f64>> = match config.spec_kind {
            SpecKind::Categorical { .. } => vec![None],
            _ => config.a_values.iter().copied().map(Some).collect(),
        };
        a_values.sort_by(|x, y| x.unwrap_or(0.0).total_cmp(&y.unwrap_or(0.0)));
        let mut n_values = config.n_values.clone();
        n_values.sort_unstable();

        let mut rows = Vec::new();
        let mut runtimes = Vec::new();
        for (ai, &a) in a_values.iter().enumerate() {
            let spec = spec_for(&config.spec_kind, a);
            let asymp = spec.as_ref().map(|s| asymptotic_bias_for(&config.spec_kind, a, s)).unwrap_or(f64::NAN);
            for (ni, &n) in n_values.iter().enumerate() {
                let started = Instant::now();
                let cell_seed = derive_seed(config.master_seed, ((ai as u64) << 32) | ni as u64);
                let cell = spec
                    .as_ref()
                    .map_err(|e| Error::InvalidParameter(e.to_string()))
                    .and_then(|s| run_cell(s, n, config.reps, cell_seed, &config.plan));
                rows.push(match cell {
                    Ok(c) => SimRow {
                        a,
                        n,
                        asymp_bias: asymp,
                        emp_bias: c.emp_bias,
                        emp_se: c.emp_se,
                        reps_done: c.reps_done,
                        degenerate_count: c.degenerate_count,
                        error: c.first_error,
                    },
                    Err(e) => SimRow {
                        a,
                        n,
                        asymp_bias: asymp,
                        emp_bias: f64::NAN,
                        emp_se: f64::NAN,
                        reps_done: 0,
                        degenerate_count: 0,
                        error: Some(e.to_string()),
                    },
                });
                runtimes.push(started.elapsed().as_secs_f64());
            }
        }
        (rows, runtimes)
    };
    match config.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(run))
        }
        None => Ok(run()),
    }
}

/// Runs the `(a, n)` grid. Rows are ordered by `a`, then `n`, ascending.
pub fn run_table(config: &SimConfig) -> Result<Vec<SimRow>> {
    run_table_timed(config).map(|(rows, _)| rows)
}

/// The comparison set: without replacement, with replacement, capacity two,
/// and a 0.05 caliper on the without-replacement matching.
pub fn default_comparison_plans() -> Vec<MethodPlan> {
    vec![
        MethodPlan::new(Strategy::Auto),
        MethodPlan::new(Strategy::Replacement),
        MethodPlan::new(Strategy::Capacitated).with_capacity(2),
        MethodPlan::new(Strategy::Auto).with_caliper(0.05),
    ]
}

/// Runs each plan on the same replicated samples.
pub fn compare_methods(
    spec: &PopulationSpec,
    n: usize,
    reps: usize,
    seed: u64,
    plans: &[MethodPlan],
) -> Result<Vec<(String, CellResult)>> {
    plans.iter().map(|p| run_cell(spec, n, reps, seed, p).map(|c| (p.label(), c))).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `a,n,asymp_bias,emp_bias,emp_se,reps,degenerate`.
pub fn write_table_csv<W: Write>(rows: &[SimRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["a", "n", "asymp_bias", "emp_bias", "emp_se", "reps", "degenerate"])?;
    for r in rows {
        wtr.write_record([
            fmt_opt(r.a),
            r.n.to_string(),
            r.asymp_bias.to_string(),
            r.emp_bias.to_string(),
            r.emp_se.to_string(),
            r.reps_done.to_string(),
            r.degenerate_count.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn fmt_a(a: Option<f64>) -> String {
    match a {
        None => "-".into(),
        Some(a) if (a - 1.0 / 3.0).abs() < 1e-12 => "1/3".into(),
        Some(a) if (a - 4.0 / 9.0).abs() < 1e-12 => "4/9".into(),
        Some(a) => format!("{a}"),
    }
}

/// Markdown table with the columns `a | n | Asymp. bias | Emp. bias | Emp. SE`.
pub fn table_markdown(rows: &[SimRow]) -> String {
    let mut out = String::from("| a | n | Asymp. bias | Emp. bias | Emp. SE |\n|---:|---:|---:|---:|---:|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} | {:.4} |\n",
            fmt_a(r.a),
            r.n,
            r.asymp_bias,
            r.emp_bias,
            r.emp_se
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::popgen::{Noise, ScoreLaw};

    #[test]
    fn constant_outcomes_give_zero_bias_and_spread() {
        let spec = PopulationSpec::new("flat", ScoreLaw::Uniform { lo: 0.0, hi: 0.8 }, |p| p, |_| 0.0, |_| 0.0)
            .with_noise(Noise::None, Noise::None)
            .with_tau_att(0.0);
        let c = run_cell(&spec, 200, 20, 1, &MethodPlan::default()).unwrap();
        assert_eq!(c.emp_bias, 0.0);
        assert_eq!(c.emp_se, 0.0);
        assert_eq!(c.reps_done, 20);
    }

    #[test]
    fn cells_are_deterministic() {
        let spec = make_prognostic_spec(0.5).unwrap();
        let plan = MethodPlan::default();
        assert_eq!(run_cell(&spec, 300, 16, 9, &plan).unwrap(), run_cell(&spec, 300, 16, 9, &plan).unwrap());
    }

    #[test]
    fn degenerate_samples_are_counted() {
        // Half the population treated on average: at n = 3 many samples have N1 > N0.
        let spec = PopulationSpec::new("even", ScoreLaw::Uniform { lo: 0.5, hi: 0.5 + 1e-9 }, |p| p, |_| 0.0, |_| 1.0)
            .with_tau_att(1.0);
        let c = run_cell(&spec, 3, 200, 4, &MethodPlan::default()).unwrap();
        assert!(c.degenerate_count > 0);
        let r = run_cell(&spec, 3, 200, 4, &MethodPlan::new(Strategy::Replacement)).unwrap();
        assert!(r.degenerate_count < c.degenerate_count);
    }

    #[test]
    fn zero_reps_rejected() {
        let spec = make_prognostic_spec(0.5).unwrap();
        assert!(run_cell(&spec, 10, 0, 1, &MethodPlan::default()).is_err());
        let mut cfg = SimConfig::desk_table(1);
        cfg.reps = 0;
        assert!(run_table(&cfg).is_err());
    }

    #[test]
    fn table_shape_and_order() {
        let cfg = SimConfig {
            a_values: vec![1.0, 1.0 / 3.0],
            n_values: vec![200, 50],
            reps: 4,
            ..SimConfig::desk_table(3)
        };
        let rows = run_table(&cfg).unwrap();
        let keys: Vec<(f64, usize)> = rows.iter().map(|r| (r.a.unwrap(), r.n)).collect();
        assert_eq!(keys, vec![(1.0 / 3.0, 50), (1.0 / 3.0, 200), (1.0, 50), (1.0, 200)]);
        assert!((rows[0].asymp_bias - prognostic_bias_closed_form(1.0 / 3.0).unwrap()).abs() < 1e-15);

        let mut buf = Vec::new();
        write_table_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("a,n,asymp_bias,emp_bias,emp_se,reps,degenerate\n"));
        assert_eq!(text.lines().count(), 5);
        let md = table_markdown(&rows);
        assert!(md.contains("| 1/3 | 50 | 0.1556 |"));
    }

    #[test]
    fn categorical_table_has_blank_a() {
        let cfg = SimConfig {
            spec_kind: SpecKind::Categorical { mass_a: 0.1, p_in_a: 0.75, p_out: 0.2 },
            n_values: vec![100],
            reps: 3,
            ..SimConfig::desk_table(3)
        };
        let rows = run_table(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].a, None);
    }

    #[test]
    fn identical_plans_identical_rows() {
        let spec = make_prognostic_spec(1.0 / 3.0).unwrap();
        let plan = MethodPlan::new(Strategy::Replacement);
        let out = compare_methods(&spec, 200, 10, 5, &[plan, plan]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn plan_labels() {
        let labels: Vec<String> = default_comparison_plans().iter().map(MethodPlan::label).collect();
        assert_eq!(
            labels,
            vec!["without_replacement", "with_replacement", "capacitated(k=2)", "without_replacement+caliper(0.05)"]
        );
    }
}
