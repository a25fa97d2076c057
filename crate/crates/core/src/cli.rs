//! Command-line front end.
//!
//! Exit codes: [`EXIT_OK`], [`EXIT_CONFIG`], [`EXIT_PARTIAL`],
//! [`EXIT_DEGENERATE`]. The work pool is capped by the `MATCHBIAS_THREADS`
//! environment variable.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{att_caliper, att_matching, diagnose_overlap, write_estimates_csv, AttEstimate};
use crate::matcher::{apply_caliper, has_crossing, match_scores, write_matching_csv, Strategy};
use crate::popgen::{
    make_categorical_spec, make_prognostic_covariate_spec, make_prognostic_spec, make_uniform_propensity_spec,
    read_sample_csv, PopulationSpec, Sample, PROGNOSTIC_A_MIN, PROGNOSTIC_A_SLACK,
};
use crate::simlab::{run_table_timed, table_markdown, write_table_csv, MethodPlan, SimConfig, SimRow, SpecKind};
use crate::theory::{asymptotic_bias_propensity, asymptotic_bias_score, pstar, BiasReport, PrognosticClosedForm};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

pub const THREADS_ENV: &str = "MATCHBIAS_THREADS";

const THEORY_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "matchbias", version, about = "Optimal 1D matching without replacement and its asymptotic bias")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo table over an (a, n) grid.
    Simulate(SimulateArgs),
    /// Match a sample CSV (`id,w,s[,y]`) and report pairs, cost and diagnostics.
    Match(MatchArgs),
    /// Report the asymptotic bias of a population.
    Bias(BiasArgs),
    /// Overlap diagnostics for a sample CSV or a population.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Auto,
    Exact,
    Banded,
    Replacement,
    Capacitated,
}

impl From<MethodArg> for Strategy {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Auto => Strategy::Auto,
            MethodArg::Exact => Strategy::Exact,
            MethodArg::Banded => Strategy::Banded,
            MethodArg::Replacement => Strategy::Replacement,
            MethodArg::Capacitated => Strategy::Capacitated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Md,
}

#[derive(Debug, Clone, Args, Default)]
pub struct MatchFlags {
    /// Matcher; `auto` picks exact DP when it fits in memory, banded otherwise.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Band half-width for the banded DP.
    #[arg(long)]
    pub band: Option<usize>,
    /// Treated units per control for capacitated matching.
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Drop pairs whose score gap exceeds this value.
    #[arg(long)]
    pub caliper: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// TOML file with [population], [matching], [simulation], [output].
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Prognostic exponents, comma separated; fractions such as 1/3 are accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    pub a: Option<Vec<f64>>,
    #[command(flatten)]
    pub matching: MatchFlags,
    /// Output formats, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub format: Option<Vec<Format>>,
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    /// Sample CSV with `id,w,s` and optional `y0,y1,y`.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub matching: MatchFlags,
    /// Shorthand for `--method replacement`.
    #[arg(long)]
    pub with_replacement: bool,
    /// Overlap threshold on the score scale.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Write pairs.csv, estimate.csv and a manifest here instead of printing pairs.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BiasArgs {
    /// Prognostic-score example; requires --a.
    #[arg(long)]
    pub prognostic: bool,
    /// Prognostic exponent; fractions such as 1/3 are accepted.
    #[arg(long, value_parser = parse_real)]
    pub a: Option<f64>,
    /// Only the closed form; `a` must lie in [1/3, 1].
    #[arg(long)]
    pub closed_form: bool,
    /// Propensity uniform on [0, U].
    #[arg(long, value_name = "U")]
    pub uniform_propensity: Option<f64>,
    /// Take the population from a TOML config's [population] section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args)]
pub struct DiagnoseArgs {
    /// Sample CSV; without it the population flags are used.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Score level whose exceedance refutes overlap.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub prognostic: bool,
    #[arg(long, value_parser = parse_real)]
    pub a: Option<f64>,
    #[arg(long, value_name = "U")]
    pub uniform_propensity: Option<f64>,
}

/// Parses a real number or a fraction `p/q`.
pub fn parse_real(text: &str) -> std::result::Result<f64, String> {
    let t = text.trim();
    let value = match t.split_once('/') {
        Some((p, q)) => {
            let p: f64 = p.trim().parse().map_err(|_| format!("bad numerator in {t:?}"))?;
            let q: f64 = q.trim().parse().map_err(|_| format!("bad denominator in {t:?}"))?;
            p / q
        }
        None => t.parse().map_err(|_| format!("not a number: {t:?}"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("not a finite number: {t:?}"))
    }
}

/// A number written either as a TOML float/integer or as a string such as `"1/3"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Real {
    Number(f64),
    Text(String),
}

impl Real {
    pub fn value(&self) -> std::result::Result<f64, String> {
        match self {
            Real::Number(x) => Ok(*x),
            Real::Text(t) => parse_real(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PopulationKind {
    #[default]
    Prognostic,
    Covariates,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    #[serde(default)]
    pub kind: PopulationKind,
    #[serde(default)]
    pub a: Option<Vec<Real>>,
    pub mass_a: Option<f64>,
    pub p_in_a: Option<f64>,
    pub p_out: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MatchingSection {
    pub method: Option<Strategy>,
    pub band: Option<usize>,
    pub capacity: Option<usize>,
    pub caliper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n: Option<Vec<usize>>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub stem: Option<String>,
    pub format: Option<Vec<Format>>,
}

/// On-disk experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub population: PopulationSection,
    #[serde(default)]
    pub matching: MatchingSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> std::result::Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// A fully resolved `simulate` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateJob {
    pub sim: SimConfig,
    pub out_dir: PathBuf,
    pub stem: String,
    pub formats: Vec<Format>,
}

fn env_threads() -> std::result::Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("{THREADS_ENV} must be a positive integer, got {v:?}")),
            Ok(t) => Ok(Some(t)),
        },
        Err(_) => Ok(None),
    }
}

fn apply_match_flags(plan: &mut MethodPlan, flags: &MatchFlags) {
    if let Some(m) = flags.method {
        plan.strategy = m.into();
    }
    if let Some(b) = flags.band {
        plan.config.band = b;
    }
    if let Some(k) = flags.capacity {
        plan.config.capacity = k;
        if flags.method.is_none() && k > 1 {
            plan.strategy = Strategy::Capacitated;
        }
    }
    if flags.caliper.is_some() {
        plan.config.caliper = flags.caliper;
    }
}

/// Merges file values, then CLI flags, over the desk-scale defaults.
pub fn resolve_simulate(file: &FileConfig, args: &SimulateArgs) -> std::result::Result<SimulateJob, String> {
    let mut sim = SimConfig::desk_table(20_240_611);
    let pop = &file.population;
    sim.spec_kind = match pop.kind {
        PopulationKind::Prognostic => SpecKind::Prognostic,
        PopulationKind::Covariates => SpecKind::Covariates,
        PopulationKind::Categorical => SpecKind::Categorical {
            mass_a: pop.mass_a.ok_or("[population] categorical needs mass_a")?,
            p_in_a: pop.p_in_a.ok_or("[population] categorical needs p_in_a")?,
            p_out: pop.p_out.ok_or("[population] categorical needs p_out")?,
        },
    };
    if let Some(a) = &pop.a {
        sim.a_values = a.iter().map(Real::value).collect::<std::result::Result<_, _>>()?;
    }
    let m = &file.matching;
    if let Some(s) = m.method {
        sim.plan.strategy = s;
    }
    if let Some(b) = m.band {
        sim.plan.config.band = b;
    }
    if let Some(k) = m.capacity {
        sim.plan.config.capacity = k;
    }
    sim.plan.config.caliper = m.caliper;
    let s = &file.simulation;
    if let Some(n) = &s.n {
        sim.n_values = n.clone();
    }
    if let Some(r) = s.reps {
        sim.reps = r;
    }
    if let Some(seed) = s.seed {
        sim.master_seed = seed;
    }
    sim.threads = s.threads;

    if let Some(a) = &args.a {
        sim.a_values = a.clone();
    }
    apply_match_flags(&mut sim.plan, &args.matching);
    if let Some(n) = &args.n {
        sim.n_values = n.clone();
    }
    if let Some(r) = args.reps {
        sim.reps = r;
    }
    if let Some(seed) = args.seed {
        sim.master_seed = seed;
    }
    if let Some(cap) = env_threads()? {
        sim.threads = Some(sim.threads.map_or(cap, |t| t.min(cap)));
    }
    sim.validate().map_err(|e| e.to_string())?;
    if !matches!(sim.spec_kind, SpecKind::Categorical { .. }) {
        if let Some(bad) = sim.a_values.iter().find(|&&a| !(a >= PROGNOSTIC_A_MIN - PROGNOSTIC_A_SLACK)) {
            return Err(format!("a = {bad} must be at least 1/3"));
        }
    }

    let out = &file.output;
    let formats = args.format.clone().or_else(|| out.format.clone()).unwrap_or_else(|| vec![Format::Csv, Format::Md]);
    if formats.is_empty() {
        return Err("at least one output format is required".into());
    }
    Ok(SimulateJob {
        sim,
        out_dir: args.out_dir.clone().or_else(|| out.dir.clone()).unwrap_or_else(|| PathBuf::from("results")),
        stem: out.stem.clone().unwrap_or_else(|| "table".into()),
        formats,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRuntime {
    pub a: Option<f64>,
    pub n: usize,
    pub seconds: f64,
}

/// Provenance record written next to every result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub master_seed: Option<u64>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub cells: Vec<CellRuntime>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, config: serde_json::Value, master_seed: Option<u64>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            master_seed,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_secs: 0.0,
            cells: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)
            .map_err(|e| Error::Io(io::Error::other(e)))
    }
}

fn manifest_name(stem: &str) -> String {
    format!("{stem}.manifest.json")
}

fn create_out(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Exit-code-bearing failure.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: EXIT_CONFIG, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::config(e.to_string())
    }
}

type CmdResult = std::result::Result<i32, Failure>;

pub fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let file = match &args.config {
        Some(path) => FileConfig::load(path).map_err(Failure::config)?,
        None => FileConfig::default(),
    };
    let job = resolve_simulate(&file, args).map_err(|e| match &args.config {
        Some(p) => Failure::config(format!("{}: {e}", p.display())),
        None => Failure::config(e),
    })?;
    let started = Instant::now();
    let mut manifest = RunManifest::new(
        "simulate",
        serde_json::to_value(&job).unwrap_or(serde_json::Value::Null),
        Some(job.sim.master_seed),
    );
    let (rows, runtimes) = run_table_timed(&job.sim)?;
    manifest.cells =
        rows.iter().zip(&runtimes).map(|(r, &seconds)| CellRuntime { a: r.a, n: r.n, seconds }).collect();

    fs::create_dir_all(&job.out_dir).map_err(|e| Failure::config(format!("{}: {e}", job.out_dir.display())))?;
    let mname = manifest_name(&job.stem);
    for f in &job.formats {
        match f {
            Format::Csv => {
                let name = format!("{}.csv", job.stem);
                write_table_csv(&rows, create_out(&job.out_dir, &name)?)?;
                manifest.outputs.push(name);
            }
            Format::Md => {
                let name = format!("{}.md", job.stem);
                let mut w = create_out(&job.out_dir, &name)?;
                write!(w, "{}\nManifest: {mname}\n", table_markdown(&rows))?;
                w.flush()?;
                manifest.outputs.push(name);
            }
        }
    }
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&job.out_dir.join(&mname))?;

    print!("{}", table_markdown(&rows));
    println!("wrote {} ({} rows, manifest {mname})", job.out_dir.display(), rows.len());
    let failed: Vec<&SimRow> = rows.iter().filter(|r| r.error.is_some()).collect();
    for r in &failed {
        eprintln!("cell a={:?} n={}: {}", r.a, r.n, r.error.as_deref().unwrap_or(""));
    }
    Ok(if failed.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

fn degenerate_message(n1: usize, slots: usize) -> String {
    format!(
        "{n1} treated units but only {slots} control slots: no matching without replacement exists, \
         so the matching estimator falls back to zero. Rerun with --with-replacement or a larger --capacity."
    )
}

fn load_sample(path: &Path) -> std::result::Result<Sample, Failure> {
    let file = File::open(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    read_sample_csv(file).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

pub fn cmd_match(args: &MatchArgs) -> CmdResult {
    let sample = load_sample(&args.input)?;
    let mut plan = MethodPlan::default();
    apply_match_flags(&mut plan, &args.matching);
    if args.with_replacement {
        plan.strategy = Strategy::Replacement;
    }
    plan.config.validate()?;
    let (n1, n0) = (sample.n1(), sample.n0());
    if n1 == 0 {
        return Err(Failure::config(format!("{}: no treated units", args.input.display())));
    }
    let slots = match plan.strategy {
        Strategy::Replacement => {
            if n0 > 0 {
                n1
            } else {
                0
            }
        }
        Strategy::Capacitated => n0.saturating_mul(plan.config.capacity),
        _ => n0,
    };
    if n1 > slots {
        eprintln!("{}", degenerate_message(n1, slots));
        return Ok(EXIT_DEGENERATE);
    }

    let t = sample.treated_scores();
    let c = sample.control_scores();
    let tid: Vec<u64> = sample.treated_idx.iter().map(|&i| sample.units[i].id).collect();
    let cid: Vec<u64> = sample.control_idx.iter().map(|&i| sample.units[i].id).collect();
    let matching = match_scores(&t, &c, plan.strategy, &plan.config)?;
    let crossing = matching.injective && has_crossing(&matching, &t, &c);
    let (kept, dropped) = match plan.config.caliper {
        Some(cal) => {
            let (k, d) = apply_caliper(&matching, &t, &c, cal)?;
            (k, Some(d))
        }
        None => (matching.clone(), None),
    };
    let estimate: Option<AttEstimate> = if sample.has_outcomes() {
        Some(match &dropped {
            Some(d) => att_caliper(&sample, &kept, d)?,
            None => att_matching(&sample, &kept)?,
        })
    } else {
        None
    };
    let overlap = diagnose_overlap(&sample, args.threshold);

    let mut report = Vec::new();
    report.push(format!("treated={n1} controls={n0}"));
    report.push(matching.summary());
    report.push(format!("total_cost={}", matching.total_cost));
    report.push(format!("crossing={}", if crossing { "found" } else { "none" }));
    report.push(format!(
        "overlap: {} units ({:.4}) at or above {} -> {}",
        overlap.count,
        overlap.fraction,
        args.threshold,
        if overlap.rejects_null() { "limited overlap" } else { "no evidence against overlap" }
    ));
    if let Some(d) = &dropped {
        let ids: Vec<String> = d.iter().map(|&i| tid[i].to_string()).collect();
        report.push(format!("caliper dropped {} treated: [{}]", d.len(), ids.join(",")));
    }
    if let Some(e) = &estimate {
        report.push(format!("att={} n1_used={} method={}", e.value, e.n1_used, e.method));
    }

    match &args.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::config(format!("{}: {e}", dir.display())))?;
            let stem = "pairs";
            let mut manifest = RunManifest::new(
                "match",
                serde_json::json!({
                    "input": args.input,
                    "plan": plan,
                    "threshold": args.threshold,
                }),
                None,
            );
            write_matching_csv(&kept, &t, &c, &tid, &cid, create_out(dir, "pairs.csv")?)?;
            manifest.outputs.push("pairs.csv".into());
            if let Some(d) = &dropped {
                let mut w = csv::Writer::from_writer(create_out(dir, "dropped.csv")?);
                w.write_record(["treated_id"]).map_err(Error::from)?;
                for &i in d {
                    w.write_record([tid[i].to_string()]).map_err(Error::from)?;
                }
                w.flush()?;
                manifest.outputs.push("dropped.csv".into());
            }
            if let Some(e) = &estimate {
                write_estimates_csv(std::slice::from_ref(e), create_out(dir, "estimate.csv")?)?;
                manifest.outputs.push("estimate.csv".into());
            }
            manifest.write(&dir.join(manifest_name(stem)))?;
            for line in &report {
                println!("{line}");
            }
            println!("wrote {} (manifest {})", dir.display(), manifest_name(stem));
        }
        None => {
            write_matching_csv(&kept, &t, &c, &tid, &cid, io::stdout().lock())?;
            for line in &report {
                eprintln!("{line}");
            }
        }
    }
    Ok(EXIT_OK)
}

fn report_lines(r: &BiasReport, threshold_name: &str) -> Vec<(String, f64)> {
    vec![
        (threshold_name.to_string(), r.threshold),
        ("pi_bar".into(), r.pi_bar),
        ("prob_upper".into(), r.prob_upper),
        ("prefactor".into(), r.prefactor()),
        ("e_y0_treated_upper".into(), r.e_y0_treated_upper),
        ("e_y0_control_upper".into(), r.e_y0_control_upper),
        ("gap".into(), r.gap()),
        ("bias".into(), r.bias),
    ]
}

fn closed_form_lines(c: &PrognosticClosedForm) -> Vec<(String, f64)> {
    vec![
        ("threshold".into(), c.threshold),
        ("pi_bar".into(), c.pi_bar),
        ("prob_upper".into(), 2.0 * c.pi_bar * c.prefactor),
        ("prefactor".into(), c.prefactor),
        ("e_y0_treated_upper".into(), c.e_y0_treated_upper),
        ("e_y0_control_upper".into(), c.e_y0_treated_upper - c.gap),
        ("gap".into(), c.gap),
        ("bias".into(), c.bias),
    ]
}

fn emit_columns(title: &str, headers: &[&str], rows: &[(String, Vec<Option<f64>>)], format: Option<Format>) -> Result<()> {
    let cell = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    match format {
        Some(Format::Csv) => {
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            let mut head = vec!["field"];
            head.extend_from_slice(headers);
            w.write_record(&head)?;
            for (name, vals) in rows {
                let mut rec = vec![name.clone()];
                rec.extend(vals.iter().map(cell));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        Some(Format::Md) => {
            println!("{title}\n");
            println!("| field | {} |", headers.join(" | "));
            println!("|---|{}", "---:|".repeat(headers.len()));
            for (name, vals) in rows {
                let vs: Vec<String> = vals.iter().map(|v| v.map(|x| format!("{x:.6}")).unwrap_or_default()).collect();
                println!("| {name} | {} |", vs.join(" | "));
            }
        }
        None => {
            println!("{title}");
            println!("{:<20} {}", "", headers.iter().map(|h| format!("{h:>14}")).collect::<String>());
            for (name, vals) in rows {
                let vs: String =
                    vals.iter().map(|v| v.map(|x| format!("{x:>14.6}")).unwrap_or(format!("{:>14}", "-"))).collect();
                println!("{name:<20} {vs}");
            }
        }
    }
    Ok(())
}

fn population_from_file(path: &Path) -> std::result::Result<(String, PopulationSpec), Failure> {
    let file = FileConfig::load(path).map_err(Failure::config)?;
    let pop = &file.population;
    let bad = |e: Error| Failure::config(format!("{}: {e}", path.display()));
    let first_a = || -> std::result::Result<f64, Failure> {
        let a = pop.a.as_ref().and_then(|v| v.first()).ok_or_else(|| Failure::config("[population] needs a"))?;
        a.value().map_err(Failure::config)
    };
    Ok(match pop.kind {
        PopulationKind::Prognostic => {
            let a = first_a()?;
            (format!("prognostic(a={a})"), make_prognostic_spec(a).map_err(bad)?)
        }
        PopulationKind::Covariates => {
            let a = first_a()?;
            (format!("prognostic-covariates(a={a})"), make_prognostic_covariate_spec(a).map_err(bad)?)
        }
        PopulationKind::Categorical => {
            let need = |v: Option<f64>, k: &str| v.ok_or_else(|| Failure::config(format!("[population] needs {k}")));
            let spec = make_categorical_spec(
                need(pop.mass_a, "mass_a")?,
                need(pop.p_in_a, "p_in_a")?,
                need(pop.p_out, "p_out")?,
            )
            .map_err(bad)?;
            (spec.name.clone(), spec)
        }
    })
}

pub fn cmd_bias(args: &BiasArgs) -> CmdResult {
    if let Some(upper) = args.uniform_propensity {
        let spec = make_uniform_propensity_spec(upper)?;
        let p = pstar(&spec, THEORY_TOL)?;
        let r = asymptotic_bias_propensity(&spec, THEORY_TOL)?;
        let mut rows: Vec<(String, Vec<Option<f64>>)> = vec![
            ("p*".into(), vec![Some(p.pstar)]),
            ("tail_treated_prob".into(), vec![Some(p.tail_treated_prob)]),
            ("defaulted".into(), vec![Some(f64::from(u8::from(p.defaulted)))]),
            ("left_closed".into(), vec![Some(f64::from(u8::from(p.left_closed)))]),
        ];
        rows.extend(report_lines(&r, "threshold").into_iter().skip(1).map(|(k, v)| (k, vec![Some(v)])));
        emit_columns(&format!("population: uniform propensity on [0, {upper}]"), &["numeric"], &rows, args.format)?;
        return Ok(EXIT_OK);
    }
    if args.prognostic {
        let a = args.a.ok_or_else(|| Failure::config("--prognostic needs --a"))?;
        let closed = PrognosticClosedForm::new(a);
        if args.closed_form {
            let c = closed.map_err(|e| Failure::config(format!("--closed-form: {e}")))?;
            let rows: Vec<_> = closed_form_lines(&c).into_iter().map(|(k, v)| (k, vec![Some(v)])).collect();
            emit_columns(&format!("population: prognostic(a={a})"), &["closed_form"], &rows, args.format)?;
            return Ok(EXIT_OK);
        }
        let spec = make_prognostic_spec(a)?;
        let numeric = asymptotic_bias_score(&spec, THEORY_TOL)?;
        let num_lines = report_lines(&numeric, "threshold");
        let rows: Vec<_> = match closed {
            Ok(c) => num_lines
                .into_iter()
                .zip(closed_form_lines(&c))
                .map(|((k, v), (_, cv))| (k, vec![Some(cv), Some(v)]))
                .collect(),
            Err(_) => num_lines.into_iter().map(|(k, v)| (k, vec![None, Some(v)])).collect(),
        };
        emit_columns(&format!("population: prognostic(a={a})"), &["closed_form", "numeric"], &rows, args.format)?;
        return Ok(EXIT_OK);
    }
    if let Some(path) = &args.config {
        let (name, spec) = population_from_file(path)?;
        let r = if spec.law.is_discrete() {
            asymptotic_bias_propensity(&spec, THEORY_TOL)?
        } else {
            asymptotic_bias_score(&spec, THEORY_TOL)?
        };
        let rows: Vec<_> = report_lines(&r, "threshold").into_iter().map(|(k, v)| (k, vec![Some(v)])).collect();
        emit_columns(&format!("population: {name}"), &["numeric"], &rows, args.format)?;
        return Ok(EXIT_OK);
    }
    Err(Failure::config("choose a population: --prognostic --a A, --uniform-propensity U or --config FILE"))
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> CmdResult {
    if let Some(path) = &args.input {
        let sample = load_sample(path)?;
        let d = diagnose_overlap(&sample, args.threshold);
        println!("units={} treated={} controls={}", sample.len(), sample.n1(), sample.n0());
        println!("at_or_above_threshold={} fraction={:.6} threshold={}", d.count, d.fraction, args.threshold);
        println!("limited_overlap={}", d.rejects_null());
        if sample.n1() > sample.n0() {
            println!("warning: {}", degenerate_message(sample.n1(), sample.n0()));
        }
        return Ok(EXIT_OK);
    }
    let spec = if let Some(u) = args.uniform_propensity {
        crate::popgen::make_uniform_propensity_spec(u)?
    } else if args.prognostic {
        let a = args.a.ok_or_else(|| Failure::config("--prognostic needs --a"))?;
        crate::popgen::make_prognostic_propensity_spec(a)?
    } else {
        return Err(Failure::config("give --input FILE, --prognostic --a A or --uniform-propensity U"));
    };
    let p = pstar(&spec, THEORY_TOL)?;
    let (_, hi) = spec.law.support();
    let upper = spec.law.integrate(|_| 1.0, args.threshold.min(hi), hi);
    println!("population={}", spec.name);
    println!("treated_fraction={:.6}", spec.treated_fraction());
    println!("mass_at_or_above_threshold={upper:.6} threshold={}", args.threshold);
    println!("pstar={:.9} defaulted={} left_closed={}", p.pstar, p.defaulted, p.left_closed);
    Ok(EXIT_OK)
}

/// Parses `args` and dispatches; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Match(a) => cmd_match(a),
        Command::Bias(a) => cmd_bias(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
