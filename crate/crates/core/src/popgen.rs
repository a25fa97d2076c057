//! Populations (data-generating processes) and i.i.d. sampling from them.
//!
//! A [`PopulationSpec`] couples a score law with the treatment-assignment
//! probability and the conditional outcome means. Sampling is a pure
//! function of `(spec, n, seed)`.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Shared scalar function of the score.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Lowest admissible prognostic exponent. Four-decimal renderings of 1/3
/// (0.3333) fall inside the slack.
pub const PROGNOSTIC_A_MIN: f64 = 1.0 / 3.0;
pub const PROGNOSTIC_A_SLACK: f64 = 5e-5;

const QUAD_ABS_TOL: f64 = 1e-14;
const QUAD_REL_TOL: f64 = 1e-12;
const LATTICE_POINTS: usize = 1 << 16;

/// Distribution of the scalar score.
#[derive(Clone)]
pub enum ScoreLaw {
    Uniform { lo: f64, hi: f64 },
    Triangular { lo: f64, mode: f64, hi: f64 },
    /// Finite support: `(value, probability)` atoms.
    Discrete(Vec<(f64, f64)>),
    /// `S = X1 + X3` with three independent Uniform[0,1] covariates, and a
    /// unit-level treatment probability `X1 * X2^a`. The marginal score law
    /// is Triangular(0, 1, 2).
    ProductCovariates { a: f64 },
    /// Any law given by its quantile function on (0, 1). Expectations use a
    /// deterministic midpoint lattice in probability space.
    Quantile { lo: f64, hi: f64, quantile: ScalarFn },
}

impl fmt::Debug for ScoreLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScoreLaw::Uniform { lo, hi } => write!(f, "Uniform[{lo}, {hi}]"),
            ScoreLaw::Triangular { lo, mode, hi } => write!(f, "Triangular({lo}, {mode}, {hi})"),
            ScoreLaw::Discrete(atoms) => write!(f, "Discrete({atoms:?})"),
            ScoreLaw::ProductCovariates { a } => write!(f, "ProductCovariates(a = {a})"),
            ScoreLaw::Quantile { lo, hi, .. } => write!(f, "Quantile[{lo}, {hi}]"),
        }
    }
}

impl ScoreLaw {
    pub fn support(&self) -> (f64, f64) {
        match self {
            ScoreLaw::Uniform { lo, hi } => (*lo, *hi),
            ScoreLaw::Triangular { lo, hi, .. } => (*lo, *hi),
            ScoreLaw::Discrete(atoms) => {
                let lo = atoms.iter().filter(|a| a.1 > 0.0).map(|a| a.0).fold(f64::INFINITY, f64::min);
                let hi = atoms.iter().filter(|a| a.1 > 0.0).map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            ScoreLaw::ProductCovariates { .. } => (0.0, 2.0),
            ScoreLaw::Quantile { lo, hi, .. } => (*lo, *hi),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ScoreLaw::Discrete(_))
    }

    /// Atoms with positive mass, for discrete laws.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            ScoreLaw::Discrete(atoms) => Some(atoms.iter().copied().filter(|a| a.1 > 0.0).collect()),
            _ => None,
        }
    }

    /// Density, when the law has one.
    pub fn pdf(&self, s: f64) -> Option<f64> {
        match *self {
            ScoreLaw::Uniform { lo, hi } => Some(if s >= lo && s <= hi { 1.0 / (hi - lo) } else { 0.0 }),
            ScoreLaw::Triangular { lo, mode, hi } => Some(triangular_pdf(lo, mode, hi, s)),
            ScoreLaw::ProductCovariates { .. } => Some(triangular_pdf(0.0, 1.0, 2.0, s)),
            _ => None,
        }
    }

    fn breaks(&self) -> Vec<f64> {
        match *self {
            ScoreLaw::Triangular { mode, .. } => vec![mode],
            ScoreLaw::ProductCovariates { .. } => vec![1.0],
            _ => Vec::new(),
        }
    }

    /// `∫_{[lo, hi]} f dF` over the score law.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, lo: f64, hi: f64) -> f64 {
        let (slo, shi) = self.support();
        match self {
            ScoreLaw::Discrete(atoms) => atoms
                .iter()
                .filter(|&&(v, p)| p > 0.0 && v >= lo && v <= hi)
                .map(|&(v, p)| p * f(v))
                .sum(),
            ScoreLaw::Quantile { quantile, .. } => {
                let m = LATTICE_POINTS as f64;
                let mut acc = 0.0;
                for k in 0..LATTICE_POINTS {
                    let v = quantile((k as f64 + 0.5) / m);
                    if v >= lo && v <= hi {
                        acc += f(v);
                    }
                }
                acc / m
            }
            _ => {
                let a = lo.max(slo);
                let b = hi.min(shi);
                if !(a < b) {
                    return 0.0;
                }
                let breaks = self.breaks();
                quad::integrate_with_breaks(
                    |s| f(s) * self.pdf(s).unwrap_or(0.0),
                    a,
                    b,
                    &breaks,
                    QUAD_ABS_TOL,
                    QUAD_REL_TOL,
                )
            }
        }
    }

    /// One draw of the score together with the unit-level treatment
    /// probability. `assign` maps the score to that probability for every law
    /// except [`ScoreLaw::ProductCovariates`], which carries its own.
    fn draw<R: Rng>(&self, rng: &mut R, assign: &ScalarFn) -> (f64, f64) {
        match self {
            ScoreLaw::Uniform { lo, hi } => {
                let s = lo + (hi - lo) * rng.gen::<f64>();
                (s, assign(s))
            }
            ScoreLaw::Triangular { lo, mode, hi } => {
                let s = triangular_quantile(*lo, *mode, *hi, rng.gen::<f64>());
                (s, assign(s))
            }
            ScoreLaw::Discrete(atoms) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = atoms.iter().rev().find(|a| a.1 > 0.0).map(|a| a.0).unwrap_or(0.0);
                for &(v, p) in atoms {
                    acc += p;
                    if u < acc {
                        pick = v;
                        break;
                    }
                }
                (pick, assign(pick))
            }
            ScoreLaw::ProductCovariates { a } => {
                let x1: f64 = rng.gen();
                let x2: f64 = rng.gen();
                let x3: f64 = rng.gen();
                (x1 + x3, x1 * x2.powf(*a))
            }
            ScoreLaw::Quantile { quantile, .. } => {
                let s = quantile(rng.gen::<f64>());
                (s, assign(s))
            }
        }
    }
}

fn triangular_pdf(lo: f64, mode: f64, hi: f64, s: f64) -> f64 {
    if s < lo || s > hi {
        0.0
    } else if s < mode {
        2.0 * (s - lo) / ((hi - lo) * (mode - lo))
    } else if s > mode {
        2.0 * (hi - s) / ((hi - lo) * (hi - mode))
    } else {
        2.0 / (hi - lo)
    }
}

fn triangular_quantile(lo: f64, mode: f64, hi: f64, u: f64) -> f64 {
    let split = (mode - lo) / (hi - lo);
    if u < split {
        lo + (u * (hi - lo) * (mode - lo)).sqrt()
    } else {
        hi - ((1.0 - u) * (hi - lo) * (hi - mode)).sqrt()
    }
}

/// Zero-mean outcome noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    None,
    Normal { sd: f64 },
}

impl Noise {
    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Noise::None => 0.0,
            Noise::Normal { sd } => sd * rng.sample::<f64, _>(StandardNormal),
        }
    }
}

/// A data-generating process over `(S, W, Y(0), Y(1))`.
#[derive(Clone)]
pub struct PopulationSpec {
    pub name: String,
    pub law: ScoreLaw,
    assign_prob: ScalarFn,
    mu0: ScalarFn,
    mu1: ScalarFn,
    pub noise0: Noise,
    pub noise1: Noise,
    pub tau_att_true: Option<f64>,
}

impl fmt::Debug for PopulationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PopulationSpec")
            .field("name", &self.name)
            .field("law", &self.law)
            .field("noise0", &self.noise0)
            .field("noise1", &self.noise1)
            .field("tau_att_true", &self.tau_att_true)
            .finish()
    }
}

impl PopulationSpec {
    pub fn new(
        name: impl Into<String>,
        law: ScoreLaw,
        assign_prob: impl Fn(f64) -> f64 + Send + Sync + 'static,
        mu0: impl Fn(f64) -> f64 + Send + Sync + 'static,
        mu1: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        PopulationSpec {
            name: name.into(),
            law,
            assign_prob: Arc::new(assign_prob),
            mu0: Arc::new(mu0),
            mu1: Arc::new(mu1),
            noise0: Noise::None,
            noise1: Noise::None,
            tau_att_true: None,
        }
    }

    pub fn with_noise(mut self, noise0: Noise, noise1: Noise) -> Self {
        self.noise0 = noise0;
        self.noise1 = noise1;
        self
    }

    pub fn with_tau_att(mut self, tau: f64) -> Self {
        self.tau_att_true = Some(tau);
        self
    }

    /// `Pr(W = 1 | S = s)`.
    pub fn assign_prob(&self, s: f64) -> f64 {
        (self.assign_prob)(s)
    }

    /// `E[Y(0) | S = s]`.
    pub fn mu0(&self, s: f64) -> f64 {
        (self.mu0)(s)
    }

    /// `E[Y(1) | S = s]`.
    pub fn mu1(&self, s: f64) -> f64 {
        (self.mu1)(s)
    }

    /// `Pr(W = 1)`, the overall treated fraction.
    pub fn treated_fraction(&self) -> f64 {
        let (lo, hi) = self.law.support();
        self.law.integrate(|s| self.assign_prob(s), lo, hi)
    }

    /// Checks `assign_prob ∈ [0, 1]` and finiteness of the outcome means on
    /// a grid over the support (on the atoms, for discrete laws).
    pub fn validate(&self) -> Result<()> {
        let points: Vec<f64> = match self.law.atoms() {
            Some(atoms) => atoms.iter().map(|a| a.0).collect(),
            None => {
                let (lo, hi) = self.law.support();
                (0..=1000).map(|k| lo + (hi - lo) * k as f64 / 1000.0).collect()
            }
        };
        for s in points {
            let p = self.assign_prob(s);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("assign_prob({s}) = {p} is outside [0, 1]")));
            }
            if !self.mu0(s).is_finite() || !self.mu1(s).is_finite() {
                return Err(Error::InvalidParameter(format!("outcome mean is not finite at s = {s}")));
            }
        }
        Ok(())
    }
}

fn check_prognostic_a(a: f64) -> Result<()> {
    if !(a.is_finite() && a >= PROGNOSTIC_A_MIN - PROGNOSTIC_A_SLACK) {
        return Err(Error::InvalidParameter(format!("prognostic exponent a = {a} must be at least 1/3")));
    }
    Ok(())
}

/// Prognostic-score population: `S` triangular on `[0, 2]`,
/// `Pr(W = 1 | S = s) = s / (2a + 2)`, `Y(0) = S² + ε₀`, `Y(1) = 5/2 + ε₁`,
/// standard normal noises, ATT equal to one.
pub fn make_prognostic_spec(a: f64) -> Result<PopulationSpec> {
    check_prognostic_a(a)?;
    let denom = 2.0 * a + 2.0;
    Ok(PopulationSpec::new(
        format!("prognostic(a={a})"),
        ScoreLaw::Triangular { lo: 0.0, mode: 1.0, hi: 2.0 },
        move |s| s / denom,
        |s| s * s,
        |_| 2.5,
    )
    .with_noise(Noise::Normal { sd: 1.0 }, Noise::Normal { sd: 1.0 })
    .with_tau_att(1.0))
}

/// Same population as [`make_prognostic_spec`], simulated through the three
/// covariates. Treatment is drawn with the unit-level probability
/// `X1 · X2^a`; `assign_prob` reports its conditional mean given `S`.
pub fn make_prognostic_covariate_spec(a: f64) -> Result<PopulationSpec> {
    let mut spec = make_prognostic_spec(a)?;
    spec.name = format!("prognostic-covariates(a={a})");
    spec.law = ScoreLaw::ProductCovariates { a };
    Ok(spec)
}

/// The prognostic population re-expressed with the propensity score
/// `Π = S / (2a + 2)` as the score.
pub fn make_prognostic_propensity_spec(a: f64) -> Result<PopulationSpec> {
    check_prognostic_a(a)?;
    let scale = 2.0 * a + 2.0;
    Ok(PopulationSpec::new(
        format!("prognostic-propensity(a={a})"),
        ScoreLaw::Triangular { lo: 0.0, mode: 1.0 / scale, hi: 2.0 / scale },
        |p| p,
        move |p| (scale * p) * (scale * p),
        |_| 2.5,
    )
    .with_noise(Noise::Normal { sd: 1.0 }, Noise::Normal { sd: 1.0 })
    .with_tau_att(1.0))
}

/// Propensity score uniform on `[0, upper]`, used as its own score, with
/// `E[Y(0) | Π = p] = p` and a unit treatment effect.
pub fn make_uniform_propensity_spec(upper: f64) -> Result<PopulationSpec> {
    if !(upper > 0.0 && upper <= 1.0) {
        return Err(Error::InvalidParameter(format!("uniform propensity upper bound {upper} must lie in (0, 1]")));
    }
    Ok(PopulationSpec::new(
        format!("uniform-propensity(0, {upper})"),
        ScoreLaw::Uniform { lo: 0.0, hi: upper },
        |p| p,
        |p| p,
        |p| p + 1.0,
    )
    .with_noise(Noise::Normal { sd: 1.0 }, Noise::Normal { sd: 1.0 })
    .with_tau_att(1.0))
}

/// Outcome means in the two-category population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoricalOutcomes {
    pub mu0_in: f64,
    pub mu1_in: f64,
    pub mu0_out: f64,
    pub mu1_out: f64,
}

impl Default for CategoricalOutcomes {
    fn default() -> Self {
        CategoricalOutcomes { mu0_in: 1.0, mu1_in: 2.0, mu0_out: 0.0, mu1_out: 1.0 }
    }
}

/// Two-category population: category A carries mass `mass_a` and propensity
/// `p_in_a`; everything else is one category with propensity `p_out`. The
/// propensity is the score.
pub fn make_categorical_spec(mass_a: f64, p_in_a: f64, p_out: f64) -> Result<PopulationSpec> {
    make_categorical_spec_with(mass_a, p_in_a, p_out, CategoricalOutcomes::default())
}

pub fn make_categorical_spec_with(
    mass_a: f64,
    p_in_a: f64,
    p_out: f64,
    outcomes: CategoricalOutcomes,
) -> Result<PopulationSpec> {
    for (name, v) in [("mass_a", mass_a), ("p_in_a", p_in_a), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter(format!("{name} = {v} must lie in [0, 1]")));
        }
    }
    let atoms = vec![(p_in_a, mass_a), (p_out, 1.0 - mass_a)];
    let in_a = move |s: f64| mass_a > 0.0 && s == p_in_a;
    let o = outcomes;
    let treated_mass = mass_a * p_in_a + (1.0 - mass_a) * p_out;
    let effect_mass =
        mass_a * p_in_a * (o.mu1_in - o.mu0_in) + (1.0 - mass_a) * p_out * (o.mu1_out - o.mu0_out);
    let mut spec = PopulationSpec::new(
        format!("categorical(mass_a={mass_a}, p_in_a={p_in_a}, p_out={p_out})"),
        ScoreLaw::Discrete(atoms),
        |s| s,
        move |s| if in_a(s) { o.mu0_in } else { o.mu0_out },
        move |s| if in_a(s) { o.mu1_in } else { o.mu1_out },
    )
    .with_noise(Noise::Normal { sd: 1.0 }, Noise::Normal { sd: 1.0 });
    if treated_mass > 0.0 {
        spec = spec.with_tau_att(effect_mass / treated_mass);
    }
    Ok(spec)
}

/// Expected fraction of category-A treated units that find a category-A
/// control when matching without replacement in a large sample.
pub fn within_category_match_fraction(mass_a: f64, p_in_a: f64) -> f64 {
    if mass_a == 0.0 || p_in_a == 0.0 {
        return 1.0;
    }
    ((mass_a * (1.0 - p_in_a)) / (mass_a * p_in_a)).min(1.0)
}

/// Expected share of the whole sample made up of category-A treated units
/// forced to match outside A.
pub fn forced_outside_share(mass_a: f64, p_in_a: f64) -> f64 {
    mass_a * p_in_a * (1.0 - within_category_match_fraction(mass_a, p_in_a))
}

/// One observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub id: u64,
    pub w: bool,
    pub s: f64,
    pub y0: Option<f64>,
    pub y1: Option<f64>,
    pub y: f64,
}

/// An indexed collection of units with its treated/control partition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sample {
    pub units: Vec<Unit>,
    pub treated_idx: Vec<usize>,
    pub control_idx: Vec<usize>,
}

impl Sample {
    pub fn from_units(units: Vec<Unit>) -> Self {
        let (treated_idx, control_idx): (Vec<usize>, Vec<usize>) = (0..units.len()).partition(|&i| units[i].w);
        Sample { units, treated_idx, control_idx }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn n1(&self) -> usize {
        self.treated_idx.len()
    }

    pub fn n0(&self) -> usize {
        self.control_idx.len()
    }

    pub fn treated_scores(&self) -> Vec<f64> {
        self.treated_idx.iter().map(|&i| self.units[i].s).collect()
    }

    pub fn control_scores(&self) -> Vec<f64> {
        self.control_idx.iter().map(|&i| self.units[i].s).collect()
    }

    /// True when every unit carries both potential outcomes.
    pub fn has_potential_outcomes(&self) -> bool {
        self.units.iter().all(|u| u.y0.is_some() && u.y1.is_some())
    }

    /// True when every realized outcome is a number.
    pub fn has_outcomes(&self) -> bool {
        self.units.iter().all(|u| !u.y.is_nan())
    }
}

/// SplitMix64 finalizer; maps `(master, index)` to an independent stream seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `n` i.i.d. units from `spec`. Deterministic in `(spec, n, seed)`.
pub fn sample(spec: &PopulationSpec, n: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units = Vec::with_capacity(n);
    for id in 0..n {
        let (s, p) = spec.law.draw(&mut rng, &spec.assign_prob);
        let w = rng.gen::<f64>() < p;
        let y0 = spec.mu0(s) + spec.noise0.draw(&mut rng);
        let y1 = spec.mu1(s) + spec.noise1.draw(&mut rng);
        units.push(Unit { id: id as u64, w, s, y0: Some(y0), y1: Some(y1), y: if w { y1 } else { y0 } });
    }
    Sample::from_units(units)
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    id: u64,
    w: u8,
    s: f64,
    #[serde(default)]
    y0: Option<f64>,
    #[serde(default)]
    y1: Option<f64>,
    #[serde(default)]
    y: Option<f64>,
}

/// Writes `id,w,s,y0,y1,y`. Missing potential outcomes become empty fields.
pub fn write_sample_csv<W: Write>(sample: &Sample, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    for u in &sample.units {
        wtr.serialize(SampleRow { id: u.id, w: u8::from(u.w), s: u.s, y0: u.y0, y1: u.y1, y: Some(u.y) })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a sample CSV. `id`, `w` and `s` are required; `y0`, `y1` and `y` may
/// be absent or empty. A missing `y` is filled from the potential outcomes
/// when possible and is NaN otherwise.
pub fn read_sample_csv<R: Read>(input: R) -> Result<Sample> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut units = Vec::new();
    for (line, row) in rdr.deserialize::<SampleRow>().enumerate() {
        let row = row?;
        let w = match row.w {
            0 => false,
            1 => true,
            other => {
                return Err(Error::InvalidParameter(format!("record {}: w must be 0 or 1, got {other}", line + 1)))
            }
        };
        if !row.s.is_finite() {
            return Err(Error::InvalidParameter(format!("record {}: score is not finite", line + 1)));
        }
        let y = row.y.or(if w { row.y1 } else { row.y0 }).unwrap_or(f64::NAN);
        units.push(Unit { id: row.id, w, s: row.s, y0: row.y0, y1: row.y1, y });
    }
    Ok(Sample::from_units(units))
}
