//! Asymptotic bias of matching without replacement.
//!
//! For a population where treated units outnumber controls somewhere on the
//! score line, an upper score region with exactly half of its mass treated
//! is fully matched within itself in large samples, and its within-region
//! confounding never vanishes. The limit of `E[τ̂] - τ` is
//!
//! ```text
//! Pr(S ∈ U) / (2 π̄) · (E[Y(0) | W=1, S ∈ U] - E[Y(0) | W=0, S ∈ U])
//! ```
//!
//! where `U = {Π >= p*}` when matching on the propensity score and
//! `U = [b, s_max]` when matching on a scalar score with nondecreasing
//! assignment probability. Population expectations are computed by adaptive
//! quadrature against the score density, exact sums for discrete laws, and a
//! midpoint lattice in probability space for quantile-defined laws.

use crate::error::{Error, Result};
use crate::popgen::PopulationSpec;

/// Resolution of the score and probability grids used to locate level sets.
pub const SCAN_GRID: usize = 10_000;
const MASS_EPS: f64 = 1e-15;
const BISECT_ITERS: usize = 200;
const MONOTONE_SLACK: f64 = 1e-12;

/// Result of locating `p* = inf {p : Pr(W=1 | Π >= p) >= 1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PStarResult {
    pub pstar: f64,
    /// `Pr(W = 1 | Π >= p*)`; NaN when the upper region has no mass.
    pub tail_treated_prob: f64,
    /// `Pr(Π >= 1/2) = 0`, so `p*` was set to 1/2.
    pub defaulted: bool,
    /// The level set contains its infimum.
    pub left_closed: bool,
}

/// Terms of the asymptotic bias over an upper region `U`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasReport {
    pub bias: f64,
    /// Lower end of `U` (`p*` on the propensity scale, `b` on the score scale).
    pub threshold: f64,
    /// `Pr(S ∈ U)`.
    pub prob_upper: f64,
    pub pi_bar: f64,
    /// `E[Y(0) | W = 1, S ∈ U]`; zero when `U` has no mass.
    pub e_y0_treated_upper: f64,
    /// `E[Y(0) | W = 0, S ∈ U]`; zero when `U` has no mass.
    pub e_y0_control_upper: f64,
}

impl BiasReport {
    pub fn prefactor(&self) -> f64 {
        self.prob_upper / (2.0 * self.pi_bar)
    }

    pub fn gap(&self) -> f64 {
        self.e_y0_treated_upper - self.e_y0_control_upper
    }
}

/// Union of closed score intervals.
type Region = Vec<(f64, f64)>;

fn region_integral<F: Fn(f64) -> f64>(spec: &PopulationSpec, region: &Region, f: F) -> f64 {
    region.iter().map(|&(a, b)| spec.law.integrate(&f, a, b)).sum()
}

fn score_grid(spec: &PopulationSpec) -> Vec<f64> {
    let (lo, hi) = spec.law.support();
    (0..=SCAN_GRID).map(|k| lo + (hi - lo) * k as f64 / SCAN_GRID as f64).collect()
}

/// Tabulated assignment probability, used to carve `{s : p(s) >= level}`.
struct LevelSets<'a> {
    spec: &'a PopulationSpec,
    grid: Vec<f64>,
    probs: Vec<f64>,
}

impl<'a> LevelSets<'a> {
    fn new(spec: &'a PopulationSpec) -> Self {
        let grid = match spec.law.atoms() {
            Some(mut atoms) => {
                atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
                atoms.into_iter().map(|a| a.0).collect()
            }
            None => score_grid(spec),
        };
        let probs = grid.iter().map(|&s| spec.assign_prob(s)).collect();
        LevelSets { spec, grid, probs }
    }

    /// Crossing of `p(s) = level` between a point outside and one inside.
    fn refine(&self, mut outside: f64, mut inside: f64, level: f64) -> f64 {
        for _ in 0..BISECT_ITERS {
            let mid = 0.5 * (outside + inside);
            if mid == outside || mid == inside {
                break;
            }
            if self.spec.assign_prob(mid) >= level {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    }

    fn region(&self, level: f64) -> Region {
        if self.spec.law.is_discrete() {
            return self
                .grid
                .iter()
                .zip(&self.probs)
                .filter(|(_, &p)| p >= level)
                .map(|(&s, _)| (s, s))
                .collect();
        }
        let n = self.grid.len();
        let mut region = Vec::new();
        let mut k = 0;
        while k < n {
            if self.probs[k] < level {
                k += 1;
                continue;
            }
            let start = k;
            while k + 1 < n && self.probs[k + 1] >= level {
                k += 1;
            }
            let a = if start > 0 { self.refine(self.grid[start - 1], self.grid[start], level) } else { self.grid[0] };
            let b = if k + 1 < n { self.refine(self.grid[k + 1], self.grid[k], level) } else { self.grid[n - 1] };
            region.push((a, b));
            k += 1;
        }
        region
    }

    /// `(Pr(Π >= level), Pr(W = 1 | Π >= level))`.
    fn tail(&self, level: f64) -> (f64, f64) {
        let region = self.region(level);
        let mass = region_integral(self.spec, &region, |_| 1.0);
        if mass <= MASS_EPS {
            return (mass, f64::NAN);
        }
        let treated = region_integral(self.spec, &region, |s| self.spec.assign_prob(s));
        (mass, treated / mass)
    }

    fn in_set(&self, level: f64) -> Option<bool> {
        let (mass, g) = self.tail(level);
        (mass > MASS_EPS).then_some(g >= 0.5)
    }
}

fn bias_over_region(spec: &PopulationSpec, region: &Region, threshold: f64, pi_bar: f64) -> Result<BiasReport> {
    let prob_upper = region_integral(spec, region, |_| 1.0);
    if prob_upper <= MASS_EPS {
        return Ok(BiasReport {
            bias: 0.0,
            threshold,
            prob_upper: 0.0,
            pi_bar,
            e_y0_treated_upper: 0.0,
            e_y0_control_upper: 0.0,
        });
    }
    let treated = region_integral(spec, region, |s| spec.assign_prob(s));
    let control = prob_upper - treated;
    if treated <= MASS_EPS || control <= MASS_EPS {
        return Err(Error::InvalidParameter(
            "upper region lacks treated or control mass; overlap fails there".into(),
        ));
    }
    let e1 = region_integral(spec, region, |s| spec.mu0(s) * spec.assign_prob(s)) / treated;
    let e0 = region_integral(spec, region, |s| spec.mu0(s) * (1.0 - spec.assign_prob(s))) / control;
    Ok(BiasReport {
        bias: prob_upper / (2.0 * pi_bar) * (e1 - e0),
        threshold,
        prob_upper,
        pi_bar,
        e_y0_treated_upper: e1,
        e_y0_control_upper: e0,
    })
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

fn pi_bar(spec: &PopulationSpec) -> Result<f64> {
    let v = spec.treated_fraction();
    if v <= MASS_EPS {
        return Err(Error::NoTreatedMass);
    }
    Ok(v)
}

/// Locates `p*` on the propensity scale `Π = assign_prob(S)`.
///
/// The probability grid is scanned first: every grid level above the first
/// admissible one must also be admissible (or carry no mass), otherwise the
/// level set is not an interval and the call fails. The infimum is then
/// bracketed by bisection to `tol`.
pub fn pstar(spec: &PopulationSpec, tol: f64) -> Result<PStarResult> {
    check_tol(tol)?;
    let sets = LevelSets::new(spec);
    let (upper_mass, _) = sets.tail(0.5);
    if upper_mass <= MASS_EPS {
        return Ok(PStarResult { pstar: 0.5, tail_treated_prob: f64::NAN, defaulted: true, left_closed: true });
    }

    let levels: Vec<f64> = (0..=SCAN_GRID).map(|k| k as f64 / SCAN_GRID as f64).collect();
    let membership: Vec<Option<bool>> = levels.iter().map(|&p| sets.in_set(p)).collect();
    let first = membership.iter().position(|m| *m == Some(true)).ok_or(Error::LevelSetNotInterval)?;
    if membership[first..].contains(&Some(false)) {
        return Err(Error::LevelSetNotInterval);
    }

    if first == 0 {
        let (_, g) = sets.tail(0.0);
        return Ok(PStarResult { pstar: 0.0, tail_treated_prob: g, defaulted: false, left_closed: true });
    }
    let (mut lo, mut hi) = (levels[first - 1], levels[first]);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if sets.in_set(mid) == Some(true) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (_, g_lo) = sets.tail(lo);
    let (_, g_hi) = sets.tail(hi);
    let slack = (1e3 * tol).max(1e-9);
    Ok(PStarResult { pstar: hi, tail_treated_prob: g_hi, defaulted: false, left_closed: g_lo >= 0.5 - slack })
}

/// Asymptotic bias when matching on the propensity score itself.
///
/// Expects `assign_prob(s) = s`; the upper region is `{Π >= p*}`.
pub fn asymptotic_bias_propensity(spec: &PopulationSpec, tol: f64) -> Result<BiasReport> {
    let ps = pstar(spec, tol)?;
    if !ps.left_closed {
        return Err(Error::NotLeftClosed);
    }
    let pi_bar = pi_bar(spec)?;
    let region = LevelSets::new(spec).region(ps.pstar);
    bias_over_region(spec, &region, ps.pstar, pi_bar)
}

fn check_monotone(spec: &PopulationSpec) -> Result<()> {
    let sets = LevelSets::new(spec);
    if sets.probs.windows(2).any(|w| w[1] < w[0] - MONOTONE_SLACK) {
        return Err(Error::NonMonotone);
    }
    Ok(())
}

/// Lower end `b` of `S* = [b, s_max]`, the smallest `b` with
/// `Pr(W = 1 | S >= b) >= 1/2`, for a nondecreasing assignment probability.
///
/// Fails with [`Error::NoThreshold`] when even the top of the support has
/// assignment probability below 1/2 (then `S*` carries no mass).
pub fn sstar_threshold(spec: &PopulationSpec, tol: f64) -> Result<f64> {
    check_tol(tol)?;
    check_monotone(spec)?;
    let (lo, hi) = spec.law.support();
    if spec.assign_prob(hi) < 0.5 - MONOTONE_SLACK {
        return Err(Error::NoThreshold);
    }
    let in_set = |b: f64| -> bool {
        let mass = spec.law.integrate(|_| 1.0, b, hi);
        if mass <= MASS_EPS {
            return spec.assign_prob(0.5 * (b + hi)) >= 0.5;
        }
        spec.law.integrate(|s| spec.assign_prob(s), b, hi) / mass >= 0.5
    };
    if in_set(lo) {
        return Ok(lo);
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if in_set(mid) {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(b)
}

/// Asymptotic bias when matching on a scalar score with nondecreasing
/// assignment probability; the upper region is `[b, s_max]`.
pub fn asymptotic_bias_score(spec: &PopulationSpec, tol: f64) -> Result<BiasReport> {
    let pi_bar = pi_bar(spec)?;
    let (_, hi) = spec.law.support();
    match sstar_threshold(spec, tol) {
        Ok(b) => bias_over_region(spec, &vec![(b, hi)], b, pi_bar),
        Err(Error::NoThreshold) => bias_over_region(spec, &Vec::new(), hi, pi_bar),
        Err(e) => Err(e),
    }
}

/// Closed forms of the prognostic-score example, valid for `1/3 <= a <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrognosticClosedForm {
    pub a: f64,
    /// `b = (3a + 1) / 2`.
    pub threshold: f64,
    /// `π̄ = 1 / (2a + 2)`.
    pub pi_bar: f64,
    /// `Pr(S ∈ S*) / (2π̄) = 9(a-1)²(a+1)/8`.
    pub prefactor: f64,
    /// `E[Y(0) | W=1, S ∈ S*] = (27a³ + 54a² + 51a + 28) / (20a + 20)`.
    pub e_y0_treated_upper: f64,
    /// `E[Y(0) | S ∈ S*] = (9a² + 14a + 9) / 8`.
    pub e_y0_upper: f64,
    /// `E[Y(0) | W=1, S*] - E[Y(0) | W=0, S*] = (a-1)²(9a+11) / (20a+20)`.
    pub gap: f64,
    /// `9(a-1)⁴(9a+11) / 160`.
    pub bias: f64,
}

impl PrognosticClosedForm {
    pub fn new(a: f64) -> Result<Self> {
        use crate::popgen::{PROGNOSTIC_A_MIN, PROGNOSTIC_A_SLACK};
        if !(a >= PROGNOSTIC_A_MIN - PROGNOSTIC_A_SLACK && a <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "closed forms hold for 1/3 <= a <= 1, got a = {a}"
            )));
        }
        let am1 = a - 1.0;
        Ok(PrognosticClosedForm {
            a,
            threshold: (3.0 * a + 1.0) / 2.0,
            pi_bar: 1.0 / (2.0 * a + 2.0),
            prefactor: 9.0 * am1 * am1 * (a + 1.0) / 8.0,
            e_y0_treated_upper: (27.0 * a.powi(3) + 54.0 * a * a + 51.0 * a + 28.0) / (20.0 * a + 20.0),
            e_y0_upper: (9.0 * a * a + 14.0 * a + 9.0) / 8.0,
            gap: am1 * am1 * (9.0 * a + 11.0) / (20.0 * a + 20.0),
            bias: 9.0 * am1.powi(4) * (9.0 * a + 11.0) / 160.0,
        })
    }
}

/// `9(a-1)⁴(9a+11)/160`, the asymptotic bias of the prognostic example.
pub fn prognostic_bias_closed_form(a: f64) -> Result<f64> {
    PrognosticClosedForm::new(a).map(|c| c.bias)
}

/// `∫₀¹ |F₁⁻¹(u) - F₀⁻¹(u)| du` by the midpoint rule on `grid` points.
pub fn wasserstein_1d<F1, F0>(treated_quantile: F1, control_quantile: F0, grid: usize) -> f64
where
    F1: Fn(f64) -> f64,
    F0: Fn(f64) -> f64,
{
    let m = grid.max(1) as f64;
    (0..grid.max(1))
        .map(|k| {
            let u = (k as f64 + 0.5) / m;
            (treated_quantile(u) - control_quantile(u)).abs()
        })
        .sum::<f64>()
        / m
}

/// Quantile function of a positive measure on `[b, hi]`.
enum Conditional {
    /// Cumulative mass at equally spaced nodes; linear between nodes.
    Tabulated { nodes: Vec<f64>, cdf: Vec<f64> },
    /// Weighted atoms sorted by value.
    Atoms { values: Vec<f64>, cdf: Vec<f64> },
}

impl Conditional {
    fn quantile(&self, u: f64) -> f64 {
        match self {
            Conditional::Tabulated { nodes, cdf } => {
                let total = *cdf.last().unwrap();
                let target = u * total;
                let k = cdf.partition_point(|&c| c < target).clamp(1, cdf.len() - 1);
                let (c0, c1) = (cdf[k - 1], cdf[k]);
                let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
                nodes[k - 1] + frac * (nodes[k] - nodes[k - 1])
            }
            Conditional::Atoms { values, cdf } => {
                let total = *cdf.last().unwrap();
                let k = cdf.partition_point(|&c| c < u * total).min(values.len() - 1);
                values[k]
            }
        }
    }
}

fn conditional_law<W: Fn(f64) -> f64>(spec: &PopulationSpec, b: f64, hi: f64, weight: W, panels: usize) -> Conditional {
    use crate::popgen::ScoreLaw;
    match &spec.law {
        ScoreLaw::Discrete(_) | ScoreLaw::Quantile { .. } => {
            let mut atoms: Vec<(f64, f64)> = match &spec.law {
                ScoreLaw::Discrete(atoms) => atoms.iter().filter(|a| a.0 >= b && a.0 <= hi).copied().collect(),
                ScoreLaw::Quantile { quantile, .. } => {
                    let m = 1usize << 16;
                    (0..m)
                        .map(|k| quantile((k as f64 + 0.5) / m as f64))
                        .filter(|&v| v >= b && v <= hi)
                        .map(|v| (v, 1.0 / m as f64))
                        .collect()
                }
                _ => unreachable!(),
            };
            atoms.sort_by(|x, y| x.0.total_cmp(&y.0));
            let values = atoms.iter().map(|a| a.0).collect();
            let cdf = atoms
                .iter()
                .scan(0.0, |acc, &(v, p)| {
                    *acc += p * weight(v);
                    Some(*acc)
                })
                .collect();
            Conditional::Atoms { values, cdf }
        }
        _ => {
            let nodes: Vec<f64> = (0..=panels).map(|k| b + (hi - b) * k as f64 / panels as f64).collect();
            let mut cdf = Vec::with_capacity(nodes.len());
            cdf.push(0.0);
            let mut acc = 0.0;
            for w in nodes.windows(2) {
                acc += spec.law.integrate(&weight, w[0], w[1]);
                cdf.push(acc);
            }
            Conditional::Tabulated { nodes, cdf }
        }
    }
}

/// `Pr(S ∈ Q | W = 1) · W₁(S | W=1, S ∈ Q ; S | W=0, S ∈ Q)` for
/// `Q = [b, s_max]`.
pub fn weighted_wasserstein_objective(spec: &PopulationSpec, b: f64, grid: usize) -> Result<f64> {
    check_monotone(spec)?;
    let pi_bar = pi_bar(spec)?;
    let (_, hi) = spec.law.support();
    if b > hi {
        return Ok(0.0);
    }
    let treated = spec.law.integrate(|s| spec.assign_prob(s), b, hi);
    let control = spec.law.integrate(|s| 1.0 - spec.assign_prob(s), b, hi);
    if treated <= MASS_EPS || control <= MASS_EPS {
        return Ok(0.0);
    }
    let panels = grid.max(2048);
    let q1 = conditional_law(spec, b, hi, |s| spec.assign_prob(s), panels);
    let q0 = conditional_law(spec, b, hi, |s| 1.0 - spec.assign_prob(s), panels);
    let w = wasserstein_1d(|u| q1.quantile(u), |u| q0.quantile(u), grid);
    Ok(treated / pi_bar * w)
}
