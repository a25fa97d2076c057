//! Matchings between treated and control units on a scalar score.
//!
//! Pairs are positions into the treated and control score slices the
//! matcher was given (for a [`Sample`](crate::popgen::Sample), positions in
//! `treated_idx` and `control_idx`).
//!
//! The optimal matcher without replacement relies on the fact that some
//! optimal matching never contains crossing matches, so after sorting both
//! sides the treated units take controls in increasing order and a dynamic
//! program over `(treated row, skipped controls)` finds the optimum.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exact DP is used by [`match_auto`] up to this many DP cells.
pub const EXACT_CELL_LIMIT: u64 = 200_000_000;
/// Band used by [`match_auto`] once the exact DP is too large.
pub const DEFAULT_BAND: usize = 2000;
/// Largest control set accepted by [`brute_force_match`].
pub const BRUTE_FORCE_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    ExactDp,
    BandedDp,
    WithReplacement,
    Capacitated,
    BruteForce,
}

impl MatchMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchMethod::ExactDp => "exact_dp",
            MatchMethod::BandedDp => "banded_dp",
            MatchMethod::WithReplacement => "with_replacement",
            MatchMethod::Capacitated => "capacitated",
            MatchMethod::BruteForce => "brute_force",
        }
    }
}

impl fmt::Display for MatchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An assignment of treated positions to control positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(treated, control)` pairs, sorted by treated position.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
    pub method: MatchMethod,
    pub injective: bool,
    /// Band of the DP window when one was applied.
    pub band: Option<usize>,
    /// Maximum number of treated units per control.
    pub capacity: usize,
}

impl Matching {
    fn build(
        mut pairs: Vec<(usize, usize)>,
        treated: &[f64],
        controls: &[f64],
        method: MatchMethod,
        band: Option<usize>,
        capacity: usize,
        injective: bool,
    ) -> Matching {
        pairs.sort_unstable();
        let total_cost = pair_cost(&pairs, treated, controls);
        Matching { pairs, total_cost, method, injective, band, capacity }
    }

    /// Sum of within-pair absolute score differences, recomputed.
    pub fn recompute_cost(&self, treated: &[f64], controls: &[f64]) -> f64 {
        pair_cost(&self.pairs, treated, controls)
    }

    /// `method=... band=... capacity=... total_cost=...`
    pub fn summary(&self) -> String {
        let band = self.band.map_or_else(|| "-".to_string(), |b| b.to_string());
        format!(
            "method={} band={} capacity={} total_cost={}",
            self.method, band, self.capacity, self.total_cost
        )
    }

    /// Checks the pair structure against the slices it refers to.
    pub fn validate(&self, n1: usize, n0: usize) -> Result<()> {
        let mut seen_t = vec![false; n1];
        let mut uses = vec![0usize; n0];
        for &(t, c) in &self.pairs {
            if t >= n1 || c >= n0 {
                return Err(Error::InvalidMatching(format!("pair ({t}, {c}) is out of range for {n1} treated / {n0} controls")));
            }
            if std::mem::replace(&mut seen_t[t], true) {
                return Err(Error::InvalidMatching(format!("treated position {t} appears twice")));
            }
            uses[c] += 1;
        }
        if self.injective && uses.iter().any(|&u| u > 1) {
            return Err(Error::InvalidMatching("injective matching reuses a control".into()));
        }
        Ok(())
    }
}

fn pair_cost(pairs: &[(usize, usize)], treated: &[f64], controls: &[f64]) -> f64 {
    pairs.iter().map(|&(t, c)| (treated[t] - controls[c]).abs()).sum()
}

/// Matching knobs: DP band, per-control capacity, optional caliper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub band: usize,
    pub capacity: usize,
    pub caliper: Option<f64>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { band: DEFAULT_BAND, capacity: 1, caliper: None }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::InvalidParameter("capacity must be at least 1".into()));
        }
        if let Some(c) = self.caliper {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter(format!("caliper must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Which matcher to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Exact DP when it fits [`EXACT_CELL_LIMIT`], banded DP otherwise.
    #[default]
    Auto,
    Exact,
    Banded,
    #[serde(alias = "with_replacement")]
    Replacement,
    Capacitated,
}

impl Strategy {
    pub fn is_injective(&self) -> bool {
        matches!(self, Strategy::Auto | Strategy::Exact | Strategy::Banded)
    }
}

/// Runs `strategy` with `config` (the caliper is not applied here).
pub fn match_scores(treated: &[f64], controls: &[f64], strategy: Strategy, config: &MatchConfig) -> Result<Matching> {
    config.validate()?;
    match strategy {
        Strategy::Auto => match_auto(treated, controls, config.band),
        Strategy::Exact => match_optimal_exact(treated, controls),
        Strategy::Banded => match_banded(treated, controls, config.band),
        Strategy::Replacement => match_with_replacement(treated, controls),
        Strategy::Capacitated => match_capacitated(treated, controls, config.capacity),
    }
}

fn sorted_order(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(a.cmp(&b)));
    idx
}

fn check_sizes(n1: usize, slots: usize) -> Result<()> {
    if n1 == 0 {
        return Err(Error::NoTreated);
    }
    if slots == 0 {
        return Err(Error::NoControls);
    }
    if n1 > slots {
        return Err(Error::InsufficientControls { treated: n1, slots });
    }
    Ok(())
}

/// Per-row windows of admissible skip offsets `k = j - i` (matched sorted
/// control position minus sorted treated position). Both bounds must be
/// nondecreasing in the row.
struct Windows {
    lo: Vec<usize>,
    hi: Vec<usize>,
}

impl Windows {
    fn full(n1: usize, d: usize) -> Windows {
        Windows { lo: vec![0; n1], hi: vec![d; n1] }
    }

    /// Windows of `band + 1` offsets centered on a reference offset: the
    /// number of controls below each treated score minus its rank, clamped to
    /// `[0, d]` and made nondecreasing. Windows are nested in `band` and cover
    /// `[0, d]` once `band >= d`.
    fn banded(t_sorted: &[f64], c_sorted: &[f64], band: usize) -> Windows {
        let n1 = t_sorted.len();
        let d = c_sorted.len() - n1;
        if band >= d {
            return Windows::full(n1, d);
        }
        let half = band / 2;
        let mut running = 0usize;
        let mut lo = Vec::with_capacity(n1);
        let mut hi = Vec::with_capacity(n1);
        for (i, &t) in t_sorted.iter().enumerate() {
            let below = c_sorted.partition_point(|&c| c < t);
            let r = below.saturating_sub(i).min(d);
            running = running.max(r);
            let start = running.saturating_sub(half).min(d - band);
            lo.push(start);
            hi.push(start + band);
        }
        Windows { lo, hi }
    }

    fn cells(&self) -> usize {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l + 1).sum()
    }
}

/// Order-preserving DP over sorted scores. Returns, for every sorted
/// treated row, the sorted control position it is matched to.
///
/// Row `i` at offset `k` holds the optimal cost of matching the first `i+1`
/// treated units with the `i+1`-th one using a control at offset at most `k`.
/// On equal cost the smaller control position wins.
fn order_preserving_dp(t: &[f64], c: &[f64], win: &Windows) -> Vec<usize> {
    let n1 = t.len();
    let mut bits = vec![0u64; win.cells().div_ceil(64)];
    let mut row_start = Vec::with_capacity(n1);
    let mut prev: Vec<f64> = Vec::new();
    let mut cur: Vec<f64> = Vec::new();
    let mut bit = 0usize;
    for i in 0..n1 {
        let (lo, hi) = (win.lo[i], win.hi[i]);
        row_start.push(bit);
        cur.clear();
        let mut best = f64::INFINITY;
        let ti = t[i];
        for k in lo..=hi {
            let before = if i == 0 {
                0.0
            } else {
                let (plo, phi) = (win.lo[i - 1], win.hi[i - 1]);
                prev[k.min(phi) - plo]
            };
            let take = before + (ti - c[i + k]).abs();
            if take < best {
                best = take;
                bits[bit / 64] |= 1 << (bit % 64);
            }
            cur.push(best);
            bit += 1;
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let mut assign = vec![0usize; n1];
    let mut k = win.hi[n1 - 1];
    for i in (0..n1).rev() {
        let lo = win.lo[i];
        loop {
            let b = row_start[i] + (k - lo);
            if bits[b / 64] >> (b % 64) & 1 == 1 {
                break;
            }
            k -= 1;
        }
        assign[i] = i + k;
        if i > 0 {
            k = k.min(win.hi[i - 1]);
        }
    }
    assign
}

fn dp_match_slots(treated: &[f64], slot_scores: &[f64], band: Option<usize>) -> Vec<(usize, usize)> {
    let t_ord = sorted_order(treated);
    let c_ord = sorted_order(slot_scores);
    let t_sorted: Vec<f64> = t_ord.iter().map(|&i| treated[i]).collect();
    let c_sorted: Vec<f64> = c_ord.iter().map(|&j| slot_scores[j]).collect();
    let win = match band {
        Some(b) => Windows::banded(&t_sorted, &c_sorted, b),
        None => Windows::full(t_sorted.len(), c_sorted.len() - t_sorted.len()),
    };
    let assign = order_preserving_dp(&t_sorted, &c_sorted, &win);
    assign.iter().enumerate().map(|(i, &j)| (t_ord[i], c_ord[j])).collect()
}

/// Optimal matching without replacement minimizing `Σ |t_i - c_m(i)|`.
pub fn match_optimal_exact(treated: &[f64], controls: &[f64]) -> Result<Matching> {
    check_sizes(treated.len(), controls.len())?;
    let pairs = dp_match_slots(treated, controls, None);
    Ok(Matching::build(pairs, treated, controls, MatchMethod::ExactDp, None, 1, true))
}

/// Banded approximation of [`match_optimal_exact`]: each treated row may use
/// only `band + 1` skip offsets around a reference alignment. Exact when
/// `band >= N0 - N1`; the cost never decreases as the band shrinks.
pub fn match_banded(treated: &[f64], controls: &[f64], band: usize) -> Result<Matching> {
    check_sizes(treated.len(), controls.len())?;
    let pairs = dp_match_slots(treated, controls, Some(band));
    Ok(Matching::build(pairs, treated, controls, MatchMethod::BandedDp, Some(band), 1, true))
}

/// Number of cells the full DP would visit.
pub fn exact_cells(n1: usize, slots: usize) -> u64 {
    n1 as u64 * (slots.saturating_sub(n1) as u64 + 1)
}

/// Exact DP when small enough, banded DP with `band` otherwise.
pub fn match_auto(treated: &[f64], controls: &[f64], band: usize) -> Result<Matching> {
    if exact_cells(treated.len(), controls.len()) <= EXACT_CELL_LIMIT {
        match_optimal_exact(treated, controls)
    } else {
        match_banded(treated, controls, band)
    }
}

fn nearest_control(c_sorted: &[(f64, usize)], t: f64) -> usize {
    // Ties go to the lower score, then to the lower index.
    let pos = c_sorted.partition_point(|&(c, _)| c < t);
    let right = c_sorted.get(pos).copied();
    let left = if pos > 0 {
        let v = c_sorted[pos - 1].0;
        Some(c_sorted[c_sorted.partition_point(|&(c, _)| c < v)])
    } else {
        None
    };
    match (left, right) {
        (Some(l), Some(r)) => {
            if t - l.0 <= r.0 - t {
                l.1
            } else {
                r.1
            }
        }
        (Some(l), None) => l.1,
        (None, Some(r)) => r.1,
        (None, None) => unreachable!("controls are nonempty"),
    }
}

/// Nearest-neighbour matching with replacement.
pub fn match_with_replacement(treated: &[f64], controls: &[f64]) -> Result<Matching> {
    if controls.is_empty() {
        return Err(Error::NoControls);
    }
    if treated.is_empty() {
        return Err(Error::NoTreated);
    }
    let c_sorted: Vec<(f64, usize)> = sorted_order(controls).into_iter().map(|j| (controls[j], j)).collect();
    let pairs = treated.iter().enumerate().map(|(i, &t)| (i, nearest_control(&c_sorted, t))).collect();
    Ok(Matching::build(pairs, treated, controls, MatchMethod::WithReplacement, None, usize::MAX, false))
}

/// Minimum-cost matching where every control serves at most `k` treated.
pub fn match_capacitated(treated: &[f64], controls: &[f64], k: usize) -> Result<Matching> {
    if k == 0 {
        return Err(Error::InvalidParameter("capacity must be at least 1".into()));
    }
    check_sizes(treated.len(), controls.len().saturating_mul(k))?;
    if k >= treated.len() {
        // The capacity cannot bind.
        let mut m = match_with_replacement(treated, controls)?;
        m.method = MatchMethod::Capacitated;
        m.capacity = k;
        m.injective = k == 1;
        return Ok(m);
    }
    let slots: Vec<f64> = controls.iter().flat_map(|&c| std::iter::repeat_n(c, k)).collect();
    let band = (exact_cells(treated.len(), slots.len()) > EXACT_CELL_LIMIT).then_some(DEFAULT_BAND);
    let pairs = dp_match_slots(treated, &slots, band).into_iter().map(|(t, slot)| (t, slot / k)).collect();
    Ok(Matching::build(pairs, treated, controls, MatchMethod::Capacitated, band, k, k == 1))
}

/// Exhaustive search over injective assignments. Limited to
/// [`BRUTE_FORCE_LIMIT`] controls.
pub fn brute_force_match(treated: &[f64], controls: &[f64]) -> Result<Matching> {
    if controls.len() > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge { limit: BRUTE_FORCE_LIMIT, got: controls.len() });
    }
    check_sizes(treated.len(), controls.len())?;

    struct Search<'a> {
        t: &'a [f64],
        c: &'a [f64],
        used: Vec<bool>,
        current: Vec<usize>,
        best: Vec<usize>,
        best_cost: f64,
    }

    fn go(s: &mut Search<'_>, i: usize, cost: f64) {
        if i == s.t.len() {
            if cost < s.best_cost {
                s.best_cost = cost;
                s.best.clone_from(&s.current);
            }
            return;
        }
        for j in 0..s.c.len() {
            if s.used[j] {
                continue;
            }
            let next = cost + (s.t[i] - s.c[j]).abs();
            if next >= s.best_cost {
                continue;
            }
            s.used[j] = true;
            s.current.push(j);
            go(s, i + 1, next);
            s.current.pop();
            s.used[j] = false;
        }
    }

    let mut search = Search {
        t: treated,
        c: controls,
        used: vec![false; controls.len()],
        current: Vec::with_capacity(treated.len()),
        best: Vec::new(),
        best_cost: f64::INFINITY,
    };
    go(&mut search, 0, 0.0);
    let pairs = search.best.iter().copied().enumerate().collect();
    Ok(Matching::build(pairs, treated, controls, MatchMethod::BruteForce, None, 1, true))
}

/// Whether two pairs `i, j` satisfy
/// `max(t_i, c_m(j)) < min(t_j, c_m(i))`.
///
/// Such a pair consists of an upward pair (`t_i < c_m(i)`) and a downward
/// pair (`c_m(j) < t_j`) whose open intervals overlap, which a sort of the
/// downward intervals plus a prefix maximum detects in `O(N1 log N1)`.
pub fn has_crossing(matching: &Matching, treated: &[f64], controls: &[f64]) -> bool {
    let mut down: Vec<(f64, f64)> = Vec::new();
    let mut up: Vec<(f64, f64)> = Vec::new();
    for &(t, c) in &matching.pairs {
        let (ts, cs) = (treated[t], controls[c]);
        if ts < cs {
            up.push((ts, cs));
        } else if cs < ts {
            down.push((cs, ts));
        }
    }
    if up.is_empty() || down.is_empty() {
        return false;
    }
    down.sort_by(|a, b| a.0.total_cmp(&b.0));
    let prefix_max: Vec<f64> = down
        .iter()
        .scan(f64::NEG_INFINITY, |m, &(_, r)| {
            *m = m.max(r);
            Some(*m)
        })
        .collect();
    up.iter().any(|&(l, r)| {
        let count = down.partition_point(|&(dl, _)| dl < r);
        count > 0 && prefix_max[count - 1] > l
    })
}

/// Direct double loop over Definition-style pairs; reference for
/// [`has_crossing`].
pub fn has_crossing_quadratic(matching: &Matching, treated: &[f64], controls: &[f64]) -> bool {
    let p = &matching.pairs;
    p.iter().any(|&(i, mi)| {
        p.iter().any(|&(j, mj)| treated[i].max(controls[mj]) < treated[j].min(controls[mi]))
    })
}

/// Drops pairs with `|t - c| > caliper`. Returns the retained matching and
/// the dropped treated positions.
pub fn apply_caliper(
    matching: &Matching,
    treated: &[f64],
    controls: &[f64],
    caliper: f64,
) -> Result<(Matching, Vec<usize>)> {
    if !(caliper > 0.0) {
        return Err(Error::InvalidParameter(format!("caliper must be positive, got {caliper}")));
    }
    let (kept, dropped): (Vec<_>, Vec<_>) =
        matching.pairs.iter().partition(|&&(t, c)| (treated[t] - controls[c]).abs() <= caliper);
    let retained = Matching {
        total_cost: pair_cost(&kept, treated, controls),
        pairs: kept,
        ..matching.clone()
    };
    Ok((retained, dropped.into_iter().map(|(t, _)| t).collect()))
}

/// Writes `treated_id,control_id,gap`, mapping positions through the id
/// slices.
pub fn write_matching_csv<W: Write>(
    matching: &Matching,
    treated: &[f64],
    controls: &[f64],
    treated_ids: &[u64],
    control_ids: &[u64],
    out: W,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["treated_id", "control_id", "gap"])?;
    for &(t, c) in &matching.pairs {
        let gap = (treated[t] - controls[c]).abs();
        wtr.write_record([treated_ids[t].to_string(), control_ids[c].to_string(), gap.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen()).collect()
    }

    #[test]
    fn single_treated_nearest() {
        let m = match_optimal_exact(&[0.5], &[0.4, 0.7]).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
        assert!((m.total_cost - 0.1).abs() < 1e-12);
    }

    #[test]
    fn two_treated_three_controls() {
        let t = [0.3, 0.5];
        let c = [0.29, 0.31, 0.6];
        let m = match_optimal_exact(&t, &c).unwrap();
        let b = brute_force_match(&t, &c).unwrap();
        assert!((m.total_cost - 0.11).abs() < 1e-12);
        assert!((b.total_cost - 0.11).abs() < 1e-12);
        // Equal-cost options for 0.3; the smaller control wins.
        assert_eq!(m.pairs, vec![(0, 0), (1, 2)]);
    }

    #[test]
    fn identical_sides_zero_cost() {
        let s = [0.9, 0.1, 0.5, 0.3];
        let m = match_optimal_exact(&s, &s).unwrap();
        assert_eq!(m.total_cost, 0.0);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn size_errors() {
        assert!(matches!(match_optimal_exact(&[], &[0.1]), Err(Error::NoTreated)));
        assert!(matches!(
            match_optimal_exact(&[0.1, 0.2], &[0.1]),
            Err(Error::InsufficientControls { treated: 2, slots: 1 })
        ));
        assert!(matches!(match_with_replacement(&[0.1], &[]), Err(Error::NoControls)));
        assert!(matches!(match_capacitated(&[0.1, 0.2, 0.3], &[0.1], 2), Err(Error::InsufficientControls { .. })));
        assert!(matches!(brute_force_match(&[0.1], &[0.0; 11]), Err(Error::InstanceTooLarge { .. })));
    }

    #[test]
    fn banded_zero_with_equal_sizes_is_sorted_pairing() {
        let t = [0.7, 0.2, 0.5];
        let c = [0.1, 0.9, 0.4];
        let m = match_banded(&t, &c, 0).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn banded_random_matches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t = uniform(&mut rng, 50);
        let c = uniform(&mut rng, 80);
        let e = match_optimal_exact(&t, &c).unwrap();
        let b = match_banded(&t, &c, 30).unwrap();
        assert!((e.total_cost - b.total_cost).abs() < 1e-12);
    }

    #[test]
    fn banded_never_beats_exact_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let t: Vec<f64> = (0..60).map(|_| rng.gen::<f64>().powi(2)).collect();
            let c: Vec<f64> = (0..120).map(|_| rng.gen::<f64>().sqrt()).collect();
            let exact = match_optimal_exact(&t, &c).unwrap().total_cost;
            let mut last = f64::INFINITY;
            for band in 0..=60 {
                let cost = match_banded(&t, &c, band).unwrap().total_cost;
                assert!(cost >= exact - 1e-12);
                assert!(cost <= last + 1e-12, "band {band}: {cost} > {last}");
                last = cost;
            }
            assert!((last - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn with_replacement_cases() {
        let m = match_with_replacement(&[0.5, 0.5], &[0.49, 0.9]).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 0)]);
        assert!(!m.injective);
        // Equidistant controls: lower score wins.
        let m = match_with_replacement(&[0.5], &[0.6, 0.4]).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
        // Equal scores: lower index wins.
        let m = match_with_replacement(&[0.5], &[0.45, 0.7, 0.45]).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
        let m = match_with_replacement(&[0.5], &[0.7, 0.55, 0.55]).unwrap();
        assert_eq!(m.pairs, vec![(0, 1)]);
        let single = match_optimal_exact(&[0.33], &[0.1, 0.3, 0.9]).unwrap();
        let nn = match_with_replacement(&[0.33], &[0.1, 0.3, 0.9]).unwrap();
        assert_eq!(single.pairs, nn.pairs);
    }

    #[test]
    fn replacement_never_costs_more() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n1 = rng.gen_range(1..8);
            let n0 = rng.gen_range(n1..12);
            let t = uniform(&mut rng, n1);
            let c = uniform(&mut rng, n0);
            let wr = match_with_replacement(&t, &c).unwrap().total_cost;
            let wo = match_optimal_exact(&t, &c).unwrap().total_cost;
            assert!(wr <= wo + 1e-12);
        }
    }

    #[test]
    fn capacitated_cases() {
        let m = match_capacitated(&[0.4, 0.5], &[0.45, 0.9], 2).unwrap();
        assert_eq!(m.pairs, vec![(0, 0), (1, 0)]);
        assert!((m.total_cost - 0.10).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let n1 = rng.gen_range(1..10);
            let n0 = rng.gen_range(n1..14);
            let t = uniform(&mut rng, n1);
            let c = uniform(&mut rng, n0);
            let k1 = match_capacitated(&t, &c, 1).unwrap();
            let exact = match_optimal_exact(&t, &c).unwrap();
            assert!((k1.total_cost - exact.total_cost).abs() < 1e-12);
            let kn = match_capacitated(&t, &c, n1).unwrap();
            let wr = match_with_replacement(&t, &c).unwrap();
            assert!((kn.total_cost - wr.total_cost).abs() < 1e-12);
            let mut last = f64::INFINITY;
            for k in 1..=n1 {
                let m = match_capacitated(&t, &c, k).unwrap();
                m.validate(n1, n0).unwrap();
                let mut uses = vec![0; n0];
                m.pairs.iter().for_each(|&(_, c)| uses[c] += 1);
                assert!(uses.iter().all(|&u| u <= k));
                assert!(m.total_cost <= last + 1e-12);
                last = m.total_cost;
            }
        }
    }

    #[test]
    fn brute_force_small_cases() {
        let m = brute_force_match(&[0.2], &[0.25]).unwrap();
        assert_eq!(m.pairs, vec![(0, 0)]);
        let m = brute_force_match(&[0.2, 0.4], &[0.4, 0.2]).unwrap();
        assert_eq!(m.total_cost, 0.0);
    }

    #[test]
    fn exhaustive_small_instances_agree_with_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n1 in 1..=3 {
            for n0 in n1..=4 {
                for _ in 0..50 {
                    let t = uniform(&mut rng, n1);
                    let c = uniform(&mut rng, n0);
                    let e = match_optimal_exact(&t, &c).unwrap();
                    let b = brute_force_match(&t, &c).unwrap();
                    assert!((e.total_cost - b.total_cost).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn crossing_detection() {
        let t = [0.2, 0.6];
        let c = [0.7, 0.1];
        let crossed = Matching::build(vec![(0, 0), (1, 1)], &t, &c, MatchMethod::BruteForce, None, 1, true);
        assert!(has_crossing(&crossed, &t, &c));
        assert!(has_crossing_quadratic(&crossed, &t, &c));
        let fixed = Matching::build(vec![(0, 1), (1, 0)], &t, &c, MatchMethod::BruteForce, None, 1, true);
        assert!(!has_crossing(&fixed, &t, &c));
        assert!(!has_crossing_quadratic(&fixed, &t, &c));
    }

    #[test]
    fn crossing_sweep_matches_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let n = rng.gen_range(1..9);
            let t = uniform(&mut rng, n);
            let c = uniform(&mut rng, n + 2);
            let mut perm: Vec<usize> = (0..n + 2).collect();
            for i in (1..perm.len()).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let pairs = (0..n).map(|i| (i, perm[i])).collect();
            let m = Matching::build(pairs, &t, &c, MatchMethod::BruteForce, None, 1, true);
            assert_eq!(has_crossing(&m, &t, &c), has_crossing_quadratic(&m, &t, &c));
        }
    }

    #[test]
    fn caliper_cases() {
        let t = [0.5, 0.6];
        let c = [0.51, 0.9];
        let m = match_optimal_exact(&t, &c).unwrap();
        let (kept, dropped) = apply_caliper(&m, &t, &c, f64::INFINITY).unwrap();
        assert_eq!(kept, m);
        assert!(dropped.is_empty());
        let (kept, dropped) = apply_caliper(&m, &t, &c, 0.1).unwrap();
        assert_eq!(kept.pairs, vec![(0, 0)]);
        assert_eq!(dropped, vec![1]);
        let (kept, dropped) = apply_caliper(&m, &t, &c, 1e-300).unwrap();
        assert!(kept.pairs.is_empty());
        assert_eq!(dropped, vec![0, 1]);
        assert!(apply_caliper(&m, &t, &c, 0.0).is_err());
    }

    #[test]
    fn matching_csv_export() {
        let t = [0.5];
        let c = [0.25, 0.75];
        let m = match_optimal_exact(&t, &c).unwrap();
        let mut buf = Vec::new();
        write_matching_csv(&m, &t, &c, &[10], &[20, 21], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "treated_id,control_id,gap\n10,20,0.25\n");
        assert_eq!(m.summary(), "method=exact_dp band=- capacity=1 total_cost=0.25");
    }
}
