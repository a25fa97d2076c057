//! ATT matching estimators.
//!
//! All estimators read matchings whose pairs are positions into the
//! sample's `treated_idx` / `control_idx` lists.

use std::io::Write;

use crate::error::{Error, Result};
use crate::matcher::Matching;
use crate::popgen::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct AttEstimate {
    pub value: f64,
    pub n1_used: usize,
    pub method: String,
    /// The estimate fell back to zero because no valid matching exists
    /// (no treated units, fewer controls than treated without replacement,
    /// or every treated unit dropped by a caliper).
    pub degenerate: bool,
}

impl AttEstimate {
    fn degenerate(method: impl Into<String>) -> Self {
        AttEstimate { value: 0.0, n1_used: 0, method: method.into(), degenerate: true }
    }
}

/// Number of treated units matched to each control (`ν`), indexed by
/// control position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlWeights {
    pub nu: Vec<u32>,
}

impl ControlWeights {
    pub fn total(&self) -> u64 {
        self.nu.iter().map(|&v| u64::from(v)).sum()
    }

    pub fn max(&self) -> u32 {
        self.nu.iter().copied().max().unwrap_or(0)
    }
}

fn outcome(sample: &Sample, unit: usize) -> f64 {
    sample.units[unit].y
}

/// Sample mean of `Y_i - Y_m(i)` over the treated.
///
/// Zero with `degenerate = true` when `N1 = 0`, or when the matching is
/// without replacement and `N1 > N0`. Otherwise every treated unit must be
/// matched exactly once.
pub fn att_matching(sample: &Sample, matching: &Matching) -> Result<AttEstimate> {
    let (n1, n0) = (sample.n1(), sample.n0());
    let method = matching.method.as_str();
    if n1 == 0 || (matching.injective && n1 > n0) {
        return Ok(AttEstimate::degenerate(method));
    }
    matching.validate(n1, n0)?;
    if matching.pairs.len() != n1 {
        return Err(Error::InvalidMatching(format!(
            "{} of {n1} treated units are matched; use att_caliper for partial matchings",
            matching.pairs.len()
        )));
    }
    let sum: f64 = matching
        .pairs
        .iter()
        .map(|&(t, c)| outcome(sample, sample.treated_idx[t]) - outcome(sample, sample.control_idx[c]))
        .sum();
    Ok(AttEstimate { value: sum / n1 as f64, n1_used: n1, method: method.to_string(), degenerate: false })
}

/// `ν_c = #{treated matched to control c}` for `n0` controls.
pub fn control_weights(matching: &Matching, n0: usize) -> ControlWeights {
    let mut nu = vec![0u32; n0];
    for &(_, c) in &matching.pairs {
        nu[c] += 1;
    }
    ControlWeights { nu }
}

/// `(1/N1) Σ_T Y_i - (1/N1) Σ_C ν_i Y_i`.
pub fn att_weighted(sample: &Sample, weights: &ControlWeights) -> Result<AttEstimate> {
    let n1 = sample.n1();
    if weights.nu.len() != sample.n0() {
        return Err(Error::InvalidParameter(format!(
            "{} weights for {} controls",
            weights.nu.len(),
            sample.n0()
        )));
    }
    if weights.total() != n1 as u64 {
        return Err(Error::WeightMismatch { got: weights.total(), expected: n1 as u64 });
    }
    if n1 == 0 {
        return Ok(AttEstimate::degenerate("weighted"));
    }
    let treated: f64 = sample.treated_idx.iter().map(|&i| outcome(sample, i)).sum();
    let controls: f64 = weights
        .nu
        .iter()
        .zip(&sample.control_idx)
        .filter(|(&v, _)| v > 0)
        .map(|(&v, &i)| f64::from(v) * outcome(sample, i))
        .sum();
    Ok(AttEstimate { value: (treated - controls) / n1 as f64, n1_used: n1, method: "weighted".into(), degenerate: false })
}

/// Mean of `Y_i - Y_m(i)` over the treated units a caliper retained.
///
/// The target becomes the ATT of the retained subpopulation, not the ATT of
/// all treated units. `matching` holds the retained pairs and `dropped` the
/// treated positions removed from it.
pub fn att_caliper(sample: &Sample, matching: &Matching, dropped: &[usize]) -> Result<AttEstimate> {
    let (n1, n0) = (sample.n1(), sample.n0());
    let method = format!("{}+caliper", matching.method);
    if let Some(&bad) = dropped.iter().find(|&&t| t >= n1) {
        return Err(Error::InvalidMatching(format!("dropped position {bad} is not a treated position")));
    }
    matching.validate(n1, n0)?;
    let retained = n1.saturating_sub(dropped.len());
    if retained == 0 || matching.pairs.is_empty() {
        return Ok(AttEstimate::degenerate(method));
    }
    if matching.pairs.len() != retained {
        return Err(Error::InvalidMatching(format!(
            "{} retained pairs but {retained} treated units not dropped",
            matching.pairs.len()
        )));
    }
    let sum: f64 = matching
        .pairs
        .iter()
        .map(|&(t, c)| outcome(sample, sample.treated_idx[t]) - outcome(sample, sample.control_idx[c]))
        .sum();
    Ok(AttEstimate { value: sum / retained as f64, n1_used: retained, method, degenerate: false })
}

/// `(1/N1) Σ_T (Y_i(1) - Y_i(0))`, the in-sample ATT.
pub fn att_true_sample(sample: &Sample) -> Result<f64> {
    if sample.n1() == 0 {
        return Err(Error::NoTreated);
    }
    let mut sum = 0.0;
    for &i in &sample.treated_idx {
        let u = &sample.units[i];
        match (u.y0, u.y1) {
            (Some(y0), Some(y1)) => sum += y1 - y0,
            _ => return Err(Error::MissingPotentialOutcomes),
        }
    }
    Ok(sum / sample.n1() as f64)
}

/// Fraction and count of units at or above `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapDiagnostic {
    pub fraction: f64,
    pub count: usize,
}

impl OverlapDiagnostic {
    /// Any unit at or above the threshold refutes `Pr(Π >= threshold) = 0`.
    pub fn rejects_null(&self) -> bool {
        self.count > 0
    }
}

/// Overlap diagnostic on the raw scores (use a threshold of 1/2 on
/// propensity scores).
pub fn diagnose_overlap(sample: &Sample, threshold: f64) -> OverlapDiagnostic {
    diagnose_overlap_by(sample, threshold, |s| s)
}

/// Overlap diagnostic after mapping each score through `to_propensity`.
pub fn diagnose_overlap_by<F: Fn(f64) -> f64>(sample: &Sample, threshold: f64, to_propensity: F) -> OverlapDiagnostic {
    let count = sample.units.iter().filter(|u| to_propensity(u.s) >= threshold).count();
    let fraction = if sample.is_empty() { 0.0 } else { count as f64 / sample.len() as f64 };
    OverlapDiagnostic { fraction, count }
}

/// Writes `method,value,n1_used,degenerate` rows.
pub fn write_estimates_csv<W: Write>(estimates: &[AttEstimate], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["method", "value", "n1_used", "degenerate"])?;
    for e in estimates {
        wtr.write_record([e.method.clone(), e.value.to_string(), e.n1_used.to_string(), e.degenerate.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::{apply_caliper, match_optimal_exact, match_with_replacement, MatchMethod};
    use crate::popgen::Unit;

    fn unit(id: u64, w: bool, s: f64, y: f64) -> Unit {
        Unit { id, w, s, y0: None, y1: None, y }
    }

    fn toy(treated: &[(f64, f64)], controls: &[(f64, f64)]) -> Sample {
        let mut units = Vec::new();
        for &(s, y) in treated {
            units.push(unit(units.len() as u64, true, s, y));
        }
        for &(s, y) in controls {
            units.push(unit(units.len() as u64, false, s, y));
        }
        Sample::from_units(units)
    }

    fn matched(sample: &Sample) -> Matching {
        match_optimal_exact(&sample.treated_scores(), &sample.control_scores()).unwrap()
    }

    #[test]
    fn single_difference() {
        let s = toy(&[(0.5, 3.0)], &[(0.4, 1.0)]);
        let e = att_matching(&s, &matched(&s)).unwrap();
        assert_eq!(e.value, 2.0);
        assert!(!e.degenerate);
    }

    #[test]
    fn mean_of_differences() {
        let s = toy(&[(0.1, 2.0), (0.5, -1.0), (0.9, 5.0)], &[(0.1, 0.0), (0.5, 0.0), (0.9, 0.0)]);
        let e = att_matching(&s, &matched(&s)).unwrap();
        assert!((e.value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_convention() {
        let s = toy(&[], &[(0.4, 1.0)]);
        let empty = Matching {
            pairs: vec![],
            total_cost: 0.0,
            method: MatchMethod::ExactDp,
            injective: true,
            band: None,
            capacity: 1,
        };
        let e = att_matching(&s, &empty).unwrap();
        assert!(e.degenerate && e.value == 0.0);

        let s = toy(&[(0.4, 1.0), (0.5, 1.0)], &[(0.4, 0.0)]);
        let e = att_matching(&s, &empty).unwrap();
        assert!(e.degenerate && e.value == 0.0);
    }

    #[test]
    fn rejects_out_of_range_control() {
        let s = toy(&[(0.5, 3.0)], &[(0.4, 1.0)]);
        let mut m = matched(&s);
        m.pairs = vec![(0, 1)];
        assert!(att_matching(&s, &m).is_err());
    }

    #[test]
    fn weights_and_identity() {
        let s = toy(&[(0.1, 1.0), (0.2, 4.0), (0.3, 2.0)], &[(0.1, 0.5), (0.2, 1.5), (0.3, -1.0), (0.9, 7.0)]);
        let m = matched(&s);
        let w = control_weights(&m, s.n0());
        assert_eq!(w.nu, vec![1, 1, 1, 0]);
        let a = att_matching(&s, &m).unwrap().value;
        let b = att_weighted(&s, &w).unwrap().value;
        assert!((a - b).abs() < 1e-12);

        let s = toy(&[(0.5, 1.0), (0.51, 3.0)], &[(0.49, 0.0), (0.9, 1.0)]);
        let m = match_with_replacement(&s.treated_scores(), &s.control_scores()).unwrap();
        let w = control_weights(&m, s.n0());
        assert_eq!(w.nu, vec![2, 0]);
        assert_eq!(w.total(), 2);
        let e = att_weighted(&s, &w).unwrap();
        assert!((e.value - 2.0).abs() < 1e-15);

        assert!(matches!(att_weighted(&s, &ControlWeights { nu: vec![1, 0] }), Err(Error::WeightMismatch { .. })));
    }

    #[test]
    fn all_weight_on_one_control() {
        let s = toy(&[(0.1, 1.0), (0.2, 3.0)], &[(0.3, 0.5), (0.4, 9.0)]);
        let e = att_weighted(&s, &ControlWeights { nu: vec![2, 0] }).unwrap();
        assert!((e.value - (2.0 - 0.5)).abs() < 1e-15);
        let none = toy(&[], &[(0.3, 0.5)]);
        let e = att_weighted(&none, &ControlWeights { nu: vec![0] }).unwrap();
        assert!(e.degenerate && e.value == 0.0);
    }

    #[test]
    fn caliper_estimates() {
        let s = toy(&[(0.5, 3.0), (0.6, 10.0)], &[(0.51, 1.0), (0.9, 0.0)]);
        let t = s.treated_scores();
        let c = s.control_scores();
        let m = matched(&s);
        let full = att_matching(&s, &m).unwrap();
        let (kept, dropped) = apply_caliper(&m, &t, &c, f64::INFINITY).unwrap();
        let e = att_caliper(&s, &kept, &dropped).unwrap();
        assert_eq!(e.value, full.value);
        assert_eq!(e.n1_used, 2);

        let (kept, dropped) = apply_caliper(&m, &t, &c, 0.1).unwrap();
        let e = att_caliper(&s, &kept, &dropped).unwrap();
        assert_eq!(e.value, 2.0);
        assert_eq!(e.n1_used, 1);

        let (kept, dropped) = apply_caliper(&m, &t, &c, 1e-9).unwrap();
        let e = att_caliper(&s, &kept, &dropped).unwrap();
        assert!(e.degenerate && e.value == 0.0);

        assert!(att_caliper(&s, &kept, &[7]).is_err());
    }

    #[test]
    fn true_att() {
        let mut units = vec![
            Unit { id: 0, w: true, s: 0.1, y0: Some(0.0), y1: Some(0.0), y: 0.0 },
            Unit { id: 1, w: true, s: 0.2, y0: Some(1.0), y1: Some(3.0), y: 3.0 },
            Unit { id: 2, w: false, s: 0.2, y0: Some(1.0), y1: Some(9.0), y: 1.0 },
        ];
        assert_eq!(att_true_sample(&Sample::from_units(units.clone())).unwrap(), 1.0);
        units[0].y0 = None;
        assert!(matches!(att_true_sample(&Sample::from_units(units)), Err(Error::MissingPotentialOutcomes)));
        assert!(att_true_sample(&toy(&[], &[(0.1, 0.0)])).is_err());
    }

    #[test]
    fn overlap() {
        let s = toy(&[(0.1, 0.0), (0.4, 0.0)], &[(0.3, 0.0)]);
        assert_eq!(diagnose_overlap(&s, 0.5), OverlapDiagnostic { fraction: 0.0, count: 0 });
        assert!(!diagnose_overlap(&s, 0.5).rejects_null());
        assert_eq!(diagnose_overlap(&s, 0.0), OverlapDiagnostic { fraction: 1.0, count: 3 });
        let d = diagnose_overlap_by(&s, 0.7, |x| 2.0 * x);
        assert_eq!(d.count, 1);
        assert!(d.rejects_null());
    }

    #[test]
    fn translation_equivariance() {
        let mut s = toy(&[(0.1, 1.0), (0.7, 4.0)], &[(0.15, 0.5), (0.6, 1.5), (0.3, 2.0)]);
        let m = matched(&s);
        let base = att_matching(&s, &m).unwrap().value;
        for &i in &s.treated_idx.clone() {
            s.units[i].y += 2.5;
        }
        let shifted = att_matching(&s, &m).unwrap().value;
        assert!((shifted - base - 2.5).abs() < 1e-12);
    }

    #[test]
    fn estimates_csv() {
        let e = AttEstimate { value: 0.5, n1_used: 3, method: "exact_dp".into(), degenerate: false };
        let mut buf = Vec::new();
        write_estimates_csv(&[e], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "method,value,n1_used,degenerate\nexact_dp,0.5,3,false\n");
    }
}
