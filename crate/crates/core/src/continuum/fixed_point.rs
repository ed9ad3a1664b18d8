//! Fixed points of the continuum flow and their clusters.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::OpinionFunction;
use crate::analysis::{report_from, Cluster, ClusterReport, DEFAULT_MARGIN};

/// Gap below which two plateaus count as exactly one unit apart.
const UNIT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedPointClass {
    /// Knot values pairwise equal or strictly more than 1 apart.
    F,
    /// Equal or at least 1 apart, outside a set of knot weight ≤ tol.
    FBar,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauGroup {
    pub knots: Range<usize>,
    pub value: f64,
    /// Trapezoid weight of the member knots.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub class: FixedPointClass,
    pub strict: bool,
    pub relaxed: bool,
    pub groups: Vec<PlateauGroup>,
    /// Smallest gap between adjacent groups.
    pub min_gap: Option<f64>,
    /// Knot weight of groups ignored by the relaxed test.
    pub excluded_weight: f64,
    pub tol: f64,
}

fn groups(f: &OpinionFunction, tol: f64, chain: bool) -> Vec<PlateauGroup> {
    let v = f.values();
    let w = f.knot_weights();
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=v.len() {
        let split = k == v.len() || if chain { v[k] - v[k - 1] >= tol } else { v[k] - v[start] >= tol };
        if split {
            let weight: f64 = w[start..k].iter().sum();
            let value = if weight > 0.0 {
                w[start..k].iter().zip(&v[start..k]).map(|(a, b)| a * b).sum::<f64>() / weight
            } else {
                0.5 * (v[start] + v[k - 1])
            };
            out.push(PlateauGroup { knots: start..k, value, weight });
            start = k;
        }
    }
    out
}

fn gaps(v: &[f64], g: &[&PlateauGroup]) -> Vec<f64> {
    g.windows(2).map(|p| v[p[1].knots.start] - v[p[0].knots.end - 1]).collect()
}

/// Classifies f against F (strict gaps) and F̄ (gaps ≥ 1 up to a knot weight
/// of at most tol). Knots chain into one group while consecutive values
/// differ by less than tol.
pub fn check_fixed_point(f: &OpinionFunction, tol: f64) -> FixedPointReport {
    let v = f.values();
    let all = groups(f, tol, true);
    let refs: Vec<&PlateauGroup> = all.iter().collect();
    let g_all = gaps(v, &refs);
    let strict = g_all.iter().all(|&d| d > 1.0);
    let kept: Vec<&PlateauGroup> = all.iter().filter(|g| g.weight > tol).collect();
    let excluded_weight: f64 = all.iter().filter(|g| g.weight <= tol).map(|g| g.weight).sum();
    let relaxed = strict || (excluded_weight <= tol && gaps(v, &kept).iter().all(|&d| d >= 1.0 - UNIT_SLACK));
    let class = if strict {
        FixedPointClass::F
    } else if relaxed {
        FixedPointClass::FBar
    } else {
        FixedPointClass::Neither
    };
    FixedPointReport {
        class,
        strict,
        relaxed,
        min_gap: g_all.iter().copied().reduce(f64::min),
        groups: all,
        excluded_weight,
        tol,
    }
}

/// Plateaus of f (maximal knot runs whose value range is below
/// `plateau_tol`) as clusters: weight is the α-measure, position the mean
/// value over it. Member indices refer to knots.
pub fn extract_continuum_clusters(f: &OpinionFunction, plateau_tol: f64, t_converged: Option<f64>) -> ClusterReport {
    let clusters = groups(f, plateau_tol, false)
        .into_iter()
        .filter(|g| g.weight > 0.0)
        .map(|g| Cluster { position: g.value, weight: g.weight, member_indices: g.knots })
        .collect();
    let mut r = report_from(clusters, plateau_tol).classified(DEFAULT_MARGIN);
    r.notes.push(
        "limit clusters satisfy separation ≥ 1 + min/max weight only in the nonstrict sense; marginal pairs are consistent with it"
            .into(),
    );
    if let Some(t) = t_converged {
        r.notes.push(format!("converged at t = {t}"));
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Stability;

    #[test]
    fn plateaus_apart() {
        let f = OpinionFunction::step(&[0.0, 1.5], &[1.0, 1.0]).unwrap();
        let r = check_fixed_point(&f, 1e-9);
        assert_eq!(r.class, FixedPointClass::F);
        assert_eq!(r.groups.len(), 2);
        assert!((r.min_gap.unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn unit_gap_is_only_relaxed() {
        let f = OpinionFunction::step(&[0.0, 1.0], &[1.0, 1.0]).unwrap();
        let r = check_fixed_point(&f, 1e-9);
        assert_eq!(r.class, FixedPointClass::FBar);
        assert!(!r.strict && r.relaxed);
    }

    #[test]
    fn ramp_is_neither() {
        let f = OpinionFunction::linear(0.0, 1.0, 64).unwrap();
        assert_eq!(check_fixed_point(&f, 1e-6).class, FixedPointClass::Neither);
        let c = OpinionFunction::constant(4.0, 8).unwrap();
        assert_eq!(check_fixed_point(&c, 1e-6).class, FixedPointClass::F);
    }

    #[test]
    fn tiny_intermediate_plateau_is_excluded() {
        // a 1e-10-wide group 0.5 above the first plateau
        let f = OpinionFunction::step(&[0.0, 0.5, 2.0], &[0.5, 1e-10, 0.5]).unwrap();
        let r = check_fixed_point(&f, 1e-9);
        assert_eq!(r.class, FixedPointClass::FBar);
        assert!(r.excluded_weight <= 1e-9);
    }

    #[test]
    fn two_plateau_clusters() {
        let f = OpinionFunction::step(&[0.0, 2.2], &[0.5, 0.5]).unwrap();
        let r = extract_continuum_clusters(&f, 1e-6, None);
        assert_eq!(r.clusters.len(), 2);
        assert!((r.clusters[0].weight - 0.5).abs() < 1e-15 && (r.clusters[1].weight - 0.5).abs() < 1e-15);
        assert!((r.separations[0] - 2.2).abs() < 1e-15);
        assert_eq!(r.overall, Some(Stability::Stable));
        let one = extract_continuum_clusters(&OpinionFunction::constant(1.0, 10).unwrap(), 1e-6, Some(3.0));
        assert_eq!(one.clusters.len(), 1);
        assert!((one.clusters[0].weight - 1.0).abs() < 1e-15);
    }
}
