use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{CostKind, TransportPlan};

/// Support size above which a seeded subsample of pairs is checked.
pub const FULL_CHECK_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub violations: usize,
    /// Plan pair indices of the most negative product.
    pub worst_pair: Option<(usize, usize)>,
    pub worst_inner: f64,
    pub pairs_checked: u64,
    pub subsampled: bool,
    pub tolerance: f64,
}

/// Counts support pairs with `(x1 - x2) . (y1 - y2) < -1e-9 L^2`.
///
/// Periodic plans are checked with representatives anchored at `x1`: `x2`
/// is replaced by its nearest image around `x1`, and each `y` by its
/// source plus the minimal displacement.
pub fn check_monotonicity(plan: &TransportPlan) -> MonotonicityReport {
    check_monotonicity_with(plan, FULL_CHECK_LIMIT, 0)
}

pub fn check_monotonicity_with(plan: &TransportPlan, limit: usize, seed: u64) -> MonotonicityReport {
    let d = plan.dim();
    let dom = plan.src.domain;
    let tol = 1e-9 * dom.side * dom.side;
    let idx: Vec<usize> = if plan.pairs.len() <= limit {
        (0..plan.pairs.len()).collect()
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, plan.pairs.len(), limit).into_vec();
        v.sort_unstable();
        v
    };
    let xs: Vec<&[f64]> = idx.iter().map(|&k| plan.src.point(plan.pairs[k].src)).collect();
    let ds: Vec<Vec<f64>> = idx.iter().map(|&k| plan.displacement(&plan.pairs[k])).collect();

    let mut report = MonotonicityReport {
        violations: 0,
        worst_pair: None,
        worst_inner: f64::INFINITY,
        pairs_checked: 0,
        subsampled: idx.len() < plan.pairs.len(),
        tolerance: tol,
    };
    let mut r = vec![0.0; d];
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            match plan.cost {
                CostKind::Periodic => dom.displacement_into(xs[a], xs[b], &mut r),
                CostKind::Euclidean => {
                    for k in 0..d {
                        r[k] = xs[b][k] - xs[a][k];
                    }
                }
            }
            // x1 - x2 = -r and y1 - y2 = d1 - d2 - r
            let inner: f64 = (0..d).map(|k| r[k] * (r[k] + ds[b][k] - ds[a][k])).sum();
            report.pairs_checked += 1;
            if inner < report.worst_inner {
                report.worst_inner = inner;
                report.worst_pair = Some((idx[a], idx[b]));
            }
            if inner < -tol {
                report.violations += 1;
            }
        }
    }
    if report.pairs_checked == 0 {
        report.worst_inner = 0.0;
    }
    report
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::measure::{DiscreteMeasure, MeasureTag};
    use crate::torus::TorusDomain;
    use crate::transport::PlanPair;

    #[test]
    fn crossed_line_plan() {
        let dom = TorusDomain::new(10.0, 1).unwrap();
        let mu = Arc::new(DiscreteMeasure::new(dom, MeasureTag::Custom, vec![0.0, 1.0], vec![1.0, 1.0]).unwrap());
        let pairs = vec![PlanPair { src: 0, tgt: 1, mass: 1.0 }, PlanPair { src: 1, tgt: 0, mass: 1.0 }];
        let plan = TransportPlan::from_pairs(mu.clone(), mu.clone(), pairs, CostKind::Euclidean, "manual").unwrap();
        let r = check_monotonicity(&plan);
        assert_eq!(r.violations, 1);
        assert!((r.worst_inner + 1.0).abs() < 1e-15);
        let id = vec![PlanPair { src: 0, tgt: 0, mass: 1.0 }, PlanPair { src: 1, tgt: 1, mass: 1.0 }];
        let plan = TransportPlan::from_pairs(mu.clone(), mu, id, CostKind::Euclidean, "manual").unwrap();
        assert_eq!(check_monotonicity(&plan).violations, 0);
    }
}
