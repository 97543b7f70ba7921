use std::collections::BTreeSet;

use proptest::prelude::*;

use otlab_core::measure::{DiscreteMeasure, MeasureTag};
use otlab_core::torus::TorusDomain;
use otlab_core::transport::{brute_force_oracle, check_monotonicity, solve_exact, CostKind, TransportPlan};

fn instance() -> impl Strategy<Value = (f64, Vec<f64>, Vec<f64>, bool)> {
    (1usize..=7, 1.0f64..12.0, any::<bool>()).prop_flat_map(|(n, side, periodic)| {
        let c = prop::collection::vec(-0.5f64..0.5, 2 * n);
        (Just(side), c.clone(), c, Just(periodic))
    })
}

fn measures(side: f64, a: &[f64], b: &[f64]) -> (DiscreteMeasure, DiscreteMeasure) {
    let dom = TorusDomain::new(side, 2).unwrap();
    let scale = |v: &[f64]| v.iter().map(|x| x * side).collect::<Vec<_>>();
    let n = a.len() / 2;
    (
        DiscreteMeasure::new(dom, MeasureTag::Custom, scale(a), vec![1.0; n]).unwrap(),
        DiscreteMeasure::new(dom, MeasureTag::Custom, scale(b), vec![1.0; n]).unwrap(),
    )
}

fn cost_kind(periodic: bool) -> CostKind {
    if periodic {
        CostKind::Periodic
    } else {
        CostKind::Euclidean
    }
}

fn support(plan: &TransportPlan) -> BTreeSet<(usize, usize)> {
    plan.pairs.iter().map(|p| (p.src, p.tgt)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn exact_cost_equals_enumeration((side, a, b, periodic) in instance()) {
        let (src, tgt) = measures(side, &a, &b);
        let cost = cost_kind(periodic);
        let (plan, report) = solve_exact(&src, &tgt, cost).unwrap();
        let brute = brute_force_oracle(&src, &tgt, cost).unwrap();
        prop_assert!((plan.total_cost - brute.total_cost).abs() <= 1e-9 * (1.0 + brute.total_cost));
        prop_assert!(report.marginal_error <= 1e-12);
        if let Some(gap) = report.duality_gap {
            prop_assert!(gap >= -1e-9 * (1.0 + plan.total_cost));
        }
    }

    #[test]
    fn duals_certify_optimality((side, a, b, periodic) in instance()) {
        let (src, tgt) = measures(side, &a, &b);
        let cost = cost_kind(periodic);
        let (plan, _) = solve_exact(&src, &tgt, cost).unwrap();
        let duals = plan.duals.clone().expect("exact solves carry duals");
        let n = src.len();
        let c = |i: usize, j: usize| cost.eval(&src, src.point(i), tgt.point(j));
        let mean = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| c(i, j)).sum::<f64>() / (n * n) as f64;
        let tol = 1e-7 * mean.max(1e-12);
        for i in 0..n {
            for j in 0..n {
                prop_assert!(duals.psi[i] + duals.phi[j] <= c(i, j) + tol);
            }
        }
        for p in &plan.pairs {
            prop_assert!((duals.psi[p.src] + duals.phi[p.tgt] - c(p.src, p.tgt)).abs() <= tol);
        }
    }

    #[test]
    fn euclidean_support_is_monotone((side, a, b, _p) in instance()) {
        let (src, tgt) = measures(side, &a, &b);
        let (plan, _) = solve_exact(&src, &tgt, CostKind::Euclidean).unwrap();
        prop_assert_eq!(check_monotonicity(&plan).violations, 0);
    }

    #[test]
    fn periodic_local_support_is_monotone((side, a, _b, _p) in instance(), noise in prop::collection::vec(-0.1f64..0.1, 14)) {
        // targets near their sources keep the optimal displacements short
        let b: Vec<f64> = a.iter().zip(&noise).map(|(x, e)| x + e).collect();
        let (src, tgt) = measures(side, &a, &b);
        let (plan, _) = solve_exact(&src, &tgt, CostKind::Periodic).unwrap();
        prop_assume!(plan.max_displacement() < side / 4.0);
        prop_assert_eq!(check_monotonicity(&plan).violations, 0);
    }

    #[test]
    fn mass_scaling_scales_cost_only((side, a, b, periodic) in instance(), s in 0.1f64..10.0) {
        let (src, tgt) = measures(side, &a, &b);
        let cost = cost_kind(periodic);
        let (plan, _) = solve_exact(&src, &tgt, cost).unwrap();
        let (scaled, _) = solve_exact(&src.scaled(s).unwrap(), &tgt.scaled(s).unwrap(), cost).unwrap();
        prop_assert!((scaled.total_cost - s * plan.total_cost).abs() <= 1e-9 * (1.0 + s * plan.total_cost));
        // ties make the support ambiguous; compare it only when the optimum is unique
        let brute = brute_force_oracle(&src, &tgt, cost).unwrap();
        if support(&brute) == support(&plan) {
            prop_assert_eq!(support(&scaled), support(&plan));
        }
    }
}

#[test]
fn weighted_instance_matches_hand_solution() {
    // two atoms of mass 2 and 1 on a line; the cheap coupling splits the heavy atom
    let dom = TorusDomain::new(100.0, 2).unwrap();
    let src = DiscreteMeasure::new(dom, MeasureTag::Custom, vec![0.0, 0.0, 10.0, 0.0], vec![2.0, 1.0]).unwrap();
    let tgt = DiscreteMeasure::new(dom, MeasureTag::Custom, vec![1.0, 0.0, 2.0, 0.0], vec![1.5, 1.5]).unwrap();
    let (plan, _) = solve_exact(&src, &tgt, CostKind::Euclidean).unwrap();
    // 1.5 * 1 + 0.5 * 4 + 1 * 64
    assert!((plan.total_cost - 67.5).abs() < 1e-12);
    assert_eq!(check_monotonicity(&plan).violations, 0);
}
