use std::sync::Arc;

use proptest::prelude::*;

use otlab_core::measure::{DiscreteMeasure, MeasureTag};
use otlab_core::regularity::{
    campanato_decay, exponential_harmonic_map, expm_tracefree, map_excess, map_neumann, mat_mul, one_step,
    symmetric_linear_map, SampledMap,
};
use otlab_core::torus::TorusDomain;
use otlab_core::transport::{check_monotonicity, CostKind, PlanPair, TransportPlan};

fn frame_is_valid(b: [[f64; 2]; 2]) -> bool {
    let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
    (det - 1.0).abs() <= 1e-12 && (b[0][1] - b[1][0]).abs() <= 1e-12 && b[0][0] > 0.0 && det > 0.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn exponential_of_tracefree_inverts(p in -1.0f64..1.0, q in -1.0f64..1.0) {
        let a = [[p, q], [q, -p]];
        let half = |s: f64| expm_tracefree([[s * a[0][0], s * a[0][1]], [s * a[1][0], s * a[1][1]]]);
        let prod = mat_mul(half(-0.5), half(0.5));
        prop_assert!((prod[0][0] - 1.0).abs() <= 1e-12 && (prod[1][1] - 1.0).abs() <= 1e-12);
        prop_assert!(prod[0][1].abs() <= 1e-12 && prod[1][0].abs() <= 1e-12);
        prop_assert!(frame_is_valid(half(-0.5)));
    }
}

#[test]
fn affine_step_frames_are_valid_and_renormalize() {
    for (p, q) in [(0.1, 0.05), (-0.2, 0.1), (0.0, -0.15)] {
        let t = SampledMap::new(symmetric_linear_map(p, q), 1.0, 10_000).unwrap();
        let phi = map_neumann(&t, 256, 64).unwrap();
        let first = one_step(&t, &phi, 1.0).unwrap();
        assert!(frame_is_valid(first.frame.big_b));
        assert!(map_excess(&first.map, 1.0).unwrap() * 10.0 <= map_excess(&t, 1.0).unwrap());
        // a second step on the renormalized map is close to the identity frame
        let phi2 = map_neumann(&first.map, 256, 64).unwrap();
        let second = one_step(&first.map, &phi2, 1.0).unwrap();
        let b = second.frame.big_b;
        let dev = (b[0][0] - 1.0).abs().max((b[1][1] - 1.0).abs()).max(b[0][1].abs());
        assert!(frame_is_valid(b));
        assert!(dev <= 1e-3, "({p}, {q}): |B - Id| = {dev}");
        assert!(second.frame.b[0].hypot(second.frame.b[1]) <= 1e-3);
    }
}

#[test]
fn step_preserves_monotonicity_of_convex_gradient() {
    let t = SampledMap::new(exponential_harmonic_map(1e-2, 4.0), 1.0, 2000).unwrap();
    let phi = map_neumann(&t, 256, 64).unwrap();
    let next = one_step(&t, &phi, 1.0 / 7.0).unwrap();
    assert!(frame_is_valid(next.frame.big_b));
    let dom = TorusDomain::new(1e3, 2).unwrap();
    let xs: Vec<f64> = next.map.points.iter().flatten().copied().collect();
    let ys: Vec<f64> = next.map.values.iter().flatten().copied().collect();
    let n = next.map.len();
    let src = Arc::new(DiscreteMeasure::new(dom, MeasureTag::Custom, xs, vec![1.0; n]).unwrap());
    let tgt = Arc::new(DiscreteMeasure::new(dom, MeasureTag::Custom, ys, vec![1.0; n]).unwrap());
    let pairs = (0..n).map(|i| PlanPair { src: i, tgt: i, mass: 1.0 }).collect();
    let plan = TransportPlan::from_pairs(src, tgt, pairs, CostKind::Euclidean, "sampled map").unwrap();
    assert_eq!(check_monotonicity(&plan).violations, 0);
}

#[test]
fn smooth_family_decays_at_rate_theta() {
    let theta = 1.0 / 7.0;
    let t = SampledMap::new(exponential_harmonic_map(1e-3, 4.0), 1.0, 10_000).unwrap();
    let trace = campanato_decay(&t, theta, 0.5, 2, 1.0).unwrap();
    assert!(trace.stopped.is_none(), "{:?}", trace.stopped);
    assert_eq!(trace.records.len(), 3);
    for r in &trace.records[1..] {
        assert!(r.ratio.unwrap() <= theta, "step {}: {:?}", r.k, r.ratio);
        assert!((r.scale - theta.powi(r.k as i32)).abs() < 1e-12);
    }
}
