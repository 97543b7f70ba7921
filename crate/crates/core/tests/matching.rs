use std::time::Instant;

use num_rational::BigRational;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use otlab_core::matching::{
    averaged_displacement, campanato_cascade, grow_expansion, matching_from_measure, rstar_from_profile, run_matching,
    CascadeOptions, MatchingOptions,
};
use otlab_core::measure::{lebesgue_grid, DiscreteMeasure, MeasureTag};
use otlab_core::torus::TorusDomain;
use otlab_core::transport::{solve_exact, CostKind};

fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn expansions_sum_exactly(values in prop::collection::vec(-1e3f64..1e3, 1..40), tiny in prop::collection::vec(-1e-12f64..1e-12, 0..10)) {
        let mut e = vec![0.0];
        let mut exact = rational(0.0);
        for &v in values.iter().chain(&tiny) {
            e = grow_expansion(&e, v);
            exact += rational(v);
        }
        let sum = e.iter().fold(rational(0.0), |acc, &c| acc + rational(c));
        prop_assert_eq!(sum, exact);
        // undoing every term returns to exact zero
        for &v in values.iter().chain(&tiny) {
            e = grow_expansion(&e, -v);
        }
        prop_assert!(e.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn rstar_shrinks_as_constant_grows(qs in prop::collection::vec(0.0f64..3.0, 1..6), c1 in 0.01f64..3.0, dc in 0.0f64..3.0) {
        let profile: Vec<(f64, f64)> = qs.iter().enumerate().map(|(i, &q)| (2f64.powi(i as i32 + 1), q)).collect();
        let key = |r: Option<f64>| r.unwrap_or(f64::INFINITY);
        prop_assert!(key(rstar_from_profile(&profile, c1 + dc)) <= key(rstar_from_profile(&profile, c1)));
    }

    #[test]
    fn target_shift_keeps_pairing(seed in any::<u64>(), vx in -0.3f64..0.3, vy in -0.3f64..0.3) {
        // clustered atoms far from the seam: translating the targets only adds
        // a constant to the cost of every perfect matching
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 12;
        let dom = TorusDomain::new(64.0, 2).unwrap();
        let pts = |rng: &mut ChaCha8Rng| (0..2 * n).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<f64>>();
        let (a, b) = (pts(&mut rng), pts(&mut rng));
        let shifted: Vec<f64> = b.iter().enumerate().map(|(i, y)| y + if i % 2 == 0 { vx } else { vy }).collect();
        let src = DiscreteMeasure::new(dom, MeasureTag::Custom, a, vec![1.0; n]).unwrap();
        let tgt = DiscreteMeasure::new(dom, MeasureTag::Custom, b, vec![1.0; n]).unwrap();
        let moved = DiscreteMeasure::new(dom, MeasureTag::Custom, shifted, vec![1.0; n]).unwrap();
        let (p0, _) = solve_exact(&src, &tgt, CostKind::Periodic).unwrap();
        let (p1, _) = solve_exact(&src, &moved, CostKind::Periodic).unwrap();
        let perm = |p: &otlab_core::transport::TransportPlan| {
            let mut v: Vec<(usize, usize)> = p.pairs.iter().map(|q| (q.src, q.tgt)).collect();
            v.sort_unstable();
            v
        };
        prop_assert_eq!(perm(&p0), perm(&p1));
    }
}

#[test]
fn identity_plan_gives_zero_cascade() {
    let dom = TorusDomain::new(32.0, 2).unwrap();
    let opts = MatchingOptions::for_side(32.0);
    let mu = lebesgue_grid(&dom, opts.m, 32.0 * 32.0).unwrap();
    let m = matching_from_measure(mu, 0, 0, &opts, Instant::now()).unwrap();
    assert_eq!(m.record.w2, 0.0);
    let trace = campanato_cascade(&m, [0.5, -3.0], 2.0, &CascadeOptions::default()).unwrap();
    assert!(trace.telescoping_exact);
    assert_eq!(trace.h_tilde, [0.0, 0.0]);
    for s in &trace.scales {
        assert_eq!(s.e, 0.0);
        assert_eq!(s.grad0, [0.0, 0.0]);
    }
    let avg = averaged_displacement(&m, [0.0, 0.0], 4.0).unwrap();
    assert_eq!(avg.lhs, [0.0, 0.0]);
}

#[test]
fn cascade_records_on_a_poisson_matching() {
    let m = run_matching(32.0, 3, &MatchingOptions::for_side(32.0)).unwrap();
    assert!(m.record.n > 0 && m.record.w2 >= 0.0);
    assert!(m.record.field_residual <= 1e-10);
    let trace = campanato_cascade(&m, [0.0, 0.0], 2.0, &CascadeOptions::default()).unwrap();
    assert!(trace.telescoping_exact);
    assert!(trace.scales.len() >= 2);
    assert_eq!(trace.scales[0].radius, 4.0);
    for w in trace.scales.windows(2) {
        let ratio = w[0].radius / w[1].radius;
        assert!((2.0..=4.0).contains(&ratio));
    }
    for s in &trace.scales {
        assert!(s.e.is_finite() && s.e >= 0.0);
        assert!(s.neumann_radius >= s.radius && s.neumann_radius <= 1.15 * s.radius + 1e-12);
    }
    let sum: [f64; 2] = trace.scales.iter().fold([0.0; 2], |a, s| [a[0] + s.grad0[0], a[1] + s.grad0[1]]);
    assert!((sum[0] - trace.h_tilde[0]).abs() < 1e-9 && (sum[1] - trace.h_tilde[1]).abs() < 1e-9);
}

#[test]
fn transport_cost_grows_with_side() {
    let mean = |side: f64| {
        let opts = MatchingOptions::for_side(side);
        (0..8).map(|s| run_matching(side, 100 + s, &opts).unwrap().record.w2_per_area).sum::<f64>() / 8.0
    };
    let (small, large) = (mean(8.0), mean(32.0));
    assert!(large > small, "{large} <= {small}");
}
