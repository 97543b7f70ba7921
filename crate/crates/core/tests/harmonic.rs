use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use otlab_core::eulerian::{segment_energy, segments, Segment};
use otlab_core::field::{solve_disk_neumann, AngularFlux};
use otlab_core::harmonic::{
    candidate_radii, harmonic_approximation, neumann_from_segments, orthogonality_segments, residual_segments,
    scale_displacements, select_radius,
};
use otlab_core::matching::{run_matching, MatchingOptions};
use otlab_core::torus::TorusPoint;

fn random_segments(seed: u64, n: usize, spread: f64, reach: f64) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Segment {
            e: [rng.random_range(-spread..spread), rng.random_range(-spread..spread)],
            d: [rng.random_range(-reach..reach), rng.random_range(-reach..reach)],
            mass: 1.0,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn expansion_identity_holds(seed in any::<u64>(), r in 1.5f64..4.0) {
        let segs = random_segments(seed, 80, 5.0, 1.0);
        let field = neumann_from_segments(&segs, r, 128, 32).unwrap();
        let o = orthogonality_segments(&segs, &field);
        prop_assert!(o.identity_defect() <= 1e-6 * (1.0 + o.lhs.abs()));
        prop_assert!(o.kinetic >= 0.0 && o.dirichlet >= 0.0);
    }

    #[test]
    fn residual_and_energy_scale_quadratically(seed in any::<u64>(), s in 0.1f64..3.0) {
        // sources inside the unit window and B_6 keep every window membership fixed under scaling
        let segs = random_segments(seed, 30, 0.7, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let field = solve_disk_neumann(&AngularFlux::Coefficients { a: a.clone(), b: b.clone() }, 3.5, 8).unwrap();
        let scaled_flux = solve_disk_neumann(
            &AngularFlux::Coefficients { a: a.iter().map(|v| v * s).collect(), b: b.iter().map(|v| v * s).collect() },
            3.5,
            8,
        ).unwrap();
        let p = [0.3, -0.2];
        let (g, gs) = (field.gradient(p), scaled_flux.gradient(p));
        prop_assert!((gs[0] - s * g[0]).abs() + (gs[1] - s * g[1]).abs() <= 1e-9 * (1.0 + s * (g[0].abs() + g[1].abs())));
        let scaled = scale_displacements(&segs, s);
        let (res, raw, n, _) = residual_segments(&segs, &field);
        let (res_s, raw_s, n_s, _) = residual_segments(&scaled, &scaled_flux);
        prop_assert_eq!(n, n_s);
        prop_assert!((res_s - s * s * res).abs() <= 1e-9 * s * s * res.max(1e-300));
        prop_assert!((raw_s - s * s * raw).abs() <= 1e-9 * s * s * raw.max(1e-300));
        let e = segment_energy(&segs, 6.0, 1.0);
        prop_assert!((segment_energy(&scaled, 6.0, 1.0) - s * s * e).abs() <= 1e-9 * s * s * e);
    }
}

#[test]
fn good_radius_is_a_candidate_and_report_is_consistent() {
    let m = run_matching(16.0, 21, &MatchingOptions::for_side(16.0)).unwrap();
    let c = TorusPoint(vec![1.0, -2.0]);
    let segs = segments(&m.plan, &c).unwrap();
    let cands = candidate_radii(3.0, 4.0, 10);
    let choice = select_radius(&segs, &cands, 256, 32).unwrap();
    assert!(cands.contains(&choice.radius));
    assert!(cands.iter().all(|&r| (3.0..=4.0).contains(&r)));
    let rep = harmonic_approximation(&m.plan, &c, 10, Some(2)).unwrap();
    assert!(rep.e >= 0.0 && rep.residual >= 0.0 && rep.dirichlet_energy >= 0.0);
    // Cauchy-Schwarz: |d - g|^2 <= (|d| + |g|)^2 summed
    let field = neumann_from_segments(&segs, rep.radius, 256, 64).unwrap();
    let grad2: f64 = segs
        .iter()
        .filter(|s| {
            let b = s.end();
            s.e[0].hypot(s.e[1]) < 1.0 || b[0].hypot(b[1]) < 1.0
        })
        .map(|s| {
            let g = field.gradient(s.e);
            s.mass * (g[0] * g[0] + g[1] * g[1])
        })
        .sum();
    let bound = rep.window_energy + grad2 + 2.0 * (rep.window_energy * grad2).sqrt();
    assert!(rep.residual <= bound * (1.0 + 1e-12));
    assert!(rep.d.unwrap() >= 0.0);
}
