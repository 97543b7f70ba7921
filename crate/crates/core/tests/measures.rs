use std::f64::consts::PI;

use proptest::prelude::*;

use otlab_core::measure::{lebesgue_grid, restrict, sample_poisson, DiscreteMeasure, RandomSeed};
use otlab_core::torus::{TorusDomain, TorusPoint};
use otlab_core::transport::{disk_lebesgue, solve_exact, CostKind};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn restriction_is_idempotent(seed in 0u64..1000, cx in -4.0f64..4.0, cy in -4.0f64..4.0, r in 0.5f64..3.9) {
        let dom = TorusDomain::new(8.0, 2).unwrap();
        let mu = sample_poisson(&dom, 1.0, RandomSeed(seed)).unwrap();
        let c = TorusPoint(vec![cx, cy]);
        let once = restrict(&mu, &c, r).unwrap();
        let twice = restrict(&once, &c, r).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn sampling_is_reproducible(seed in any::<u64>(), side in 1.0f64..12.0) {
        let dom = TorusDomain::new(side, 2).unwrap();
        let a = sample_poisson(&dom, 1.0, RandomSeed(seed)).unwrap();
        let b = sample_poisson(&dom, 1.0, RandomSeed(seed)).unwrap();
        prop_assert_eq!(a.coords().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        b.coords().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn disk_cells_cover_the_disk(r in 0.5f64..6.0, m in 1usize..12) {
        let dom = TorusDomain::new(16.0, 2).unwrap();
        let area = PI * r * r;
        let cells = disk_lebesgue(&dom, r, m, area).unwrap();
        prop_assert!(cells.masses().iter().all(|&w| w > 0.0));
        prop_assert!((cells.total_mass() - area).abs() <= 1e-9 * area);
        for i in 0..cells.len() {
            let p = cells.point(i);
            prop_assert!(p[0].hypot(p[1]) <= r * (1.0 + 1e-12));
        }
    }
}

#[test]
fn grid_refinement_within_half_diagonal() {
    let dom = TorusDomain::new(4.0, 2).unwrap();
    let mut prev = f64::INFINITY;
    for m in [2usize, 4, 8] {
        let a = lebesgue_grid(&dom, m, 16.0).unwrap();
        let b = lebesgue_grid(&dom, 2 * m, 16.0).unwrap();
        let (plan, _) = solve_exact(&a, &b, CostKind::Periodic).unwrap();
        let per_area = plan.total_cost / 16.0;
        let h = 4.0 / m as f64;
        // each fine atom sits a quarter cell diagonal from its parent center
        let expected = 2.0 * (h / 4.0) * (h / 4.0);
        assert!((per_area - expected).abs() < 1e-9, "m = {m}: {per_area} vs {expected}");
        assert!(per_area <= 2.0 * h * h);
        assert!(per_area < prev);
        prev = per_area;
    }
}

#[test]
fn poisson_counts_have_poisson_variance() {
    let dom = TorusDomain::new(8.0, 2).unwrap();
    let counts: Vec<f64> = (0..600).map(|s| sample_poisson(&dom, 1.0, RandomSeed(s)).unwrap().len() as f64).collect();
    let mean = counts.iter().sum::<f64>() / counts.len() as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (counts.len() - 1) as f64;
    assert!((mean - 64.0).abs() < 2.0, "mean {mean}");
    assert!((var / mean - 1.0).abs() < 0.2, "variance {var}, mean {mean}");
}

#[test]
fn json_document_shape() {
    let dom = TorusDomain::new(2.0, 2).unwrap();
    let mu = lebesgue_grid(&dom, 1, 4.0).unwrap();
    let v: serde_json::Value = serde_json::from_str(&mu.to_json().unwrap()).unwrap();
    assert_eq!(v["domain"]["L"], 2.0);
    assert_eq!(v["domain"]["d"], 2);
    assert_eq!(v["tag"], "grid");
    assert_eq!(v["atoms"][0], serde_json::json!([0.0, 0.0, 4.0]));
    assert_eq!(DiscreteMeasure::from_json(&mu.to_json().unwrap()).unwrap(), mu);
}
