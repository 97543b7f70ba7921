use std::sync::Arc;

use super::{check_balanced, CostKind, PlanPair, TransportPlan};
use crate::error::{invalid, Error, Result};
use crate::measure::DiscreteMeasure;

/// Largest side the exhaustive search accepts.
pub const ORACLE_MAX_ATOMS: usize = 9;

/// Exhaustive minimum over all bijections between two unit-mass measures
/// of equal size. Ties keep the first permutation in Heap order.
pub fn brute_force_oracle(src: &DiscreteMeasure, tgt: &DiscreteMeasure, cost: CostKind) -> Result<TransportPlan> {
    check_balanced(src, tgt)?;
    let n = src.len();
    if n != tgt.len() {
        return invalid("oracle needs the same number of atoms on both sides");
    }
    if n > ORACLE_MAX_ATOMS {
        return Err(Error::Resource(format!("{n} atoms exceed the oracle limit of {ORACLE_MAX_ATOMS}")));
    }
    if src.masses().iter().chain(tgt.masses()).any(|&m| m != 1.0) {
        return invalid("oracle needs unit masses");
    }
    let c: Vec<f64> = (0..n * n).map(|k| cost.eval(src, src.point(k / n), tgt.point(k % n))).collect();
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum::<f64>();

    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = total(&perm);
    // Heap's algorithm, iterative form
    let mut stack = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            let v = total(&perm);
            if v < best_cost {
                best_cost = v;
                best.copy_from_slice(&perm);
            }
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    let pairs = best.iter().enumerate().map(|(i, &j)| PlanPair { src: i, tgt: j, mass: 1.0 }).collect();
    TransportPlan::from_pairs(Arc::new(src.clone()), Arc::new(tgt.clone()), pairs, cost, "brute-force")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{MeasureTag, RandomSeed};
    use crate::torus::TorusDomain;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64]) -> DiscreteMeasure {
        let dom = TorusDomain::new(4.0, 1).unwrap();
        DiscreteMeasure::new(dom, MeasureTag::Custom, xs.to_vec(), vec![1.0; xs.len()]).unwrap()
    }

    #[test]
    fn single_and_crossed() {
        let p = brute_force_oracle(&line(&[0.3]), &line(&[1.0]), CostKind::Periodic).unwrap();
        assert_eq!(p.pairs.len(), 1);
        let p = brute_force_oracle(&line(&[0.0, 1.0]), &line(&[0.5, 3.5]), CostKind::Periodic).unwrap();
        assert!((p.total_cost - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_large_and_weighted() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
        assert!(matches!(brute_force_oracle(&line(&xs), &line(&xs), CostKind::Periodic), Err(Error::Resource(_))));
        let dom = TorusDomain::new(4.0, 1).unwrap();
        let w = DiscreteMeasure::new(dom, MeasureTag::Custom, vec![0.0], vec![2.0]).unwrap();
        assert!(brute_force_oracle(&w, &w, CostKind::Periodic).is_err());
    }

    #[test]
    fn beats_random_permutations() {
        let dom = TorusDomain::new(10.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(RandomSeed(8).0);
        let pts = |rng: &mut ChaCha8Rng| (0..16).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f64>>();
        let a = DiscreteMeasure::new(dom, MeasureTag::Custom, pts(&mut rng), vec![1.0; 8]).unwrap();
        let b = DiscreteMeasure::new(dom, MeasureTag::Custom, pts(&mut rng), vec![1.0; 8]).unwrap();
        let best = brute_force_oracle(&a, &b, CostKind::Periodic).unwrap().total_cost;
        let mut perm: Vec<usize> = (0..8).collect();
        for _ in 0..100 {
            perm.shuffle(&mut rng);
            let c: f64 = perm.iter().enumerate().map(|(i, &j)| dom.dist2(a.point(i), b.point(j))).sum();
            assert!(best <= c + 1e-12);
        }
    }
}
