use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::simplex::NetworkSimplex;
use super::{check_balanced, CostKind, Duals, PlanPair, SolveReport, TransportPlan};
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

/// Largest number of cost entries the exact solver accepts.
pub const MAX_COST_ENTRIES: usize = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactOptions {
    /// Instances with at most this many pairs are solved on the full graph.
    pub dense_limit: usize,
    /// Arcs added per source row in each pricing round.
    pub arcs_per_row: usize,
    pub max_rounds: u32,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions { dense_limit: 40_000, arcs_per_row: 8, max_rounds: 500 }
    }
}

/// Exact transportation problem via network simplex on a growing arc set.
///
/// Arcs are priced over the full bipartite graph against the simplex
/// potentials until no pair has negative reduced cost, so the returned
/// duals certify optimality for the complete problem.
pub fn solve_exact(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: CostKind,
) -> Result<(TransportPlan, SolveReport)> {
    solve_exact_with(src, tgt, cost, &ExactOptions::default())
}

pub fn solve_exact_with(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: CostKind,
    opts: &ExactOptions,
) -> Result<(TransportPlan, SolveReport)> {
    let start = Instant::now();
    check_balanced(src, tgt)?;
    let n = src.len();
    let m = tgt.len();
    let entries = n.checked_mul(m).unwrap_or(usize::MAX);
    if entries > MAX_COST_ENTRIES {
        return Err(Error::Resource(format!(
            "{n} x {m} cost entries exceed the exact solver cap; use the entropic solver"
        )));
    }
    let src_arc = Arc::new(src.clone());
    let tgt_arc = Arc::new(tgt.clone());
    if n == 0 || m == 0 {
        let plan = TransportPlan::from_pairs(src_arc, tgt_arc, Vec::new(), cost, "network-simplex")?;
        let report = SolveReport {
            method: "network-simplex".into(),
            iterations: 0,
            rounds: 0,
            marginal_error: 0.0,
            duality_gap: Some(0.0),
            dual_violation: Some(0.0),
            eps_schedule: None,
            entropic_bias: None,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        return Ok((plan, report));
    }

    let pc = PairCost::new(src, tgt, cost);
    let max_cost = cost_bound(src, tgt, cost);
    let mut supply: Vec<f64> = src.masses().to_vec();
    supply.extend(tgt.masses().iter().map(|b| -b));
    let mut ns = NetworkSimplex::new(&supply, max_cost);
    let tol = ns.tolerance();

    if entries <= opts.dense_limit {
        for i in 0..n {
            for j in 0..m {
                ns.add_arc(i, n + j, pc.c(i, j));
            }
        }
    } else {
        for (i, j) in pc.initial_candidates() {
            ns.add_arc(i, n + j, pc.c(i, j));
        }
    }
    let mean_cost = pc.cost_sum() / entries as f64;

    let max_pivots = 200 * (n + m) as u64 * ((n + m) as f64).log2().ceil().max(1.0) as u64 + 1_000_000;
    let mut rounds = 0u32;
    let min_reduced;
    loop {
        ns.run(max_pivots)?;
        rounds += 1;
        let (new_arcs, min_rc) = pc.price(ns.potentials(), tol, opts.arcs_per_row);
        if new_arcs.is_empty() {
            min_reduced = min_rc;
            break;
        }
        if rounds >= opts.max_rounds {
            return Err(Error::Convergence(format!(
                "column generation still adding arcs after {rounds} rounds (min reduced cost {min_rc})"
            )));
        }
        log::debug!(
            "pricing round {rounds}: {} new arcs on top of {}, min reduced cost {min_rc:.3e}",
            new_arcs.len(),
            ns.real_arc_count()
        );
        for (i, j) in new_arcs {
            ns.add_arc(i, n + j, pc.c(i, j));
        }
    }
    log::debug!("left {:.3e} on artificial arcs", ns.artificial_flow());

    let pi = ns.potentials();
    let mut psi: Vec<f64> = pi[..n].iter().map(|p| -p).collect();
    let mut phi: Vec<f64> = pi[n..].to_vec();
    let shift = psi.iter().sum::<f64>() / n as f64;
    psi.iter_mut().for_each(|v| *v -= shift);
    phi.iter_mut().for_each(|v| *v += shift);

    let total_mass = src.total_mass();
    let keep = 1e-12 * total_mass / n.max(m) as f64;
    let mut pairs: Vec<PlanPair> = ns
        .real_flows()
        .filter(|&(_, _, f)| f > keep)
        .map(|(i, t, f)| PlanPair { src: i, tgt: t - n, mass: f })
        .collect();
    pairs.sort_by(|a, b| (a.src, a.tgt).cmp(&(b.src, b.tgt)));
    let mut plan = TransportPlan::from_pairs(src_arc, tgt_arc, pairs, cost, "network-simplex")?;
    let dual: f64 = psi.iter().zip(src.masses()).map(|(p, a)| p * a).sum::<f64>()
        + phi.iter().zip(tgt.masses()).map(|(p, b)| p * b).sum::<f64>();
    let gap = plan.total_cost - dual;
    let violation = (-min_reduced).max(0.0) / mean_cost.max(f64::MIN_POSITIVE);
    plan.duals = Some(Duals { psi, phi });
    let report = SolveReport {
        method: "network-simplex".into(),
        iterations: ns.pivots(),
        rounds,
        marginal_error: plan.marginal_error(),
        duality_gap: Some(gap),
        dual_violation: Some(violation),
        eps_schedule: None,
        entropic_bias: None,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((plan, report))
}

fn cost_bound(src: &DiscreteMeasure, tgt: &DiscreteMeasure, cost: CostKind) -> f64 {
    let d = src.dim();
    match cost {
        CostKind::Periodic => d as f64 * src.domain.half() * src.domain.half(),
        CostKind::Euclidean => {
            let mut total = 0.0;
            for k in 0..d {
                let (lo_a, hi_a) = extent(src, k);
                let (lo_b, hi_b) = extent(tgt, k);
                let w = (hi_b - lo_a).abs().max((hi_a - lo_b).abs());
                total += w * w;
            }
            total
        }
    }
}

fn extent(mu: &DiscreteMeasure, k: usize) -> (f64, f64) {
    (0..mu.len()).map(|i| mu.point(i)[k]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Pair costs with a bucketed fast path for planar problems.
struct PairCost<'a> {
    src: &'a DiscreteMeasure,
    tgt: &'a DiscreteMeasure,
    cost: CostKind,
    planar: Option<Planar>,
}

struct Planar {
    xs: Vec<[f64; 2]>,
    ys: Vec<[f64; 2]>,
    periodic: bool,
    side: f64,
    half: f64,
    src_cells: Buckets,
    tgt_cells: Buckets,
}

impl Planar {
    #[inline]
    fn c(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        let mut dx = y[0] - x[0];
        let mut dy = y[1] - x[1];
        if self.periodic {
            dx = self.wrap(dx);
            dy = self.wrap(dy);
        }
        dx * dx + dy * dy
    }

    /// Differences of wrapped coordinates lie in `(-L, L)`.
    #[inline]
    fn wrap(&self, d: f64) -> f64 {
        if d >= self.half {
            d - self.side
        } else if d < -self.half {
            d + self.side
        } else {
            d
        }
    }

    /// Squared-distance lower bound from `x` to each column and row strip.
    fn gaps(&self, b: &Buckets, x: [f64; 2], gx: &mut Vec<f64>, gy: &mut Vec<f64>) {
        let axis = |v: f64, lo: f64, hi: f64| {
            let g = |v: f64| (lo - v).max(v - hi).max(0.0);
            if self.periodic {
                g(v).min(g(v + self.side)).min(g(v - self.side))
            } else {
                g(v)
            }
        };
        gx.clear();
        gy.clear();
        for a in 0..b.nx {
            let lo = b.ox + a as f64 * b.cx;
            let d = axis(x[0], lo, lo + b.cx);
            gx.push(d * d);
        }
        for k in 0..b.ny {
            let lo = b.oy + k as f64 * b.cy;
            let d = axis(x[1], lo, lo + b.cy);
            gy.push(d * d);
        }
    }
}

/// Points grouped by a rectangular cell grid, CSR layout.
struct Buckets {
    ox: f64,
    oy: f64,
    cx: f64,
    cy: f64,
    nx: usize,
    ny: usize,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl Buckets {
    fn new(pts: &[[f64; 2]], frame: [f64; 4]) -> Self {
        let [ox, oy, wx, wy] = frame;
        let per_side = ((pts.len() as f64 / 4.0).sqrt().floor() as usize).clamp(1, 512);
        let (nx, ny) = (per_side, per_side);
        let cx = (wx / nx as f64).max(f64::MIN_POSITIVE);
        let cy = (wy / ny as f64).max(f64::MIN_POSITIVE);
        let mut b = Buckets { ox, oy, cx, cy, nx, ny, start: vec![0; nx * ny + 1], items: vec![0; pts.len()] };
        let cells: Vec<usize> = pts.iter().map(|&p| b.cell_of(p)).collect();
        for &c in &cells {
            b.start[c + 1] += 1;
        }
        for c in 0..nx * ny {
            b.start[c + 1] += b.start[c];
        }
        let mut fill = b.start.clone();
        for (j, &c) in cells.iter().enumerate() {
            b.items[fill[c]] = j;
            fill[c] += 1;
        }
        b
    }

    fn cell_of(&self, p: [f64; 2]) -> usize {
        let a = (((p[0] - self.ox) / self.cx).floor().max(0.0) as usize).min(self.nx - 1);
        let k = (((p[1] - self.oy) / self.cy).floor().max(0.0) as usize).min(self.ny - 1);
        a * self.ny + k
    }

    fn cell(&self, c: usize) -> &[usize] {
        &self.items[self.start[c]..self.start[c + 1]]
    }

    /// Members of cells within Chebyshev distance `r` of the cell holding `p`.
    fn ring(&self, p: [f64; 2], r: usize, periodic: bool, out: &mut Vec<usize>) {
        out.clear();
        let c = self.cell_of(p);
        let (a0, k0) = ((c / self.ny) as isize, (c % self.ny) as isize);
        let r = r as isize;
        let axis = |v: isize, n: usize| -> Option<usize> {
            if periodic {
                Some(v.rem_euclid(n as isize) as usize)
            } else if v >= 0 && (v as usize) < n {
                Some(v as usize)
            } else {
                None
            }
        };
        let span = |n: usize| if 2 * r + 1 >= n as isize { (0, n as isize - 1, true) } else { (-r, r, false) };
        let (xa, xb, fullx) = span(self.nx);
        let (ya, yb, fully) = span(self.ny);
        for da in xa..=xb {
            let Some(a) = (if fullx { Some(da as usize) } else { axis(a0 + da, self.nx) }) else { continue };
            for dk in ya..=yb {
                let Some(k) = (if fully { Some(dk as usize) } else { axis(k0 + dk, self.ny) }) else { continue };
                out.extend_from_slice(self.cell(a * self.ny + k));
            }
        }
    }

    fn covers_all(&self, r: usize) -> bool {
        2 * r + 1 >= self.nx.max(self.ny)
    }
}

impl<'a> PairCost<'a> {
    fn new(src: &'a DiscreteMeasure, tgt: &'a DiscreteMeasure, cost: CostKind) -> Self {
        let planar = (src.dim() == 2).then(|| {
            let xs: Vec<[f64; 2]> = (0..src.len()).map(|i| src.point2(i)).collect();
            let ys: Vec<[f64; 2]> = (0..tgt.len()).map(|j| tgt.point2(j)).collect();
            let side = src.domain.side;
            let periodic = cost == CostKind::Periodic;
            let frame = if periodic {
                [-0.5 * side, -0.5 * side, side, side]
            } else {
                let (lx, hx) = extent(src, 0);
                let (ly, hy) = extent(src, 1);
                let (tlx, thx) = extent(tgt, 0);
                let (tly, thy) = extent(tgt, 1);
                let (lx, ly) = (lx.min(tlx), ly.min(tly));
                [lx, ly, hx.max(thx) - lx, hy.max(thy) - ly]
            };
            Planar {
                src_cells: Buckets::new(&xs, frame),
                tgt_cells: Buckets::new(&ys, frame),
                xs,
                ys,
                periodic,
                side,
                half: 0.5 * side,
            }
        });
        PairCost { src, tgt, cost, planar }
    }

    #[inline]
    fn c(&self, i: usize, j: usize) -> f64 {
        match &self.planar {
            Some(p) => p.c(p.xs[i], p.ys[j]),
            None => self.cost.eval(self.src, self.src.point(i), self.tgt.point(j)),
        }
    }

    fn cost_sum(&self) -> f64 {
        let m = self.tgt.len();
        (0..self.src.len()).into_par_iter().map(|i| (0..m).map(|j| self.c(i, j)).sum::<f64>()).sum()
    }

    /// Nearest targets of every source and nearest sources of every
    /// target. Planar problems search growing rings of cells, so the
    /// neighbours are approximate; pricing restores exactness.
    fn initial_candidates(&self) -> Vec<(usize, usize)> {
        let n = self.src.len();
        let m = self.tgt.len();
        let k_row = m.min(8 + 4 * m.div_ceil(n));
        let k_col = n.min(1 + n.div_ceil(m));
        let rows: Vec<Vec<(usize, usize)>> = (0..n)
            .into_par_iter()
            .map_init(Vec::new, |buf, i| {
                let near = self.neighbours(i, true, k_row, buf);
                near.into_iter().map(|j| (i, j)).collect()
            })
            .collect();
        let cols: Vec<Vec<(usize, usize)>> = (0..m)
            .into_par_iter()
            .map_init(Vec::new, |buf, j| {
                let near = self.neighbours(j, false, k_col, buf);
                near.into_iter().map(|i| (i, j)).collect()
            })
            .collect();
        let mut all: Vec<(usize, usize)> = rows.into_iter().flatten().chain(cols.into_iter().flatten()).collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    fn neighbours(&self, idx: usize, from_src: bool, k: usize, buf: &mut Vec<usize>) -> Vec<usize> {
        let dist = |other: usize| if from_src { self.c(idx, other) } else { self.c(other, idx) };
        let count = if from_src { self.tgt.len() } else { self.src.len() };
        match &self.planar {
            Some(p) => {
                let (cells, here) =
                    if from_src { (&p.tgt_cells, p.xs[idx]) } else { (&p.src_cells, p.ys[idx]) };
                let mut r = 1;
                loop {
                    cells.ring(here, r, p.periodic, buf);
                    if buf.len() >= k || cells.covers_all(r) {
                        break;
                    }
                    r *= 2;
                }
            }
            None => {
                buf.clear();
                buf.extend(0..count);
            }
        }
        let mut d: Vec<(f64, usize)> = buf.iter().map(|&o| (dist(o), o)).collect();
        let k = k.min(d.len());
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        d[..k].iter().map(|&(_, o)| o).collect()
    }

    /// Pricing pass over all pairs. Returns up to `per_row` most negative
    /// arcs per source and a lower bound on the smallest reduced cost.
    /// Planar problems skip cells whose distance bound already certifies
    /// reduced cost above `-tol / 2`.
    fn price(&self, pi: &[f64], tol: f64, per_row: usize) -> (Vec<(usize, usize)>, f64) {
        let n = self.src.len();
        let m = self.tgt.len();
        let pi_t = &pi[n..];
        let cell_max: Vec<f64> = match &self.planar {
            Some(p) => (0..p.tgt_cells.nx * p.tgt_cells.ny)
                .map(|c| p.tgt_cells.cell(c).iter().map(|&j| pi_t[j]).fold(f64::NEG_INFINITY, f64::max))
                .collect(),
            None => Vec::new(),
        };
        let rows: Vec<(Vec<(usize, usize)>, f64)> = (0..n)
            .into_par_iter()
            .map_init(
                || (Vec::new(), Vec::new()),
                |(gx, gy), i| {
                    let pi_i = pi[i];
                    let mut best: Vec<(f64, usize)> = Vec::with_capacity(per_row + 1);
                    let mut min_rc = f64::INFINITY;
                    let mut visit = |j: usize, c: f64, min_rc: &mut f64| {
                        let rc = c + pi_i - pi_t[j];
                        *min_rc = min_rc.min(rc);
                        if rc < -tol && (best.len() < per_row || rc < best[best.len() - 1].0) {
                            let pos = best.partition_point(|b| b.0 <= rc);
                            best.insert(pos, (rc, j));
                            best.truncate(per_row);
                        }
                    };
                    match &self.planar {
                        Some(p) => {
                            let b = &p.tgt_cells;
                            let x = p.xs[i];
                            p.gaps(b, x, gx, gy);
                            for a in 0..b.nx {
                                for k in 0..b.ny {
                                    let c = a * b.ny + k;
                                    let bound = gx[a] + gy[k] + pi_i - cell_max[c];
                                    if bound >= -0.5 * tol {
                                        min_rc = min_rc.min(bound);
                                        continue;
                                    }
                                    for &j in b.cell(c) {
                                        visit(j, p.c(x, p.ys[j]), &mut min_rc);
                                    }
                                }
                            }
                        }
                        None => {
                            for j in 0..m {
                                visit(j, self.c(i, j), &mut min_rc);
                            }
                        }
                    }
                    (best.into_iter().map(|(_, j)| (i, j)).collect(), min_rc)
                },
            )
            .collect();
        let mut arcs = Vec::new();
        let mut min_rc = f64::INFINITY;
        for (a, r) in rows {
            arcs.extend(a);
            min_rc = min_rc.min(r);
        }
        (arcs, min_rc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{lebesgue_grid, sample_poisson, MeasureTag, RandomSeed};
    use crate::torus::TorusDomain;

    fn line(l: f64, xs: &[f64]) -> DiscreteMeasure {
        let dom = TorusDomain::new(l, 1).unwrap();
        DiscreteMeasure::new(dom, MeasureTag::Custom, xs.to_vec(), vec![1.0; xs.len()]).unwrap()
    }

    #[test]
    fn identical_measures_give_identity() {
        let dom = TorusDomain::new(8.0, 2).unwrap();
        let mu = sample_poisson(&dom, 1.0, RandomSeed(9)).unwrap();
        let (plan, rep) = solve_exact(&mu, &mu, CostKind::Periodic).unwrap();
        assert_eq!(plan.total_cost, 0.0);
        assert!(plan.pairs.iter().all(|p| p.src == p.tgt || plan.pair_cost(p) == 0.0));
        assert!(rep.marginal_error < 1e-12);
    }

    #[test]
    fn crossed_periodic_pair() {
        let (plan, _) = solve_exact(&line(4.0, &[0.0, 1.0]), &line(4.0, &[0.5, 3.5]), CostKind::Periodic).unwrap();
        assert!((plan.total_cost - 0.5).abs() < 1e-12);
        let mut got: Vec<(usize, usize)> = plan.pairs.iter().map(|p| (p.src, p.tgt)).collect();
        got.sort();
        assert_eq!(got, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn mass_mismatch_and_cap() {
        let a = line(4.0, &[0.0]);
        let b = line(4.0, &[0.0, 1.0]);
        assert!(matches!(solve_exact(&a, &b, CostKind::Periodic), Err(Error::InvalidInput(_))));
        let dom = TorusDomain::new(4.0, 1).unwrap();
        let big = DiscreteMeasure::new(dom, MeasureTag::Custom, vec![0.0; 10_001], vec![1.0; 10_001]).unwrap();
        assert!(matches!(solve_exact(&big, &big, CostKind::Periodic), Err(Error::Resource(_))));
    }

    #[test]
    fn column_generation_matches_dense_solve() {
        let dom = TorusDomain::new(8.0, 2).unwrap();
        let mu = sample_poisson(&dom, 1.0, RandomSeed(77)).unwrap();
        let grid = lebesgue_grid(&dom, 16, mu.total_mass()).unwrap();
        let dense = ExactOptions { dense_limit: usize::MAX, ..Default::default() };
        let sparse = ExactOptions { dense_limit: 0, ..Default::default() };
        let (a, ra) = solve_exact_with(&mu, &grid, CostKind::Periodic, &dense).unwrap();
        let (b, rb) = solve_exact_with(&mu, &grid, CostKind::Periodic, &sparse).unwrap();
        assert!((a.total_cost - b.total_cost).abs() <= 1e-9 * (1.0 + a.total_cost));
        for r in [&ra, &rb] {
            assert!(r.dual_violation.unwrap() <= 1e-7);
            assert!(r.duality_gap.unwrap().abs() <= 1e-7 * (1.0 + a.total_cost));
            assert!(r.marginal_error <= 1e-9);
        }
    }
}
