use std::sync::Arc;
use std::time::Instant;

use super::{check_balanced, CostKind, PlanPair, SolveReport, TransportPlan};
use crate::error::{invalid, Error, Result};
use crate::measure::DiscreteMeasure;

/// Cost matrices up to this many bytes are cached; larger ones are
/// recomputed on every sweep.
pub const COST_CACHE_BYTES: usize = 2 << 30;
const MAX_ITER_PER_EPS: usize = 20_000;

/// Log-domain Sinkhorn with epsilon annealing against the product
/// reference `a (x) b`.
///
/// The reported bias bound is `eps_final * M * min(H(a/M), H(b/M))`: the
/// entropic plan's cost exceeds the optimum by at most that much, up to
/// the residual marginal error. The bias is reported, never subtracted.
pub fn solve_entropic(
    src: &DiscreteMeasure,
    tgt: &DiscreteMeasure,
    cost: CostKind,
    eps_schedule: &[f64],
    marginal_tol: f64,
) -> Result<(TransportPlan, SolveReport)> {
    let start = Instant::now();
    check_balanced(src, tgt)?;
    if eps_schedule.is_empty() {
        return invalid("epsilon schedule is empty");
    }
    if eps_schedule.iter().any(|e| !(e.is_finite() && *e > 0.0)) || eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("epsilon schedule must be positive and strictly decreasing");
    }
    if !(marginal_tol > 0.0) {
        return invalid("marginal tolerance must be positive");
    }
    let n = src.len();
    let m = tgt.len();
    if n == 0 || m == 0 {
        return invalid("entropic solver needs nonempty measures");
    }
    let total = src.total_mass();
    let la: Vec<f64> = src.masses().iter().map(|a| (a / total).ln()).collect();
    let lb: Vec<f64> = tgt.masses().iter().map(|b| (b / total).ln()).collect();
    let cached: Option<Vec<f64>> = (n.saturating_mul(m).saturating_mul(8) <= COST_CACHE_BYTES)
        .then(|| (0..n * m).map(|k| cost.eval(src, src.point(k / m), tgt.point(k % m))).collect());
    let c = |i: usize, j: usize| match &cached {
        Some(v) => v[i * m + j],
        None => cost.eval(src, src.point(i), tgt.point(j)),
    };

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut buf = vec![0.0; n.max(m)];
    let mut iterations = 0u64;
    let mut err = f64::INFINITY;
    for (stage, &eps) in eps_schedule.iter().enumerate() {
        let last = stage + 1 == eps_schedule.len();
        for it in 0..MAX_ITER_PER_EPS {
            for i in 0..n {
                for j in 0..m {
                    buf[j] = lb[j] + (g[j] - c(i, j)) / eps;
                }
                f[i] = -eps * log_sum_exp(&buf[..m]);
            }
            for j in 0..m {
                for i in 0..n {
                    buf[i] = la[i] + (f[i] - c(i, j)) / eps;
                }
                g[j] = -eps * log_sum_exp(&buf[..n]);
            }
            iterations += 1;
            if it % 5 == 4 || it == 0 {
                err = row_error(&la, &lb, &f, &g, eps, &c);
                if err <= marginal_tol {
                    break;
                }
            }
        }
        if last && err > marginal_tol {
            return Err(Error::Convergence(format!(
                "sinkhorn at eps={eps} stopped with marginal error {err:.3e} > {marginal_tol:.3e} after {iterations} sweeps"
            )));
        }
    }

    let eps = *eps_schedule.last().unwrap();
    let keep = 1e-13 / n.max(m) as f64;
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let p = (la[i] + lb[j] + (f[i] + g[j] - c(i, j)) / eps).exp();
            if p > keep {
                pairs.push(PlanPair { src: i, tgt: j, mass: p * total });
            }
        }
    }
    let plan = TransportPlan::from_pairs(Arc::new(src.clone()), Arc::new(tgt.clone()), pairs, cost, "sinkhorn")?;
    let h = |lw: &[f64]| -lw.iter().map(|l| l.exp() * l).sum::<f64>();
    let bias = eps * total * h(&la).min(h(&lb));
    let report = SolveReport {
        method: "sinkhorn".into(),
        iterations,
        rounds: eps_schedule.len() as u32,
        marginal_error: err,
        duality_gap: None,
        dual_violation: None,
        eps_schedule: Some(eps_schedule.to_vec()),
        entropic_bias: Some(bias),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((plan, report))
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// L1 distance of the row marginal to `a`, both normalized to unit mass.
fn row_error(la: &[f64], lb: &[f64], f: &[f64], g: &[f64], eps: f64, c: &impl Fn(usize, usize) -> f64) -> f64 {
    let mut err = 0.0;
    for i in 0..la.len() {
        let row: f64 = (0..lb.len()).map(|j| (la[i] + lb[j] + (f[i] + g[j] - c(i, j)) / eps).exp()).sum();
        err += (row - la[i].exp()).abs();
    }
    err
}
