//! Discrete optimal transport under squared cost: exact network simplex
//! with column generation, log-domain Sinkhorn, brute-force enumeration,
//! support monotonicity diagnostics and local Wasserstein distances.

mod entropic;
mod exact;
mod local;
mod monotone;
mod oracle;
mod simplex;

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use entropic::solve_entropic;
pub use exact::{solve_exact, solve_exact_with, ExactOptions};
pub use local::{disk_lebesgue, local_wasserstein, LocalWasserstein};
pub use monotone::{check_monotonicity, check_monotonicity_with, MonotonicityReport};
pub use oracle::brute_force_oracle;

use crate::error::{invalid, Error, Result};
use crate::measure::{read_f64, read_u64, DiscreteMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    /// Squared geodesic distance on the torus.
    Periodic,
    /// Squared Euclidean distance between stored coordinates.
    Euclidean,
}

impl CostKind {
    #[inline]
    pub fn eval(self, mu: &DiscreteMeasure, x: &[f64], y: &[f64]) -> f64 {
        match self {
            CostKind::Periodic => mu.domain.dist2(x, y),
            CostKind::Euclidean => x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanPair {
    pub src: usize,
    pub tgt: usize,
    pub mass: f64,
}

/// Dual potentials: `psi` on sources, `phi` on targets, with
/// `psi_i + phi_j <= c_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duals {
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Sparse coupling between two discrete measures.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub src: Arc<DiscreteMeasure>,
    pub tgt: Arc<DiscreteMeasure>,
    pub pairs: Vec<PlanPair>,
    pub total_cost: f64,
    pub cost: CostKind,
    pub duals: Option<Duals>,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub iterations: u64,
    pub rounds: u32,
    pub marginal_error: f64,
    /// Primal minus dual objective, exact solver only.
    pub duality_gap: Option<f64>,
    /// Largest `psi_i + phi_j - c_ij` over all pairs divided by the mean cost.
    pub dual_violation: Option<f64>,
    pub eps_schedule: Option<Vec<f64>>,
    /// Upper bound on the entropic cost excess, entropic solver only.
    pub entropic_bias: Option<f64>,
    pub wall_seconds: f64,
}

impl TransportPlan {
    /// Builds a plan and its total cost from explicit pairs.
    pub fn from_pairs(
        src: Arc<DiscreteMeasure>,
        tgt: Arc<DiscreteMeasure>,
        pairs: Vec<PlanPair>,
        cost: CostKind,
        method: impl Into<String>,
    ) -> Result<Self> {
        if src.domain != tgt.domain {
            return invalid("source and target live on different domains");
        }
        for p in &pairs {
            if p.src >= src.len() || p.tgt >= tgt.len() {
                return invalid(format!("pair ({}, {}) out of range", p.src, p.tgt));
            }
            if !(p.mass.is_finite() && p.mass > 0.0) {
                return invalid("pair masses must be positive");
            }
        }
        let mut plan = TransportPlan {
            src,
            tgt,
            pairs,
            total_cost: 0.0,
            cost,
            duals: None,
            method: method.into(),
        };
        plan.total_cost = plan.recompute_cost();
        Ok(plan)
    }

    pub fn dim(&self) -> usize {
        self.src.dim()
    }

    pub fn pair_cost(&self, p: &PlanPair) -> f64 {
        self.cost.eval(&self.src, self.src.point(p.src), self.tgt.point(p.tgt))
    }

    pub fn recompute_cost(&self) -> f64 {
        self.pairs.iter().map(|p| p.mass * self.pair_cost(p)).sum()
    }

    /// `y - x` for a pair; periodic plans use the minimal representative,
    /// so `x + displacement` is the image of `x` anchored at `x`.
    pub fn displacement(&self, p: &PlanPair) -> Vec<f64> {
        let x = self.src.point(p.src);
        let y = self.tgt.point(p.tgt);
        match self.cost {
            CostKind::Periodic => {
                let mut out = vec![0.0; x.len()];
                self.src.domain.displacement_into(x, y, &mut out);
                out
            }
            CostKind::Euclidean => x.iter().zip(y).map(|(a, b)| b - a).collect(),
        }
    }

    pub fn max_displacement(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| self.displacement(p).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest per-atom marginal deviation relative to that atom's mass.
    pub fn marginal_error(&self) -> f64 {
        let mut a = vec![0.0; self.src.len()];
        let mut b = vec![0.0; self.tgt.len()];
        for p in &self.pairs {
            a[p.src] += p.mass;
            b[p.tgt] += p.mass;
        }
        let ea = a.iter().zip(self.src.masses()).map(|(s, m)| (s - m).abs() / m);
        let eb = b.iter().zip(self.tgt.masses()).map(|(s, m)| (s - m).abs() / m);
        ea.chain(eb).fold(0.0, f64::max)
    }

    /// Pairs whose source atom is split over more than one target.
    pub fn split_sources(&self) -> usize {
        let mut count = vec![0u32; self.src.len()];
        for p in &self.pairs {
            count[p.src] += 1;
        }
        count.iter().filter(|&&c| c > 1).count()
    }

    /// Same plan with every pair mass (and both measures) scaled by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        let src = Arc::new(self.src.scaled(s)?);
        let tgt = Arc::new(self.tgt.scaled(s)?);
        let pairs = self.pairs.iter().map(|p| PlanPair { mass: p.mass * s, ..*p }).collect();
        TransportPlan::from_pairs(src, tgt, pairs, self.cost, self.method.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = PlanDoc {
            pairs: self.pairs.iter().map(|p| (p.src, p.tgt, p.mass)).collect(),
            cost: self.total_cost,
            method: self.method.clone(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Reads pairs from the JSON form and re-attaches them to the measures.
    pub fn from_json(
        s: &str,
        src: Arc<DiscreteMeasure>,
        tgt: Arc<DiscreteMeasure>,
        cost: CostKind,
    ) -> Result<Self> {
        let doc: PlanDoc = serde_json::from_str(s)?;
        let pairs = doc.pairs.into_iter().map(|(src, tgt, mass)| PlanPair { src, tgt, mass }).collect();
        TransportPlan::from_pairs(src, tgt, pairs, cost, doc.method)
    }

    /// `OTP1` binary form: magic, `count: u64`, `total_cost: f64`, then
    /// `count` triples `(i: u64, j: u64, mass: f64)`, little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"OTP1")?;
        w.write_all(&(self.pairs.len() as u64).to_le_bytes())?;
        w.write_all(&self.total_cost.to_le_bytes())?;
        for p in &self.pairs {
            w.write_all(&(p.src as u64).to_le_bytes())?;
            w.write_all(&(p.tgt as u64).to_le_bytes())?;
            w.write_all(&p.mass.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_pairs_binary<R: Read>(mut r: R) -> Result<(Vec<PlanPair>, f64)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"OTP1" {
            return Err(Error::Format("bad magic, expected OTP1".into()));
        }
        let count = read_u64(&mut r)? as usize;
        let cost = read_f64(&mut r)?;
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            let src = read_u64(&mut r)? as usize;
            let tgt = read_u64(&mut r)? as usize;
            let mass = read_f64(&mut r)?;
            pairs.push(PlanPair { src, tgt, mass });
        }
        Ok((pairs, cost))
    }
}

#[derive(Serialize, Deserialize)]
struct PlanDoc {
    pairs: Vec<(usize, usize, f64)>,
    cost: f64,
    method: String,
}

pub(crate) fn check_balanced(src: &DiscreteMeasure, tgt: &DiscreteMeasure) -> Result<()> {
    if src.domain != tgt.domain {
        return invalid("source and target live on different domains");
    }
    let a = src.total_mass();
    let b = tgt.total_mass();
    if (a - b).abs() > 1e-9 * a.max(b) {
        return invalid(format!("total masses differ: {a} vs {b}"));
    }
    Ok(())
}
