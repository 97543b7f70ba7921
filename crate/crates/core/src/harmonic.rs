//! Harmonic approximation of a plan on a ball: good-radius selection, the
//! Neumann potential of the boundary flux, the Lagrangian residual and the
//! expanded-square decomposition of the Eulerian residual.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::eulerian::{gauss_legendre, local_data_d, segment_energy, segment_flux, segments, Segment};
use crate::field::{solve_disk_neumann, DiskNeumannField, DEFAULT_ANGULAR_BINS, DEFAULT_K_MAX};
use crate::measure::{lebesgue_grid, DiscreteMeasure, MeasureTag};
use crate::torus::{TorusDomain, TorusPoint};
use crate::transport::{solve_exact, CostKind, TransportPlan};

/// Flux energy of each candidate radius and the selected one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusChoice {
    pub radius: f64,
    pub candidates: Vec<f64>,
    pub energies: Vec<f64>,
}

/// Candidate minimizing the binned flux energy; ties go to the smallest radius.
pub fn select_radius(segs: &[Segment], candidates: &[f64], n_angle: usize, n_time: usize) -> Result<RadiusChoice> {
    if candidates.is_empty() {
        return invalid("no candidate radii");
    }
    let mut cands = candidates.to_vec();
    cands.sort_by(f64::total_cmp);
    let energies =
        cands.iter().map(|&r| segment_flux(segs, r, n_angle, n_time).map(|f| f.energy())).collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (k, &e) in energies.iter().enumerate() {
        if e < energies[best] {
            best = k;
        }
    }
    Ok(RadiusChoice { radius: cands[best], candidates: cands, energies })
}

/// Good radius in `(3, 4)` at unit scale from at least 8 candidates.
pub fn select_good_radius(plan: &TransportPlan, center: &TorusPoint, candidates: &[f64]) -> Result<RadiusChoice> {
    if candidates.len() < 8 {
        return invalid("at least 8 candidate radii are required");
    }
    if candidates.iter().any(|&r| !(r > 3.0 && r < 4.0)) {
        return invalid("candidate radii must lie in (3, 4)");
    }
    let segs = segments(plan, center)?;
    select_radius(&segs, candidates, DEFAULT_ANGULAR_BINS, crate::eulerian::DEFAULT_TIME_BINS)
}

/// `n` equally spaced radii in `(lo, hi)`.
pub fn candidate_radii(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / n as f64).collect()
}

/// Neumann potential of the time-averaged binned flux of `segs` on `dB_R`.
pub fn neumann_from_segments(segs: &[Segment], radius: f64, n_angle: usize, k_max: usize) -> Result<DiskNeumannField> {
    let f = segment_flux(segs, radius, n_angle, 1)?;
    solve_disk_neumann(&f.to_angular(), radius, k_max)
}

/// Terms of the expanded square
/// `int_{B_R} int |j - rho grad Phi|^2 / rho = gap + 2 cross' + density`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Orthogonality {
    /// Kinetic energy inside `B_R` minus the Dirichlet energy.
    pub energy_gap: f64,
    /// `int Phi d(mu - kappa)` over `B_R` with `Phi` of zero mean.
    pub cross_term: f64,
    /// `int_{B_R} int (grad Phi - j) . grad Phi`.
    pub cross_prime: f64,
    /// `int_{B_R} (rho_bar - 1) |grad Phi|^2`.
    pub density_term: f64,
    /// The left side computed directly.
    pub lhs: f64,
    pub kinetic: f64,
    pub dirichlet: f64,
}

impl Orthogonality {
    /// `|lhs - (gap + 2 cross' + density)|`.
    pub fn identity_defect(&self) -> f64 {
        (self.lhs - (self.energy_gap + 2.0 * self.cross_prime + self.density_term)).abs()
    }
}

/// Trajectory-quadrature evaluation of the orthogonality terms on `B_R`.
pub fn orthogonality_segments(segs: &[Segment], field: &DiskNeumannField) -> Orthogonality {
    let radius = field.radius;
    let (nodes, weights) = gauss_legendre(field.k_max() + 2);
    let dirichlet = field.dirichlet_energy();
    let mean = field.mean_value();
    let (mut kinetic, mut flux_dot, mut density, mut lhs, mut cross) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in segs {
        let e2 = s.e[0] * s.e[0] + s.e[1] * s.e[1];
        if e2 < radius * radius {
            cross += s.mass * (field.value(s.e) - mean);
        }
        for (lo, hi) in s.inside_intervals(radius) {
            let span = hi - lo;
            kinetic += s.mass * span * s.len2();
            for (&t, &w) in nodes.iter().zip(&weights) {
                let g = field.gradient(s.at(lo + span * t));
                let wt = s.mass * w * span;
                let dot = g[0] * s.d[0] + g[1] * s.d[1];
                let g2 = g[0] * g[0] + g[1] * g[1];
                flux_dot += wt * dot;
                density += wt * g2;
                let r = [s.d[0] - g[0], s.d[1] - g[1]];
                lhs += wt * (r[0] * r[0] + r[1] * r[1]);
            }
        }
    }
    Orthogonality {
        energy_gap: kinetic - dirichlet,
        cross_term: cross,
        cross_prime: dirichlet - flux_dot,
        density_term: density - dirichlet,
        lhs,
        kinetic,
        dirichlet,
    }
}

pub fn orthogonality_terms(
    plan: &TransportPlan,
    field: &DiskNeumannField,
    center: &TorusPoint,
) -> Result<Orthogonality> {
    Ok(orthogonality_segments(&segments(plan, center)?, field))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicReport {
    pub radius: f64,
    pub e: f64,
    pub d: Option<f64>,
    /// `sum mass |y - x - grad Phi(x)|^2` over pairs meeting `B_1`.
    pub residual: f64,
    /// Raw `sum mass |y - x|^2` over the same pairs.
    pub window_energy: f64,
    pub window_pairs: usize,
    /// Window pairs whose source lies outside `B_R`.
    pub outside: usize,
    pub dirichlet_energy: f64,
    pub flux_energy: f64,
    pub orthogonality: Orthogonality,
}

/// Residual of the harmonic approximation over pairs meeting `B_1`.
pub fn residual_segments(segs: &[Segment], field: &DiskNeumannField) -> (f64, f64, usize, usize) {
    let (mut res, mut raw, mut count, mut outside) = (0.0, 0.0, 0, 0);
    let r2 = field.radius * field.radius;
    for s in segs {
        let (a, b) = (s.e, s.end());
        let a2 = a[0] * a[0] + a[1] * a[1];
        if a2 < 1.0 || b[0] * b[0] + b[1] * b[1] < 1.0 {
            let g = field.gradient(a);
            let r = [s.d[0] - g[0], s.d[1] - g[1]];
            res += s.mass * (r[0] * r[0] + r[1] * r[1]);
            raw += s.mass * s.len2();
            count += 1;
            if a2 >= r2 {
                outside += 1;
            }
        }
    }
    (res, raw, count, outside)
}

pub fn harmonic_residual(plan: &TransportPlan, field: &DiskNeumannField, center: &TorusPoint) -> Result<HarmonicReport> {
    let segs = segments(plan, center)?;
    Ok(report_from_segments(&segs, field, None))
}

fn report_from_segments(segs: &[Segment], field: &DiskNeumannField, d: Option<f64>) -> HarmonicReport {
    let (residual, window_energy, window_pairs, outside) = residual_segments(segs, field);
    HarmonicReport {
        radius: field.radius,
        e: segment_energy(segs, 6.0, 1.0),
        d,
        residual,
        window_energy,
        window_pairs,
        outside,
        dirichlet_energy: field.dirichlet_energy(),
        flux_energy: field.flux_energy(),
        orthogonality: orthogonality_segments(segs, field),
    }
}

/// Full pipeline at unit scale: good radius in `(3, 4)`, Neumann solve,
/// residual, orthogonality terms, and optionally `D` with `m_local` cells.
pub fn harmonic_approximation(
    plan: &TransportPlan,
    center: &TorusPoint,
    n_candidates: usize,
    m_local: Option<usize>,
) -> Result<HarmonicReport> {
    let segs = segments(plan, center)?;
    let choice = select_radius(
        &segs,
        &candidate_radii(3.0, 4.0, n_candidates.max(8)),
        DEFAULT_ANGULAR_BINS,
        crate::eulerian::DEFAULT_TIME_BINS,
    )?;
    let field = neumann_from_segments(&segs, choice.radius, DEFAULT_ANGULAR_BINS, DEFAULT_K_MAX)?;
    let d = match m_local {
        Some(m) => Some(local_data_d(&plan.src, &plan.tgt, center, 1.0, m)?.value),
        None => None,
    };
    Ok(report_from_segments(&segs, &field, d))
}

/// `(C, (residual - C D) / E)` for each candidate constant.
pub fn pareto(report: &HarmonicReport, constants: &[f64]) -> Vec<(f64, f64)> {
    let d = report.d.unwrap_or(0.0);
    constants.iter().map(|&c| (c, (report.residual - c * d) / report.e)).collect()
}

/// Equal-mass atoms of density `1 + delta sin(2 pi x1 / L)` on an `m x m`
/// lattice: each row of `x1` positions sits at the cell quantiles of the
/// density, centered so the quantile map has no mean displacement.
pub fn sine_density(dom: &TorusDomain, m: usize, delta: f64) -> Result<DiscreteMeasure> {
    if dom.dim != 2 || !(delta.abs() < 1.0) || m == 0 {
        return invalid("sine density needs d = 2, |delta| < 1 and m > 0");
    }
    let l = dom.side;
    let h = l / m as f64;
    let k = 2.0 * PI / l;
    // antiderivative of the density with zero-mean offset, so no net shift
    let cdf = |x: f64| x - delta / k * (k * x).cos();
    let mut xs = Vec::with_capacity(m);
    for i in 0..m {
        let target = -0.5 * l + (i as f64 + 0.5) * h;
        let mut x = target;
        for _ in 0..60 {
            let step = (cdf(x) - target) / (1.0 + delta * (k * x).sin());
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        xs.push(x);
    }
    let mut coords = Vec::with_capacity(2 * m * m);
    for &x in &xs {
        for j in 0..m {
            coords.push(x);
            coords.push(-0.5 * l + (j as f64 + 0.5) * h);
        }
    }
    DiscreteMeasure::new(*dom, MeasureTag::Custom, coords, vec![h * h; m * m])
}

/// Optimal periodic plan from the sine density to the uniform grid.
pub fn sine_family_plan(side: f64, m: usize, delta: f64) -> Result<TransportPlan> {
    let dom = TorusDomain::new(side, 2)?;
    let src = sine_density(&dom, m, delta)?;
    let tgt = lebesgue_grid(&dom, m, src.total_mass())?;
    let (plan, _) = solve_exact(&src, &tgt, CostKind::Periodic)?;
    Ok(plan)
}

/// Segments with all displacements scaled by `s`.
pub fn scale_displacements(segs: &[Segment], s: f64) -> Vec<Segment> {
    segs.iter().map(|g| Segment { d: [g.d[0] * s, g.d[1] * s], ..*g }).collect()
}

/// Convenience: the plan as shared measures for callers holding raw atoms.
pub fn plan_of_segments(dom: &TorusDomain, segs: &[Segment]) -> Result<TransportPlan> {
    let xs: Vec<f64> = segs.iter().flat_map(|s| s.e).collect();
    let ys: Vec<f64> = segs.iter().flat_map(|s| s.end()).collect();
    let m: Vec<f64> = segs.iter().map(|s| s.mass).collect();
    let src = Arc::new(DiscreteMeasure::new(*dom, MeasureTag::Custom, xs, m.clone())?);
    let tgt = Arc::new(DiscreteMeasure::new(*dom, MeasureTag::Custom, ys, m)?);
    let pairs = (0..segs.len())
        .map(|i| crate::transport::PlanPair { src: i, tgt: i, mass: segs[i].mass })
        .collect();
    TransportPlan::from_pairs(src, tgt, pairs, CostKind::Periodic, "segments")
}
