//! Poisson-to-Lebesgue matching on the torus and the diagnostics built on
//! it: linearization residuals, mollified displacements, the boundary shift,
//! the data-scale proxy `r_*` and the Campanato cascade.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eulerian::{segment_energy, segments, Segment};
use crate::field::{
    bump, bump_normalizer, heat_smooth, mollifier_average, solve_poisson_measure, ScalarField, DEFAULT_ANGULAR_BINS,
    DEFAULT_K_MAX,
};
use crate::harmonic::{candidate_radii, neumann_from_segments, select_radius};
use crate::measure::{lebesgue_grid, sample_poisson, DiscreteMeasure, RandomSeed};
use crate::torus::{TorusDomain, TorusPoint};
use crate::transport::{local_wasserstein, solve_exact_with, CostKind, ExactOptions, SolveReport, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingOptions {
    /// Target grid cells per side.
    pub m: usize,
    /// Field grid cells per side (power of two).
    pub field_m: usize,
    pub solver: ExactOptions,
}

impl MatchingOptions {
    /// `m = 2L` target cells and a field grid of `max(4L, 64)` cells.
    pub fn for_side(side: f64) -> Self {
        let l = side.round() as usize;
        MatchingOptions { m: 2 * l, field_m: (4 * l).max(64).next_power_of_two(), solver: ExactOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingRecord {
    #[serde(rename = "L")]
    pub side: f64,
    pub seed: u64,
    pub n: usize,
    /// Draws with `n = 0` that were rejected before this sample.
    pub resampled: u32,
    pub m: usize,
    pub field_m: usize,
    pub w2: f64,
    /// `W^2 / L^2`.
    pub w2_per_area: f64,
    /// Discretization bound `d (L/m)^2 / 4` on `W^2 / L^2`.
    pub discretization_bound: f64,
    pub wall_seconds: f64,
    pub report: SolveReport,
    pub field_residual: f64,
    pub plan_file: Option<String>,
    pub field_file: Option<String>,
}

/// A solved matching with its plan and potential.
#[derive(Debug, Clone)]
pub struct Matching {
    pub record: MatchingRecord,
    pub plan: TransportPlan,
    pub phi: ScalarField,
}

/// Seed used for the `attempt`-th draw.
pub fn attempt_seed(seed: u64, attempt: u32) -> u64 {
    seed.wrapping_add((attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Unit-intensity Poisson sample, redrawn while empty.
pub fn sample_nonempty(dom: &TorusDomain, seed: u64) -> Result<(DiscreteMeasure, u32)> {
    for attempt in 0..64 {
        let mu = sample_poisson(dom, 1.0, RandomSeed(attempt_seed(seed, attempt)))?;
        if !mu.is_empty() {
            return Ok((mu, attempt));
        }
    }
    Err(Error::Sampling("64 consecutive empty draws".into()))
}

/// Matches a unit-intensity Poisson sample to the grid measure of equal
/// mass under periodic cost and solves `lap(phi) = mu - kappa`.
pub fn run_matching(side: f64, seed: u64, opts: &MatchingOptions) -> Result<Matching> {
    let start = Instant::now();
    let dom = TorusDomain::new(side, 2)?;
    let (mu, resampled) = sample_nonempty(&dom, seed)?;
    matching_from_measure(mu, seed, resampled, opts, start)
}

pub fn matching_from_measure(
    mu: DiscreteMeasure,
    seed: u64,
    resampled: u32,
    opts: &MatchingOptions,
    start: Instant,
) -> Result<Matching> {
    let dom = mu.domain;
    let n = mu.len();
    let tgt = lebesgue_grid(&dom, opts.m, mu.total_mass())?;
    let (plan, report) = solve_exact_with(&mu, &tgt, CostKind::Periodic, &opts.solver)?;
    let mut phi = solve_poisson_measure(&mu, opts.field_m)?;
    phi.prepare();
    let area = dom.volume();
    let record = MatchingRecord {
        side: dom.side,
        seed,
        n,
        resampled,
        m: opts.m,
        field_m: opts.field_m,
        w2: plan.total_cost,
        w2_per_area: plan.total_cost / area,
        discretization_bound: 2.0 * (dom.side / opts.m as f64).powi(2) / 4.0,
        wall_seconds: start.elapsed().as_secs_f64(),
        report,
        field_residual: phi.residual.unwrap_or(0.0),
        plan_file: None,
        field_file: None,
    };
    Ok(Matching { record, plan, phi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientResidual {
    pub t: f64,
    /// `L^{-2} sum mass |y - x - grad phi_t(x)|^2`.
    pub residual: f64,
    pub per_log: f64,
}

/// Residual of the displacement against the heat-smoothed potential gradient.
pub fn residual_vs_gradient(m: &Matching, t: f64) -> Result<GradientResidual> {
    let mut phi = heat_smooth(&m.phi, t)?;
    phi.prepare();
    let plan = &m.plan;
    let mut acc = 0.0;
    for p in &plan.pairs {
        let x = plan.src.point2(p.src);
        let d = plan.displacement(p);
        let g = phi.eval_gradient(x);
        acc += p.mass * ((d[0] - g[0]).powi(2) + (d[1] - g[1]).powi(2));
    }
    let residual = acc / plan.src.domain.volume();
    Ok(GradientResidual { t, residual, per_log: residual / plan.src.domain.side.ln() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragedDisplacement {
    pub radius: f64,
    pub lhs: [f64; 2],
    pub rhs: [f64; 2],
    pub gap: f64,
    /// `gap R / log R`.
    pub normalized: f64,
    pub quadrature_error: f64,
}

/// Bump-weighted mean displacement against the mollified potential gradient.
pub fn averaged_displacement(m: &Matching, center: [f64; 2], radius: f64) -> Result<AveragedDisplacement> {
    let plan = &m.plan;
    let dom = plan.src.domain;
    if !(radius > 1.0 && radius <= dom.side / 4.0) {
        return invalid("averaging radius must lie in (1, L/4]");
    }
    let z = bump_normalizer();
    let (mut num, mut den) = ([0.0; 2], 0.0);
    for p in &plan.pairs {
        let x = plan.src.point2(p.src);
        let e = [dom.min_image(x[0] - center[0]), dom.min_image(x[1] - center[1])];
        let w = bump(e, radius, z) * p.mass;
        if w > 0.0 {
            let d = plan.displacement(p);
            num[0] += w * d[0];
            num[1] += w * d[1];
            den += w;
        }
    }
    if den == 0.0 {
        return Err(Error::Domain("no plan mass in the averaging window".into()));
    }
    let lhs = [num[0] / den, num[1] / den];
    let mg = mollifier_average(&m.phi, center, radius)?;
    let gap = (lhs[0] - mg.value[0]).hypot(lhs[1] - mg.value[1]);
    Ok(AveragedDisplacement {
        radius,
        lhs,
        rhs: mg.value,
        gap,
        normalized: gap * radius / radius.ln(),
        quadrature_error: mg.quadrature_error,
    })
}

/// `|B_R|^{-1} int_{dB_R} (x - c) (nu . grad phi)` with 256 nodes.
pub fn shift_h(phi: &ScalarField, center: [f64; 2], radius: f64) -> Result<[f64; 2]> {
    if !(radius > 0.0 && radius < phi.domain.side / 4.0) {
        return invalid("shift radius must lie in (0, L/4)");
    }
    let n = DEFAULT_ANGULAR_BINS;
    let dth = 2.0 * PI / n as f64;
    let mut acc = [0.0; 2];
    for k in 0..n {
        let th = (k as f64 + 0.5) * dth;
        let nu = [th.cos(), th.sin()];
        let g = phi.eval_gradient([center[0] + radius * nu[0], center[1] + radius * nu[1]]);
        let flux = nu[0] * g[0] + nu[1] * g[1];
        acc[0] += radius * nu[0] * flux * radius * dth;
        acc[1] += radius * nu[1] * flux * radius * dth;
    }
    let area = PI * radius * radius;
    Ok([acc[0] / area, acc[1] / area])
}

/// Dyadic radii `2, 4, ..., L/4`.
pub fn dyadic_radii(side: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = 2.0;
    while r <= side / 4.0 + 1e-9 {
        out.push(r);
        r *= 2.0;
    }
    out
}

/// Grid cells per radius giving `density` cells per unit length.
pub fn cells_per_radius(density: usize, radius: f64) -> usize {
    ((density as f64 * radius).ceil() as usize).max(1)
}

/// `W^2_{B_R}(mu, kappa) / R^2` at each dyadic radius, with `density`
/// reference cells per unit length.
pub fn data_profile(mu: &DiscreteMeasure, center: &TorusPoint, density: usize) -> Result<Vec<(f64, f64)>> {
    dyadic_radii(mu.domain.side)
        .into_iter()
        .map(|r| local_wasserstein(mu, center, r, cells_per_radius(density, r)).map(|w| (r, w.w2() / (r * r))))
        .collect()
}

/// Smallest dyadic `r` with `W^2_{B_R} / R^2 <= C log R` for every dyadic
/// `R` in `[r, L/4]`; `None` when even `L/4` fails.
pub fn rstar_from_profile(profile: &[(f64, f64)], c_data: f64) -> Option<f64> {
    let mut best = None;
    for &(r, q) in profile.iter().rev() {
        if q <= c_data * r.ln() {
            best = Some(r);
        } else {
            break;
        }
    }
    best
}

pub fn empirical_rstar(mu: &DiscreteMeasure, center: &TorusPoint, c_data: f64, density: usize) -> Result<Option<f64>> {
    if !(c_data > 0.0) {
        return invalid("C_data must be positive");
    }
    Ok(rstar_from_profile(&data_profile(mu, center, density)?, c_data))
}

/// Smallest `C` such that `r_* <= r_target` on the given profile.
pub fn required_c_data(profile: &[(f64, f64)], r_target: f64) -> f64 {
    profile.iter().filter(|(r, _)| *r >= r_target).map(|&(r, q)| q / r.ln()).fold(0.0, f64::max)
}

/// Exact sum of `a + b` as `(s, e)` with `s = fl(a + b)`.
#[inline]
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Adds `b` to a nonoverlapping expansion, exactly.
pub fn grow_expansion(e: &[f64], b: f64) -> Vec<f64> {
    let mut q = b;
    let mut out = Vec::with_capacity(e.len() + 1);
    for &c in e {
        let (s, h) = two_sum(q, c);
        if h != 0.0 {
            out.push(h);
        }
        q = s;
    }
    if q != 0.0 || out.is_empty() {
        out.push(q);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub k: usize,
    /// Nominal radius `R_k = R_0 / 2^k`.
    pub radius: f64,
    /// Good radius in `[R_k, 1.15 R_k)` carrying the Neumann problem.
    pub neumann_radius: f64,
    /// `local_energy_E` of the shifted plan at `R_k / 6`.
    pub e: f64,
    pub grad0: [f64; 2],
    /// `(R_k/6)^2 E_k / log R_k`, the per-scale form of `R^{-2} int_{B_6R} |x - y|^2 <~ log R`.
    pub energy_stat: f64,
    /// `E_k / (R_k^2 log R_k)`.
    pub energy_stat_raw: f64,
    /// `|grad Phi_k(0)|^2 / log R_k`.
    pub grad_stat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampanatoTrace {
    pub center: [f64; 2],
    pub scales: Vec<ScaleRecord>,
    /// `sum_k grad Phi_k(0)`, rounded.
    pub h_tilde: [f64; 2],
    pub h: [f64; 2],
    pub h_gap: f64,
    pub final_radius: f64,
    pub telescoping_exact: bool,
    pub truncated: Option<String>,
}

/// Cascade parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeOptions {
    pub n_angle: usize,
    pub k_max: usize,
    pub candidates: usize,
    /// Truncate when `E_k` exceeds this.
    pub e_cap: f64,
}

impl Default for CascadeOptions {
    fn default() -> Self {
        CascadeOptions { n_angle: DEFAULT_ANGULAR_BINS, k_max: DEFAULT_K_MAX, candidates: 8, e_cap: 1e6 }
    }
}

/// Cascade from `R_0 = L/8` down to `r_target`, shifting every target by
/// `-grad Phi_k(0)` after each scale.
pub fn campanato_cascade(m: &Matching, center: [f64; 2], r_target: f64, opts: &CascadeOptions) -> Result<CampanatoTrace> {
    let dom = m.plan.src.domain;
    let r0 = dom.side / 8.0;
    if !(r_target > 1.0 && r_target <= r0) {
        return invalid("r_target must lie in (1, L/8]");
    }
    let base = segments(&m.plan, &TorusPoint(center.to_vec()))?;
    // exact displacement of each pair as a nonoverlapping expansion per component
    let mut exp: Vec<[Vec<f64>; 2]> = base.iter().map(|s| [vec![s.d[0]], vec![s.d[1]]]).collect();
    let mut segs = base.clone();
    let mut shifts: Vec<[f64; 2]> = Vec::new();
    let mut scales = Vec::new();
    let mut truncated = None;
    let mut radius = r0;
    let mut k = 0;
    while radius >= r_target * (1.0 - 1e-12) {
        let choice = select_radius(&segs, &candidate_radii(radius, 1.15 * radius, opts.candidates), opts.n_angle, 1)?;
        let field = neumann_from_segments(&segs, choice.radius, opts.n_angle, opts.k_max)?;
        let g = [field.a[1], field.b[1]];
        let e = segment_energy(&segs, radius, radius / 6.0);
        let log_r = radius.ln();
        scales.push(ScaleRecord {
            k,
            radius,
            neumann_radius: choice.radius,
            e,
            grad0: g,
            energy_stat: e * (radius / 6.0).powi(2) / log_r,
            energy_stat_raw: e / (radius * radius * log_r),
            grad_stat: (g[0] * g[0] + g[1] * g[1]) / log_r,
        });
        if !(e.is_finite() && e <= opts.e_cap) {
            truncated = Some(format!("E_{k} = {e:.3e} exceeds the cap"));
            break;
        }
        shifts.push(g);
        for (s, x) in segs.iter_mut().zip(exp.iter_mut()) {
            for c in 0..2 {
                x[c] = grow_expansion(&x[c], -g[c]);
                s.d[c] = x[c].iter().sum();
            }
        }
        radius *= 0.5;
        k += 1;
    }
    let final_radius = scales.last().map_or(r0, |s| s.radius);
    // undo every shift in exact arithmetic and compare with the original displacement
    let telescoping_exact = base.iter().zip(&exp).all(|(s, x)| {
        (0..2).all(|c| {
            let mut acc = x[c].clone();
            for g in &shifts {
                acc = grow_expansion(&acc, g[c]);
            }
            grow_expansion(&acc, -s.d[c]).iter().all(|&v| v == 0.0)
        })
    });
    let mut h_tilde_exp = [vec![0.0], vec![0.0]];
    for g in &shifts {
        for c in 0..2 {
            h_tilde_exp[c] = grow_expansion(&h_tilde_exp[c], g[c]);
        }
    }
    let h_tilde = h_tilde_exp.map(|e| e.iter().sum());
    let h = shift_h(&m.phi, center, final_radius)?;
    Ok(CampanatoTrace {
        center,
        scales,
        h_tilde,
        h,
        h_gap: (h[0] - h_tilde[0]).hypot(h[1] - h_tilde[1]),
        final_radius,
        telescoping_exact,
        truncated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroscopicBound {
    pub r_star: f64,
    pub max_dev: f64,
    /// `max_dev / (r (log r / r^2)^{1/4})`.
    pub ratio: f64,
    pub pairs: usize,
}

/// `max |y - x - h|` over pairs with `x` in `B_{r_*}`.
pub fn linf_microscopic(m: &Matching, trace: &CampanatoTrace, r_star: f64) -> Result<MicroscopicBound> {
    if !(r_star > 1.0) {
        return invalid("r_* must exceed 1");
    }
    let segs: Vec<Segment> = segments(&m.plan, &TorusPoint(trace.center.to_vec()))?;
    let h = trace.h;
    let mut max_dev: f64 = 0.0;
    let mut pairs = 0;
    for s in &segs {
        if s.e[0] * s.e[0] + s.e[1] * s.e[1] < r_star * r_star {
            max_dev = max_dev.max((s.d[0] - h[0]).hypot(s.d[1] - h[1]));
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::Domain(format!("no plan pair starts in B_{r_star}")));
    }
    let norm = r_star * (r_star.ln() / (r_star * r_star)).powf(0.25);
    Ok(MicroscopicBound { r_star, max_dev, ratio: max_dev / norm, pairs })
}

/// The four standard centers `(0,0), (L/2,0), (0,L/2), (L/2,L/2)`.
pub fn standard_centers(side: f64) -> [[f64; 2]; 4] {
    let h = -0.5 * side;
    [[0.0, 0.0], [h, 0.0], [0.0, h], [h, h]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sum_is_exact() {
        let (s, e) = two_sum(1.0, 1e-30);
        assert_eq!(s, 1.0);
        assert_eq!(e, 1e-30);
        let x = grow_expansion(&grow_expansion(&[0.1], -0.3), 1e-17);
        let back = grow_expansion(&grow_expansion(&grow_expansion(&x, -1e-17), 0.3), -0.1);
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rstar_rule() {
        let prof = vec![(2.0, 5.0), (4.0, 0.5), (8.0, 0.9), (16.0, 0.4)];
        assert_eq!(rstar_from_profile(&prof, 1.0), Some(4.0));
        assert_eq!(rstar_from_profile(&prof, 10.0), Some(2.0));
        assert_eq!(rstar_from_profile(&prof, 0.01), None);
        let c = required_c_data(&prof, 8.0);
        assert_eq!(rstar_from_profile(&prof, c).map(|r| r <= 8.0), Some(true));
    }

    #[test]
    fn linear_shift_is_recovered() {
        let dom = TorusDomain::new(32.0, 2).unwrap();
        let phi = ScalarField::linear(dom, 64, [0.4, -0.25]).unwrap();
        let h = shift_h(&phi, [1.0, 2.0], 4.0).unwrap();
        assert!((h[0] - 0.4).abs() < 1e-12 && (h[1] + 0.25).abs() < 1e-12);
        let zero = ScalarField::from_values(dom, 64, vec![0.0; 64 * 64]).unwrap();
        assert_eq!(shift_h(&zero, [0.0, 0.0], 4.0).unwrap(), [0.0, 0.0]);
    }
}
