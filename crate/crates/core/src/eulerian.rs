//! Eulerian view of a plan: straight trajectories, boundary fluxes through
//! circles, and the local quantities `E`, `D` and the displacement bound.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{csv_err, AngularFlux};
use crate::measure::DiscreteMeasure;
use crate::torus::{TorusDomain, TorusPoint};
use crate::transport::{local_wasserstein, TransportPlan};

pub const DEFAULT_TIME_BINS: usize = 32;
/// Discriminant threshold (relative to `|d|^2 R^2`) below which a crossing
/// is treated as tangential and dropped.
pub const TANGENT_TOL: f64 = 1e-14;

/// One plan pair seen from a center: start `e = x - center` (minimal image)
/// and displacement `d`, so the trajectory is `e + t d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub e: [f64; 2],
    pub d: [f64; 2],
    pub mass: f64,
}

impl Segment {
    #[inline]
    pub fn at(&self, t: f64) -> [f64; 2] {
        [self.e[0] + t * self.d[0], self.e[1] + t * self.d[1]]
    }

    #[inline]
    pub fn end(&self) -> [f64; 2] {
        self.at(1.0)
    }

    #[inline]
    pub fn len2(&self) -> f64 {
        self.d[0] * self.d[0] + self.d[1] * self.d[1]
    }

    /// Roots of `|e + t d| = R` in `(0, 1)`, with `None` for a tangential touch.
    pub fn crossings(&self, radius: f64) -> Option<([f64; 2], usize)> {
        let a = self.len2();
        if a == 0.0 {
            return Some(([0.0; 2], 0));
        }
        let b = self.e[0] * self.d[0] + self.e[1] * self.d[1];
        let c = self.e[0] * self.e[0] + self.e[1] * self.e[1] - radius * radius;
        let disc = b * b - a * c;
        if disc < 0.0 {
            return Some(([0.0; 2], 0));
        }
        let s = disc.sqrt();
        let (t0, t1) = ((-b - s) / a, (-b + s) / a);
        let inside = |t: f64| t > 0.0 && t < 1.0;
        if disc <= TANGENT_TOL * a * radius * radius {
            return if inside(t0) || inside(t1) { None } else { Some(([0.0; 2], 0)) };
        }
        let mut out = [0.0; 2];
        let mut n = 0;
        for t in [t0, t1] {
            if inside(t) {
                out[n] = t;
                n += 1;
            }
        }
        Some((out, n))
    }

    /// Sub-intervals of `[0, 1]` on which the trajectory is inside `B_R`.
    pub fn inside_intervals(&self, radius: f64) -> Vec<(f64, f64)> {
        let a = self.len2();
        let r2 = radius * radius;
        let e2 = self.e[0] * self.e[0] + self.e[1] * self.e[1];
        if a == 0.0 {
            return if e2 < r2 { vec![(0.0, 1.0)] } else { Vec::new() };
        }
        let b = self.e[0] * self.d[0] + self.e[1] * self.d[1];
        let disc = b * b - a * (e2 - r2);
        if disc <= 0.0 {
            return Vec::new();
        }
        let s = disc.sqrt();
        let lo = ((-b - s) / a).max(0.0);
        let hi = ((-b + s) / a).min(1.0);
        if hi > lo {
            vec![(lo, hi)]
        } else {
            Vec::new()
        }
    }
}

fn check_center(dom: &TorusDomain, center: &TorusPoint) -> Result<()> {
    if center.0.len() != dom.dim {
        return invalid("center dimension mismatch");
    }
    Ok(())
}

/// Segments of every plan pair seen from `center` (d = 2).
pub fn segments(plan: &TransportPlan, center: &TorusPoint) -> Result<Vec<Segment>> {
    let dom = plan.src.domain;
    if dom.dim != 2 {
        return invalid("segments are implemented for d = 2");
    }
    check_center(&dom, center)?;
    let c = [center.0[0], center.0[1]];
    Ok(plan
        .pairs
        .iter()
        .map(|p| {
            let x = plan.src.point2(p.src);
            let d = plan.displacement(p);
            Segment {
                e: [dom.min_image(x[0] - c[0]), dom.min_image(x[1] - c[1])],
                d: [d[0], d[1]],
                mass: p.mass,
            }
        })
        .collect())
}

/// `(1 - t) x + t y` along the minimal representative of `y` anchored at `x`, wrapped.
pub fn trajectory(dom: &TorusDomain, x: &[f64], y: &[f64], t: f64) -> Result<TorusPoint> {
    if !(0.0..=1.0).contains(&t) {
        return invalid("trajectory time must lie in [0, 1]");
    }
    if x.len() != dom.dim || y.len() != dom.dim {
        return invalid("point dimension mismatch");
    }
    let mut d = vec![0.0; dom.dim];
    dom.displacement_into(x, y, &mut d);
    let p: Vec<f64> = x.iter().zip(&d).map(|(a, v)| a + t * v).collect();
    dom.wrap(&p)
}

/// `sum mass |x - y|^2` over segments starting or ending in `B_rho`, over `R^{d+2}`.
pub fn segment_energy(segs: &[Segment], window: f64, radius: f64) -> f64 {
    let w2 = window * window;
    let mut acc = 0.0;
    for s in segs {
        let (a, b) = (s.e, s.end());
        if a[0] * a[0] + a[1] * a[1] < w2 || b[0] * b[0] + b[1] * b[1] < w2 {
            acc += s.mass * s.len2();
        }
    }
    acc / radius.powi(4)
}

/// Excess energy `E` on the window `B_{6R}`: pairs whose source or anchored
/// image lies in the window.
pub fn local_energy_e(plan: &TransportPlan, center: &TorusPoint, radius: f64) -> Result<f64> {
    let dom = plan.src.domain;
    check_center(&dom, center)?;
    if !(radius > 0.0 && 6.0 * radius < dom.half()) {
        return invalid("local energy requires 0 < 6R < L/2");
    }
    let w2 = 36.0 * radius * radius;
    let dim = dom.dim;
    let mut e = vec![0.0; dim];
    let mut acc = 0.0;
    for p in &plan.pairs {
        let x = plan.src.point(p.src);
        let d = plan.displacement(p);
        dom.displacement_into(&center.0, x, &mut e);
        let s: f64 = e.iter().map(|v| v * v).sum();
        let t: f64 = e.iter().zip(&d).map(|(a, b)| (a + b) * (a + b)).sum();
        if s < w2 || t < w2 {
            acc += p.mass * d.iter().map(|v| v * v).sum::<f64>();
        }
    }
    Ok(acc / radius.powi(dim as i32 + 2))
}

/// The four-term data distance `D` on `B_{6R}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataTerm {
    pub value: f64,
    pub w2_mu: f64,
    pub kappa_mu: f64,
    pub w2_lambda: f64,
    pub kappa_lambda: f64,
}

/// `D` from local Wasserstein distances of both measures on `B_{6R}`.
/// Measures are expected at unit global intensity.
pub fn local_data_d(
    mu: &DiscreteMeasure,
    lambda: &DiscreteMeasure,
    center: &TorusPoint,
    radius: f64,
    m_local: usize,
) -> Result<DataTerm> {
    if !(radius > 0.0 && 6.0 * radius < mu.domain.half()) {
        return invalid("data term requires 0 < 6R < L/2");
    }
    let a = local_wasserstein(mu, center, 6.0 * radius, m_local)?;
    let b = local_wasserstein(lambda, center, 6.0 * radius, m_local)?;
    let scale = radius.powi(4);
    let term = |w2: f64, k: f64| w2 / scale + (k - 1.0) * (k - 1.0) / k;
    Ok(DataTerm {
        value: term(a.w2(), a.kappa) + term(b.w2(), b.kappa),
        w2_mu: a.w2(),
        kappa_mu: a.kappa,
        w2_lambda: b.w2(),
        kappa_lambda: b.kappa,
    })
}

/// Signed mass crossing a circle, binned in angle and time; positive is outgoing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFlux {
    pub center: Vec<f64>,
    pub radius: f64,
    pub n_angle: usize,
    pub n_time: usize,
    /// Signed mass per `(angle, time)` bin, angle-major.
    pub mass: Vec<f64>,
    pub crossings: usize,
    pub tangential_skipped: usize,
}

impl BoundaryFlux {
    /// Net signed mass over all bins.
    pub fn net(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn arc(&self) -> f64 {
        2.0 * PI * self.radius / self.n_angle as f64
    }

    /// Time-integrated flux density per angular bin.
    pub fn profile(&self) -> Vec<f64> {
        let arc = self.arc();
        self.mass.chunks(self.n_time).map(|c| c.iter().sum::<f64>() / arc).collect()
    }

    /// `int_{dB_R} int_0^1 f^2` of the binned density.
    pub fn energy(&self) -> f64 {
        let cell = self.arc() / self.n_time as f64;
        self.mass.iter().map(|m| m * m).sum::<f64>() / cell
    }

    /// `int_{dB_R} fbar^2` of the binned time average.
    pub fn profile_energy(&self) -> f64 {
        let arc = self.arc();
        self.profile().iter().map(|f| f * f * arc).sum()
    }

    pub fn to_angular(&self) -> AngularFlux {
        AngularFlux::BinAverages(self.profile())
    }

    /// Rows `angle_lo, angle_hi, t_lo, t_hi, mass`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["angle_lo", "angle_hi", "t_lo", "t_hi", "mass"]).map_err(csv_err)?;
        let da = 2.0 * PI / self.n_angle as f64;
        let dt = 1.0 / self.n_time as f64;
        for (k, m) in self.mass.iter().enumerate() {
            let (a, t) = (k / self.n_time, k % self.n_time);
            out.write_record([
                (a as f64 * da).to_string(),
                ((a + 1) as f64 * da).to_string(),
                (t as f64 * dt).to_string(),
                ((t + 1) as f64 * dt).to_string(),
                m.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Bins the crossings of `segs` through the circle of radius `R` around the origin of the segment frame.
pub fn segment_flux(segs: &[Segment], radius: f64, n_angle: usize, n_time: usize) -> Result<BoundaryFlux> {
    if n_angle == 0 || n_time == 0 {
        return invalid("bin counts must be positive");
    }
    if !(radius > 0.0) {
        return invalid("radius must be positive");
    }
    let mut mass = vec![0.0; n_angle * n_time];
    let mut crossings = 0;
    let mut tangential = 0;
    for s in segs {
        let Some((ts, n)) = s.crossings(radius) else {
            tangential += 1;
            continue;
        };
        for &t in &ts[..n] {
            let p = s.at(t);
            let sign = if p[0] * s.d[0] + p[1] * s.d[1] > 0.0 { 1.0 } else { -1.0 };
            let th = p[1].atan2(p[0]).rem_euclid(2.0 * PI);
            let a = ((th / (2.0 * PI) * n_angle as f64) as usize).min(n_angle - 1);
            let b = ((t * n_time as f64) as usize).min(n_time - 1);
            mass[a * n_time + b] += sign * s.mass;
            crossings += 1;
        }
    }
    Ok(BoundaryFlux {
        center: Vec::new(),
        radius,
        n_angle,
        n_time,
        mass,
        crossings,
        tangential_skipped: tangential,
    })
}

/// Boundary flux of the plan through `dB_R(center)`.
pub fn boundary_flux(
    plan: &TransportPlan,
    center: &TorusPoint,
    radius: f64,
    n_angle: usize,
    n_time: usize,
) -> Result<BoundaryFlux> {
    if !(radius < plan.src.domain.half()) {
        return invalid("flux radius must be below L/2");
    }
    let segs = segments(plan, center)?;
    let mut f = segment_flux(&segs, radius, n_angle, n_time)?;
    f.center = center.0.clone();
    Ok(f)
}

/// Mass starting in `B_R` minus mass ending in `B_R` along anchored trajectories.
pub fn endpoint_balance(segs: &[Segment], radius: f64) -> f64 {
    let r2 = radius * radius;
    let inside = |p: [f64; 2]| p[0] * p[0] + p[1] * p[1] < r2;
    segs.iter()
        .map(|s| {
            let a = if inside(s.e) { s.mass } else { 0.0 };
            let b = if inside(s.end()) { s.mass } else { 0.0 };
            a - b
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinfReport {
    pub max_disp: f64,
    pub ratio: f64,
}

/// Largest `|d|` over segments meeting `B_rho` at either endpoint.
pub fn window_max_disp(segs: &[Segment], window: f64) -> f64 {
    let w2 = window * window;
    segs.iter()
        .filter(|s| {
            let b = s.end();
            s.e[0] * s.e[0] + s.e[1] * s.e[1] < w2 || b[0] * b[0] + b[1] * b[1] < w2
        })
        .map(|s| s.len2().sqrt())
        .fold(0.0, f64::max)
}

/// Max displacement over pairs meeting `B_{5R}` and its ratio to `R (E + D)^{1/(d+2)}`.
pub fn linf_check(plan: &TransportPlan, center: &TorusPoint, radius: f64, e: f64, d: f64) -> Result<LinfReport> {
    if !(e + d > 0.0) {
        return invalid("E + D must be positive");
    }
    let segs = segments(plan, center)?;
    let max_disp = window_max_disp(&segs, 5.0 * radius);
    let exponent = 1.0 / (plan.dim() as f64 + 2.0);
    Ok(LinfReport { max_disp, ratio: max_disp / (radius * (e + d).powf(exponent)) })
}

/// Local quantities at one center and radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalStats {
    pub radius: f64,
    pub e: f64,
    pub d: f64,
    pub kappa_mu: f64,
    pub kappa_lambda: f64,
    pub max_disp: f64,
}

pub fn local_stats(plan: &TransportPlan, center: &TorusPoint, radius: f64, m_local: usize) -> Result<LocalStats> {
    let e = local_energy_e(plan, center, radius)?;
    let d = local_data_d(&plan.src, &plan.tgt, center, radius, m_local)?;
    let segs = segments(plan, center)?;
    Ok(LocalStats {
        radius,
        e,
        d: d.value,
        kappa_mu: d.kappa_mu,
        kappa_lambda: d.kappa_lambda,
        max_disp: window_max_disp(&segs, 5.0 * radius),
    })
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = 0.5 * (1.0 - z);
        w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// `sum mass int_0^1 zeta(X_t) dt` by Gauss-Legendre quadrature in time.
pub fn time_averaged_pairing(segs: &[Segment], zeta: impl Fn([f64; 2]) -> f64, nodes: usize) -> f64 {
    let (x, w) = gauss_legendre(nodes);
    segs.iter().map(|s| s.mass * x.iter().zip(&w).map(|(&t, &wt)| wt * zeta(s.at(t))).sum::<f64>()).sum()
}

/// `sum mass zeta(X_t)`, the density pairing at time `t`.
pub fn density_pairing(segs: &[Segment], zeta: impl Fn([f64; 2]) -> f64, t: f64) -> f64 {
    segs.iter().map(|s| s.mass * zeta(s.at(t))).sum()
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::measure::MeasureTag;
    use crate::transport::{CostKind, PlanPair};

    fn dom(l: f64) -> TorusDomain {
        TorusDomain::new(l, 2).unwrap()
    }

    fn plan(l: f64, xs: &[[f64; 2]], ys: &[[f64; 2]]) -> TransportPlan {
        let m = |p: &[[f64; 2]]| {
            Arc::new(
                DiscreteMeasure::new(dom(l), MeasureTag::Custom, p.iter().flatten().copied().collect(), vec![1.0; p.len()])
                    .unwrap(),
            )
        };
        let pairs = (0..xs.len()).map(|i| PlanPair { src: i, tgt: i, mass: 1.0 }).collect();
        TransportPlan::from_pairs(m(xs), m(ys), pairs, CostKind::Periodic, "test").unwrap()
    }

    #[test]
    fn trajectory_examples() {
        let d = dom(10.0);
        assert_eq!(trajectory(&d, &[0.0, 0.0], &[1.0, 0.0], 0.5).unwrap().0, vec![0.5, 0.0]);
        assert_eq!(trajectory(&d, &[4.8, 0.0], &[-4.8, 0.0], 0.5).unwrap().0, vec![-5.0, 0.0]);
        assert_eq!(trajectory(&d, &[1.0, 2.0], &[3.0, -1.0], 1.0).unwrap().0, vec![3.0, -1.0]);
    }

    #[test]
    fn single_pair_energy() {
        let p = plan(64.0, &[[0.0, 0.0]], &[[0.3, 0.0]]);
        let c = TorusPoint(vec![0.0, 0.0]);
        let e = local_energy_e(&p, &c, 2.0).unwrap();
        assert!((e - 0.09 / 16.0).abs() < 1e-15);
        let e2 = local_energy_e(&p, &c, 4.0).unwrap();
        assert!((e2 - e / 16.0).abs() < 1e-16);
    }

    #[test]
    fn outgoing_crossing() {
        let r = 1.5;
        let p = plan(32.0, &[[0.0, 0.0]], &[[2.0 * r, 0.0]]);
        let f = boundary_flux(&p, &TorusPoint(vec![0.0, 0.0]), r, 8, 4).unwrap();
        assert_eq!(f.crossings, 1);
        // angle 0 bin, time bin containing t = 1/2
        assert_eq!(f.mass[2], 1.0);
        assert!((f.net() - 1.0).abs() < 1e-15);
        let segs = segments(&p, &TorusPoint(vec![0.0, 0.0])).unwrap();
        assert_eq!(endpoint_balance(&segs, r), 1.0);
    }

    #[test]
    fn gauss_legendre_exact_on_polynomials() {
        let (x, w) = gauss_legendre(6);
        for k in 0..12 {
            let s: f64 = x.iter().zip(&w).map(|(t, w)| w * t.powi(k)).sum();
            assert!((s - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "{k}");
        }
    }
}
