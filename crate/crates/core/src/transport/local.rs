use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{solve_exact, CostKind};
use crate::error::{invalid, Error, Result};
use crate::measure::{restrict, DiscreteMeasure, MeasureTag};
use crate::torus::TorusPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalWasserstein {
    /// `W` between the restriction and the constant density on the ball.
    pub w: f64,
    /// `mu(B_R) / |B_R|`.
    pub kappa: f64,
    pub mass: f64,
    pub atoms: usize,
    pub cells: usize,
}

impl LocalWasserstein {
    pub fn w2(&self) -> f64 {
        self.w * self.w
    }
}

/// Distance between `mu` restricted to `B_R(center)` and `kappa` times
/// Lebesgue on the same ball, with Euclidean cost in the frame of the
/// center. The ball is resolved by `m_local` cells per radius.
pub fn local_wasserstein(
    mu: &DiscreteMeasure,
    center: &TorusPoint,
    radius: f64,
    m_local: usize,
) -> Result<LocalWasserstein> {
    if mu.dim() != 2 {
        return invalid("local Wasserstein distance is implemented for d = 2");
    }
    let r = restrict(mu, center, radius)?;
    if r.is_empty() {
        return Err(Error::Domain(format!("no mass in B_{radius}")));
    }
    let dom = mu.domain;
    let mut local = Vec::with_capacity(2 * r.len());
    let mut d = [0.0; 2];
    for i in 0..r.len() {
        dom.displacement_into(&center.0, r.point(i), &mut d);
        local.extend_from_slice(&d);
    }
    let mass = r.total_mass();
    let src = DiscreteMeasure::new(dom, MeasureTag::Restriction, local, r.masses().to_vec())?;
    let tgt = disk_lebesgue(&dom, radius, m_local, mass)?;
    let (plan, _) = solve_exact(&src, &tgt, CostKind::Euclidean)?;
    Ok(LocalWasserstein {
        w: plan.total_cost.max(0.0).sqrt(),
        kappa: mass / (PI * radius * radius),
        mass,
        atoms: src.len(),
        cells: tgt.len(),
    })
}

/// Constant density of total mass `mass` on the disk `B_R(0)`, one atom
/// per grid cell meeting the disk, at the centroid of the cell-disk
/// intersection and weighted by its exact area.
pub fn disk_lebesgue(
    dom: &crate::torus::TorusDomain,
    radius: f64,
    m_local: usize,
    mass: f64,
) -> Result<DiscreteMeasure> {
    if m_local == 0 {
        return invalid("m_local must be positive");
    }
    if !(radius > 0.0 && radius < dom.half()) {
        return invalid("radius must lie in (0, L/2)");
    }
    let h = radius / m_local as f64;
    let k = 2 * m_local;
    let edge = |i: usize| -radius + i as f64 * h;
    let mut coords = Vec::new();
    let mut areas = Vec::new();
    for a in 0..k {
        for b in 0..k {
            let (x0, x1, y0, y1) = (edge(a), edge(a + 1), edge(b), edge(b + 1));
            let area = rect_integral(radius, x0, x1, y0, y1, quad_area);
            if area <= 1e-14 * h * h {
                continue;
            }
            let mx = rect_integral(radius, x0, x1, y0, y1, moment_x);
            let my = rect_integral(radius, x0, x1, y0, y1, moment_y);
            let mut cx = (mx / area).clamp(x0, x1);
            let mut cy = (my / area).clamp(y0, y1);
            // slivers lose the moments to cancellation; the true centroid lies in the disk
            let rho = cx.hypot(cy);
            if rho > radius {
                cx *= radius / rho;
                cy *= radius / rho;
            }
            coords.push(cx);
            coords.push(cy);
            areas.push(area);
        }
    }
    let total: f64 = areas.iter().sum();
    let masses = areas.iter().map(|a| a * mass / total).collect();
    DiscreteMeasure::new(*dom, MeasureTag::Grid, coords, masses)
}

/// Inclusion-exclusion over the corners of `[x0,x1] x [y0,y1]` of a signed
/// corner integral `F(x, y) = int_0^x int_0^y`.
fn rect_integral(r: f64, x0: f64, x1: f64, y0: f64, y1: f64, f: fn(f64, f64, f64) -> f64) -> f64 {
    f(r, x1, y1) - f(r, x0, y1) - f(r, x1, y0) + f(r, x0, y0)
}

fn primitive(r: f64, u: f64) -> f64 {
    let u = u.min(r);
    0.5 * (u * (r * r - u * u).max(0.0).sqrt() + r * r * (u / r).asin())
}

/// Split point where the disk's upper arc meets height `b`, and `min(a, r)`.
fn split(r: f64, a: f64, b: f64) -> (f64, f64) {
    ((r * r - b * b).max(0.0).sqrt(), a.min(r))
}

fn quad_area(r: f64, x: f64, y: f64) -> f64 {
    let (a, b) = (x.abs(), y.abs());
    let (t0, a) = split(r, a, b);
    let mut v = b * a.min(t0);
    if a > t0 {
        v += primitive(r, a) - primitive(r, t0);
    }
    x.signum() * y.signum() * v
}

fn moment_x(r: f64, x: f64, y: f64) -> f64 {
    let (a, b) = (x.abs(), y.abs());
    let (t0, a) = split(r, a, b);
    let q = |u: f64| (r * r - u * u).max(0.0).powf(1.5) / 3.0;
    let lo = a.min(t0);
    let mut v = 0.5 * b * lo * lo;
    if a > t0 {
        v += q(t0) - q(a);
    }
    y.signum() * v
}

fn moment_y(r: f64, x: f64, y: f64) -> f64 {
    let (a, b) = (x.abs(), y.abs());
    let (t0, a) = split(r, a, b);
    let mut v = 0.5 * b * b * a.min(t0);
    if a > t0 {
        v += 0.5 * (r * r * (a - t0) - (a * a * a - t0 * t0 * t0) / 3.0);
    }
    x.signum() * v
}
