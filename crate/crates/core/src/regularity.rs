//! Excess decay for smooth synthetic transport maps: the excess `E(T, R)`,
//! one renormalization step with an affine frame, and the decay trace.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::eulerian::gauss_legendre;
use crate::field::{csv_err, disk_derivatives_at_origin, solve_disk_neumann, AngularFlux, DiskNeumannField};

pub type MapFn = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

/// Default ratio between successive scales.
pub const DEFAULT_THETA: f64 = 1.0 / 7.0;
/// Radius of the Neumann disk relative to the scale.
pub const NEUMANN_RADIUS: f64 = 3.5;

/// A map known in closed form, sampled quasi-uniformly on `B_{6R}`.
#[derive(Clone)]
pub struct SampledMap {
    pub scale: f64,
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub values: Vec<[f64; 2]>,
    map: MapFn,
}

impl std::fmt::Debug for SampledMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampledMap").field("scale", &self.scale).field("samples", &self.points.len()).finish()
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// First `n` Halton points (bases 2, 3) of the square `[-r, r]^2` that fall in `B_r`.
pub fn halton_disk(n: usize, radius: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(n);
    let mut i = 1u64;
    while out.len() < n {
        let p = [radius * (2.0 * radical_inverse(i, 2) - 1.0), radius * (2.0 * radical_inverse(i, 3) - 1.0)];
        if p[0] * p[0] + p[1] * p[1] < radius * radius {
            out.push(p);
        }
        i += 1;
    }
    out
}

impl SampledMap {
    /// Samples `map` at `n` Halton points of `B_{6R}`, each weighted `|B_{6R}| / n`.
    pub fn new(map: MapFn, scale: f64, n: usize) -> Result<Self> {
        if !(scale > 0.0) || n == 0 {
            return invalid("scale and sample count must be positive");
        }
        let region = 6.0 * scale;
        let points = halton_disk(n, region);
        let w = PI * region * region / n as f64;
        let values = points.iter().map(|&p| map(p)).collect();
        Ok(SampledMap { scale, weights: vec![w; n], points, values, map })
    }

    pub fn eval(&self, p: [f64; 2]) -> [f64; 2] {
        (self.map)(p)
    }

    pub fn map(&self) -> MapFn {
        self.map.clone()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest distance from a probe point of `B_r` to its nearest sample.
    pub fn coverage_gap(&self, r: f64) -> f64 {
        let cell = r / 16.0;
        let k = (2.0 * r / cell).ceil() as usize + 1;
        let mut buckets: Vec<Vec<[f64; 2]>> = vec![Vec::new(); k * k];
        let idx = |v: f64| (((v + r) / cell).floor().max(0.0) as usize).min(k - 1);
        for p in &self.points {
            if p[0].abs() <= r + cell && p[1].abs() <= r + cell {
                buckets[idx(p[0]) * k + idx(p[1])].push(*p);
            }
        }
        let probe = cell * 0.5;
        let n = (2.0 * r / probe) as isize;
        let mut worst: f64 = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let q = [-r + i as f64 * probe, -r + j as f64 * probe];
                if q[0] * q[0] + q[1] * q[1] > r * r {
                    continue;
                }
                let (ci, cj) = (idx(q[0]) as isize, idx(q[1]) as isize);
                let mut best = f64::INFINITY;
                let mut ring = 0isize;
                while ring <= k as isize {
                    for a in ci - ring..=ci + ring {
                        for b in cj - ring..=cj + ring {
                            if a < 0 || b < 0 || a >= k as isize || b >= k as isize {
                                continue;
                            }
                            if (a - ci).abs() != ring && (b - cj).abs() != ring {
                                continue;
                            }
                            for p in &buckets[a as usize * k + b as usize] {
                                best = best.min(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
                            }
                        }
                    }
                    if best <= ring as f64 * cell {
                        break;
                    }
                    ring += 1;
                }
                worst = worst.max(best);
            }
        }
        worst
    }
}

/// `R^{-4} int_{B_{6R}} |T - x|^2` by sample quadrature.
pub fn map_excess(t: &SampledMap, radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return invalid("radius must be positive");
    }
    let region = 6.0 * radius;
    if region > 6.0 * t.scale * (1.0 + 1e-12) {
        return Err(Error::Sampling(format!("samples cover B_{} but B_{region} was requested", 6.0 * t.scale)));
    }
    // probe slightly inside the edge, where the half-disk neighbourhood is still sampled
    let gap = t.coverage_gap(region - radius / 16.0);
    if gap > radius / 8.0 {
        return Err(Error::Sampling(format!("sample-free ball of radius {gap:.4} exceeds R/8")));
    }
    let r2 = region * region;
    let mut acc = 0.0;
    for ((p, v), w) in t.points.iter().zip(&t.values).zip(&t.weights) {
        if p[0] * p[0] + p[1] * p[1] < r2 {
            acc += w * ((v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2));
        }
    }
    Ok(acc / radius.powi(4))
}

fn jacobian(map: &MapFn, x: [f64; 2]) -> [[f64; 2]; 2] {
    let h = 1e-5 * (1.0 + x[0].abs().max(x[1].abs()));
    let mut j = [[0.0; 2]; 2];
    for c in 0..2 {
        let mut a = x;
        let mut b = x;
        a[c] += h;
        b[c] -= h;
        let (fa, fb) = (map(a), map(b));
        j[0][c] = (fa[0] - fb[0]) / (2.0 * h);
        j[1][c] = (fa[1] - fb[1]) / (2.0 * h);
    }
    j
}

/// Time-averaged normal flux `nu . jbar` of the Lebesgue measure pushed
/// along `x + t (T(x) - x)`, at `n_angle` midpoints of the circle `dB_r`.
pub fn map_flux(map: &MapFn, radius: f64, n_angle: usize, n_time: usize) -> Result<Vec<f64>> {
    let (nodes, weights) = gauss_legendre(n_time);
    let mut out = Vec::with_capacity(n_angle);
    for a in 0..n_angle {
        let th = 2.0 * PI * (a as f64 + 0.5) / n_angle as f64;
        let nu = [th.cos(), th.sin()];
        let z = [radius * nu[0], radius * nu[1]];
        let mut acc = 0.0;
        for (&t, &w) in nodes.iter().zip(&weights) {
            let tz = map(z);
            let mut x = [z[0] - t * (tz[0] - z[0]), z[1] - t * (tz[1] - z[1])];
            let mut converged = false;
            let mut jm = [[0.0; 2]; 2];
            for _ in 0..50 {
                let tx = map(x);
                let g = [x[0] + t * (tx[0] - x[0]) - z[0], x[1] + t * (tx[1] - x[1]) - z[1]];
                let dt = jacobian(map, x);
                jm = [
                    [1.0 + t * (dt[0][0] - 1.0), t * dt[0][1]],
                    [t * dt[1][0], 1.0 + t * (dt[1][1] - 1.0)],
                ];
                let det = jm[0][0] * jm[1][1] - jm[0][1] * jm[1][0];
                if !(det > 0.0) {
                    return Err(Error::Convergence("trajectory map is not invertible".into()));
                }
                let dx = [(jm[1][1] * g[0] - jm[0][1] * g[1]) / det, (jm[0][0] * g[1] - jm[1][0] * g[0]) / det];
                x = [x[0] - dx[0], x[1] - dx[1]];
                if dx[0].abs().max(dx[1].abs()) < 1e-14 * (1.0 + radius) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Convergence("trajectory inversion did not converge".into()));
            }
            let tx = map(x);
            let det = jm[0][0] * jm[1][1] - jm[0][1] * jm[1][0];
            acc += w * (nu[0] * (tx[0] - x[0]) + nu[1] * (tx[1] - x[1])) / det;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Neumann potential of the displacement flux of `T - id` on `B_{3.5 R}`.
pub fn map_neumann(t: &SampledMap, n_angle: usize, k_max: usize) -> Result<DiskNeumannField> {
    let radius = NEUMANN_RADIUS * t.scale;
    let flux = map_flux(&t.map, radius, n_angle, 16)?;
    solve_disk_neumann(&AngularFlux::Samples(flux), radius, k_max)
}

/// `B` symmetric with `det B = 1`, and `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFrame {
    pub big_b: [[f64; 2]; 2],
    pub b: [f64; 2],
}

/// `exp(M)` for symmetric trace-free `M = [[p, q], [q, -p]]`:
/// `cosh(s) Id + sinh(s)/s M` with `s = sqrt(p^2 + q^2)`.
pub fn expm_tracefree(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let (p, q) = (0.5 * (m[0][0] - m[1][1]), 0.5 * (m[0][1] + m[1][0]));
    let s = (p * p + q * q).sqrt();
    let ch = s.cosh();
    let sh = if s == 0.0 { 1.0 } else { s.sinh() / s };
    [[ch + sh * p, sh * q], [sh * q, ch - sh * p]]
}

pub fn mat_vec(a: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

pub fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// `x + delta grad s` with the harmonic `s = l^2 exp(x1 / l) cos(x2 / l)`.
pub fn exponential_harmonic_map(delta: f64, length: f64) -> MapFn {
    Arc::new(move |x: [f64; 2]| {
        let e = (x[0] / length).exp() * length;
        let (s, c) = (x[1] / length).sin_cos();
        [x[0] + delta * e * c, x[1] - delta * e * s]
    })
}

/// The linear map `exp([[p, q], [q, -p]])`.
pub fn symmetric_linear_map(p: f64, q: f64) -> MapFn {
    let m = expm_tracefree([[p, q], [q, -p]]);
    Arc::new(move |x| mat_vec(m, x))
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub frame: AffineFrame,
    /// Trace-free part of the Hessian used for the frame.
    pub a: [[f64; 2]; 2],
    /// `trace(hess Phi(0))`, removed before exponentiating.
    pub trace_removed: f64,
    pub a_norm: f64,
    pub map: SampledMap,
}

/// Spectral norm of a symmetric 2x2 matrix.
fn sym_norm(a: [[f64; 2]; 2]) -> f64 {
    let m = 0.5 * (a[0][0] + a[1][1]);
    let r = (0.25 * (a[0][0] - a[1][1]).powi(2) + a[0][1] * a[0][1]).sqrt();
    (m + r).abs().max((m - r).abs())
}

/// `b = grad Phi(0)`, `B = exp(-A/2)` with `A` the trace-free Hessian, and
/// `T^(x) = B (T(B x) - b)` resampled on `B_{6 theta R}`.
pub fn one_step(t: &SampledMap, phi: &DiskNeumannField, theta: f64) -> Result<StepOutcome> {
    if !(theta > 0.0 && theta <= 1.0) {
        return invalid("theta must lie in (0, 1]");
    }
    let (b, h) = disk_derivatives_at_origin(phi);
    let tr = h[0][0] + h[1][1];
    let a = [[h[0][0] - 0.5 * tr, h[0][1]], [h[1][0], h[1][1] - 0.5 * tr]];
    let a_norm = sym_norm(a);
    if a_norm > 1.0 {
        return Err(Error::StepRejected(format!("|A| = {a_norm:.4} exceeds 1")));
    }
    let big_b = expm_tracefree([[-0.5 * a[0][0], -0.5 * a[0][1]], [-0.5 * a[1][0], -0.5 * a[1][1]]]);
    let inner = t.map();
    let map: MapFn = Arc::new(move |x| {
        let y = inner(mat_vec(big_b, x));
        mat_vec(big_b, [y[0] - b[0], y[1] - b[1]])
    });
    let next = SampledMap::new(map, theta * t.scale, t.len())?;
    Ok(StepOutcome { frame: AffineFrame { big_b, b }, a, trace_removed: tr, a_norm, map: next })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRecord {
    pub k: usize,
    pub scale: f64,
    pub excess: f64,
    /// `E_k / E_{k-1}`; `None` at `k = 0`.
    pub ratio: Option<f64>,
    pub b_norm: f64,
    pub a_norm: f64,
    pub trace_removed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    pub theta: f64,
    pub alpha: f64,
    pub records: Vec<DecayRecord>,
    /// Reason the iteration stopped early, if it did.
    pub stopped: Option<String>,
}

impl DecayTrace {
    /// Rows `k, scale, E_k, ratio, |b|, |A|`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "scale", "E_k", "ratio", "b_norm", "a_norm"]).map_err(csv_err)?;
        for r in &self.records {
            out.write_record([
                r.k.to_string(),
                r.scale.to_string(),
                r.excess.to_string(),
                r.ratio.map_or(String::new(), |v| v.to_string()),
                r.b_norm.to_string(),
                r.a_norm.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Iterates [`one_step`] at scales `theta^k R`, recording the excess at each.
pub fn campanato_decay(t: &SampledMap, theta: f64, alpha: f64, steps: usize, epsilon: f64) -> Result<DecayTrace> {
    if !(theta > 0.0 && theta <= 1.0 / 7.0 + 1e-15) {
        return invalid("theta must lie in (0, 1/7]");
    }
    let e0 = map_excess(t, t.scale)?;
    if e0 > epsilon {
        return invalid(format!("initial excess {e0:.3e} exceeds epsilon {epsilon:.3e}"));
    }
    let mut trace = DecayTrace {
        theta,
        alpha,
        records: vec![DecayRecord { k: 0, scale: t.scale, excess: e0, ratio: None, b_norm: 0.0, a_norm: 0.0, trace_removed: 0.0 }],
        stopped: None,
    };
    let mut cur = t.clone();
    let mut prev = e0;
    for k in 1..=steps {
        let phi = match map_neumann(&cur, crate::field::DEFAULT_ANGULAR_BINS, crate::field::DEFAULT_K_MAX) {
            Ok(p) => p,
            Err(e) => {
                trace.stopped = Some(e.to_string());
                break;
            }
        };
        let step = match one_step(&cur, &phi, theta) {
            Ok(s) => s,
            Err(e) => {
                trace.stopped = Some(e.to_string());
                break;
            }
        };
        let e = match map_excess(&step.map, step.map.scale) {
            Ok(e) => e,
            Err(e) => {
                trace.stopped = Some(e.to_string());
                break;
            }
        };
        trace.records.push(DecayRecord {
            k,
            scale: step.map.scale,
            excess: e,
            ratio: if prev > 0.0 { Some(e / prev) } else { None },
            b_norm: step.frame.b[0].hypot(step.frame.b[1]),
            a_norm: step.a_norm,
            trace_removed: step.trace_removed,
        });
        prev = e;
        cur = step.map;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(f: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static) -> MapFn {
        Arc::new(f)
    }

    #[test]
    fn excess_examples() {
        let id = SampledMap::new(map(|x| x), 1.0, 10_000).unwrap();
        assert_eq!(map_excess(&id, 1.0).unwrap(), 0.0);
        let eps = 0.01;
        let tr = SampledMap::new(map(move |x| [x[0] + eps, x[1]]), 1.0, 10_000).unwrap();
        assert!((map_excess(&tr, 1.0).unwrap() - 36.0 * PI * eps * eps).abs() < 1e-12);
        let dil = SampledMap::new(map(move |x| [(1.0 + eps) * x[0], (1.0 + eps) * x[1]]), 1.0, 10_000).unwrap();
        let e = map_excess(&dil, 1.0).unwrap();
        let exact = 648.0 * PI * eps * eps;
        assert!((e - exact).abs() <= 5e-3 * exact, "{e} {exact}");
    }

    #[test]
    fn sparse_samples_are_rejected() {
        let t = SampledMap::new(map(|x| x), 1.0, 100).unwrap();
        assert!(matches!(map_excess(&t, 1.0), Err(Error::Sampling(_))));
    }

    #[test]
    fn exponential_closed_form() {
        let a = 0.1;
        let b = expm_tracefree([[-a / 2.0, 0.0], [0.0, a / 2.0]]);
        assert!((b[0][0] - (-a / 2.0f64).exp()).abs() < 1e-15 && (b[1][1] - (a / 2.0f64).exp()).abs() < 1e-15);
        let m = [[0.03, -0.07], [-0.07, -0.03]];
        let e = expm_tracefree(m);
        let det = e[0][0] * e[1][1] - e[0][1] * e[1][0];
        assert!((det - 1.0).abs() < 1e-14);
        let inv = expm_tracefree([[-0.03, 0.07], [0.07, 0.03]]);
        let id = mat_mul(e, inv);
        assert!((id[0][0] - 1.0).abs() < 1e-14 && id[0][1].abs() < 1e-14);
    }

    #[test]
    fn translation_is_removed() {
        let v = [0.02, -0.01];
        let t = SampledMap::new(map(move |x| [x[0] + v[0], x[1] + v[1]]), 1.0, 10_000).unwrap();
        let phi = map_neumann(&t, 256, 64).unwrap();
        let s = one_step(&t, &phi, 1.0 / 7.0).unwrap();
        assert!((s.frame.b[0] - v[0]).abs() < 1e-10 && (s.frame.b[1] - v[1]).abs() < 1e-10);
        assert!(s.a_norm < 1e-10);
        assert!(map_excess(&s.map, s.map.scale).unwrap() < 1e-16);
    }
}
