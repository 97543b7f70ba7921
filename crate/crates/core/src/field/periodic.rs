use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Error, Result};
use crate::measure::{read_f64, read_u32, read_u64, DiscreteMeasure};
use crate::torus::TorusDomain;

/// Periodic scalar field on an `m x m` cell-center grid over `Q_L`, plus an
/// optional linear part `v . x` that is carried analytically.
///
/// Grid index `i * m + j` holds the value at `(c(i), c(j))` with
/// `c(i) = -L/2 + (i + 1/2) L/m`, matching [`crate::measure::lebesgue_grid`].
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub domain: TorusDomain,
    pub m: usize,
    values: Vec<f64>,
    spectrum: Vec<Complex64>,
    pub mean_zero: bool,
    /// Constant gradient of the non-periodic linear part.
    pub background: [f64; 2],
    /// `max |lap(phi) - rhs| / max |rhs|` when produced by a Poisson solve.
    pub residual: Option<f64>,
    interp: Option<Arc<HermiteTables>>,
}

/// Nodal derivative tables for bicubic Hermite interpolation of the
/// gradient: for each component `g`, the arrays `g, g_x, g_y, g_xy`.
#[derive(Debug)]
struct HermiteTables {
    tables: [[Vec<f64>; 4]; 2],
}

struct Fft2 {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    m: usize,
}

impl Fft2 {
    fn new(m: usize) -> Self {
        let mut p = FftPlanner::new();
        Fft2 { fwd: p.plan_fft_forward(m), inv: p.plan_fft_inverse(m), m }
    }

    fn run(&self, data: &mut [Complex64], forward: bool) {
        let m = self.m;
        let f = if forward { &self.fwd } else { &self.inv };
        f.process(data);
        let mut col = vec![Complex64::new(0.0, 0.0); m];
        for j in 0..m {
            for i in 0..m {
                col[i] = data[i * m + j];
            }
            f.process(&mut col);
            for i in 0..m {
                data[i * m + j] = col[i];
            }
        }
        if !forward {
            let s = 1.0 / (m * m) as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut d: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.run(&mut d, true);
        d
    }

    fn inverse_real(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut d = spec.to_vec();
        self.run(&mut d, false);
        d.into_iter().map(|c| c.re).collect()
    }
}

/// Signed wavenumber of FFT index `k`; `None` at the Nyquist index.
fn freq(k: usize, m: usize) -> Option<f64> {
    if 2 * k == m {
        None
    } else if 2 * k < m {
        Some(k as f64)
    } else {
        Some(k as f64 - m as f64)
    }
}

fn check_grid(dom: &TorusDomain, m: usize) -> Result<()> {
    if dom.dim != 2 {
        return invalid("periodic fields are implemented for d = 2");
    }
    if m < 2 || !m.is_power_of_two() {
        return invalid(format!("grid size {m} must be a power of two >= 2"));
    }
    Ok(())
}

impl ScalarField {
    pub fn from_values(domain: TorusDomain, m: usize, values: Vec<f64>) -> Result<Self> {
        check_grid(&domain, m)?;
        if values.len() != m * m {
            return invalid(format!("expected {} grid values, got {}", m * m, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite grid value");
        }
        let spectrum = Fft2::new(m).forward(&values);
        let mut f = ScalarField {
            domain,
            m,
            values,
            spectrum,
            mean_zero: false,
            background: [0.0; 2],
            residual: None,
            interp: None,
        };
        f.mean_zero = f.mean().abs() <= 1e-12 * (f.max_abs() + 1.0);
        Ok(f)
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(domain: TorusDomain, m: usize, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_grid(&domain, m)?;
        let h = domain.side / m as f64;
        let c = |i: usize| -0.5 * domain.side + (i as f64 + 0.5) * h;
        let values = (0..m * m).map(|k| f(c(k / m), c(k % m))).collect();
        Self::from_values(domain, m, values)
    }

    /// The linear field `v . x` (zero periodic part).
    pub fn linear(domain: TorusDomain, m: usize, v: [f64; 2]) -> Result<Self> {
        let mut f = Self::from_values(domain, m, vec![0.0; m * m])?;
        f.background = v;
        Ok(f)
    }

    pub fn spacing(&self) -> f64 {
        self.domain.side / self.m as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        -0.5 * self.domain.side + (i as f64 + 0.5) * self.spacing()
    }

    /// Periodic part of the field at the grid nodes.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    fn wavenumber(&self) -> f64 {
        2.0 * PI / self.domain.side
    }

    /// Applies a spectral multiplier `s(kx, ky)` with signed integer
    /// wavenumbers (`None` at Nyquist) and returns grid values.
    fn apply(&self, s: impl Fn(Option<f64>, Option<f64>) -> Complex64) -> Vec<f64> {
        let m = self.m;
        let spec: Vec<Complex64> =
            (0..m * m).map(|k| self.spectrum[k] * s(freq(k / m, m), freq(k % m, m))).collect();
        Fft2::new(m).inverse_real(&spec)
    }

    /// Spectral Laplacian of the periodic part at the nodes.
    pub fn laplacian(&self) -> Vec<f64> {
        let w = self.wavenumber();
        let m = self.m as f64;
        let nyq = |k: Option<f64>| k.unwrap_or(m / 2.0);
        self.apply(|a, b| {
            let (a, b) = (nyq(a) * w, nyq(b) * w);
            Complex64::new(-(a * a + b * b), 0.0)
        })
    }

    /// Spectral gradient at the nodes, including the linear part.
    pub fn nodal_gradient(&self) -> [Vec<f64>; 2] {
        let w = self.wavenumber();
        let d = |k: Option<f64>| k.map_or(Complex64::new(0.0, 0.0), |k| Complex64::new(0.0, k * w));
        let mut gx = self.apply(|a, _| d(a));
        let mut gy = self.apply(|_, b| d(b));
        gx.iter_mut().for_each(|v| *v += self.background[0]);
        gy.iter_mut().for_each(|v| *v += self.background[1]);
        [gx, gy]
    }

    fn tables(&self) -> Arc<HermiteTables> {
        if let Some(t) = &self.interp {
            return t.clone();
        }
        let w = self.wavenumber();
        let d = |k: Option<f64>| k.map_or(Complex64::new(0.0, 0.0), |k| Complex64::new(0.0, k * w));
        let one = Complex64::new(1.0, 0.0);
        let build = |comp: usize| -> [Vec<f64>; 4] {
            let g = move |a: Option<f64>, b: Option<f64>| if comp == 0 { d(a) } else { d(b) };
            [
                self.apply(|a, b| g(a, b) * one),
                self.apply(|a, b| g(a, b) * d(a)),
                self.apply(|a, b| g(a, b) * d(b)),
                self.apply(|a, b| g(a, b) * d(a) * d(b)),
            ]
        };
        Arc::new(HermiteTables { tables: [build(0), build(1)] })
    }

    /// Builds and caches the interpolation tables used by
    /// [`eval_gradient`](Self::eval_gradient).
    pub fn prepare(&mut self) {
        if self.interp.is_none() {
            self.interp = Some(self.tables());
        }
    }

    /// Gradient at an arbitrary point by bicubic Hermite interpolation of
    /// spectrally exact nodal derivatives; error `O(h^4)` on smooth fields.
    pub fn eval_gradient(&self, p: [f64; 2]) -> [f64; 2] {
        let t = match &self.interp {
            Some(t) => t.clone(),
            None => self.tables(),
        };
        let m = self.m;
        let h = self.spacing();
        let locate = |x: f64| {
            let s = (self.domain.wrap_coord(x) + 0.5 * self.domain.side) / h - 0.5;
            let i = s.floor();
            let f = s - i;
            let i0 = (i as isize).rem_euclid(m as isize) as usize;
            (i0, (i0 + 1) % m, f)
        };
        let (i0, i1, u) = locate(p[0]);
        let (j0, j1, v) = locate(p[1]);
        let hu = hermite(u);
        let hv = hermite(v);
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            let [g, gx, gy, gxy] = &t.tables[c];
            let mut acc = 0.0;
            for (a, ia) in [(0, i0), (1, i1)] {
                for (b, jb) in [(0, j0), (1, j1)] {
                    let k = ia * m + jb;
                    acc += hu[a] * hv[b] * g[k]
                        + h * hu[2 + a] * hv[b] * gx[k]
                        + h * hu[a] * hv[2 + b] * gy[k]
                        + h * h * hu[2 + a] * hv[2 + b] * gxy[k];
                }
            }
            *o = acc + self.background[c];
        }
        out
    }

    /// `OTF1` binary form: magic, `d: u32`, `L: f64`, `m: u64`, then the
    /// periodic part row-major, little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"OTF1")?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&self.domain.side.to_le_bytes())?;
        w.write_all(&(self.m as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"OTF1" {
            return Err(Error::Format("bad magic, expected OTF1".into()));
        }
        let d = read_u32(&mut r)? as usize;
        let side = read_f64(&mut r)?;
        let m = read_u64(&mut r)? as usize;
        let dom = TorusDomain::new(side, d)?;
        check_grid(&dom, m)?;
        let values = (0..m * m).map(|_| read_f64(&mut r)).collect::<Result<Vec<f64>>>()?;
        Self::from_values(dom, m, values)
    }

    /// Writes `x,y,value` rows for plotting.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "value"]).map_err(csv_err)?;
        for k in 0..self.m * self.m {
            let (x, y) = (self.node(k / self.m), self.node(k % self.m));
            let v = self.values[k] + self.background[0] * x + self.background[1] * y;
            out.write_record([x.to_string(), y.to_string(), v.to_string()]).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Cubic Hermite basis at `t`: `[h00, h01, h10, h11]` for values at 0, 1
/// and derivatives at 0, 1.
fn hermite(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [2.0 * t3 - 3.0 * t2 + 1.0, -2.0 * t3 + 3.0 * t2, t3 - 2.0 * t2 + t, t3 - t2]
}

/// Cloud-in-cell density of `mu` on the `m x m` node grid (mass per unit area).
pub fn rasterize_cic(mu: &DiscreteMeasure, m: usize) -> Result<Vec<f64>> {
    check_grid(&mu.domain, m)?;
    let side = mu.domain.side;
    let h = side / m as f64;
    let mut grid = vec![0.0; m * m];
    let locate = |x: f64| {
        let s = (x + 0.5 * side) / h - 0.5;
        let i = s.floor();
        let i0 = (i as isize).rem_euclid(m as isize) as usize;
        (i0, (i0 + 1) % m, s - i)
    };
    for (p, w) in mu.atoms() {
        let (i0, i1, u) = locate(p[0]);
        let (j0, j1, v) = locate(p[1]);
        let d = w / (h * h);
        grid[i0 * m + j0] += d * (1.0 - u) * (1.0 - v);
        grid[i1 * m + j0] += d * u * (1.0 - v);
        grid[i0 * m + j1] += d * (1.0 - u) * v;
        grid[i1 * m + j1] += d * u * v;
    }
    Ok(grid)
}

/// Solves `lap(phi) = rhs` for a mean-zero grid right-hand side.
pub fn solve_periodic_poisson(domain: TorusDomain, m: usize, rhs: &[f64]) -> Result<ScalarField> {
    check_grid(&domain, m)?;
    if rhs.len() != m * m {
        return invalid("right-hand side has the wrong size");
    }
    let max = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
    if mean.abs() > 1e-9 * max.max(f64::MIN_POSITIVE) {
        return invalid(format!("right-hand side has nonzero mean {mean:e}"));
    }
    let fft = Fft2::new(m);
    let mut spec = fft.forward(rhs);
    let w = 2.0 * PI / domain.side;
    let nyq = |k: Option<f64>| k.unwrap_or(m as f64 / 2.0);
    for (k, s) in spec.iter_mut().enumerate() {
        let a = nyq(freq(k / m, m)) * w;
        let b = nyq(freq(k % m, m)) * w;
        let xi2 = a * a + b * b;
        *s = if k == 0 { Complex64::new(0.0, 0.0) } else { -*s / xi2 };
    }
    let values = fft.inverse_real(&spec);
    let mut phi = ScalarField::from_values(domain, m, values)?;
    phi.mean_zero = true;
    let lap = phi.laplacian();
    let err = lap.iter().zip(rhs).fold(0.0f64, |a, (l, r)| a.max((l - r).abs()));
    phi.residual = Some(if max > 0.0 { err / max } else { err });
    Ok(phi)
}

/// Solves `lap(phi) = mu - kappa` with `kappa = mu(Q_L) / L^2`, the measure
/// rasterized by cloud-in-cell.
pub fn solve_poisson_measure(mu: &DiscreteMeasure, m: usize) -> Result<ScalarField> {
    let mut rhs = rasterize_cic(mu, m)?;
    let kappa = mu.total_mass() / mu.domain.volume();
    rhs.iter_mut().for_each(|v| *v -= kappa);
    // remove rounding drift so the mean-zero precondition holds exactly
    let drift = rhs.iter().sum::<f64>() / rhs.len() as f64;
    rhs.iter_mut().for_each(|v| *v -= drift);
    solve_periodic_poisson(mu.domain, m, &rhs)
}

/// Heat semigroup `P_t`: multiplies the spectrum by `exp(-t |xi|^2)`.
/// The linear part is harmonic and passes through unchanged.
pub fn heat_smooth(field: &ScalarField, t: f64) -> Result<ScalarField> {
    if !(t.is_finite() && t >= 0.0) {
        return invalid("smoothing time must be nonnegative");
    }
    if t == 0.0 {
        return Ok(field.clone());
    }
    let w = field.wavenumber();
    let m = field.m as f64;
    let nyq = |k: Option<f64>| k.unwrap_or(m / 2.0) * w;
    let values = field.apply(|a, b| {
        let (a, b) = (nyq(a), nyq(b));
        Complex64::new((-t * (a * a + b * b)).exp(), 0.0)
    });
    let mut out = ScalarField::from_values(field.domain, field.m, values)?;
    out.background = field.background;
    out.mean_zero = field.mean_zero;
    Ok(out)
}

/// Normalizing constant of the standard bump `exp(-1/(1-|x|^2))` on the
/// unit disk.
pub fn bump_normalizer() -> f64 {
    // 2 pi int_0^1 r exp(-1/(1-r^2)) dr = pi int_0^1 exp(-1/s) ds; composite Simpson
    let n = 20_000;
    let f = |s: f64| if s <= 0.0 { 0.0 } else { (-1.0 / s).exp() };
    let h = 1.0 / n as f64;
    let mut acc = f(0.0) + f(1.0);
    for k in 1..n {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
    }
    PI * acc * h / 3.0
}

/// Value of `eta_R(x) = R^{-2} eta(x/R)` with `eta` the normalized bump.
pub fn bump(x: [f64; 2], radius: f64, z: f64) -> f64 {
    let r2 = (x[0] * x[0] + x[1] * x[1]) / (radius * radius);
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp() / (z * radius * radius)
    }
}

/// Mollified gradient `int eta_R(x - center) grad(phi)(x) dx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifiedGradient {
    pub value: [f64; 2],
    /// `|sum eta_R h^2 - 1|`, the quadrature defect of the unit mass.
    pub quadrature_error: f64,
}

/// Grid quadrature of the mollified gradient. Weights are renormalized to
/// unit discrete mass so constant gradients are reproduced exactly.
pub fn mollifier_average(field: &ScalarField, center: [f64; 2], radius: f64) -> Result<MollifiedGradient> {
    let h = field.spacing();
    if !(radius < field.domain.half()) {
        return invalid("mollifier radius must be below L/2");
    }
    if radius < 2.0 * h {
        return Err(Error::Resolution(format!("radius {radius} is below two grid cells ({h})")));
    }
    let z = bump_normalizer();
    let [gx, gy] = field.nodal_gradient();
    let m = field.m;
    let dom = field.domain;
    let reach = (radius / h).ceil() as isize + 1;
    let s = (dom.wrap_coord(center[0]) + 0.5 * dom.side) / h - 0.5;
    let t = (dom.wrap_coord(center[1]) + 0.5 * dom.side) / h - 0.5;
    let (ci, cj) = (s.round() as isize, t.round() as isize);
    let mut acc = [0.0; 2];
    let mut mass = 0.0;
    for di in -reach..=reach {
        for dj in -reach..=reach {
            let (i, j) = (ci + di, cj + dj);
            let x = [(i as f64 - s) * h, (j as f64 - t) * h];
            let w = bump(x, radius, z) * h * h;
            if w == 0.0 {
                continue;
            }
            let k = (i.rem_euclid(m as isize) as usize) * m + j.rem_euclid(m as isize) as usize;
            acc[0] += w * gx[k];
            acc[1] += w * gy[k];
            mass += w;
        }
    }
    Ok(MollifiedGradient { value: [acc[0] / mass, acc[1] / mass], quadrature_error: (mass - 1.0).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(l: f64) -> TorusDomain {
        TorusDomain::new(l, 2).unwrap()
    }

    #[test]
    fn single_mode_solution() {
        let l = 8.0;
        let k = 2.0 * PI / l;
        let rhs = ScalarField::from_fn(dom(l), 64, |x, _| (k * x).sin()).unwrap();
        let phi = solve_periodic_poisson(dom(l), 64, rhs.values()).unwrap();
        let exact = ScalarField::from_fn(dom(l), 64, |x, _| -(k * x).sin() / (k * k)).unwrap();
        let err = phi.values().iter().zip(exact.values()).fold(0.0f64, |a, (p, e)| a.max((p - e).abs()));
        assert!(err <= 1e-10, "{err}");
        assert!(phi.residual.unwrap() <= 1e-10);
    }

    #[test]
    fn zero_rhs_and_mean_rejection() {
        let phi = solve_periodic_poisson(dom(4.0), 16, &vec![0.0; 256]).unwrap();
        assert!(phi.values().iter().all(|&v| v == 0.0));
        assert!(solve_periodic_poisson(dom(4.0), 16, &vec![1.0; 256]).is_err());
        assert!(solve_periodic_poisson(dom(4.0), 12, &vec![0.0; 144]).is_err());
    }

    #[test]
    fn heat_damps_single_mode() {
        let l = 8.0;
        let k = 2.0 * PI / l;
        let f = ScalarField::from_fn(dom(l), 32, |x, _| (k * x).sin()).unwrap();
        assert_eq!(heat_smooth(&f, 0.0).unwrap().values(), f.values());
        let g = heat_smooth(&f, 0.7).unwrap();
        let damp = (-0.7 * k * k).exp();
        for (a, b) in g.values().iter().zip(f.values()) {
            assert!((a - damp * b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_at_origin_of_single_mode() {
        let l = 8.0;
        let k = 2.0 * PI / l;
        let f = ScalarField::from_fn(dom(l), 256, |x, _| -(k * x).sin() / (k * k)).unwrap();
        let g = f.eval_gradient([0.0, 0.0]);
        assert!((g[0] + 1.0 / k).abs() <= 1e-6, "{g:?}");
        assert!(g[1].abs() <= 1e-9);
        let c = ScalarField::from_fn(dom(l), 16, |_, _| 3.0).unwrap();
        let g = c.eval_gradient([0.3, -1.1]);
        assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn linear_field_mollifies_exactly() {
        let f = ScalarField::linear(dom(16.0), 64, [0.3, -1.2]).unwrap();
        for r in [1.0, 2.0] {
            let a = mollifier_average(&f, [0.4, 0.1], r).unwrap();
            assert!((a.value[0] - 0.3).abs() < 1e-8 && (a.value[1] + 1.2).abs() < 1e-8);
        }
        assert!(matches!(mollifier_average(&f, [0.0, 0.0], 0.3), Err(Error::Resolution(_))));
    }

    #[test]
    fn bump_constant() {
        assert!((bump_normalizer() - 0.466_512).abs() < 1e-5);
    }

    #[test]
    fn cic_preserves_mass_and_binary_round_trip() {
        let mu = crate::measure::sample_poisson(&dom(8.0), 1.0, crate::measure::RandomSeed(1)).unwrap();
        let g = rasterize_cic(&mu, 16).unwrap();
        let h = 0.5;
        assert!((g.iter().sum::<f64>() * h * h - mu.total_mass()).abs() < 1e-10);
        let phi = solve_poisson_measure(&mu, 16).unwrap();
        let mut buf = Vec::new();
        phi.write_binary(&mut buf).unwrap();
        let back = ScalarField::read_binary(&buf[..]).unwrap();
        assert_eq!(back.values(), phi.values());
    }
}
