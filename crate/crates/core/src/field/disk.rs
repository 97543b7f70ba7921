use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const DEFAULT_ANGULAR_BINS: usize = 256;
pub const DEFAULT_K_MAX: usize = DEFAULT_ANGULAR_BINS / 4;

/// Boundary normal flux on a circle, in one of three equivalent encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngularFlux {
    /// Point values at `theta_n = 2 pi (n + 1/2) / N`.
    Samples(Vec<f64>),
    /// Averages over the bins `[2 pi n / N, 2 pi (n + 1) / N)`.
    BinAverages(Vec<f64>),
    /// `a0 + sum_k (a_k cos k theta + b_k sin k theta)`; index 0 of `a` is `a0`, `b[0]` unused.
    Coefficients { a: Vec<f64>, b: Vec<f64> },
}

/// Solution of `lap(Phi) = c` in `B_R`, `d Phi / d nu = flux` on the circle,
/// normalized to `Phi(0) = 0`:
/// `Phi = c r^2 / 4 + sum_k r^k (a_k cos k theta + b_k sin k theta) / (k R^{k-1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiskNeumannField {
    pub radius: f64,
    pub c: f64,
    /// `a[0]` is the mean flux.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Fourier coefficients of point samples at bin midpoints, up to `k_max`.
fn coefficients(values: &[f64], k_max: usize) -> (Vec<f64>, Vec<f64>) {
    let n = values.len();
    let mut a = vec![0.0; k_max + 1];
    let mut b = vec![0.0; k_max + 1];
    for (i, &g) in values.iter().enumerate() {
        let th = 2.0 * PI * (i as f64 + 0.5) / n as f64;
        a[0] += g;
        for k in 1..=k_max {
            let (s, c) = (k as f64 * th).sin_cos();
            a[k] += g * c;
            b[k] += g * s;
        }
    }
    a[0] /= n as f64;
    for k in 1..=k_max {
        a[k] *= 2.0 / n as f64;
        b[k] *= 2.0 / n as f64;
    }
    (a, b)
}

/// Solves the disk Neumann problem for the given flux, truncated at `k_max`.
pub fn solve_disk_neumann(flux: &AngularFlux, radius: f64, k_max: usize) -> Result<DiskNeumannField> {
    if !(radius.is_finite() && radius > 0.0) {
        return invalid("disk radius must be positive");
    }
    if k_max < 2 {
        return invalid("k_max must be at least 2");
    }
    let (a, b) = match flux {
        AngularFlux::Samples(v) | AngularFlux::BinAverages(v) => {
            if 2 * k_max > v.len() {
                return invalid(format!("k_max {k_max} exceeds half the {} angular samples", v.len()));
            }
            let (mut a, mut b) = coefficients(v, k_max);
            if matches!(flux, AngularFlux::BinAverages(_)) {
                // undo the box-filter attenuation of each mode
                for k in 1..=k_max {
                    let s = sinc(PI * k as f64 / v.len() as f64);
                    a[k] /= s;
                    b[k] /= s;
                }
            }
            (a, b)
        }
        AngularFlux::Coefficients { a, b } => {
            if a.is_empty() || a.len() != b.len() {
                return invalid("coefficient arrays must be nonempty and of equal length");
            }
            let mut a = a.clone();
            let mut b = b.clone();
            a.resize(k_max + 1, 0.0);
            b.resize(k_max + 1, 0.0);
            b[0] = 0.0;
            (a, b)
        }
    };
    if a.iter().chain(&b).any(|v| !v.is_finite()) {
        return invalid("non-finite flux");
    }
    Ok(DiskNeumannField { radius, c: 2.0 * a[0] / radius, a, b })
}

impl DiskNeumannField {
    pub fn k_max(&self) -> usize {
        self.a.len() - 1
    }

    /// Net boundary flux `int flux = 2 pi R a0`.
    pub fn total_flux(&self) -> f64 {
        2.0 * PI * self.radius * self.a[0]
    }

    pub fn value(&self, p: [f64; 2]) -> f64 {
        let r2 = p[0] * p[0] + p[1] * p[1];
        let z = [p[0] / self.radius, p[1] / self.radius];
        let mut zk = [1.0, 0.0];
        let mut acc = 0.0;
        for k in 1..=self.k_max() {
            zk = [zk[0] * z[0] - zk[1] * z[1], zk[0] * z[1] + zk[1] * z[0]];
            // Re((a - i b) z^k) R / k
            acc += (self.a[k] * zk[0] + self.b[k] * zk[1]) * self.radius / k as f64;
        }
        self.c * r2 / 4.0 + acc
    }

    /// Analytic gradient; the expansion is a polynomial so it is defined everywhere.
    pub fn gradient(&self, p: [f64; 2]) -> [f64; 2] {
        let z = [p[0] / self.radius, p[1] / self.radius];
        let mut zk = [1.0, 0.0];
        let mut f = [0.0, 0.0];
        for k in 1..=self.k_max() {
            let (a, b) = (self.a[k], self.b[k]);
            f[0] += a * zk[0] + b * zk[1];
            f[1] += a * zk[1] - b * zk[0];
            zk = [zk[0] * z[0] - zk[1] * z[1], zk[0] * z[1] + zk[1] * z[0]];
        }
        [f[0] + 0.5 * self.c * p[0], -f[1] + 0.5 * self.c * p[1]]
    }

    /// Analytic Hessian `[[xx, xy], [xy, yy]]`.
    pub fn hessian(&self, p: [f64; 2]) -> [[f64; 2]; 2] {
        let z = [p[0] / self.radius, p[1] / self.radius];
        let mut zk = [1.0, 0.0];
        let mut f = [0.0, 0.0];
        for k in 2..=self.k_max() {
            let (a, b) = (self.a[k], self.b[k]);
            let w = (k - 1) as f64 / self.radius;
            f[0] += w * (a * zk[0] + b * zk[1]);
            f[1] += w * (a * zk[1] - b * zk[0]);
            zk = [zk[0] * z[0] - zk[1] * z[1], zk[0] * z[1] + zk[1] * z[0]];
        }
        let h = 0.5 * self.c;
        [[f[0] + h, -f[1]], [-f[1], -f[0] + h]]
    }

    /// `int_{B_R} |grad Phi|^2`, summed mode by mode.
    pub fn dirichlet_energy(&self) -> f64 {
        let modes: f64 = (1..=self.k_max()).map(|k| (self.a[k].powi(2) + self.b[k].powi(2)) / k as f64).sum();
        PI * self.radius * self.radius * (0.5 * self.a[0] * self.a[0] + modes)
    }

    /// `int_{dB_R} flux^2` of the truncated flux.
    pub fn flux_energy(&self) -> f64 {
        let modes: f64 = (1..=self.k_max()).map(|k| self.a[k].powi(2) + self.b[k].powi(2)).sum();
        PI * self.radius * (2.0 * self.a[0] * self.a[0] + modes)
    }

    /// Mode-wise elliptic bound `sum_k C_k int flux_k^2` with `C_0 = R/4`, `C_k = R/k`.
    pub fn elliptic_bound(&self) -> f64 {
        let r = self.radius;
        let modes: f64 =
            (1..=self.k_max()).map(|k| (r / k as f64) * PI * r * (self.a[k].powi(2) + self.b[k].powi(2))).sum();
        0.25 * r * 2.0 * PI * r * self.a[0] * self.a[0] + modes
    }

    /// Average of `Phi` over the disk; only the radial part contributes.
    pub fn mean_value(&self) -> f64 {
        self.c * self.radius * self.radius / 8.0
    }

    /// The normal derivative of the expansion at angle `theta` on the circle.
    pub fn normal_derivative(&self, theta: f64) -> f64 {
        let p = [self.radius * theta.cos(), self.radius * theta.sin()];
        let g = self.gradient(p);
        g[0] * theta.cos() + g[1] * theta.sin()
    }

    /// Same field with every coefficient multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        DiskNeumannField {
            radius: self.radius,
            c: self.c * s,
            a: self.a.iter().map(|v| v * s).collect(),
            b: self.b.iter().map(|v| v * s).collect(),
        }
    }
}

/// `(grad Phi(0), hess Phi(0)) = ((a1, b1), (c/2) Id + [[a2, b2], [b2, -a2]] / R)`.
pub fn disk_derivatives_at_origin(field: &DiskNeumannField) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a1, b1) = (field.a[1], field.b[1]);
    let (a2, b2) = (field.a[2] / field.radius, field.b[2] / field.radius);
    let h = 0.5 * field.c;
    ([a1, b1], [[h + a2, b2], [b2, h - a2]])
}
