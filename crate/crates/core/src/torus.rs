//! Periodic geometry of the flat torus `Q_L = [-L/2, L/2)^d`.
//!
//! Points are stored by their representative in the half-open fundamental
//! cell. Displacements between two points are the minimal-norm
//! representative of `y - x` modulo `L Z^d`; a component exactly at
//! `±L/2` is reported as `+L/2`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusDomain {
    #[serde(rename = "L")]
    pub side: f64,
    #[serde(rename = "d")]
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displacement(pub Vec<f64>);

impl TorusPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn origin(dim: usize) -> Self {
        TorusPoint(vec![0.0; dim])
    }
}

impl Displacement {
    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }
}

impl TorusDomain {
    pub fn new(side: f64, dim: usize) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return invalid(format!("side length must be positive and finite, got {side}"));
        }
        if dim == 0 {
            return invalid("dimension must be at least 1");
        }
        Ok(TorusDomain { side, dim })
    }

    pub fn half(&self) -> f64 {
        0.5 * self.side
    }

    /// Volume `L^d` of the torus.
    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Reduces one coordinate into `[-L/2, L/2)`.
    #[inline]
    pub fn wrap_coord(&self, x: f64) -> f64 {
        let l = self.side;
        let h = 0.5 * l;
        let mut r = x - l * ((x + h) / l).floor();
        if r >= h {
            r -= l;
        }
        if r < -h {
            r += l;
        }
        r
    }

    /// Minimal representative of one displacement component, in `[-L/2, L/2]`.
    #[inline]
    pub fn min_image(&self, d: f64) -> f64 {
        let l = self.side;
        let h = 0.5 * l;
        let mut r = d - l * (d / l + 0.5).floor();
        if r < -h {
            r += l;
        }
        if r > h {
            r -= l;
        }
        if r == -h {
            r = h;
        }
        r
    }

    pub fn wrap(&self, p: &[f64]) -> Result<TorusPoint> {
        self.check_dim(p)?;
        if p.iter().any(|v| !v.is_finite()) {
            return invalid("non-finite coordinate");
        }
        Ok(TorusPoint(p.iter().map(|&x| self.wrap_coord(x)).collect()))
    }

    pub fn periodic_displacement(&self, x: &TorusPoint, y: &TorusPoint) -> Result<Displacement> {
        self.check_dim(&x.0)?;
        self.check_dim(&y.0)?;
        let mut out = vec![0.0; self.dim];
        self.displacement_into(&x.0, &y.0, &mut out);
        Ok(Displacement(out))
    }

    pub fn periodic_dist2(&self, x: &TorusPoint, y: &TorusPoint) -> Result<f64> {
        self.check_dim(&x.0)?;
        self.check_dim(&y.0)?;
        Ok(self.dist2(&x.0, &y.0))
    }

    /// Slice form of [`periodic_displacement`](Self::periodic_displacement);
    /// no dimension checks.
    #[inline]
    pub fn displacement_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o = self.min_image(b - a);
        }
    }

    #[inline]
    pub fn dist2(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .map(|(a, b)| {
                let d = self.min_image(b - a);
                d * d
            })
            .sum()
    }

    /// Two-dimensional fast path of [`dist2`](Self::dist2).
    #[inline]
    pub fn dist2_2d(&self, x: [f64; 2], y: [f64; 2]) -> f64 {
        let dx = self.min_image(y[0] - x[0]);
        let dy = self.min_image(y[1] - x[1]);
        dx * dx + dy * dy
    }

    /// Membership in the open ball `B_R(center)` of the minimal representative.
    #[inline]
    pub fn in_ball(&self, center: &[f64], radius: f64, p: &[f64]) -> bool {
        self.dist2(center, p) < radius * radius
    }

    fn check_dim(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return invalid(format!("expected {} coordinates, got {}", self.dim, p.len()));
        }
        Ok(())
    }
}

/// Adds `v` to `p` and wraps the result.
pub fn translate(dom: &TorusDomain, p: &[f64], v: &[f64]) -> Vec<f64> {
    p.iter().zip(v).map(|(a, b)| dom.wrap_coord(a + b)).collect()
}
