//! Discrete measures on the torus: Poisson samples, grid-discretized
//! Lebesgue measure and restrictions to balls.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::torus::{TorusDomain, TorusPoint};

/// Name of the generator behind [`sample_poisson`]; recorded in run manifests.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64)";

const POISSON_COUNT_CAP: f64 = 2147483648.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureTag {
    Poisson,
    Grid,
    Restriction,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSeed(pub u64);

/// Weighted atoms on a torus. Coordinates are stored flat, `dim` per atom.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub domain: TorusDomain,
    pub tag: MeasureTag,
    coords: Vec<f64>,
    masses: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure, wrapping coordinates into the fundamental cell.
    pub fn new(
        domain: TorusDomain,
        tag: MeasureTag,
        coords: Vec<f64>,
        masses: Vec<f64>,
    ) -> Result<Self> {
        let d = domain.dim;
        if coords.len() != masses.len() * d {
            return invalid(format!(
                "{} coordinates do not match {} atoms in dimension {d}",
                coords.len(),
                masses.len()
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return invalid("non-finite atom coordinate");
        }
        if masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return invalid("atom masses must be positive and finite");
        }
        let coords = coords.into_iter().map(|c| domain.wrap_coord(c)).collect();
        Ok(DiscreteMeasure { domain, tag, coords, masses })
    }

    pub fn empty(domain: TorusDomain, tag: MeasureTag) -> Self {
        DiscreteMeasure { domain, tag, coords: Vec::new(), masses: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.domain.dim;
        &self.coords[i * d..(i + 1) * d]
    }

    /// First two coordinates of atom `i`.
    #[inline]
    pub fn point2(&self, i: usize) -> [f64; 2] {
        let d = self.domain.dim;
        [self.coords[i * d], self.coords[i * d + 1]]
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.masses[i]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.coords.chunks(self.domain.dim).zip(self.masses.iter().copied())
    }

    /// Same atoms with every mass multiplied by `s > 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return invalid("mass scale must be positive");
        }
        let mut out = self.clone();
        out.masses.iter_mut().for_each(|m| *m *= s);
        Ok(out)
    }

    /// Translates every atom by `v` (wrapped).
    pub fn translated(&self, v: &[f64]) -> Self {
        let d = self.domain.dim;
        let mut out = self.clone();
        for (k, c) in out.coords.iter_mut().enumerate() {
            *c = self.domain.wrap_coord(*c + v[k % d]);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&MeasureDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: MeasureDoc = serde_json::from_str(s)?;
        doc.try_into()
    }

    /// Writes the `OTM1` binary form: magic, `d: u32`, `L: f64`,
    /// `count: u64`, then `count` records of `d` coordinates and a mass,
    /// all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"OTM1")?;
        w.write_all(&(self.domain.dim as u32).to_le_bytes())?;
        w.write_all(&self.domain.side.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (p, m) in self.atoms() {
            for c in p {
                w.write_all(&c.to_le_bytes())?;
            }
            w.write_all(&m.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"OTM1" {
            return Err(Error::Format("bad magic, expected OTM1".into()));
        }
        let d = read_u32(&mut r)? as usize;
        let side = read_f64(&mut r)?;
        let count = read_u64(&mut r)? as usize;
        let domain = TorusDomain::new(side, d)?;
        let mut coords = Vec::with_capacity(count * d);
        let mut masses = Vec::with_capacity(count);
        for _ in 0..count {
            for _ in 0..d {
                coords.push(read_f64(&mut r)?);
            }
            masses.push(read_f64(&mut r)?);
        }
        DiscreteMeasure::new(domain, MeasureTag::Custom, coords, masses)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[derive(Serialize, Deserialize)]
struct MeasureDoc {
    domain: TorusDomain,
    tag: MeasureTag,
    atoms: Vec<Vec<f64>>,
}

impl From<&DiscreteMeasure> for MeasureDoc {
    fn from(m: &DiscreteMeasure) -> Self {
        let atoms = m
            .atoms()
            .map(|(p, w)| p.iter().copied().chain(std::iter::once(w)).collect())
            .collect();
        MeasureDoc { domain: m.domain, tag: m.tag, atoms }
    }
}

impl TryFrom<MeasureDoc> for DiscreteMeasure {
    type Error = Error;

    fn try_from(doc: MeasureDoc) -> Result<Self> {
        let d = doc.domain.dim;
        let domain = TorusDomain::new(doc.domain.side, d)?;
        let mut coords = Vec::with_capacity(doc.atoms.len() * d);
        let mut masses = Vec::with_capacity(doc.atoms.len());
        for a in &doc.atoms {
            if a.len() != d + 1 {
                return invalid(format!("atom record has {} entries, expected {}", a.len(), d + 1));
            }
            coords.extend_from_slice(&a[..d]);
            masses.push(a[d]);
        }
        let mut m = DiscreteMeasure::new(domain, doc.tag, coords, masses)?;
        m.tag = doc.tag;
        Ok(m)
    }
}

/// Poisson point process of the given intensity on `dom`, unit mass atoms.
pub fn sample_poisson(dom: &TorusDomain, intensity: f64, seed: RandomSeed) -> Result<DiscreteMeasure> {
    if !(intensity.is_finite() && intensity >= 0.0) {
        return invalid("intensity must be nonnegative");
    }
    let mean = intensity * dom.volume();
    if mean >= POISSON_COUNT_CAP {
        return Err(Error::Resource(format!("expected count {mean} exceeds 2^31")));
    }
    if mean == 0.0 {
        return Ok(DiscreteMeasure::empty(*dom, MeasureTag::Poisson));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed.0);
    let n = Poisson::new(mean)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .sample(&mut rng) as usize;
    let l = dom.side;
    let mut coords = Vec::with_capacity(n * dom.dim);
    for _ in 0..n * dom.dim {
        let u: f64 = rng.random();
        coords.push(dom.wrap_coord(u * l - 0.5 * l));
    }
    DiscreteMeasure::new(*dom, MeasureTag::Poisson, coords, vec![1.0; n])
}

/// `m^d` cell-center atoms of mass `total_mass / m^d`. Atom order is
/// row-major with the last coordinate varying fastest.
pub fn lebesgue_grid(dom: &TorusDomain, m: usize, total_mass: f64) -> Result<DiscreteMeasure> {
    if m == 0 {
        return invalid("grid needs at least one cell per side");
    }
    if !(total_mass.is_finite() && total_mass > 0.0) {
        return invalid("total mass must be positive");
    }
    let d = dom.dim;
    let count = m.checked_pow(d as u32).ok_or_else(|| Error::Resource("grid too large".into()))?;
    let h = dom.side / m as f64;
    let centers: Vec<f64> = (0..m).map(|i| -0.5 * dom.side + (i as f64 + 0.5) * h).collect();
    let mut coords = Vec::with_capacity(count * d);
    let mut idx = vec![0usize; d];
    for _ in 0..count {
        coords.extend(idx.iter().map(|&i| centers[i]));
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < m {
                break;
            }
            idx[k] = 0;
        }
    }
    let w = total_mass / count as f64;
    DiscreteMeasure::new(*dom, MeasureTag::Grid, coords, vec![w; count])
}

/// Atoms strictly inside the periodic ball `B_R(center)`.
pub fn restrict(mu: &DiscreteMeasure, center: &TorusPoint, radius: f64) -> Result<DiscreteMeasure> {
    if center.0.len() != mu.dim() {
        return invalid("center dimension mismatch");
    }
    if !(radius > 0.0 && radius < mu.domain.half()) {
        return invalid(format!("radius {radius} must lie in (0, L/2)"));
    }
    let mut coords = Vec::new();
    let mut masses = Vec::new();
    for (p, w) in mu.atoms() {
        if mu.domain.in_ball(&center.0, radius, p) {
            coords.extend_from_slice(p);
            masses.push(w);
        }
    }
    Ok(DiscreteMeasure { domain: mu.domain, tag: MeasureTag::Restriction, coords, masses })
}
