use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{ExperimentConfig, ExperimentKind};
use super::store::{read_json, sha256_hex, write_atomic};
use crate::error::Result;
use crate::eulerian::{linf_check, local_stats};
use crate::field::ScalarField;
use crate::harmonic::{harmonic_approximation, sine_family_plan};
use crate::matching::{
    averaged_displacement, campanato_cascade, cells_per_radius, data_profile, linf_microscopic,
    required_c_data, residual_vs_gradient, rstar_from_profile, run_matching, sample_nonempty, standard_centers, CascadeOptions,
    Matching, MatchingOptions, MatchingRecord,
};
use crate::measure::{lebesgue_grid, DiscreteMeasure};
use crate::regularity::{
    campanato_decay, exponential_harmonic_map, map_excess, map_neumann, one_step, symmetric_linear_map, SampledMap,
};
use crate::torus::{TorusDomain, TorusPoint};
use crate::transport::{CostKind, TransportPlan};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub kind: ExperimentKind,
    #[serde(rename = "L")]
    pub side: f64,
    /// Seed for random cells, parameter index otherwise.
    pub index: u64,
    pub label: String,
}

impl CellKey {
    pub fn file_name(&self) -> String {
        format!("{}-L{}-{}.json", self.kind.name(), self.side, self.label)
    }
}

/// Per-cell statistics (pooled by name over cells of the same `L`) and details.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellOutput {
    pub stats: BTreeMap<String, Vec<f64>>,
    pub detail: Value,
}

impl CellOutput {
    fn push(&mut self, name: impl Into<String>, v: f64) {
        self.stats.entry(name.into()).or_default().push(v);
    }
}

/// Every cell of the config, in a fixed order.
pub fn enumerate_cells(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let mut out = Vec::new();
    let seeds = || (0..cfg.seeds.count).map(|i| cfg.seeds.base + i);
    match cfg.kind {
        ExperimentKind::MatchingScaling | ExperimentKind::Cascade | ExperimentKind::RstarTail => {
            for &side in &cfg.sides {
                for s in seeds() {
                    out.push(CellKey { kind: cfg.kind, side, index: s, label: format!("s{s}") });
                }
            }
        }
        ExperimentKind::HarmonicApprox => {
            for &side in &cfg.sides {
                for (i, d) in cfg.harmonic.deltas.iter().enumerate() {
                    out.push(CellKey { kind: cfg.kind, side, index: i as u64, label: format!("delta{d}") });
                }
            }
        }
        ExperimentKind::EpsregDecay => {
            for (i, d) in cfg.epsreg.deltas.iter().enumerate() {
                out.push(CellKey { kind: cfg.kind, side: 1.0, index: i as u64, label: format!("smooth{d}") });
            }
            let n = cfg.epsreg.deltas.len();
            for (i, [p, q]) in cfg.epsreg.affine.iter().enumerate() {
                out.push(CellKey { kind: cfg.kind, side: 1.0, index: (n + i) as u64, label: format!("affine{p}_{q}") });
            }
        }
    }
    out
}

/// Hash of everything a cell's output depends on.
pub fn cell_input_hash(cfg: &ExperimentConfig, key: &CellKey) -> String {
    let section = match cfg.kind {
        ExperimentKind::MatchingScaling => json!({ "matching": cfg.matching, "solver": cfg.solver }),
        ExperimentKind::Cascade => json!({ "cascade": cfg.cascade, "solver": cfg.solver }),
        ExperimentKind::RstarTail => json!({ "rstar": cfg.rstar }),
        ExperimentKind::HarmonicApprox => json!({ "harmonic": cfg.harmonic }),
        ExperimentKind::EpsregDecay => json!({ "epsreg": cfg.epsreg }),
    };
    let v = json!({ "version": CODE_VERSION, "key": key, "resolution": cfg.resolution, "section": section });
    sha256_hex(v.to_string().as_bytes())
}

pub fn matching_options(cfg: &ExperimentConfig, side: f64) -> MatchingOptions {
    let mut o = MatchingOptions::for_side(side);
    o.m = cfg.resolution.m_factor * side.round() as usize;
    if let Some(f) = cfg.resolution.field_m {
        o.field_m = f;
    }
    o.solver = cfg.solver.options();
    o
}

/// Solved matching for `(L, seed)`, reusing the cache directory when a
/// valid entry exists.
pub fn cached_matching(cache: &Path, side: f64, seed: u64, opts: &MatchingOptions) -> Result<Matching> {
    let id = json!({
        "version": CODE_VERSION,
        "L": side,
        "seed": seed,
        "m": opts.m,
        "field_m": opts.field_m,
        "solver": [opts.solver.dense_limit, opts.solver.arcs_per_row, opts.solver.max_rounds],
    });
    let stem = format!("match-L{side}-s{seed}-{}", &sha256_hex(id.to_string().as_bytes())[..16]);
    let paths = ["json", "mu", "pairs", "field"].map(|ext| cache.join(format!("{stem}.{ext}")));
    if let Ok(m) = load_matching(&paths, opts) {
        return Ok(m);
    }
    let mut m = run_matching(side, seed, opts)?;
    fs::create_dir_all(cache)?;
    let mut buf = Vec::new();
    m.plan.src.write_binary(&mut buf)?;
    write_atomic(&paths[1], &buf)?;
    buf.clear();
    m.plan.write_binary(&mut buf)?;
    write_atomic(&paths[2], &buf)?;
    buf.clear();
    m.phi.write_binary(&mut buf)?;
    write_atomic(&paths[3], &buf)?;
    m.record.plan_file = Some(format!("{stem}.pairs"));
    m.record.field_file = Some(format!("{stem}.field"));
    write_atomic(&paths[0], serde_json::to_string_pretty(&m.record)?.as_bytes())?;
    // fresh and cached cells must see bit-identical inputs
    load_matching(&paths, opts)
}

fn load_matching(paths: &[std::path::PathBuf; 4], opts: &MatchingOptions) -> Result<Matching> {
    let record: MatchingRecord = read_json(&paths[0])?;
    let mu = DiscreteMeasure::read_binary(fs::File::open(&paths[1]).map(std::io::BufReader::new)?)?;
    let (pairs, _) = TransportPlan::read_pairs_binary(fs::File::open(&paths[2]).map(std::io::BufReader::new)?)?;
    let mut phi = ScalarField::read_binary(fs::File::open(&paths[3]).map(std::io::BufReader::new)?)?;
    phi.prepare();
    if record.m != opts.m || record.field_m != opts.field_m || mu.len() != record.n {
        return Err(crate::error::Error::Format("cache entry does not match the request".into()));
    }
    let tgt = lebesgue_grid(&mu.domain, opts.m, mu.total_mass())?;
    let plan = TransportPlan::from_pairs(Arc::new(mu), Arc::new(tgt), pairs, CostKind::Periodic, "network-simplex")?;
    Ok(Matching { record, plan, phi })
}

/// Runs one cell.
pub fn run_cell(cfg: &ExperimentConfig, key: &CellKey) -> Result<CellOutput> {
    match key.kind {
        ExperimentKind::MatchingScaling => matching_scaling_cell(cfg, key),
        ExperimentKind::Cascade => cascade_cell(cfg, key),
        ExperimentKind::RstarTail => rstar_cell(cfg, key),
        ExperimentKind::HarmonicApprox => harmonic_cell(cfg, key),
        ExperimentKind::EpsregDecay => epsreg_cell(cfg, key),
    }
}

fn matching_scaling_cell(cfg: &ExperimentConfig, key: &CellKey) -> Result<CellOutput> {
    let start = Instant::now();
    let m = cached_matching(&cfg.cache_dir(), key.side, key.index, &matching_options(cfg, key.side))?;
    let mut out = CellOutput::default();
    let r = &m.record;
    out.push("w2_per_area", r.w2_per_area);
    out.push("n", r.n as f64);
    out.push("discretization_bound", r.discretization_bound);
    out.push("field_residual", r.field_residual);
    let t = key.side.ln().powf(cfg.matching.smoothing_power);
    let r0 = residual_vs_gradient(&m, 0.0)?;
    let rt = residual_vs_gradient(&m, t)?;
    out.push("residual_t0", r0.residual);
    out.push("residual_t0_per_log", r0.per_log);
    out.push("residual_t", rt.residual);
    out.push("residual_t_per_log", rt.per_log);
    let mut averaged = Vec::new();
    for c in standard_centers(key.side) {
        for &radius in cfg.matching.radii.iter().filter(|&&r| r <= key.side / 4.0) {
            let a = averaged_displacement(&m, c, radius)?;
            out.push(format!("gap_R{radius}"), a.gap);
            out.push(format!("gap_norm_R{radius}"), a.normalized);
            averaged.push(json!({ "center": c, "result": a }));
        }
    }
    out.detail = json!({
        "record": m.record,
        "smoothing_time": t,
        "residual_t0": r0,
        "residual_t": rt,
        "averaged": averaged,
        "analysis_seconds": start.elapsed().as_secs_f64(),
    });
    Ok(out)
}

fn cascade_cell(cfg: &ExperimentConfig, key: &CellKey) -> Result<CellOutput> {
    let m = cached_matching(&cfg.cache_dir(), key.side, key.index, &matching_options(cfg, key.side))?;
    let c = &cfg.cascade;
    let opts = CascadeOptions {
        n_angle: cfg.resolution.angular_bins,
        k_max: cfg.resolution.k_max,
        candidates: c.candidates,
        e_cap: c.e_cap,
    };
    let mut out = CellOutput::default();
    let mut details = Vec::new();
    for center in standard_centers(key.side) {
        let tp = TorusPoint(center.to_vec());
        let trace = campanato_cascade(&m, center, c.r_target, &opts)?;
        for s in &trace.scales {
            out.push(format!("energy_R{}", s.radius), s.energy_stat);
            out.push(format!("energy_raw_R{}", s.radius), s.energy_stat_raw);
            out.push(format!("grad_R{}", s.radius), s.grad_stat);
        }
        let r = trace.final_radius;
        out.push("h_gap", trace.h_gap);
        out.push("h_gap_norm", trace.h_gap * r / r.ln());
        out.push("h2_per_log", (trace.h[0].powi(2) + trace.h[1].powi(2)) / key.side.ln());
        out.push("telescoping_exact", if trace.telescoping_exact { 1.0 } else { 0.0 });
        out.push("truncated", if trace.truncated.is_some() { 1.0 } else { 0.0 });
        let ls = local_stats(&m.plan, &tp, c.linf_radius, cells_per_radius(cfg.resolution.m_local, 6.0 * c.linf_radius))?;
        let linf = linf_check(&m.plan, &tp, c.linf_radius, ls.e, ls.d)?;
        out.push("linf_ratio", linf.ratio);
        let rstar = rstar_from_profile(&data_profile(&m.plan.src, &tp, cfg.resolution.m_local)?, c.c_data);
        out.push("rstar_finite", if rstar.is_some() { 1.0 } else { 0.0 });
        let micro = match rstar {
            Some(rs) => {
                let mb = linf_microscopic(&m, &trace, rs)?;
                out.push("rstar", rs);
                out.push("micro_ratio", mb.ratio);
                out.push("micro_max_dev", mb.max_dev);
                Some(mb)
            }
            None => None,
        };
        details.push(json!({ "center": center, "trace": trace, "local": ls, "linf": linf, "micro": micro }));
    }
    out.detail = json!({ "record": m.record, "centers": details });
    Ok(out)
}

fn rstar_cell(cfg: &ExperimentConfig, key: &CellKey) -> Result<CellOutput> {
    let dom = TorusDomain::new(key.side, 2)?;
    let (mu, _) = sample_nonempty(&dom, key.index)?;
    let mut out = CellOutput::default();
    let mut details = Vec::new();
    for center in standard_centers(key.side) {
        let profile = data_profile(&mu, &TorusPoint(center.to_vec()), cfg.resolution.m_local)?;
        let need = required_c_data(&profile, cfg.rstar.calibration_radius);
        let rstar = rstar_from_profile(&profile, cfg.rstar.c_data);
        out.push("required_c", need);
        out.push("rstar_finite", if rstar.is_some() { 1.0 } else { 0.0 });
        for &(r, _) in &profile {
            out.push(format!("tail_gt_R{r}"), if rstar.is_none_or(|s| s > r) { 1.0 } else { 0.0 });
        }
        details.push(json!({ "center": center, "profile": profile, "rstar": rstar, "required_c": need }));
    }
    out.detail = json!({ "n": mu.len(), "centers": details });
    Ok(out)
}

fn harmonic_cell(cfg: &ExperimentConfig, key: &CellKey) -> Result<CellOutput> {
    let h = &cfg.harmonic;
    let delta = h.deltas[key.index as usize];
    let plan = sine_family_plan(key.side, h.m, delta)?;
    let mut out = CellOutput::default();
    let (mut res, mut e) = (0.0, 0.0);
    let mut reports = Vec::new();
    for &x1 in &h.centers {
        let r = harmonic_approximation(&plan, &TorusPoint(vec![x1, 0.0]), h.candidates, None)?;
        res += r.residual;
        e += r.e;
        out.push(format!("defect_delta{delta}"), r.orthogonality.identity_defect());
        reports.push(json!({ "center": [x1, 0.0], "report": r }));
    }
    out.push(format!("ratio_delta{delta}"), res / e);
    out.push(format!("residual_delta{delta}"), res);
    out.push(format!("energy_delta{delta}"), e);
    out.detail = json!({ "delta": delta, "m": h.m, "max_displacement": plan.max_displacement(), "reports": reports });
    Ok(out)
}

fn epsreg_cell(cfg: &ExperimentConfig, key: &CellKey) -> Result<CellOutput> {
    let e = &cfg.epsreg;
    let mut out = CellOutput::default();
    let i = key.index as usize;
    if i < e.deltas.len() {
        let delta = e.deltas[i];
        let t = SampledMap::new(exponential_harmonic_map(delta, e.length), 1.0, e.samples)?;
        let trace = campanato_decay(&t, e.theta, e.alpha, e.steps, e.epsilon)?;
        for r in &trace.records {
            out.push(format!("{}_excess_k{}", key.label, r.k), r.excess);
            if let Some(q) = r.ratio {
                out.push(format!("{}_ratio_k{}", key.label, r.k), q);
            }
        }
        out.push(format!("{}_completed", key.label), if trace.stopped.is_none() { 1.0 } else { 0.0 });
        out.detail = json!({ "delta": delta, "trace": trace });
    } else {
        let [p, q] = e.affine[i - e.deltas.len()];
        let t = SampledMap::new(symmetric_linear_map(p, q), 1.0, e.samples)?;
        let before = map_excess(&t, 1.0)?;
        let phi = map_neumann(&t, cfg.resolution.angular_bins, cfg.resolution.k_max)?;
        let step = one_step(&t, &phi, 1.0)?;
        let after = map_excess(&step.map, step.map.scale)?;
        out.push(format!("{}_excess_before", key.label), before);
        out.push(format!("{}_excess_after", key.label), after);
        out.push(format!("{}_reduction", key.label), before / after);
        out.detail = json!({ "p": p, "q": q, "a": step.a, "a_norm": step.a_norm, "before": before, "after": after });
    }
    Ok(out)
}
