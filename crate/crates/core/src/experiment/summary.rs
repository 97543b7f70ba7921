use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cells::{CellKey, CellOutput};
use super::store::sha256_hex;
use crate::error::{Error, Result};
use crate::field::csv_err;

pub const BOOTSTRAP_RESAMPLES: usize = 2000;

/// One `(L, statistic)` aggregate over the seed ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kind: String,
    #[serde(rename = "L")]
    pub side: f64,
    pub statistic: String,
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub median: f64,
    pub p95: f64,
    pub p99: f64,
    pub min: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn seeded_rng(tag: &str) -> ChaCha8Rng {
    let h = sha256_hex(tag.as_bytes());
    ChaCha8Rng::seed_from_u64(u64::from_str_radix(&h[..16], 16).unwrap_or(0))
}

/// Percentile bootstrap interval (95%) for the mean.
pub fn bootstrap_mean_ci(values: &[f64], rng: &mut impl Rng, resamples: usize) -> (f64, f64) {
    let n = values.len();
    if n < 2 {
        let v = values.first().copied().unwrap_or(f64::NAN);
        return (v, v);
    }
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    (quantile(&means, 0.025), quantile(&means, 0.975))
}

pub fn describe(kind: &str, side: f64, statistic: &str, values: &[f64]) -> SummaryRow {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let n = v.len();
    let mean = if n == 0 { f64::NAN } else { v.iter().sum::<f64>() / n as f64 };
    let sd = if n < 2 { 0.0 } else { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
    let mut rng = seeded_rng(&format!("{kind}|{side}|{statistic}"));
    let (ci_lo, ci_hi) = bootstrap_mean_ci(&v, &mut rng, BOOTSTRAP_RESAMPLES);
    v.sort_by(f64::total_cmp);
    SummaryRow {
        kind: kind.to_string(),
        side,
        statistic: statistic.to_string(),
        count: n,
        mean,
        sd,
        ci_lo,
        ci_hi,
        median: quantile(&v, 0.5),
        p95: quantile(&v, 0.95),
        p99: quantile(&v, 0.99),
        min: v.first().copied().unwrap_or(f64::NAN),
        max: v.last().copied().unwrap_or(f64::NAN),
    }
}

/// Pools each statistic over the cells of every `L`, in cell order.
pub fn summarize(cells: &[(CellKey, CellOutput)]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, u64, String), Vec<f64>> = BTreeMap::new();
    for (key, out) in cells {
        for (name, vals) in &out.stats {
            // f64 bit order matches numeric order for the positive sides used here
            groups.entry((key.kind.name().to_string(), key.side.to_bits(), name.clone())).or_default().extend(vals);
        }
    }
    groups.iter().map(|((kind, side, name), v)| describe(kind, f64::from_bits(*side), name, v)).collect()
}

const HEADER: [&str; 13] =
    ["kind", "L", "statistic", "count", "mean", "sd", "ci_lo", "ci_hi", "median", "p95", "p99", "min", "max"];

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(&HEADER).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.kind.clone(),
            r.side.to_string(),
            r.statistic.clone(),
            r.count.to_string(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
            r.median.to_string(),
            r.p95.to_string(),
            r.p99.to_string(),
            r.min.to_string(),
            r.max.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(r: R) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Format("unexpected summary CSV header".into()));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| Error::Format(format!("column {}: {e}", HEADER[i])))
        };
        rows.push(SummaryRow {
            kind: rec[0].to_string(),
            side: num(1)?,
            statistic: rec[2].to_string(),
            count: rec[3].parse().map_err(|e| Error::Format(format!("count: {e}")))?,
            mean: num(4)?,
            sd: num(5)?,
            ci_lo: num(6)?,
            ci_hi: num(7)?,
            median: num(8)?,
            p95: num(9)?,
            p99: num(10)?,
            min: num(11)?,
            max: num(12)?,
        });
    }
    Ok(rows)
}

/// Row for `(L, statistic)`, if present.
pub fn find_row<'a>(rows: &'a [SummaryRow], side: f64, statistic: &str) -> Option<&'a SummaryRow> {
    rows.iter().find(|r| r.side == side && r.statistic == statistic)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_and_round_trip() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 1.0), 4.0);
        let row = describe("k", 8.0, "x", &[1.0, 2.0, f64::NAN, 3.0]);
        assert_eq!(row.count, 3);
        assert!(row.ci_lo <= row.mean && row.mean <= row.ci_hi);
        let mut buf = Vec::new();
        write_summary_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        assert_eq!(read_summary_csv(&buf[..]).unwrap(), vec![row]);
    }
}
