use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::summary::{quantile, seeded_rng, SummaryRow};
use crate::error::{invalid, Result};

/// Limit of `E[W^2 / L^2] / log L` in two dimensions.
pub const TARGET_SLOPE: f64 = 1.0 / (2.0 * std::f64::consts::PI);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitModel {
    /// `y = a log L + b`.
    Log,
    /// `y = a L^p`, fitted on logarithms; the slope is `p`.
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub statistic: String,
    pub slope: f64,
    pub slope_ci: [f64; 2],
    pub intercept: f64,
    pub intercept_ci: [f64; 2],
    /// Weighted residual norm of the fitted line.
    pub residual_norm: f64,
    /// `slope - 1/(2 pi)` for the log model.
    pub distance_to_target: Option<f64>,
    pub points: Vec<[f64; 3]>,
}

/// Weighted least squares line `y = a x + b`; weights `1/se^2`, or equal when any `se` is zero.
pub fn wls(x: &[f64], y: &[f64], se: &[f64]) -> (f64, f64, f64) {
    let equal = se.iter().any(|&s| !(s > 0.0));
    let w: Vec<f64> = se.iter().map(|&s| if equal { 1.0 } else { 1.0 / (s * s) }).collect();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let res = x.iter().zip(y).zip(&w).map(|((a, c), b)| b * (c - slope * a - intercept).powi(2)).sum::<f64>().sqrt();
    (slope, intercept, res)
}

/// Fits the model to `(L, mean, standard error)` points with a parametric bootstrap.
pub fn fit_points(sides: &[f64], means: &[f64], ses: &[f64], model: FitModel, statistic: &str) -> Result<FitResult> {
    let mut distinct = sides.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 || sides.len() != means.len() || sides.len() != ses.len() {
        return invalid("a fit needs at least three distinct L values");
    }
    let (x, y, s): (Vec<f64>, Vec<f64>, Vec<f64>) = match model {
        FitModel::Log => (sides.iter().map(|l| l.ln()).collect(), means.to_vec(), ses.to_vec()),
        FitModel::Power => {
            if means.iter().any(|&m| !(m > 0.0)) {
                return invalid("the power model needs positive means");
            }
            (
                sides.iter().map(|l| l.ln()).collect(),
                means.iter().map(|m| m.ln()).collect(),
                ses.iter().zip(means).map(|(s, m)| s / m).collect(),
            )
        }
    };
    let (slope, intercept, residual_norm) = wls(&x, &y, &s);
    let mut rng = seeded_rng(&format!("fit|{statistic}"));
    let mut slopes = Vec::with_capacity(super::summary::BOOTSTRAP_RESAMPLES);
    let mut intercepts = Vec::with_capacity(super::summary::BOOTSTRAP_RESAMPLES);
    for _ in 0..super::summary::BOOTSTRAP_RESAMPLES {
        let yb: Vec<f64> = y
            .iter()
            .zip(&s)
            .map(|(v, e)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + e * z
            })
            .collect();
        let (a, b, _) = wls(&x, &yb, &s);
        slopes.push(a);
        intercepts.push(b);
    }
    slopes.sort_by(f64::total_cmp);
    intercepts.sort_by(f64::total_cmp);
    Ok(FitResult {
        model,
        statistic: statistic.to_string(),
        slope,
        slope_ci: [quantile(&slopes, 0.025), quantile(&slopes, 0.975)],
        intercept,
        intercept_ci: [quantile(&intercepts, 0.025), quantile(&intercepts, 0.975)],
        residual_norm,
        distance_to_target: (model == FitModel::Log).then(|| slope - TARGET_SLOPE),
        points: sides.iter().zip(means).zip(ses).map(|((a, b), c)| [*a, *b, *c]).collect(),
    })
}

/// Fits the ensemble means of `statistic` against `log L`; standard errors are `sd / sqrt(count)`.
pub fn fit_prefactor(rows: &[SummaryRow], statistic: &str, model: FitModel) -> Result<FitResult> {
    let sel: Vec<&SummaryRow> = rows.iter().filter(|r| r.statistic == statistic && r.count > 0).collect();
    let sides: Vec<f64> = sel.iter().map(|r| r.side).collect();
    let means: Vec<f64> = sel.iter().map(|r| r.mean).collect();
    let ses: Vec<f64> = sel.iter().map(|r| r.sd / (r.count as f64).sqrt()).collect();
    fit_points(&sides, &means, &ses, model, statistic)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_log_line() {
        let sides = [8.0, 16.0, 32.0, 64.0];
        let means: Vec<f64> = sides.iter().map(|l: &f64| 0.1592 * l.ln()).collect();
        let f = fit_points(&sides, &means, &[0.0; 4], FitModel::Log, "w").unwrap();
        assert!((f.slope - 0.1592).abs() < 1e-12 && f.intercept.abs() < 1e-12 && f.residual_norm < 1e-12);
        assert!(fit_points(&sides[..2], &means[..2], &[0.0; 2], FitModel::Log, "w").is_err());
    }
}
