//! Regression analysis of what makes a candidate turn coherent: entity
//! overlap and dialogue-act features against mean human ratings.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::corpus::{Tagset, Turn};
use crate::swapgen::{Provenance, RatedInstance};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("need more observations than parameters: n = {n}, parameters = {params}")]
    InsufficientData { n: usize, params: usize },
    #[error("design matrix is rank deficient (column `{0}`)")]
    RankDeficient(String),
    #[error("row {row} has {got} predictors, expected {expected}")]
    Ragged { row: usize, expected: usize, got: usize },
    #[error("{0} responses for {1} rows")]
    LengthMismatch(usize, usize),
    #[error("no ratings for provenance `{0}`")]
    EmptyGroup(&'static str),
    #[error("non-finite value in the data")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnFeatureVector {
    /// Candidate mentions whose head occurs in the context.
    pub overlap_entities: usize,
    pub novel_entities: usize,
    /// One indicator per tagset act, in tagset order.
    pub da_indicators: Vec<u8>,
}

impl TurnFeatureVector {
    pub fn entity_values(&self) -> Vec<f64> {
        vec![self.overlap_entities as f64, self.novel_entities as f64]
    }

    pub fn da_values(&self) -> Vec<f64> {
        self.da_indicators.iter().map(|&b| f64::from(b)).collect()
    }
}

pub const ENTITY_FEATURES: [&str; 2] = ["overlapping_entities", "novel_entities"];

pub fn da_feature_names(tagset: &Tagset) -> Vec<String> {
    tagset.iter().map(|t| format!("da:{t}")).collect()
}

pub fn extract_turn_features(context: &[Turn], candidate: &Turn, tagset: &Tagset) -> TurnFeatureVector {
    let seen: HashSet<String> = context
        .iter()
        .flat_map(|t| t.mentions().map(|m| m.head.to_lowercase()))
        .collect();
    let total = candidate.mentions().count();
    let overlap = candidate
        .mentions()
        .filter(|m| seen.contains(&m.head.to_lowercase()))
        .count();
    let acts: HashSet<&str> = candidate.das().map(|d| d.as_str()).collect();
    TurnFeatureVector {
        overlap_entities: overlap,
        novel_entities: total - overlap,
        da_indicators: tagset.iter().map(|t| u8::from(acts.contains(t.as_str()))).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t: f64,
    pub p: f64,
}

impl Coefficient {
    pub fn stars(&self) -> &'static str {
        significance_stars(self.p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// Intercept first.
    pub coefficients: Vec<Coefficient>,
    pub r2: f64,
    pub adj_r2: f64,
    pub n: usize,
    /// Predictors, excluding the intercept.
    pub p: usize,
    pub residuals: Vec<f64>,
}

pub fn adjusted_r2(r2: f64, n: usize, p: usize) -> f64 {
    1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - p as f64 - 1.0)
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom:
/// `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p <= 0.05 {
        "*"
    } else {
        ""
    }
}

/// Least squares with an intercept, solved through a QR decomposition.
/// `names` labels the predictor columns of `x`.
pub fn fit_ols(x: &[Vec<f64>], y: &[f64], names: &[String]) -> Result<OlsFit, AnalysisError> {
    let n = x.len();
    if y.len() != n {
        return Err(AnalysisError::LengthMismatch(y.len(), n));
    }
    let p = names.len();
    for (row, r) in x.iter().enumerate() {
        if r.len() != p {
            return Err(AnalysisError::Ragged {
                row,
                expected: p,
                got: r.len(),
            });
        }
    }
    if n <= p + 1 {
        return Err(AnalysisError::InsufficientData { n, params: p + 1 });
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let k = p + 1;
    let a = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
    let yv = DVector::from_column_slice(y);
    let qr = a.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|j| a.column(j).norm()).fold(0.0f64, f64::max).max(1.0);
    for j in 0..k {
        if r[(j, j)].abs() <= 1e-10 * scale {
            let name = if j == 0 { "(intercept)".to_string() } else { names[j - 1].clone() };
            return Err(AnalysisError::RankDeficient(name));
        }
    }
    let qty = qr.q().transpose() * &yv;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| AnalysisError::RankDeficient("(triangular solve)".into()))?;
    let fitted = &a * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let r2 = if sst > 0.0 { (1.0 - ssr / sst).clamp(0.0, 1.0) } else { 0.0 };
    let df = (n - k) as f64;
    let sigma2 = ssr / df;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| AnalysisError::RankDeficient("(inverse)".into()))?;
    let cov_diag: Vec<f64> = (0..k).map(|j| r_inv.row(j).iter().map(|v| v * v).sum()).collect();
    let coefficients = (0..k)
        .map(|j| {
            let estimate = beta[j];
            let std_error = (sigma2 * cov_diag[j]).sqrt();
            let t = if std_error > 0.0 {
                estimate / std_error
            } else if estimate.abs() <= 1e-12 * (1.0 + mean.abs()) {
                0.0
            } else {
                f64::INFINITY.copysign(estimate)
            };
            Coefficient {
                name: if j == 0 { "(intercept)".into() } else { names[j - 1].clone() },
                estimate,
                std_error,
                t,
                p: t_two_sided_p(t, df),
            }
        })
        .collect();
    Ok(OlsFit {
        coefficients,
        r2,
        adj_r2: adjusted_r2(r2, n, p),
        n,
        p,
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Entities,
    Das,
    All,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 3] = [FeatureGroup::Entities, FeatureGroup::Das, FeatureGroup::All];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Entities => "entities",
            FeatureGroup::Das => "das",
            FeatureGroup::All => "all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub group: FeatureGroup,
    pub fit: OlsFit,
    /// Predictors left out because they never vary.
    pub dropped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MccReport {
    pub rows: usize,
    pub groups: Vec<GroupFit>,
}

/// One regression per feature group, with one row per rated candidate and
/// its mean rating as the response.
/// Columns that are linearly independent of the intercept and of the columns
/// kept before them, in order. Constant columns and, for example, act
/// indicators that always sum to one are dropped this way.
fn independent_columns(x: &[Vec<f64>], p: usize) -> Vec<usize> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    let mut keep = Vec::new();
    for j in 0..p {
        let mut v: Vec<f64> = x.iter().map(|r| r[j]).collect();
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= d * c);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 * norm0.max(1.0) {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
            keep.push(j);
        }
    }
    keep
}

pub fn mcc_report(instances: &[RatedInstance], tagset: &Tagset) -> Result<MccReport, AnalysisError> {
    let rows: Vec<(TurnFeatureVector, f64)> = instances
        .par_iter()
        .flat_map_iter(|inst| {
            inst.candidates
                .iter()
                .map(|c| (extract_turn_features(&inst.context, &c.turn, tagset), c.mean_rating))
        })
        .collect();
    let y: Vec<f64> = rows.iter().map(|(_, r)| *r).collect();
    let da_names = da_feature_names(tagset);
    let mut groups = Vec::new();
    for group in FeatureGroup::ALL {
        let (names, x): (Vec<String>, Vec<Vec<f64>>) = match group {
            FeatureGroup::Entities => (
                ENTITY_FEATURES.iter().map(|s| s.to_string()).collect(),
                rows.iter().map(|(f, _)| f.entity_values()).collect(),
            ),
            FeatureGroup::Das => (da_names.clone(), rows.iter().map(|(f, _)| f.da_values()).collect()),
            FeatureGroup::All => {
                let mut n: Vec<String> = ENTITY_FEATURES.iter().map(|s| s.to_string()).collect();
                n.extend(da_names.iter().cloned());
                let x = rows
                    .iter()
                    .map(|(f, _)| {
                        let mut v = f.entity_values();
                        v.extend(f.da_values());
                        v
                    })
                    .collect();
                (n, x)
            }
        };
        let keep = independent_columns(&x, names.len());
        let dropped = (0..names.len())
            .filter(|j| !keep.contains(j))
            .map(|j| names[j].clone())
            .collect();
        let kept_names: Vec<String> = keep.iter().map(|&j| names[j].clone()).collect();
        let kept_x: Vec<Vec<f64>> = x.iter().map(|r| keep.iter().map(|&j| r[j]).collect()).collect();
        let fit = fit_ols(&kept_x, &y, &kept_names)?;
        groups.push(GroupFit { group, fit, dropped });
    }
    Ok(MccReport {
        rows: rows.len(),
        groups,
    })
}

impl MccReport {
    /// `group  name  coefficient  se  t  p  stars`, one row per coefficient.
    pub fn coefficients_tsv(&self) -> String {
        let mut out = String::from("group\tname\tcoefficient\tse\tt\tp\tstars\n");
        for g in &self.groups {
            for c in &g.fit.coefficients {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{:.6}\t{:.6}\t{:.4}\t{:.6}\t{}",
                    g.group.name(),
                    c.name,
                    c.estimate,
                    c.std_error,
                    c.t,
                    c.p,
                    c.stars()
                );
            }
        }
        out
    }

    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "rows": self.rows,
            "groups": self.groups.iter().map(|g| serde_json::json!({
                "group": g.group.name(),
                "r2": g.fit.r2,
                "adj_r2": g.fit.adj_r2,
                "predictors": g.fit.p,
                "dropped": g.dropped,
            })).collect::<Vec<_>>(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub provenance: Provenance,
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

pub fn group_stats(instances: &[RatedInstance]) -> Result<Vec<GroupStat>, AnalysisError> {
    [Provenance::Original, Provenance::Internal, Provenance::External]
        .into_iter()
        .map(|prov| {
            let v: Vec<f64> = instances
                .iter()
                .flat_map(|i| i.candidates.iter())
                .filter(|c| c.provenance == prov)
                .map(|c| c.mean_rating)
                .collect();
            if v.is_empty() {
                return Err(AnalysisError::EmptyGroup(prov.as_str()));
            }
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
            Ok(GroupStat {
                provenance: prov,
                n: v.len(),
                mean,
                sd: var.sqrt(),
            })
        })
        .collect()
}
