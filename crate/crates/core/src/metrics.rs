//! Ranking metrics, random baselines and inter-annotator agreement.
//!
//! Every rank-based metric uses the pessimistic tie rule: among candidates
//! with the same predicted score, more relevant candidates are placed after
//! less relevant ones.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty ranked list")]
    Empty,
    #[error("no relevant candidate")]
    NoRelevant,
    #[error("k = {k} outside 1..={n}")]
    BadK { k: usize, n: usize },
    #[error("all gains are zero")]
    ZeroGain,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no negatives")]
    NoNegatives,
    #[error("rating {0} outside the category set")]
    BadCategory(u8),
    #[error("need at least {0}")]
    TooFew(&'static str),
    #[error("zero expected disagreement with non-diagonal observations")]
    DegenerateKappa,
    #[error("rater `{0}` has zero variance")]
    ZeroVariance(String),
}

/// Indices of `scores` in predicted order (descending score, pessimistic ties).
pub fn pessimistic_order(scores: &[f64], relevance: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| relevance[a].partial_cmp(&relevance[b]).unwrap_or(Ordering::Equal))
            .then_with(|| a.cmp(&b))
    });
    idx
}

/// Relevance values in predicted order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub relevance: Vec<f64>,
}

impl RankedList {
    pub fn new(relevance: Vec<f64>) -> Result<Self, MetricError> {
        if relevance.is_empty() {
            return Err(MetricError::Empty);
        }
        Ok(RankedList { relevance })
    }

    pub fn from_scores(scores: &[f64], relevance: &[f64]) -> Result<Self, MetricError> {
        if scores.len() != relevance.len() {
            return Err(MetricError::LengthMismatch(scores.len(), relevance.len()));
        }
        let order = pessimistic_order(scores, relevance);
        Self::new(order.into_iter().map(|i| relevance[i]).collect())
    }

    pub fn len(&self) -> usize {
        self.relevance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevance.is_empty()
    }

    fn first_relevant(&self) -> Result<usize, MetricError> {
        self.relevance
            .iter()
            .position(|&r| r > 0.0)
            .ok_or(MetricError::NoRelevant)
    }
}

/// Fraction of negatives scored strictly below the positive.
pub fn pairwise_accuracy(pos_score: f64, neg_scores: &[f64]) -> Result<f64, MetricError> {
    if neg_scores.is_empty() {
        return Err(MetricError::NoNegatives);
    }
    let wins = neg_scores.iter().filter(|&&n| pos_score > n).count();
    Ok(wins as f64 / neg_scores.len() as f64)
}

pub fn mrr(ranked: &RankedList) -> Result<f64, MetricError> {
    Ok(1.0 / (ranked.first_relevant()? + 1) as f64)
}

pub fn recall_at_k(ranked: &RankedList, k: usize) -> Result<f64, MetricError> {
    if k == 0 || k > ranked.len() {
        return Err(MetricError::BadK { k, n: ranked.len() });
    }
    Ok(if ranked.relevance[..k].iter().any(|&r| r > 0.0) {
        1.0
    } else {
        0.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Gain {
    /// gain = rating
    #[default]
    Linear,
    /// gain = 2^rating − 1
    Exponential,
}

impl Gain {
    fn apply(self, r: f64) -> f64 {
        match self {
            Gain::Linear => r,
            Gain::Exponential => 2f64.powf(r) - 1.0,
        }
    }
}

fn dcg(gains: &[f64]) -> f64 {
    gains
        .iter()
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum()
}

/// DCG of the predicted order over DCG of the rating-sorted order.
pub fn ndcg(ranked: &RankedList, gain: Gain) -> Result<f64, MetricError> {
    let gains: Vec<f64> = ranked.relevance.iter().map(|&r| gain.apply(r)).collect();
    let mut ideal = gains.clone();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let idcg = dcg(&ideal);
    if idcg <= 0.0 {
        return Err(MetricError::ZeroGain);
    }
    Ok(dcg(&gains) / idcg)
}

/// Candidates whose rating equals the instance maximum are relevant (1.0).
pub fn dynamic_relevance(ratings: &[f64]) -> Vec<f64> {
    let max = ratings.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ratings
        .iter()
        .map(|&r| if r == max { 1.0 } else { 0.0 })
        .collect()
}

/// Accuracy over candidate pairs with different ratings: a pair is correct
/// when the better-rated candidate has a strictly higher score. `None` when
/// every rating is identical.
pub fn rated_pairwise_accuracy(scores: &[f64], ratings: &[f64]) -> Option<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for i in 0..ratings.len() {
        for j in 0..ratings.len() {
            if ratings[i] > ratings[j] {
                total += 1;
                if scores[i] > scores[j] {
                    correct += 1;
                }
            }
        }
    }
    (total > 0).then(|| correct as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMetric {
    Accuracy,
    Mrr,
    Recall(usize),
    Ndcg,
}

impl std::str::FromStr for BaselineMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" | "acc" => Ok(BaselineMetric::Accuracy),
            "mrr" => Ok(BaselineMetric::Mrr),
            "ndcg" => Ok(BaselineMetric::Ndcg),
            other => other
                .strip_prefix("r@")
                .or_else(|| other.strip_prefix("recall@"))
                .and_then(|k| k.parse().ok())
                .map(BaselineMetric::Recall)
                .ok_or_else(|| format!("unknown metric `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
    /// Exact expectation when one is known.
    pub closed_form: Option<f64>,
}

pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}

/// Expected metric value under uniformly random orderings, by Monte Carlo.
/// `relevance` holds the candidates' gains (binary labels or ratings); MRR and
/// recall treat the top-rated candidates as relevant.
pub fn random_baseline(
    relevance: &[f64],
    metric: BaselineMetric,
    trials: usize,
    seed: u64,
) -> Result<BaselineEstimate, MetricError> {
    let n = relevance.len();
    if n == 0 {
        return Err(MetricError::Empty);
    }
    if trials == 0 {
        return Err(MetricError::TooFew("one trial"));
    }
    if let BaselineMetric::Recall(k) = metric {
        if k == 0 || k > n {
            return Err(MetricError::BadK { k, n });
        }
    }
    let binary = dynamic_relevance(relevance);
    let mut rng = crate::rng::sub_rng(seed, "baseline", 0);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        perm.shuffle(&mut rng);
        let v = match metric {
            BaselineMetric::Mrr => mrr(&RankedList::new(perm.iter().map(|&i| binary[i]).collect())?)?,
            BaselineMetric::Recall(k) => {
                recall_at_k(&RankedList::new(perm.iter().map(|&i| binary[i]).collect())?, k)?
            }
            BaselineMetric::Ndcg => {
                ndcg(&RankedList::new(perm.iter().map(|&i| relevance[i]).collect())?, Gain::Linear)?
            }
            BaselineMetric::Accuracy => {
                // Distinct scores from the permutation: earlier means higher.
                let mut scores = vec![0.0; n];
                for (rank, &i) in perm.iter().enumerate() {
                    scores[i] = (n - rank) as f64;
                }
                rated_pairwise_accuracy(&scores, relevance).ok_or(MetricError::TooFew("two distinct ratings"))?
            }
        };
        sum += v;
        sum_sq += v * v;
    }
    let t = trials as f64;
    let mean = sum / t;
    let var = (sum_sq / t - mean * mean).max(0.0);
    let n_rel = binary.iter().filter(|&&r| r > 0.0).count();
    let closed_form = match metric {
        BaselineMetric::Mrr if n_rel == 1 => Some(harmonic(n) / n as f64),
        BaselineMetric::Recall(k) if n_rel == 1 => Some(k as f64 / n as f64),
        BaselineMetric::Accuracy => Some(0.5),
        _ => None,
    };
    Ok(BaselineEstimate {
        mean,
        std_error: (var / t).sqrt(),
        trials,
        closed_form,
    })
}

/// Quadratic-weighted Cohen's kappa over an ordered category set.
pub fn quadratic_weighted_kappa(a: &[u8], b: &[u8], categories: &[u8]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::TooFew("one rating pair"));
    }
    let k = categories.len();
    if k < 2 {
        return Err(MetricError::TooFew("two categories"));
    }
    let pos = |x: u8| {
        categories
            .iter()
            .position(|&c| c == x)
            .ok_or(MetricError::BadCategory(x))
    };
    let mut observed = vec![vec![0.0; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        observed[pos(x)?][pos(y)?] += 1.0;
    }
    let n = a.len() as f64;
    let rows: Vec<f64> = observed.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..k).map(|j| observed.iter().map(|r| r[j]).sum()).collect();
    let denom_w = ((k - 1) * (k - 1)) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64).powi(2)) / denom_w;
            num += w * observed[i][j];
            den += w * rows[i] * cols[j] / n;
        }
    }
    if den == 0.0 {
        return if num == 0.0 {
            Ok(1.0)
        } else {
            Err(MetricError::DegenerateKappa)
        };
    }
    Ok(1.0 - num / den)
}

/// Items × raters; `None` where a rater did not rate an item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingMatrix {
    pub raters: Vec<String>,
    pub items: Vec<Vec<Option<u8>>>,
}

impl RatingMatrix {
    pub fn new(raters: Vec<String>, items: Vec<Vec<Option<u8>>>) -> Result<Self, MetricError> {
        if raters.len() < 2 {
            return Err(MetricError::TooFew("two raters"));
        }
        for row in &items {
            if row.len() != raters.len() {
                return Err(MetricError::LengthMismatch(row.len(), raters.len()));
            }
            if let Some(x) = row.iter().flatten().find(|x| !(1..=3).contains(*x)) {
                return Err(MetricError::BadCategory(*x));
            }
        }
        Ok(RatingMatrix { raters, items })
    }

    /// Parses a TSV with a header of rater names; empty cells are missing.
    pub fn parse_tsv(content: &str) -> Result<Self, String> {
        let mut lines = content.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty ratings file")?;
        let raters: Vec<String> = header.split('\t').map(|s| s.trim().to_string()).collect();
        let mut items = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut row: Vec<Option<u8>> = Vec::with_capacity(raters.len());
            for cell in line.split('\t') {
                let cell = cell.trim();
                row.push(if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse().map_err(|_| format!("row {}: bad rating `{cell}`", i + 2))?)
                });
            }
            row.resize(raters.len(), None);
            items.push(row);
        }
        Self::new(raters, items).map_err(|e| e.to_string())
    }

    /// Paired ratings of two raters on items both rated.
    pub fn pair(&self, a: usize, b: usize) -> (Vec<u8>, Vec<u8>) {
        self.items
            .iter()
            .filter_map(|row| Some((row[a]?, row[b]?)))
            .unzip()
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOut {
    pub per_rater: Vec<(String, f64)>,
    pub mean: f64,
}

/// Pearson correlation of each rater with the item-wise mean of all others.
pub fn leave_one_out_correlation(m: &RatingMatrix) -> Result<LeaveOneOut, MetricError> {
    let mut per_rater = Vec::with_capacity(m.raters.len());
    for (r, name) in m.raters.iter().enumerate() {
        let mut own = Vec::new();
        let mut others = Vec::new();
        for row in &m.items {
            let Some(x) = row[r] else { continue };
            let rest: Vec<f64> = row
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != r)
                .filter_map(|(_, v)| v.map(f64::from))
                .collect();
            if rest.is_empty() {
                continue;
            }
            own.push(f64::from(x));
            others.push(rest.iter().sum::<f64>() / rest.len() as f64);
        }
        if own.len() < 2 {
            return Err(MetricError::TooFew("two shared items per rater"));
        }
        let rho = pearson(&own, &others).ok_or_else(|| MetricError::ZeroVariance(name.clone()))?;
        per_rater.push((name.clone(), rho));
    }
    let mean = per_rater.iter().map(|(_, r)| r).sum::<f64>() / per_rater.len() as f64;
    Ok(LeaveOneOut { per_rater, mean })
}

/// Corpus-level response-selection metrics (means of per-instance values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub accuracy: f64,
    pub mrr: f64,
    pub r1: f64,
    pub r2: f64,
    pub instances: usize,
}

/// `scores[i]` are candidate scores of instance `i`, whose positive sits at
/// `positives[i]`.
pub fn evaluate_selection(scores: &[Vec<f64>], positives: &[usize]) -> Result<SelectionMetrics, MetricError> {
    if scores.len() != positives.len() {
        return Err(MetricError::LengthMismatch(scores.len(), positives.len()));
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut acc = 0.0;
    let mut m = 0.0;
    let mut r1 = 0.0;
    let mut r2 = 0.0;
    for (s, &p) in scores.iter().zip(positives) {
        let rel: Vec<f64> = (0..s.len()).map(|i| if i == p { 1.0 } else { 0.0 }).collect();
        let negs: Vec<f64> = s.iter().enumerate().filter(|&(i, _)| i != p).map(|(_, &v)| v).collect();
        acc += pairwise_accuracy(s[p], &negs)?;
        let ranked = RankedList::from_scores(s, &rel)?;
        m += mrr(&ranked)?;
        r1 += recall_at_k(&ranked, 1)?;
        r2 += recall_at_k(&ranked, 2.min(s.len()))?;
    }
    let n = scores.len() as f64;
    Ok(SelectionMetrics {
        accuracy: acc / n,
        mrr: m / n,
        r1: r1 / n,
        r2: r2 / n,
        instances: scores.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingMetrics {
    pub accuracy: f64,
    pub mrr: f64,
    pub r1: f64,
    pub ndcg: f64,
    pub instances: usize,
    /// Instances with at least one pair of different ratings.
    pub accuracy_instances: usize,
}

pub fn evaluate_rating(scores: &[Vec<f64>], ratings: &[Vec<f64>], gain: Gain) -> Result<RatingMetrics, MetricError> {
    if scores.len() != ratings.len() {
        return Err(MetricError::LengthMismatch(scores.len(), ratings.len()));
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut acc = 0.0;
    let mut acc_n = 0usize;
    let mut m = 0.0;
    let mut r1 = 0.0;
    let mut g = 0.0;
    for (s, r) in scores.iter().zip(ratings) {
        if s.len() != r.len() {
            return Err(MetricError::LengthMismatch(s.len(), r.len()));
        }
        if let Some(a) = rated_pairwise_accuracy(s, r) {
            acc += a;
            acc_n += 1;
        }
        let rel = dynamic_relevance(r);
        let ranked = RankedList::from_scores(s, &rel)?;
        m += mrr(&ranked)?;
        r1 += recall_at_k(&ranked, 1)?;
        g += ndcg(&RankedList::from_scores(s, r)?, gain)?;
    }
    let n = scores.len() as f64;
    Ok(RatingMetrics {
        accuracy: if acc_n > 0 { acc / acc_n as f64 } else { f64::NAN },
        mrr: m / n,
        r1: r1 / n,
        ndcg: g / n,
        instances: scores.len(),
        accuracy_instances: acc_n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub per_run: Vec<f64>,
}

/// Metrics over one or more runs (seeds), in a fixed metric order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub instances: usize,
    pub runs: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl MetricsReport {
    pub fn from_runs(task: &str, instances: usize, runs: &[Vec<(&str, f64)>]) -> Self {
        let mut metrics: BTreeMap<String, MetricSummary> = BTreeMap::new();
        for run in runs {
            for &(name, v) in run {
                metrics
                    .entry(name.to_string())
                    .or_insert_with(|| MetricSummary {
                        mean: 0.0,
                        per_run: Vec::new(),
                    })
                    .per_run
                    .push(v);
            }
        }
        for s in metrics.values_mut() {
            s.mean = s.per_run.iter().sum::<f64>() / s.per_run.len() as f64;
        }
        MetricsReport {
            task: task.to_string(),
            instances,
            runs: runs.len(),
            metrics,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tmean");
        for i in 0..self.runs {
            let _ = write!(out, "\trun{i}");
        }
        out.push_str("\tinstances\n");
        for (name, s) in &self.metrics {
            let _ = write!(out, "{name}\t{:.6}", s.mean);
            for v in &s.per_run {
                let _ = write!(out, "\t{v:.6}");
            }
            let _ = writeln!(out, "\t{}", self.instances);
        }
        out
    }
}

impl SelectionMetrics {
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        vec![("accuracy", self.accuracy), ("mrr", self.mrr), ("r@1", self.r1), ("r@2", self.r2)]
    }
}

impl RatingMetrics {
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        vec![("accuracy", self.accuracy), ("mrr", self.mrr), ("r@1", self.r1), ("ndcg", self.ndcg)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_ties_are_errors() {
        assert!((pairwise_accuracy(0.8, &[0.1, 0.9, 0.8]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(pairwise_accuracy(1.0, &[0.0]).unwrap(), 1.0);
        assert_eq!(pairwise_accuracy(0.5, &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(pairwise_accuracy(0.5, &[]), Err(MetricError::NoNegatives));
    }

    #[test]
    fn mrr_ranks() {
        let first = RankedList::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(mrr(&first).unwrap(), 1.0);
        let mut r = vec![0.0; 10];
        r[2] = 1.0;
        assert!((mrr(&RankedList::new(r).unwrap()).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(mrr(&RankedList::new(vec![0.0]).unwrap()), Err(MetricError::NoRelevant));
    }

    #[test]
    fn tie_rule_orders_positive_last() {
        // positive first with the highest score
        let l = RankedList::from_scores(&[0.9, 0.1, 0.5], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(mrr(&l).unwrap(), 1.0);
        // positive 0.5 tied with a negative, below 0.9
        let l = RankedList::from_scores(&[0.5, 0.5, 0.9], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(l.relevance, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn recall() {
        let l = RankedList::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(recall_at_k(&l, 1).unwrap(), 0.0);
        assert_eq!(recall_at_k(&l, 2).unwrap(), 1.0);
        assert_eq!(recall_at_k(&l, 3).unwrap(), 1.0);
        assert!(recall_at_k(&l, 4).is_err());
        assert!(recall_at_k(&l, 0).is_err());
    }

    #[test]
    fn ndcg_worked_examples() {
        // DCG = 3 + 1/log2 3 + 2/2 ; IDCG = 3 + 2/log2 3 + 1/2
        let l = RankedList::new(vec![3.0, 1.0, 2.0]).unwrap();
        let dcg = 3.0 + 1.0 / 3f64.log2() + 1.0;
        let idcg = 3.0 + 2.0 / 3f64.log2() + 0.5;
        assert!((dcg - 4.63093).abs() < 1e-5);
        assert!((idcg - 4.76186).abs() < 1e-5);
        let v = ndcg(&l, Gain::Linear).unwrap();
        assert!((v - dcg / idcg).abs() < 1e-15);
        assert!((v - 0.97250).abs() < 5e-6);

        let ideal = RankedList::new(vec![3.0, 2.0, 1.0]).unwrap();
        assert_eq!(ndcg(&ideal, Gain::Linear).unwrap(), 1.0);

        let rev = RankedList::new(vec![1.0, 3.0]).unwrap();
        let expected = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
        assert!((ndcg(&rev, Gain::Linear).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.79671).abs() < 5e-6);

        assert_eq!(ndcg(&RankedList::new(vec![0.0]).unwrap(), Gain::Linear), Err(MetricError::ZeroGain));
    }

    #[test]
    fn dynamic_relevance_marks_maxima() {
        assert_eq!(dynamic_relevance(&[2.6, 2.6, 1.0]), vec![1.0, 1.0, 0.0]);
        assert_eq!(dynamic_relevance(&[3.0, 2.0, 1.0]).iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn rated_accuracy_skips_equal_ratings() {
        // pairs with distinct ratings: (0,2), (1,2); both correct
        assert_eq!(rated_pairwise_accuracy(&[0.1, 0.9, 0.0], &[2.0, 2.0, 1.0]), Some(1.0));
        assert_eq!(rated_pairwise_accuracy(&[0.1, 0.9], &[2.0, 2.0]), None);
    }

    #[test]
    fn random_baselines() {
        let mut rel = vec![0.0; 10];
        rel[0] = 1.0;
        let e = random_baseline(&rel, BaselineMetric::Mrr, 20_000, 1).unwrap();
        assert!((e.closed_form.unwrap() - 0.2928968).abs() < 1e-6);
        assert!((e.mean - e.closed_form.unwrap()).abs() < 4.0 * e.std_error);
        let r2 = random_baseline(&rel, BaselineMetric::Recall(2), 20_000, 1).unwrap();
        assert_eq!(r2.closed_form, Some(0.2));
        let acc = random_baseline(&rel, BaselineMetric::Accuracy, 20_000, 1).unwrap();
        assert!((acc.mean - 0.5).abs() < 4.0 * acc.std_error);
        assert_eq!("r@2".parse::<BaselineMetric>(), Ok(BaselineMetric::Recall(2)));
    }

    #[test]
    fn kappa_cases() {
        assert_eq!(quadratic_weighted_kappa(&[1, 2, 3, 2], &[1, 2, 3, 2], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(quadratic_weighted_kappa(&[2, 2], &[2, 2], &[1, 2, 3]).unwrap(), 1.0);
        assert!(quadratic_weighted_kappa(&[1, 4], &[1, 2], &[1, 2, 3]).is_err());
        assert!(quadratic_weighted_kappa(&[1], &[1, 2], &[1, 2, 3]).is_err());
    }

    #[test]
    fn leave_one_out_basic() {
        let m = RatingMatrix::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![
                vec![Some(1), Some(1), Some(3), Some(1)],
                vec![Some(2), Some(2), Some(2), Some(2)],
                vec![Some(3), Some(3), Some(1), Some(3)],
            ],
        )
        .unwrap();
        let r = leave_one_out_correlation(&m).unwrap();
        // c is the exact reversal of the others' consensus
        assert!((r.per_rater[2].1 + 1.0).abs() < 1e-12);

        let flat = RatingMatrix::new(
            vec!["a".into(), "b".into()],
            vec![vec![Some(2), Some(1)], vec![Some(2), Some(3)]],
        )
        .unwrap();
        assert!(matches!(leave_one_out_correlation(&flat), Err(MetricError::ZeroVariance(_))));
    }

    #[test]
    fn rating_matrix_tsv() {
        let m = RatingMatrix::parse_tsv("w1\tw2\tw3\n1\t2\t\n3\t3\t2\n").unwrap();
        assert_eq!(m.items[0], vec![Some(1), Some(2), None]);
        assert_eq!(m.pair(0, 2), (vec![3], vec![2]));
        assert!(RatingMatrix::parse_tsv("w1\tw2\n1\t5\n").is_err());
    }

    #[test]
    fn report_tsv_layout() {
        let r = MetricsReport::from_runs("selection", 3, &[vec![("mrr", 0.5)], vec![("mrr", 0.7)]]);
        assert!((r.metrics["mrr"].mean - 0.6).abs() < 1e-15);
        let tsv = r.to_tsv();
        assert!(tsv.starts_with("metric\tmean\trun0\trun1\tinstances\n"));
        assert!(tsv.contains("mrr\t0.600000\t0.500000\t0.700000\t3"));
    }
}
