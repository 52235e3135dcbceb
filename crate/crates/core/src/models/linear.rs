//! Linear pairwise ranker over entity-grid and dialogue-act transition
//! features.
//!
//! Training minimizes `Σ max(0, 1 − w·(pos − neg)) + l2·‖w‖²` with Pegasos
//! style stochastic subgradient steps.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::corpus::{Turn, Vocabularies};
use crate::grid::{dialogue_features, GridFeatureSet, TransitionConfig};
use crate::rng::sub_rng;
use crate::swapgen::RankingInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub features: GridFeatureSet,
    pub transition: TransitionConfig,
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            features: GridFeatureSet::Joint,
            transition: TransitionConfig::default(),
            l2: 1.0,
            epochs: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRankerParams {
    pub weights: Vec<f32>,
}

impl LinearRankerParams {
    pub fn score(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.weights.len() {
            return Err(ModelError::Dim {
                what: "feature vector",
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(self.weights.iter().zip(x).map(|(&w, &v)| f64::from(w) * v).sum())
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|&w| f64::from(w).powi(2)).sum::<f64>().sqrt()
    }
}

/// Pegasos on the difference vectors `pos − neg`. One epoch visits every
/// pair once in a seeded order.
pub fn train_linear_ranker(
    pairs: &[(Vec<f64>, Vec<f64>)],
    l2: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearRankerParams, ModelError> {
    if pairs.is_empty() {
        return Err(ModelError::EmptyTrain);
    }
    if !(l2 > 0.0 && l2.is_finite()) {
        return Err(ModelError::Config("l2 must be positive".into()));
    }
    let dim = pairs[0].0.len();
    let mut diffs = Vec::with_capacity(pairs.len());
    for (p, n) in pairs {
        for v in [p, n] {
            if v.len() != dim {
                return Err(ModelError::Dim {
                    what: "feature vector",
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        diffs.push(p.iter().zip(n).map(|(a, b)| a - b).collect::<Vec<f64>>());
    }
    let lambda = 2.0 * l2 / pairs.len() as f64;
    let radius = 1.0 / lambda.sqrt();
    let mut w = vec![0.0f64; dim];
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    let mut t = 0u64;
    for epoch in 0..epochs {
        order.shuffle(&mut sub_rng(seed, "pegasos", epoch as u64));
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let d = &diffs[i];
            let margin: f64 = w.iter().zip(d).map(|(a, b)| a * b).sum();
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|x| *x *= shrink);
            if margin < 1.0 {
                for (x, &v) in w.iter_mut().zip(d) {
                    *x += eta * v;
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    Ok(LinearRankerParams {
        weights: w.into_iter().map(|x| x as f32).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub config: LinearConfig,
    pub vocabularies: Vocabularies,
    pub params: LinearRankerParams,
}

impl LinearModel {
    pub fn features(&self, context: &[Turn], candidate: &Turn) -> Result<Vec<f64>, ModelError> {
        candidate_features(&self.config, &self.vocabularies, context, candidate)
    }

    pub fn score(&self, context: &[Turn], candidate: &Turn) -> Result<f64, ModelError> {
        self.params.score(&self.features(context, candidate)?)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.config
            .features
            .names(self.config.transition.k, &self.vocabularies.das)
    }
}

/// Grid features of the context followed by the candidate.
pub fn candidate_features(
    cfg: &LinearConfig,
    vocab: &Vocabularies,
    context: &[Turn],
    candidate: &Turn,
) -> Result<Vec<f64>, ModelError> {
    let mut turns = Vec::with_capacity(context.len() + 1);
    turns.extend_from_slice(context);
    turns.push(candidate.clone());
    Ok(dialogue_features(&turns, cfg.features, &cfg.transition, &vocab.das)?)
}

pub fn train_linear(
    train: &[RankingInstance],
    config: &LinearConfig,
    vocabularies: &Vocabularies,
) -> Result<LinearModel, ModelError> {
    config.transition.validate()?;
    let per_instance: Vec<Vec<(Vec<f64>, Vec<f64>)>> = train
        .par_iter()
        .map(|inst| {
            let feats = inst
                .candidates
                .iter()
                .map(|c| candidate_features(config, vocabularies, &inst.context, &c.turn))
                .collect::<Result<Vec<_>, _>>()?;
            let pos = &feats[inst.positive_position];
            Ok(feats
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != inst.positive_position)
                .map(|(_, n)| (pos.clone(), n.clone()))
                .collect())
        })
        .collect::<Result<_, ModelError>>()?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = per_instance.into_iter().flatten().collect();
    let params = train_linear_ranker(&pairs, config.l2, config.epochs, config.seed)?;
    Ok(LinearModel {
        config: *config,
        vocabularies: vocabularies.clone(),
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accuracy(p: &LinearRankerParams, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
        let ok = pairs
            .iter()
            .filter(|(a, b)| p.score(a).unwrap() > p.score(b).unwrap())
            .count();
        ok as f64 / pairs.len() as f64
    }

    #[test]
    fn separable_one_dimensional() {
        let pairs = vec![(vec![1.0], vec![0.0]); 8];
        let p = train_linear_ranker(&pairs, 0.01, 5, 1).unwrap();
        assert!(p.weights[0] > 0.0);
        assert_eq!(accuracy(&p, &pairs), 1.0);
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let pairs = vec![(vec![1.0, 0.5], vec![0.0, 0.2]); 4];
        let norms: Vec<f64> = [1.0, 1e2, 1e4, 1e8]
            .iter()
            .map(|&l2| train_linear_ranker(&pairs, l2, 10, 0).unwrap().norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0]));
        assert!(norms[3] < 1e-3);
    }

    #[test]
    fn beats_zero_weights() {
        let mut rng = sub_rng(5, "data", 0);
        use rand::Rng;
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..40)
            .map(|_| {
                let a: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
                let b: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
                (a, b)
            })
            .collect();
        let p = train_linear_ranker(&pairs, 0.1, 20, 2).unwrap();
        let zero = LinearRankerParams { weights: vec![0.0; 4] };
        assert_eq!(accuracy(&zero, &pairs), 0.0);
        assert!(accuracy(&p, &pairs) >= accuracy(&zero, &pairs));
    }

    #[test]
    fn deterministic_and_validated() {
        let pairs = vec![(vec![1.0, 0.0], vec![0.0, 1.0]), (vec![0.3, 0.2], vec![0.1, 0.9])];
        assert_eq!(
            train_linear_ranker(&pairs, 0.5, 3, 9).unwrap(),
            train_linear_ranker(&pairs, 0.5, 3, 9).unwrap()
        );
        assert!(train_linear_ranker(&pairs, 0.0, 3, 9).is_err());
        assert!(train_linear_ranker(&[(vec![1.0], vec![1.0, 2.0])], 1.0, 1, 0).is_err());
    }
}
