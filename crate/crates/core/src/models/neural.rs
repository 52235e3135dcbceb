//! Recurrent coherence scorer.
//!
//! A token stream is embedded per channel, the channel vectors are
//! concatenated, passed through stacked bidirectional GRUs, mean-pooled over
//! positions and reduced to a scalar by a one-hidden-layer ReLU head.

use std::fmt;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::corpus::{Turn, Vocab};
use crate::engine::{
    adam_step, margin_ranking_loss, margin_ranking_loss_grad, matvec_add, matvec_t_add, outer_add, AdamConfig,
    AdamState, BiGruCache, BiGruLayer, Differentiable, MarginLossInputs, Real, Tensor, GRU_TENSOR_NAMES,
};
use crate::linearizer::{encode_pairwise_inputs, Channels, EncodingConfig, TokenStream};
use crate::metrics::evaluate_selection;
use crate::rng::sub_rng;
use crate::swapgen::RankingInstance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuralConfig {
    pub channels: Channels,
    pub emb_dim_word: usize,
    pub emb_dim_other: usize,
    pub gru_layers: usize,
    /// Per direction; each layer outputs twice this.
    pub gru_hidden: usize,
    pub head_hidden: usize,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    /// Epochs without a dev MRR improvement before stopping.
    pub patience: usize,
    pub margin: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            channels: Channels::new(true, true, true, true),
            emb_dim_word: 300,
            emb_dim_other: 50,
            gru_layers: 2,
            gru_hidden: 512,
            head_hidden: 256,
            lr: 5e-4,
            batch: 32,
            max_epochs: 30,
            patience: 5,
            margin: 0.5,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl NeuralConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.channels.validate()?;
        let dims = [
            ("emb_dim_word", self.emb_dim_word),
            ("emb_dim_other", self.emb_dim_other),
            ("gru_layers", self.gru_layers),
            ("gru_hidden", self.gru_hidden),
            ("head_hidden", self.head_hidden),
            ("batch", self.batch),
            ("max_epochs", self.max_epochs),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(ModelError::Config("lr must be positive".into()));
        }
        if !self.margin.is_finite() {
            return Err(ModelError::Config("margin must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Word,
    Role,
    Da,
    Turn,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Word, Channel::Role, Channel::Da, Channel::Turn];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Word => "word",
            Channel::Role => "role",
            Channel::Da => "da",
            Channel::Turn => "turn",
        }
    }

    fn enabled(self, c: &Channels) -> bool {
        match self {
            Channel::Word => c.word,
            Channel::Role => c.role,
            Channel::Da => c.da,
            Channel::Turn => c.turn,
        }
    }

    fn ids(self, s: &TokenStream) -> Option<&Vec<u32>> {
        match self {
            Channel::Word => s.word.as_ref(),
            Channel::Role => s.role.as_ref(),
            Channel::Da => s.da.as_ref(),
            Channel::Turn => s.turn.as_ref(),
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Vocabulary size of each enabled channel, in channel order.
pub fn channel_sizes(enc: &EncodingConfig) -> Vec<(Channel, usize)> {
    let v = &enc.vocabularies;
    Channel::ALL
        .into_iter()
        .filter(|c| c.enabled(&enc.channels))
        .map(|c| {
            let n = match c {
                Channel::Word => v.words.len(),
                Channel::Role => v.roles.len(),
                Channel::Da => enc.da_vocab_len(),
                Channel::Turn => v.turns.len(),
            };
            (c, n)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T> {
    pub channel: Channel,
    /// `vocab × dim`.
    pub table: Tensor<T>,
}

impl<T: Real> Embedding<T> {
    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn rows(&self) -> usize {
        self.table.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams<T> {
    pub embeddings: Vec<Embedding<T>>,
    pub layers: Vec<BiGruLayer<T>>,
    /// `head_hidden × 2·gru_hidden`.
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// Intermediate values of one forward pass, consumed by the backward pass.
#[derive(Debug, Clone)]
pub struct ScorerCache<T> {
    ids: Vec<Vec<u32>>,
    layers: Vec<BiGruCache<T>>,
    pooled: Vec<T>,
    pre: Vec<T>,
    hid: Vec<T>,
    len: usize,
}

impl<T> ScorerCache<T> {
    /// Pre-activations of the head's hidden layer.
    pub fn head_preactivations(&self) -> &[T] {
        &self.pre
    }
}

impl<T: Real> ScorerParams<T> {
    fn shaped(cfg: &NeuralConfig, sizes: &[(Channel, usize)]) -> Self {
        let embeddings: Vec<Embedding<T>> = sizes
            .iter()
            .map(|&(channel, n)| {
                let d = if channel == Channel::Word {
                    cfg.emb_dim_word
                } else {
                    cfg.emb_dim_other
                };
                Embedding {
                    channel,
                    table: Tensor::zeros(&[n, d]),
                }
            })
            .collect();
        let mut input: usize = embeddings.iter().map(Embedding::dim).sum();
        let mut layers = Vec::with_capacity(cfg.gru_layers);
        for _ in 0..cfg.gru_layers {
            layers.push(BiGruLayer::zeros(input, cfg.gru_hidden));
            input = 2 * cfg.gru_hidden;
        }
        ScorerParams {
            embeddings,
            layers,
            w1: Tensor::zeros(&[cfg.head_hidden, input]),
            b1: Tensor::zeros(&[cfg.head_hidden]),
            w2: Tensor::zeros(&[cfg.head_hidden]),
            b2: Tensor::zeros(&[1]),
        }
    }

    pub fn zeros(cfg: &NeuralConfig, sizes: &[(Channel, usize)]) -> Self {
        Self::shaped(cfg, sizes)
    }

    /// Embeddings uniform in ±0.1, GRU weights in ±1/√hidden, head weights in
    /// ±1/√fan_in; all biases zero.
    pub fn init(cfg: &NeuralConfig, sizes: &[(Channel, usize)], rng: &mut impl rand::Rng) -> Self {
        let mut p = Self::shaped(cfg, sizes);
        for e in &mut p.embeddings {
            e.table = Tensor::uniform(e.table.shape(), 0.1, rng);
        }
        for l in &mut p.layers {
            *l = BiGruLayer::init(l.fwd.input, l.fwd.hidden, rng);
        }
        let fan_in = p.w1.shape()[1] as f64;
        p.w1 = Tensor::uniform(p.w1.shape(), 1.0 / fan_in.sqrt(), rng);
        p.w2 = Tensor::uniform(p.w2.shape(), 1.0 / (cfg.head_hidden as f64).sqrt(), rng);
        p
    }

    pub fn zeros_like(&self) -> Self {
        ScorerParams {
            embeddings: self
                .embeddings
                .iter()
                .map(|e| Embedding {
                    channel: e.channel,
                    table: e.table.zeros_like(),
                })
                .collect(),
            layers: self.layers.iter().map(BiGruLayer::zeros_like).collect(),
            w1: self.w1.zeros_like(),
            b1: self.b1.zeros_like(),
            w2: self.w2.zeros_like(),
            b2: self.b2.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embeddings.iter().map(Embedding::dim).sum()
    }

    pub fn channels(&self) -> Channels {
        let has = |c| self.embeddings.iter().any(|e| e.channel == c);
        Channels::new(has(Channel::Word), has(Channel::Role), has(Channel::Da), has(Channel::Turn))
    }

    /// Every parameter tensor with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        for e in &self.embeddings {
            out.push((format!("emb.{}", e.channel), &e.table));
        }
        for (i, l) in self.layers.iter().enumerate() {
            for (dir, cell) in [("fwd", &l.fwd), ("bwd", &l.bwd)] {
                for (name, t) in GRU_TENSOR_NAMES.iter().zip(cell.tensors()) {
                    out.push((format!("gru.{i}.{dir}.{name}"), t));
                }
            }
        }
        out.push(("head.w1".into(), &self.w1));
        out.push(("head.b1".into(), &self.b1));
        out.push(("head.w2".into(), &self.w2));
        out.push(("head.b2".into(), &self.b2));
        out
    }

    /// Same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for e in &mut self.embeddings {
            out.push(&mut e.table);
        }
        for l in &mut self.layers {
            out.extend(l.fwd.tensors_mut());
            out.extend(l.bwd.tensors_mut());
        }
        out.push(&mut self.w1);
        out.push(&mut self.b1);
        out.push(&mut self.w2);
        out.push(&mut self.b2);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        let others: Vec<&Tensor<T>> = other.named_tensors().into_iter().map(|(_, t)| t).collect();
        for (a, b) in self.tensors_mut().into_iter().zip(others) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn cast<U: Real>(&self) -> ScorerParams<U> {
        ScorerParams {
            embeddings: self
                .embeddings
                .iter()
                .map(|e| Embedding {
                    channel: e.channel,
                    table: e.table.cast(),
                })
                .collect(),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let mut out = BiGruLayer::zeros(l.fwd.input, l.fwd.hidden);
                    for (dst, src) in out.fwd.tensors_mut().into_iter().zip(l.fwd.tensors()) {
                        *dst = src.cast();
                    }
                    for (dst, src) in out.bwd.tensors_mut().into_iter().zip(l.bwd.tensors()) {
                        *dst = src.cast();
                    }
                    out
                })
                .collect(),
            w1: self.w1.cast(),
            b1: self.b1.cast(),
            w2: self.w2.cast(),
            b2: self.b2.cast(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.named_tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter().map(|x| x.to_f64().unwrap_or(f64::NAN)))
            .collect()
    }

    pub fn set_flat(&mut self, theta: &[f64]) -> Result<(), ModelError> {
        let n = self.param_count();
        if theta.len() != n {
            return Err(ModelError::Dim {
                what: "flat parameters",
                expected: n,
                got: theta.len(),
            });
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            for x in t.data_mut() {
                *x = T::from_f64_lossy(theta[off]);
                off += 1;
            }
        }
        Ok(())
    }

    fn check_stream(&self, s: &TokenStream) -> Result<(), ModelError> {
        if s.len == 0 {
            return Err(ModelError::EmptyStream);
        }
        if s.channels() != self.channels() {
            return Err(ModelError::ChannelMismatch {
                expected: self.channels().label(),
                got: s.channels().label(),
            });
        }
        for e in &self.embeddings {
            let ids = e.channel.ids(s).expect("channel checked");
            if ids.len() != s.len {
                return Err(ModelError::Dim {
                    what: "channel length",
                    expected: s.len,
                    got: ids.len(),
                });
            }
            if let Some(&bad) = ids.iter().find(|&&i| i as usize >= e.rows()) {
                return Err(ModelError::VocabRange {
                    channel: e.channel,
                    id: bad,
                    size: e.rows(),
                });
            }
        }
        Ok(())
    }

    pub fn forward(&self, s: &TokenStream) -> Result<(T, ScorerCache<T>), ModelError> {
        self.check_stream(s)?;
        let ids: Vec<Vec<u32>> = self
            .embeddings
            .iter()
            .map(|e| e.channel.ids(s).expect("channel checked").clone())
            .collect();
        let mut xs: Vec<Vec<T>> = (0..s.len)
            .map(|p| {
                let mut x = Vec::with_capacity(self.input_dim());
                for (e, ch) in self.embeddings.iter().zip(&ids) {
                    x.extend_from_slice(e.table.row(ch[p] as usize));
                }
                x
            })
            .collect();
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (outs, cache) = l.forward(&xs);
            layer_caches.push(cache);
            xs = outs;
        }
        let width = xs[0].len();
        let inv = T::one() / T::from_f64_lossy(s.len as f64);
        let mut pooled = vec![T::zero(); width];
        for x in &xs {
            for (p, &v) in pooled.iter_mut().zip(x) {
                *p += v;
            }
        }
        pooled.iter_mut().for_each(|p| *p *= inv);
        let head = self.b1.len();
        let mut pre = self.b1.data().to_vec();
        matvec_add(self.w1.data(), head, width, &pooled, &mut pre);
        let hid: Vec<T> = pre.iter().map(|&a| a.max(T::zero())).collect();
        let score = self.b2.data()[0] + hid.iter().zip(self.w2.data()).map(|(&h, &w)| h * w).sum::<T>();
        Ok((
            score,
            ScorerCache {
                ids,
                layers: layer_caches,
                pooled,
                pre,
                hid,
                len: s.len,
            },
        ))
    }

    pub fn score(&self, s: &TokenStream) -> Result<T, ModelError> {
        Ok(self.forward(s)?.0)
    }

    /// Adds `dscore · ∂score/∂θ` into `grads`.
    pub fn backward(&self, c: &ScorerCache<T>, dscore: T, grads: &mut Self) {
        let head = self.b1.len();
        let width = c.pooled.len();
        grads.b2.data_mut()[0] += dscore;
        for (g, &h) in grads.w2.data_mut().iter_mut().zip(&c.hid) {
            *g += dscore * h;
        }
        let dpre: Vec<T> = self
            .w2
            .data()
            .iter()
            .zip(&c.pre)
            .map(|(&w, &a)| if a > T::zero() { dscore * w } else { T::zero() })
            .collect();
        for (g, &d) in grads.b1.data_mut().iter_mut().zip(&dpre) {
            *g += d;
        }
        outer_add(grads.w1.data_mut(), width, &dpre, &c.pooled);
        let mut dpooled = vec![T::zero(); width];
        matvec_t_add(self.w1.data(), head, width, &dpre, &mut dpooled);
        let inv = T::one() / T::from_f64_lossy(c.len as f64);
        dpooled.iter_mut().for_each(|d| *d *= inv);
        let mut douts: Vec<Vec<T>> = vec![dpooled; c.len];
        for (i, l) in self.layers.iter().enumerate().rev() {
            douts = l.backward(&c.layers[i], &douts, &mut grads.layers[i]);
        }
        for (p, dx) in douts.iter().enumerate() {
            let mut off = 0;
            for ((e, g), ids) in self.embeddings.iter().zip(grads.embeddings.iter_mut()).zip(&c.ids) {
                let d = e.dim();
                for (t, &v) in g.table.row_mut(ids[p] as usize).iter_mut().zip(&dx[off..off + d]) {
                    *t += v;
                }
                off += d;
            }
        }
    }

    /// Margin loss of one (original, adversarial) pair with its gradient
    /// accumulated into `grads`.
    pub fn pair_loss_backward(
        &self,
        pos: &TokenStream,
        neg: &TokenStream,
        margin: T,
        grads: &mut Self,
    ) -> Result<T, ModelError> {
        let (sp, cp) = self.forward(pos)?;
        let (sn, cn) = self.forward(neg)?;
        let inp = MarginLossInputs { x1: sp, x2: sn, margin };
        let loss = margin_ranking_loss(inp);
        let (dp, dn) = margin_ranking_loss_grad(inp);
        if dp != T::zero() {
            self.backward(&cp, dp, grads);
            self.backward(&cn, dn, grads);
        }
        Ok(loss)
    }
}

/// The pair loss as a function of the flattened parameters, for finite
/// difference checks in `f64`.
pub struct PairObjective<'a> {
    pub template: ScorerParams<f64>,
    pub pos: &'a TokenStream,
    pub neg: &'a TokenStream,
    pub margin: f64,
}

impl PairObjective<'_> {
    fn with(&self, theta: &[f64]) -> ScorerParams<f64> {
        let mut p = self.template.clone();
        p.set_flat(theta).expect("parameter count");
        p
    }
}

impl Differentiable for PairObjective<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        let p = self.with(theta);
        let sp = p.score(self.pos).expect("valid stream");
        let sn = p.score(self.neg).expect("valid stream");
        margin_ranking_loss(MarginLossInputs {
            x1: sp,
            x2: sn,
            margin: self.margin,
        })
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.with(theta);
        let mut g = p.zeros_like();
        p.pair_loss_backward(self.pos, self.neg, self.margin, &mut g)
            .expect("valid stream");
        g.flatten()
    }

    /// Smallest distance to the hinge or to a ReLU switching point.
    fn kink_distance(&self, theta: &[f64]) -> Option<f64> {
        let p = self.with(theta);
        let (sp, cp) = p.forward(self.pos).ok()?;
        let (sn, cn) = p.forward(self.neg).ok()?;
        let hinge = (self.margin - (sp - sn)).abs();
        let relu = cp
            .pre
            .iter()
            .chain(&cn.pre)
            .map(|a| a.abs())
            .fold(f64::INFINITY, f64::min);
        Some(hinge.min(relu))
    }
}

/// Scorer parameters together with the configuration and vocabularies needed
/// to encode raw turns.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralModel {
    pub config: NeuralConfig,
    pub encoding: EncodingConfig,
    pub params: ScorerParams<f32>,
}

impl NeuralModel {
    pub fn new(config: NeuralConfig, encoding: EncodingConfig) -> Result<Self, ModelError> {
        config.validate()?;
        if config.channels != encoding.channels {
            return Err(ModelError::ChannelMismatch {
                expected: config.channels.label(),
                got: encoding.channels.label(),
            });
        }
        let sizes = channel_sizes(&encoding);
        let mut rng = sub_rng(config.seed, "init", 0);
        let params = ScorerParams::init(&config, &sizes, &mut rng);
        Ok(NeuralModel {
            config,
            encoding,
            params,
        })
    }

    pub fn encode(&self, context: &[Turn], candidate: &Turn) -> Result<TokenStream, ModelError> {
        Ok(encode_pairwise_inputs(context, candidate, &self.encoding)?)
    }

    pub fn score_stream(&self, s: &TokenStream) -> Result<f64, ModelError> {
        Ok(f64::from(self.params.score(s)?))
    }

    pub fn score(&self, context: &[Turn], candidate: &Turn) -> Result<f64, ModelError> {
        self.score_stream(&self.encode(context, candidate)?)
    }

    /// Overwrites word-embedding rows from whitespace-separated text vectors
    /// (`token v1 … vd` per line). Returns the number of rows replaced.
    pub fn load_word_vectors(&mut self, content: &str) -> Result<usize, ModelError> {
        let Some(emb) = self.params.embeddings.iter_mut().find(|e| e.channel == Channel::Word) else {
            return Err(ModelError::Config("model has no word channel".into()));
        };
        let dim = emb.dim();
        let vocab: &Vocab = &self.encoding.vocabularies.words;
        let mut replaced = 0;
        for (n, line) in content.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<f32> = parts
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| ModelError::Config(format!("word vectors line {}: bad number", n + 1)))?;
            if values.len() != dim {
                return Err(ModelError::Dim {
                    what: "word vector",
                    expected: dim,
                    got: values.len(),
                });
            }
            if let Some(id) = vocab.get(&token.to_lowercase()) {
                emb.table.row_mut(id as usize).copy_from_slice(&values);
                replaced += 1;
            }
        }
        Ok(replaced)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_mrr: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_dev_mrr: f64,
    pub train_instances: usize,
    pub train_pairs: usize,
    pub dev_instances: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedNeural {
    pub model: NeuralModel,
    pub history: Vec<EpochRecord>,
    pub manifest: TrainingManifest,
}

struct Encoded {
    streams: Vec<TokenStream>,
    positive: usize,
}

fn encode_instances(model: &NeuralModel, instances: &[RankingInstance]) -> Result<Vec<Encoded>, ModelError> {
    instances
        .par_iter()
        .map(|inst| {
            let streams = inst
                .candidates
                .iter()
                .map(|c| model.encode(&inst.context, &c.turn))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Encoded {
                streams,
                positive: inst.positive_position,
            })
        })
        .collect()
}

fn score_encoded(params: &ScorerParams<f32>, data: &[Encoded]) -> Result<Vec<Vec<f64>>, ModelError> {
    data.par_iter()
        .map(|e| {
            e.streams
                .iter()
                .map(|s| params.score(s).map(f64::from))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect()
}

/// Candidate scores of each instance, in candidate order.
pub fn score_instances(model: &NeuralModel, instances: &[RankingInstance]) -> Result<Vec<Vec<f64>>, ModelError> {
    score_encoded(&model.params, &encode_instances(model, instances)?)
}

/// Pairs per gradient work unit; partial gradients are summed in unit order
/// so results do not depend on the thread count.
const PAIRS_PER_UNIT: usize = 4;

/// Trains on every (original, adversarial) pair of `train` with the margin
/// loss and Adam, keeping the parameters of the epoch with the best dev MRR.
pub fn train_neural(
    train: &[RankingInstance],
    dev: &[RankingInstance],
    config: &NeuralConfig,
    encoding: &EncodingConfig,
) -> Result<TrainedNeural, ModelError> {
    train_neural_from(NeuralModel::new(config.clone(), encoding.clone())?, train, dev)
}

/// As [`train_neural`], starting from the parameters of `model`.
pub fn train_neural_from(
    mut model: NeuralModel,
    train: &[RankingInstance],
    dev: &[RankingInstance],
) -> Result<TrainedNeural, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrain);
    }
    if dev.is_empty() {
        return Err(ModelError::EmptyDev);
    }
    let config = model.config.clone();
    let train_enc = encode_instances(&model, train)?;
    let dev_enc = encode_instances(&model, dev)?;
    let mut pairs: Vec<(usize, usize)> = train_enc
        .iter()
        .enumerate()
        .flat_map(|(i, e)| (0..e.streams.len()).filter(move |&j| j != e.positive).map(move |j| (i, j)))
        .collect();
    if pairs.is_empty() {
        return Err(ModelError::EmptyTrain);
    }
    let n_pairs = pairs.len();
    let sizes: Vec<usize> = model.params.named_tensors().iter().map(|(_, t)| t.len()).collect();
    let mut adam = AdamState::<f32>::new(&sizes, config.adam);
    let lr = config.lr as f32;
    let margin = config.margin as f32;
    let dev_positives: Vec<usize> = dev_enc.iter().map(|e| e.positive).collect();

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ScorerParams<f32>)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        let mut rng = sub_rng(config.seed, "epoch", epoch as u64);
        pairs.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for (b, batch) in pairs.chunks(config.batch).enumerate() {
            let params = &model.params;
            let partials: Vec<Result<(f64, ScorerParams<f32>), ModelError>> = batch
                .par_chunks(PAIRS_PER_UNIT)
                .map(|unit| {
                    let mut g = params.zeros_like();
                    let mut l = 0.0f64;
                    for &(i, j) in unit {
                        let e = &train_enc[i];
                        l += f64::from(params.pair_loss_backward(&e.streams[e.positive], &e.streams[j], margin, &mut g)?);
                    }
                    Ok((l, g))
                })
                .collect();
            let mut grads: Option<ScorerParams<f32>> = None;
            let mut batch_loss = 0.0;
            for part in partials {
                let (l, g) = part?;
                batch_loss += l;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.add_assign(&g),
                }
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::Divergence { epoch, batch: b });
            }
            loss_sum += batch_loss;
            let mut grads = grads.expect("nonempty batch");
            grads.scale(1.0 / batch.len() as f32);
            let g_refs: Vec<&Tensor<f32>> = grads.named_tensors().into_iter().map(|(_, t)| t).collect();
            let g_slices: Vec<&[f32]> = g_refs.iter().map(|t| t.data()).collect();
            let mut p_slices: Vec<&mut [f32]> = model.params.tensors_mut().into_iter().map(|t| t.data_mut()).collect();
            adam_step(&mut p_slices, &g_slices, &mut adam, lr)?;
        }
        let dev_scores = score_encoded(&model.params, &dev_enc)?;
        let m = evaluate_selection(&dev_scores, &dev_positives)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_pairs as f64,
            dev_mrr: m.mrr,
            dev_accuracy: m.accuracy,
        });
        if best.as_ref().is_none_or(|(_, mrr, _)| m.mrr > *mrr) {
            best = Some((epoch, m.mrr, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (best_epoch, best_dev_mrr, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainedNeural {
        model,
        manifest: TrainingManifest {
            seed: config.seed,
            epochs_run: history.len(),
            best_epoch,
            best_dev_mrr,
            train_instances: train.len(),
            train_pairs: n_pairs,
            dev_instances: dev.len(),
        },
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::grad_check;
    use rand::SeedableRng;

    fn tiny_cfg(channels: Channels) -> NeuralConfig {
        NeuralConfig {
            channels,
            emb_dim_word: 3,
            emb_dim_other: 2,
            gru_layers: 2,
            gru_hidden: 4,
            head_hidden: 5,
            ..NeuralConfig::default()
        }
    }

    fn stream(word: Vec<u32>, turn: Vec<u32>) -> TokenStream {
        TokenStream {
            len: word.len(),
            word: Some(word),
            role: None,
            da: None,
            turn: Some(turn),
        }
    }

    fn sizes() -> Vec<(Channel, usize)> {
        vec![(Channel::Word, 6), (Channel::Turn, 4)]
    }

    #[test]
    fn zero_parameters_score_zero() {
        let cfg = tiny_cfg(Channels::new(true, false, false, true));
        let p = ScorerParams::<f64>::zeros(&cfg, &sizes());
        assert_eq!(p.score(&stream(vec![1, 2, 3], vec![0, 1, 2])).unwrap(), 0.0);
        assert_eq!(p.score(&stream(vec![5], vec![3])).unwrap(), 0.0);
    }

    #[test]
    fn single_position_pool_is_the_output() {
        let cfg = tiny_cfg(Channels::new(true, false, false, true));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let p = ScorerParams::<f64>::init(&cfg, &sizes(), &mut rng);
        let s = stream(vec![4], vec![2]);
        let (_, cache) = p.forward(&s).unwrap();
        let mut x: Vec<f64> = p.embeddings[0].table.row(4).to_vec();
        x.extend_from_slice(p.embeddings[1].table.row(2));
        let mut xs = vec![x];
        for l in &p.layers {
            xs = l.forward(&xs).0;
        }
        assert_eq!(cache.pooled, xs[0]);
    }

    #[test]
    fn order_sensitive() {
        let cfg = tiny_cfg(Channels::new(true, false, false, true));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let p = ScorerParams::<f64>::init(&cfg, &sizes(), &mut rng);
        let a = p.score(&stream(vec![3, 1, 4, 5], vec![0, 1, 2, 3])).unwrap();
        let b = p.score(&stream(vec![3, 4, 1, 5], vec![0, 2, 1, 3])).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn rejects_mismatched_streams() {
        let cfg = tiny_cfg(Channels::new(true, false, false, true));
        let p = ScorerParams::<f64>::zeros(&cfg, &sizes());
        let mut s = stream(vec![1], vec![0]);
        s.turn = None;
        assert!(matches!(p.score(&s), Err(ModelError::ChannelMismatch { .. })));
        assert!(matches!(
            p.score(&stream(vec![9], vec![0])),
            Err(ModelError::VocabRange { id: 9, .. })
        ));
    }

    #[test]
    fn full_pair_gradient_matches_finite_differences() {
        let cfg = tiny_cfg(Channels::new(true, false, false, true));
        let pos = stream(vec![1, 2, 3], vec![0, 1, 2]);
        let neg = stream(vec![1, 2, 5], vec![0, 1, 2]);
        let mut checked = 0;
        for seed in 0..10 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let template = ScorerParams::<f64>::init(&cfg, &sizes(), &mut rng);
            let theta = template.flatten();
            // a large margin keeps the hinge active
            let obj = PairObjective {
                template,
                pos: &pos,
                neg: &neg,
                margin: 5.0,
            };
            let r = grad_check(&obj, &theta, 1e-5, 1e-4).unwrap();
            if r.status == crate::engine::GradCheckStatus::Excluded {
                continue;
            }
            assert!(r.passed(), "seed {seed}: {r:?}");
            checked += 1;
        }
        assert!(checked >= 5);
    }

    #[test]
    fn flatten_round_trip() {
        let cfg = tiny_cfg(Channels::new(true, false, false, true));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = ScorerParams::<f64>::init(&cfg, &sizes(), &mut rng);
        let mut q = p.zeros_like();
        q.set_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[0.0]).is_err());
    }
}
