//! Entity grids and transition-probability features.
//!
//! A grid has one row per turn and one column per distinct entity head; each
//! cell holds the entity's grammatical role in that turn (or `-`). Features are
//! the relative frequencies of every length-`k` role sequence read down the
//! columns. The dialogue-act variant reads the same windows along the flat
//! sequence of acts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::{DaTag, Dialogue, GrammRole, Turn, Vocab};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("transition length must be >= 2, got {0}")]
    BadLength(usize),
    #[error("saliency must be >= 1, got {0}")]
    BadSaliency(usize),
    #[error("unknown dialogue act `{0}`")]
    UnknownDa(String),
    #[error("feature blocks built with different transition lengths")]
    LengthMismatch,
    #[error("transition space too large: {0}^{1}")]
    TooLarge(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TransitionConfig {
    /// Window length; the conditioning history is `k - 1`.
    pub k: usize,
    /// Minimum number of turns an entity must occur in to keep its column.
    pub saliency: usize,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        TransitionConfig { k: 2, saliency: 1 }
    }
}

impl TransitionConfig {
    pub fn new(k: usize, saliency: usize) -> Result<Self, GridError> {
        let c = TransitionConfig { k, saliency };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.k < 2 {
            return Err(GridError::BadLength(self.k));
        }
        if self.saliency < 1 {
            return Err(GridError::BadSaliency(self.saliency));
        }
        Ok(())
    }

    pub fn history(&self) -> usize {
        self.k - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityGrid {
    /// Column labels, sorted.
    pub entities: Vec<String>,
    /// `columns[e][t]`.
    pub columns: Vec<Vec<GrammRole>>,
    pub n_turns: usize,
}

impl EntityGrid {
    pub fn n_entities(&self) -> usize {
        self.columns.len()
    }

    pub fn cell(&self, turn: usize, entity: usize) -> GrammRole {
        self.columns[entity][turn]
    }

    /// Number of turns in which the entity is present.
    pub fn mention_count(&self, entity: usize) -> usize {
        self.columns[entity]
            .iter()
            .filter(|&&r| r != GrammRole::Absent)
            .count()
    }

    pub fn from_columns(columns: Vec<Vec<GrammRole>>) -> Self {
        let n_turns = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == n_turns), "ragged grid");
        EntityGrid {
            entities: (0..columns.len()).map(|i| format!("e{i}")).collect(),
            columns,
            n_turns,
        }
    }
}

pub fn build_grid(d: &Dialogue) -> EntityGrid {
    build_grid_from_turns(&d.turns)
}

pub fn build_grid_from_turns(turns: &[Turn]) -> EntityGrid {
    let n = turns.len();
    let mut cols: BTreeMap<&str, Vec<GrammRole>> = BTreeMap::new();
    for (t, turn) in turns.iter().enumerate() {
        for m in turn.mentions() {
            let col = cols
                .entry(m.head.as_str())
                .or_insert_with(|| vec![GrammRole::Absent; n]);
            if m.role.salience() > col[t].salience() {
                col[t] = m.role;
            }
        }
    }
    let (entities, columns) = cols.into_iter().map(|(k, v)| (k.to_string(), v)).unzip();
    EntityGrid {
        entities,
        columns,
        n_turns: n,
    }
}

/// Relative frequencies over a fixed, lexicographically ordered transition space.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionVector {
    pub k: usize,
    pub values: Vec<f64>,
}

impl TransitionVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn space_size(alphabet: usize, k: usize) -> Result<usize, GridError> {
    u32::try_from(k)
        .ok()
        .and_then(|k| alphabet.checked_pow(k))
        .filter(|&s| s <= 1 << 26)
        .ok_or(GridError::TooLarge(alphabet, k))
}

/// Base-`alphabet` index of a window, first element most significant.
pub fn window_index(window: &[usize], alphabet: usize) -> usize {
    window.iter().fold(0, |acc, &s| acc * alphabet + s)
}

pub fn entity_transition_features(
    g: &EntityGrid,
    cfg: &TransitionConfig,
) -> Result<TransitionVector, GridError> {
    cfg.validate()?;
    let size = space_size(GrammRole::ALL.len(), cfg.k)?;
    let mut values = vec![0.0; size];
    let mut total = 0usize;
    if g.n_turns >= cfg.k {
        for (e, col) in g.columns.iter().enumerate() {
            if g.mention_count(e) < cfg.saliency {
                continue;
            }
            let idx: Vec<usize> = col.iter().map(|r| r.index()).collect();
            for w in idx.windows(cfg.k) {
                values[window_index(w, 4)] += 1.0;
                total += 1;
            }
        }
    }
    if total > 0 {
        let t = total as f64;
        values.iter_mut().for_each(|v| *v /= t);
    }
    Ok(TransitionVector { k: cfg.k, values })
}

/// Flat dialogue-act sequence in dialogue order.
pub fn da_sequence(d: &Dialogue) -> Vec<DaTag> {
    da_sequence_of(&d.turns)
}

pub fn da_sequence_of(turns: &[Turn]) -> Vec<DaTag> {
    turns.iter().flat_map(|t| t.das().cloned()).collect()
}

fn da_ids(seq: &[DaTag], vocab: &Vocab) -> Result<Vec<usize>, GridError> {
    seq.iter()
        .map(|t| {
            vocab
                .get(t.as_str())
                .map(|i| i as usize)
                .ok_or_else(|| GridError::UnknownDa(t.0.clone()))
        })
        .collect()
}

pub fn da_transition_features(
    seq: &[DaTag],
    cfg: &TransitionConfig,
    vocab: &Vocab,
) -> Result<TransitionVector, GridError> {
    cfg.validate()?;
    let a = vocab.len();
    let size = space_size(a, cfg.k)?;
    let ids = da_ids(seq, vocab)?;
    let mut values = vec![0.0; size];
    if ids.len() >= cfg.k {
        let windows = ids.len() - cfg.k + 1;
        for w in ids.windows(cfg.k) {
            values[window_index(w, a)] += 1.0;
        }
        values.iter_mut().for_each(|v| *v /= windows as f64);
    }
    Ok(TransitionVector { k: cfg.k, values })
}

/// Entity block followed by the dialogue-act block.
pub fn joint_features(ev: &TransitionVector, dv: &TransitionVector) -> Result<Vec<f64>, GridError> {
    if ev.k != dv.k {
        return Err(GridError::LengthMismatch);
    }
    let mut out = Vec::with_capacity(ev.len() + dv.len());
    out.extend_from_slice(&ev.values);
    out.extend_from_slice(&dv.values);
    Ok(out)
}

/// Column names for the entity block, e.g. `ent:O-` for k = 2.
pub fn entity_feature_names(k: usize) -> Vec<String> {
    window_names(k, &GrammRole::ALL.map(|r| r.symbol().to_string()), "ent:", "")
}

/// Column names for the dialogue-act block, e.g. `da:sd>qy`.
pub fn da_feature_names(k: usize, vocab: &Vocab) -> Vec<String> {
    window_names(k, vocab.tokens(), "da:", ">")
}

fn window_names(k: usize, alphabet: &[String], prefix: &str, sep: &str) -> Vec<String> {
    let a = alphabet.len();
    let size = a.pow(k as u32);
    (0..size)
        .map(|mut i| {
            let mut parts = vec![""; k];
            for slot in parts.iter_mut().rev() {
                *slot = &alphabet[i % a];
                i /= a;
            }
            format!("{prefix}{}", parts.join(sep))
        })
        .collect()
}

/// Which grid features feed a ranker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFeatureSet {
    Entity,
    Da,
    Joint,
}

impl GridFeatureSet {
    pub fn dim(self, k: usize, da_vocab: &Vocab) -> usize {
        let e = 4usize.pow(k as u32);
        let d = da_vocab.len().pow(k as u32);
        match self {
            GridFeatureSet::Entity => e,
            GridFeatureSet::Da => d,
            GridFeatureSet::Joint => e + d,
        }
    }

    pub fn names(self, k: usize, da_vocab: &Vocab) -> Vec<String> {
        match self {
            GridFeatureSet::Entity => entity_feature_names(k),
            GridFeatureSet::Da => da_feature_names(k, da_vocab),
            GridFeatureSet::Joint => {
                let mut n = entity_feature_names(k);
                n.extend(da_feature_names(k, da_vocab));
                n
            }
        }
    }
}

/// Feature vector of a turn sequence under the chosen feature set.
pub fn dialogue_features(
    turns: &[Turn],
    set: GridFeatureSet,
    cfg: &TransitionConfig,
    da_vocab: &Vocab,
) -> Result<Vec<f64>, GridError> {
    let ent = || entity_transition_features(&build_grid_from_turns(turns), cfg);
    let da = || da_transition_features(&da_sequence_of(turns), cfg, da_vocab);
    Ok(match set {
        GridFeatureSet::Entity => ent()?.values,
        GridFeatureSet::Da => da()?.values,
        GridFeatureSet::Joint => joint_features(&ent()?, &da()?)?,
    })
}

/// TSV with a header row naming every transition, one dialogue per row.
pub fn features_tsv(
    corpus: &[Dialogue],
    set: GridFeatureSet,
    cfg: &TransitionConfig,
    da_vocab: &Vocab,
) -> Result<String, GridError> {
    let mut out = String::from("dialogue_id");
    for name in set.names(cfg.k, da_vocab) {
        out.push('\t');
        out.push_str(&name);
    }
    out.push('\n');
    for d in corpus {
        out.push_str(&d.id);
        for v in dialogue_features(&d.turns, set, cfg, da_vocab)? {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Add-one smoothed conditional transition counts, estimated from a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionStats {
    pub k: usize,
    pub alphabet: usize,
    /// Counts of full windows, indexed like a `TransitionVector`.
    window_counts: Vec<f64>,
    /// Counts of histories (first `k-1` symbols of every window).
    history_counts: Vec<f64>,
}

impl TransitionStats {
    fn new(k: usize, alphabet: usize) -> Result<Self, GridError> {
        let size = space_size(alphabet, k)?;
        Ok(TransitionStats {
            k,
            alphabet,
            window_counts: vec![0.0; size],
            history_counts: vec![0.0; size / alphabet],
        })
    }

    fn observe(&mut self, seq: &[usize]) {
        for w in seq.windows(self.k) {
            self.window_counts[window_index(w, self.alphabet)] += 1.0;
            self.history_counts[window_index(&w[..self.k - 1], self.alphabet)] += 1.0;
        }
    }

    /// Entity-role transitions over all columns of all training grids.
    pub fn estimate_entity(corpus: &[Dialogue], cfg: &TransitionConfig) -> Result<Self, GridError> {
        cfg.validate()?;
        let mut s = Self::new(cfg.k, 4)?;
        for d in corpus {
            let g = build_grid(d);
            for (e, col) in g.columns.iter().enumerate() {
                if g.mention_count(e) >= cfg.saliency {
                    let idx: Vec<usize> = col.iter().map(|r| r.index()).collect();
                    s.observe(&idx);
                }
            }
        }
        Ok(s)
    }

    pub fn estimate_da(
        corpus: &[Dialogue],
        cfg: &TransitionConfig,
        vocab: &Vocab,
    ) -> Result<Self, GridError> {
        cfg.validate()?;
        let mut s = Self::new(cfg.k, vocab.len())?;
        for d in corpus {
            s.observe(&da_ids(&da_sequence(d), vocab)?);
        }
        Ok(s)
    }

    /// `p(window[k-1] | window[..k-1])` with add-one smoothing.
    pub fn conditional(&self, window: &[usize]) -> f64 {
        let w = self.window_counts[window_index(window, self.alphabet)];
        let h = self.history_counts[window_index(&window[..self.k - 1], self.alphabet)];
        (w + 1.0) / (h + self.alphabet as f64)
    }
}

/// Which sequence a generative score reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerativeView<'a> {
    Entity,
    Da(&'a Vocab),
}

/// Mean log conditional probability of the dialogue's transitions: the sum of
/// `log p(r_t | history)` over every full window of every kept column (or of
/// the act sequence), divided by the number of windows. Zero when there is no
/// window.
pub fn generative_coherence_score(
    d: &Dialogue,
    cfg: &TransitionConfig,
    stats: &TransitionStats,
    view: GenerativeView<'_>,
) -> Result<f64, GridError> {
    cfg.validate()?;
    if stats.k != cfg.k {
        return Err(GridError::LengthMismatch);
    }
    let seqs: Vec<Vec<usize>> = match view {
        GenerativeView::Entity => {
            let g = build_grid(d);
            (0..g.n_entities())
                .filter(|&e| g.mention_count(e) >= cfg.saliency)
                .map(|e| g.columns[e].iter().map(|r| r.index()).collect())
                .collect()
        }
        GenerativeView::Da(vocab) => vec![da_ids(&da_sequence(d), vocab)?],
    };
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in &seqs {
        for w in s.windows(cfg.k) {
            sum += stats.conditional(w).ln();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}
