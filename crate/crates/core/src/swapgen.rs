//! Weakly supervised response-selection data.
//!
//! Each insertion point splits a dialogue into a context and its true next
//! turn. Negatives are swapped in either from later in the same dialogue
//! (internal swap) or from other dialogues of the same split (external swap).
//! The module also reads rated candidate sets with per-worker scores.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dialogue, Turn};
use crate::rng::{sub_rng, Rng};

#[derive(Debug, Error)]
pub enum SwapError {
    #[error("dialogue `{0}` has no admissible insertion point")]
    TooShort(String),
    #[error("dialogue `{id}`: need {needed} negatives, pool has {available}")]
    InsufficientPool {
        id: String,
        needed: usize,
        available: usize,
    },
    #[error("dialogue `{0}` not in split")]
    NotInSplit(String),
    #[error("empty split")]
    EmptySplit,
    #[error("invalid context range [{0}, {1}]")]
    BadRange(usize, usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("instance `{id}`: {message}")]
    BadRated { id: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsertionPoint {
    pub dialogue_id: String,
    /// Turns before the positive; the positive is turn `context_len` (0-based).
    pub context_len: usize,
}

impl InsertionPoint {
    pub fn positive_idx(&self) -> usize {
        self.context_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Internal,
    External,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Internal => "internal",
            Provenance::External => "external",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwapMode {
    Internal,
    External,
    /// Half internal (rounded up), half external.
    Mixed,
}

impl SwapMode {
    pub fn split_count(self, n_neg: usize) -> (usize, usize) {
        match self {
            SwapMode::Internal => (n_neg, 0),
            SwapMode::External => (0, n_neg),
            SwapMode::Mixed => (n_neg.div_ceil(2), n_neg / 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub provenance: Provenance,
    pub source_dialogue: String,
    pub source_turn: usize,
    pub turn: Turn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingInstance {
    pub dialogue_id: String,
    pub context_len: usize,
    pub positive_position: usize,
    pub context: Vec<Turn>,
    pub candidates: Vec<Candidate>,
}

impl RankingInstance {
    pub fn n_neg(&self) -> usize {
        self.candidates.len() - 1
    }

    pub fn positive(&self) -> &Candidate {
        &self.candidates[self.positive_position]
    }

    /// 1 for the original turn, 0 otherwise.
    pub fn relevance(&self) -> Vec<f64> {
        self.candidates
            .iter()
            .map(|c| if c.provenance == Provenance::Original { 1.0 } else { 0.0 })
            .collect()
    }
}

/// A split with a flat index over all of its turns.
pub struct Split<'a> {
    dialogues: &'a [Dialogue],
    offsets: Vec<usize>,
    by_id: HashMap<&'a str, usize>,
}

impl<'a> Split<'a> {
    pub fn new(dialogues: &'a [Dialogue]) -> Result<Self, SwapError> {
        if dialogues.is_empty() {
            return Err(SwapError::EmptySplit);
        }
        let mut offsets = Vec::with_capacity(dialogues.len() + 1);
        let mut acc = 0;
        for d in dialogues {
            offsets.push(acc);
            acc += d.turns.len();
        }
        offsets.push(acc);
        let by_id = dialogues.iter().enumerate().map(|(i, d)| (d.id.as_str(), i)).collect();
        Ok(Split {
            dialogues,
            offsets,
            by_id,
        })
    }

    pub fn dialogue(&self, id: &str) -> Result<&'a Dialogue, SwapError> {
        self.by_id
            .get(id)
            .map(|&i| &self.dialogues[i])
            .ok_or_else(|| SwapError::NotInSplit(id.to_string()))
    }

    fn total_turns(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn locate(&self, flat: usize) -> (usize, usize) {
        let d = self.offsets.partition_point(|&o| o <= flat) - 1;
        (d, flat - self.offsets[d])
    }
}

/// Samples up to `n` distinct insertion points uniformly. A context length `c`
/// is admissible when `1 <= c <= |turns| - 1`, it lies in `ctx_range`, and at
/// least `min_after` turns follow the positive.
pub fn gen_insertion_points(
    d: &Dialogue,
    n: usize,
    ctx_range: Option<(usize, usize)>,
    min_after: usize,
    seed: u64,
) -> Result<Vec<InsertionPoint>, SwapError> {
    if let Some((lo, hi)) = ctx_range {
        if lo < 1 || lo > hi {
            return Err(SwapError::BadRange(lo, hi));
        }
    }
    let t = d.turns.len();
    let admissible: Vec<usize> = (1..t)
        .filter(|&c| ctx_range.is_none_or(|(lo, hi)| c >= lo && c <= hi))
        .filter(|&c| t - 1 - c >= min_after)
        .collect();
    if admissible.is_empty() {
        return Err(SwapError::TooShort(d.id.clone()));
    }
    let mut rng = sub_rng(seed, "insertion", 0);
    let take = n.min(admissible.len());
    let mut chosen: Vec<usize> = index::sample(&mut rng, admissible.len(), take)
        .into_iter()
        .map(|i| admissible[i])
        .collect();
    chosen.sort_unstable();
    Ok(chosen
        .into_iter()
        .map(|c| InsertionPoint {
            dialogue_id: d.id.clone(),
            context_len: c,
        })
        .collect())
}

/// Draws `count` negatives for an insertion point, without replacement and
/// never content-identical to the positive.
pub fn sample_negatives(
    point: &InsertionPoint,
    mode: SwapMode,
    count: usize,
    split: &Split<'_>,
    rng: &mut Rng,
) -> Result<Vec<Candidate>, SwapError> {
    let (n_int, n_ext) = mode.split_count(count);
    let mut out = sample_internal(point, n_int, split, rng)?;
    out.extend(sample_external(point, n_ext, split, rng)?);
    Ok(out)
}

fn sample_internal(
    point: &InsertionPoint,
    count: usize,
    split: &Split<'_>,
    rng: &mut Rng,
) -> Result<Vec<Candidate>, SwapError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let d = split.dialogue(&point.dialogue_id)?;
    let pos = &d.turns[point.positive_idx()];
    let pool: Vec<usize> = (point.positive_idx() + 1..d.turns.len())
        .filter(|&i| !d.turns[i].same_content(pos))
        .collect();
    if pool.len() < count {
        return Err(SwapError::InsufficientPool {
            id: d.id.clone(),
            needed: count,
            available: pool.len(),
        });
    }
    Ok(index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|i| {
            let ti = pool[i];
            Candidate {
                provenance: Provenance::Internal,
                source_dialogue: d.id.clone(),
                source_turn: ti,
                turn: d.turns[ti].clone(),
            }
        })
        .collect())
}

fn sample_external(
    point: &InsertionPoint,
    count: usize,
    split: &Split<'_>,
    rng: &mut Rng,
) -> Result<Vec<Candidate>, SwapError> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let own = *split
        .by_id
        .get(point.dialogue_id.as_str())
        .ok_or_else(|| SwapError::NotInSplit(point.dialogue_id.clone()))?;
    let pos = &split.dialogues[own].turns[point.positive_idx()];
    let own_start = split.offsets[own];
    let own_len = split.offsets[own + 1] - own_start;
    let others = split.total_turns() - own_len;
    let admissible = |flat: usize| {
        let (di, ti) = split.locate(flat);
        !split.dialogues[di].turns[ti].same_content(pos)
    };

    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    let mut attempts = 0;
    while chosen.len() < count && attempts < 64 * count && others > 0 {
        attempts += 1;
        let mut r = rng.gen_range(0..others);
        if r >= own_start {
            r += own_len;
        }
        if !chosen.contains(&r) && admissible(r) {
            chosen.push(r);
        }
    }
    if chosen.len() < count {
        // Rejection stalled: fall back to the explicit pool.
        let pool: Vec<usize> = (0..split.total_turns())
            .filter(|&f| !(own_start..own_start + own_len).contains(&f))
            .filter(|&f| !chosen.contains(&f) && admissible(f))
            .collect();
        let missing = count - chosen.len();
        if pool.len() < missing {
            return Err(SwapError::InsufficientPool {
                id: point.dialogue_id.clone(),
                needed: count,
                available: chosen.len() + pool.len(),
            });
        }
        chosen.extend(index::sample(rng, pool.len(), missing).into_iter().map(|i| pool[i]));
    }
    Ok(chosen
        .into_iter()
        .map(|flat| {
            let (di, ti) = split.locate(flat);
            let d = &split.dialogues[di];
            Candidate {
                provenance: Provenance::External,
                source_dialogue: d.id.clone(),
                source_turn: ti,
                turn: d.turns[ti].clone(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub points_per_dialogue: usize,
    pub n_neg: usize,
    pub mode: SwapMode,
    pub ctx_range: Option<(usize, usize)>,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            points_per_dialogue: 10,
            n_neg: 9,
            mode: SwapMode::External,
            ctx_range: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub mode: SwapMode,
    pub points_per_dialogue: usize,
    pub n_neg: usize,
    pub ctx_range: Option<(usize, usize)>,
    pub dialogues: usize,
    pub insertion_points: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionDataset {
    pub instances: Vec<RankingInstance>,
    pub manifest: DatasetManifest,
}

/// Generates ranking instances for every dialogue of a split. Each dialogue
/// draws from its own derived seed; output is ordered by dialogue id, then by
/// context length, and does not depend on the order of `split`.
pub fn build_selection_dataset(
    split: &[Dialogue],
    cfg: &DatasetConfig,
) -> Result<SelectionDataset, SwapError> {
    let mut sorted = split.to_vec();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let index = Split::new(&sorted)?;
    let (n_int, _) = cfg.mode.split_count(cfg.n_neg);

    let per_dialogue: Vec<Vec<RankingInstance>> = sorted
        .par_iter()
        .map(|d| {
            let points = gen_insertion_points(
                d,
                cfg.points_per_dialogue,
                cfg.ctx_range,
                n_int,
                crate::rng::derive_seed(cfg.seed, &d.id, 0),
            )?;
            let mut rng = sub_rng(cfg.seed, &d.id, 1);
            points
                .into_iter()
                .map(|p| {
                    let mut candidates = vec![Candidate {
                        provenance: Provenance::Original,
                        source_dialogue: d.id.clone(),
                        source_turn: p.positive_idx(),
                        turn: d.turns[p.positive_idx()].clone(),
                    }];
                    candidates.extend(sample_negatives(&p, cfg.mode, cfg.n_neg, &index, &mut rng)?);
                    candidates.shuffle(&mut rng);
                    let positive_position = candidates
                        .iter()
                        .position(|c| c.provenance == Provenance::Original)
                        .expect("original present");
                    Ok(RankingInstance {
                        dialogue_id: d.id.clone(),
                        context_len: p.context_len,
                        positive_position,
                        context: d.turns[..p.context_len].to_vec(),
                        candidates,
                    })
                })
                .collect()
        })
        .collect::<Result<_, SwapError>>()?;

    let instances: Vec<RankingInstance> = per_dialogue.into_iter().flatten().collect();
    let pairs = instances.iter().map(RankingInstance::n_neg).sum();
    let manifest = DatasetManifest {
        seed: cfg.seed,
        mode: cfg.mode,
        points_per_dialogue: cfg.points_per_dialogue,
        n_neg: cfg.n_neg,
        ctx_range: cfg.ctx_range,
        dialogues: split.len(),
        insertion_points: instances.len(),
        pairs,
    };
    Ok(SelectionDataset {
        instances,
        manifest,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SwapError + '_ {
    move |source| SwapError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn instances_to_jsonl(instances: &[RankingInstance]) -> String {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serde_json::to_string(inst).expect("instance serializes"));
        out.push('\n');
    }
    out
}

pub fn write_instances(path: &Path, instances: &[RankingInstance]) -> Result<(), SwapError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(instances_to_jsonl(instances).as_bytes())
        .map_err(io_err(path))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, SwapError> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    parse_jsonl(&content, &path.display().to_string())
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(content: &str, name: &str) -> Result<Vec<T>, SwapError> {
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let de = &mut serde_json::Deserializer::from_str(l);
            serde_path_to_error::deserialize(de).map_err(|e| SwapError::Parse {
                path: name.to_string(),
                line: i + 1,
                message: format!("{}: {}", e.path(), e.inner()),
            })
        })
        .collect()
}

pub fn read_instances(path: &Path) -> Result<Vec<RankingInstance>, SwapError> {
    let v: Vec<RankingInstance> = read_jsonl(path)?;
    for inst in &v {
        let originals = inst
            .candidates
            .iter()
            .filter(|c| c.provenance == Provenance::Original)
            .count();
        if originals != 1
            || inst.positive_position >= inst.candidates.len()
            || inst.candidates[inst.positive_position].provenance != Provenance::Original
        {
            return Err(SwapError::BadRated {
                id: inst.dialogue_id.clone(),
                message: "instance must have exactly one original candidate at positive_position"
                    .into(),
            });
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedCandidate {
    pub provenance: Provenance,
    pub turn: Turn,
    /// Mean of `ratings` when those were given.
    pub mean_rating: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratings: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedInstance {
    pub id: String,
    pub context: Vec<Turn>,
    pub candidates: Vec<RatedCandidate>,
}

impl RatedInstance {
    pub fn ratings(&self) -> Vec<f64> {
        self.candidates.iter().map(|c| c.mean_rating).collect()
    }

    pub fn turns(&self) -> Vec<Turn> {
        self.candidates.iter().map(|c| c.turn.clone()).collect()
    }
}

#[derive(Deserialize)]
struct RawRatedCandidate {
    provenance: Provenance,
    turn: Turn,
    #[serde(default)]
    ratings: Option<Vec<i64>>,
    #[serde(default)]
    mean_rating: Option<f64>,
}

#[derive(Deserialize)]
struct RawRatedInstance {
    id: String,
    context: Vec<Turn>,
    candidates: Vec<RawRatedCandidate>,
}

/// Parses rated candidate sets. With `strict`, every instance must have the
/// 7-candidate layout (1 original, 3 internal, 3 external).
pub fn parse_rated(content: &str, name: &str, strict: bool) -> Result<Vec<RatedInstance>, SwapError> {
    let raw: Vec<RawRatedInstance> = parse_jsonl(content, name)?;
    raw.into_iter()
        .map(|r| {
            let bad = |message: String| SwapError::BadRated {
                id: r.id.clone(),
                message,
            };
            if r.context.is_empty() {
                return Err(bad("empty context".into()));
            }
            if strict {
                let count = |p| r.candidates.iter().filter(|c| c.provenance == p).count();
                if r.candidates.len() != 7
                    || count(Provenance::Original) != 1
                    || count(Provenance::Internal) != 3
                    || count(Provenance::External) != 3
                {
                    return Err(bad(format!(
                        "expected 7 candidates (1 original, 3 internal, 3 external), got {}",
                        r.candidates.len()
                    )));
                }
            }
            let mut candidates = Vec::with_capacity(r.candidates.len());
            for (i, c) in r.candidates.iter().enumerate() {
                let (mean, ratings) = match (&c.ratings, c.mean_rating) {
                    (Some(rs), _) => {
                        if rs.is_empty() {
                            return Err(bad(format!("candidate {i}: empty ratings")));
                        }
                        if let Some(x) = rs.iter().find(|x| !(1..=3).contains(*x)) {
                            return Err(bad(format!("candidate {i}: rating {x} outside 1..=3")));
                        }
                        let rs: Vec<u8> = rs.iter().map(|&x| x as u8).collect();
                        let mean = rs.iter().map(|&x| f64::from(x)).sum::<f64>() / rs.len() as f64;
                        (mean, Some(rs))
                    }
                    (None, Some(m)) => {
                        if !(1.0..=3.0).contains(&m) {
                            return Err(bad(format!("candidate {i}: mean rating {m} outside [1, 3]")));
                        }
                        (m, None)
                    }
                    (None, None) => {
                        return Err(bad(format!("candidate {i}: needs `ratings` or `mean_rating`")))
                    }
                };
                candidates.push(RatedCandidate {
                    provenance: c.provenance,
                    turn: c.turn.clone(),
                    mean_rating: mean,
                    ratings,
                });
            }
            Ok(RatedInstance {
                id: r.id,
                context: r.context,
                candidates,
            })
        })
        .collect()
}

pub fn load_rated_testset(path: &Path, strict: bool) -> Result<Vec<RatedInstance>, SwapError> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    parse_rated(&content, &path.display().to_string(), strict)
}
