//! Synthetic corpora shared by the integration tests.
#![allow(dead_code)]

use dialcoh::corpus::{Dialogue, EntityMention, GrammRole, SpeakerId, Turn, UtteranceSegment};
use dialcoh::rng::sub_rng;
use dialcoh::swapgen::{Candidate, Provenance, RankingInstance};
use rand::seq::SliceRandom;
use rand::Rng;

pub const ACTS: [&str; 10] = ["aa", "b", "ba", "nn", "ny", "qw", "qy", "sd", "sv", "x"];
pub const TOPICS: usize = 20;
pub const WORDS_PER_TOPIC: usize = 6;

pub fn topic_word(topic: usize, j: usize) -> String {
    const STEMS: [&str; 6] = ["car", "dog", "job", "tax", "war", "pie"];
    format!("{}{}", STEMS[j % STEMS.len()], topic)
}

fn role(rng: &mut impl Rng) -> GrammRole {
    [GrammRole::S, GrammRole::O, GrammRole::X][rng.gen_range(0..3)]
}

fn speaker(i: usize) -> SpeakerId {
    if i.is_multiple_of(2) {
        SpeakerId::A
    } else {
        SpeakerId::B
    }
}

/// A turn of one segment whose heads come from `topic`.
pub fn topic_turn(topic: usize, who: SpeakerId, rng: &mut impl Rng) -> Turn {
    let n = rng.gen_range(1..=3);
    let mut idx: Vec<usize> = (0..WORDS_PER_TOPIC).collect();
    idx.shuffle(rng);
    let ents = idx[..n]
        .iter()
        .map(|&j| EntityMention::new(topic_word(topic, j), role(rng)))
        .collect();
    let da = ACTS[rng.gen_range(0..ACTS.len())];
    Turn::new(who, vec![UtteranceSegment::new(da, ents)])
}

/// Dialogue `i` discusses topic `i % TOPICS` for `turns` turns.
pub fn topic_corpus(n: usize, turns: usize, seed: u64) -> Vec<Dialogue> {
    (0..n)
        .map(|i| {
            let mut rng = sub_rng(seed, "synthetic", i as u64);
            let topic = i % TOPICS;
            Dialogue {
                id: format!("d{i:04}"),
                turns: (0..turns).map(|t| topic_turn(topic, speaker(t), &mut rng)).collect(),
            }
        })
        .collect()
}

/// Dialogues whose turns carry random acts and random heads, with a mix of
/// lengths in `min_turns..=max_turns`.
pub fn random_corpus(n: usize, min_turns: usize, max_turns: usize, seed: u64) -> Vec<Dialogue> {
    (0..n)
        .map(|i| {
            let mut rng = sub_rng(seed, "random", i as u64);
            let len = rng.gen_range(min_turns..=max_turns);
            Dialogue {
                id: format!("r{i:04}"),
                turns: (0..len)
                    .map(|t| {
                        let segs = rng.gen_range(1..=2);
                        let segments = (0..segs)
                            .map(|_| {
                                let n_ent = rng.gen_range(0..=2);
                                let ents = (0..n_ent)
                                    .map(|_| EntityMention::new(topic_word(rng.gen_range(0..4), rng.gen_range(0..6)), role(&mut rng)))
                                    .collect();
                                UtteranceSegment::new(ACTS[rng.gen_range(0..ACTS.len())], ents)
                            })
                            .collect();
                        Turn::new(speaker(t), segments)
                    })
                    .collect(),
            }
        })
        .collect()
}

fn da_turn(da: &str, who: SpeakerId) -> Turn {
    Turn::new(who, vec![UtteranceSegment::new(da, vec![])])
}

/// Contexts end in a yes-no question; the true reply is a yes answer and the
/// nine adversarial replies carry other acts.
pub fn question_answer_instances(n: usize, seed: u64) -> Vec<RankingInstance> {
    let others: Vec<&str> = ACTS.iter().copied().filter(|a| *a != "ny" && *a != "qy").collect();
    (0..n)
        .map(|i| {
            let mut rng = sub_rng(seed, "qa", i as u64);
            let ctx_len = rng.gen_range(2..=5);
            let mut context: Vec<Turn> = (0..ctx_len - 1)
                .map(|t| da_turn(others[rng.gen_range(0..others.len())], speaker(t)))
                .collect();
            context.push(da_turn("qy", speaker(ctx_len - 1)));
            let who = speaker(ctx_len);
            let mut candidates = vec![Candidate {
                provenance: Provenance::Original,
                source_dialogue: format!("qa{i}"),
                source_turn: ctx_len,
                turn: da_turn("ny", who),
            }];
            for k in 0..9 {
                candidates.push(Candidate {
                    provenance: Provenance::External,
                    source_dialogue: format!("neg{k}"),
                    source_turn: 0,
                    turn: da_turn(others[k % others.len()], who),
                });
            }
            candidates.shuffle(&mut rng);
            let positive_position = candidates.iter().position(|c| c.provenance == Provenance::Original).unwrap();
            RankingInstance {
                dialogue_id: format!("qa{i:03}"),
                context_len: ctx_len,
                positive_position,
                context,
                candidates,
            }
        })
        .collect()
}

/// Topic-consistent instances: the true next turn repeats at least two heads
/// of the context, the nine adversarial turns come from other topics.
pub fn topic_instances(n: usize, seed: u64) -> Vec<RankingInstance> {
    (0..n)
        .map(|i| {
            let mut rng = sub_rng(seed, "topic-instance", i as u64);
            let topic = rng.gen_range(0..TOPICS);
            let ctx_len = rng.gen_range(3..=6);
            let (context, seen) = loop {
                let context: Vec<Turn> = (0..ctx_len).map(|t| topic_turn(topic, speaker(t), &mut rng)).collect();
                let mut seen: Vec<String> = context.iter().flat_map(|t| t.mentions().map(|m| m.head.clone())).collect();
                seen.sort();
                seen.dedup();
                if seen.len() >= 2 {
                    break (context, seen);
                }
            };
            let who = speaker(ctx_len);
            let k = rng.gen_range(2..=seen.len().min(3));
            let mut picks = seen.clone();
            picks.shuffle(&mut rng);
            let ents = picks[..k].iter().map(|h| EntityMention::new(h.clone(), role(&mut rng))).collect();
            let pos = Turn::new(who, vec![UtteranceSegment::new(ACTS[rng.gen_range(0..ACTS.len())], ents)]);
            let mut candidates = vec![Candidate {
                provenance: Provenance::Original,
                source_dialogue: format!("t{i}"),
                source_turn: ctx_len,
                turn: pos,
            }];
            for j in 0..9 {
                let other = (topic + 1 + rng.gen_range(0..TOPICS - 1)) % TOPICS;
                candidates.push(Candidate {
                    provenance: Provenance::External,
                    source_dialogue: format!("o{j}"),
                    source_turn: 0,
                    turn: topic_turn(other, who, &mut rng),
                });
            }
            candidates.shuffle(&mut rng);
            let positive_position = candidates.iter().position(|c| c.provenance == Provenance::Original).unwrap();
            RankingInstance {
                dialogue_id: format!("t{i:04}"),
                context_len: ctx_len,
                positive_position,
                context,
                candidates,
            }
        })
        .collect()
}

/// Every dialogue in the instances, as a corpus for vocabulary building.
pub fn instances_corpus(instances: &[RankingInstance]) -> Vec<Dialogue> {
    instances
        .iter()
        .map(|inst| {
            let mut turns = inst.context.clone();
            turns.extend(inst.candidates.iter().map(|c| c.turn.clone()));
            Dialogue {
                id: inst.dialogue_id.clone(),
                turns,
            }
        })
        .collect()
}

/// Rated sets with one original, three internal and three external
/// candidates. Originals stay on topic and rate high, externals change topic
/// and rate low; five raters each.
pub fn rated_instances(n: usize, seed: u64) -> Vec<dialcoh::swapgen::RatedInstance> {
    use dialcoh::swapgen::{RatedCandidate, RatedInstance};
    (0..n)
        .map(|i| {
            let mut rng = sub_rng(seed, "rated", i as u64);
            let topic = rng.gen_range(0..TOPICS);
            let ctx_len = rng.gen_range(2..=5);
            let context: Vec<Turn> = (0..ctx_len).map(|t| topic_turn(topic, speaker(t), &mut rng)).collect();
            let who = speaker(ctx_len);
            let mut candidates = Vec::new();
            for (prov, count, lo, hi) in [
                (Provenance::Original, 1, 2u8, 3u8),
                (Provenance::Internal, 3, 1, 3),
                (Provenance::External, 3, 1, 2),
            ] {
                for _ in 0..count {
                    let t = if prov == Provenance::External {
                        topic_turn((topic + 1 + rng.gen_range(0..TOPICS - 1)) % TOPICS, who, &mut rng)
                    } else {
                        topic_turn(topic, who, &mut rng)
                    };
                    let ratings: Vec<u8> = (0..5).map(|_| rng.gen_range(lo..=hi)).collect();
                    let mean = ratings.iter().map(|&r| f64::from(r)).sum::<f64>() / 5.0;
                    candidates.push(RatedCandidate {
                        provenance: prov,
                        turn: t,
                        mean_rating: mean,
                        ratings: Some(ratings),
                    });
                }
            }
            RatedInstance {
                id: format!("rated{i:03}"),
                context,
                candidates,
            }
        })
        .collect()
}

pub fn rated_jsonl(instances: &[dialcoh::swapgen::RatedInstance]) -> String {
    instances
        .iter()
        .map(|i| serde_json::to_string(i).unwrap() + "\n")
        .collect()
}

pub mod strategies {
    use dialcoh::corpus::{Dialogue, EntityMention, GrammRole, SpeakerId, Turn, UtteranceSegment};
    use proptest::prelude::*;

    pub const HEADS: [&str; 6] = ["iowa", "car", "dog", "tax", "job", "utah"];

    pub fn role() -> impl Strategy<Value = GrammRole> {
        prop_oneof![Just(GrammRole::S), Just(GrammRole::O), Just(GrammRole::X)]
    }

    pub fn segment() -> impl Strategy<Value = UtteranceSegment> {
        (
            0..super::ACTS.len(),
            prop::collection::vec((0..HEADS.len(), role()), 0..4),
        )
            .prop_map(|(a, ents)| {
                UtteranceSegment::new(
                    super::ACTS[a],
                    ents.into_iter().map(|(h, r)| EntityMention::new(HEADS[h], r)).collect(),
                )
            })
    }

    pub fn turn() -> impl Strategy<Value = Turn> {
        (any::<bool>(), prop::collection::vec(segment(), 1..4))
            .prop_map(|(a, segs)| Turn::new(if a { SpeakerId::A } else { SpeakerId::B }, segs))
    }

    pub fn turns(min: usize, max: usize) -> impl Strategy<Value = Vec<Turn>> {
        prop::collection::vec(turn(), min..=max)
    }

    pub fn dialogue(id: String, min: usize, max: usize) -> impl Strategy<Value = Dialogue> {
        turns(min, max).prop_map(move |turns| Dialogue { id: id.clone(), turns })
    }

    pub fn corpus(n_min: usize, n_max: usize, t_min: usize, t_max: usize) -> impl Strategy<Value = Vec<Dialogue>> {
        prop::collection::vec(turns(t_min, t_max), n_min..=n_max).prop_map(|ds| {
            ds.into_iter()
                .enumerate()
                .map(|(i, turns)| Dialogue { id: format!("p{i:03}"), turns })
                .collect()
        })
    }
}
