//! Flattens dialogue structure into aligned token channels for the neural scorer.
//!
//! Three layouts exist, chosen by the active channels:
//! entities only (word and/or role), dialogue acts only, and entities inside
//! IOB2-tagged act spans. An optional turn channel marks speaker turns with
//! IOB2 tags over the same positions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SpeakerId, Turn, Vocabularies, NO_ENT};

#[derive(Debug, Error, PartialEq)]
pub enum LinearizeError {
    #[error("no entity or dialogue-act channel selected")]
    NoContentChannel,
    #[error("empty turn sequence")]
    Empty,
    #[error("empty context")]
    EmptyContext,
    #[error("`{token}` missing from the {channel} vocabulary")]
    VocabMiss { channel: &'static str, token: String },
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channels {
    pub word: bool,
    pub role: bool,
    pub da: bool,
    pub turn: bool,
}

impl Channels {
    pub const fn new(word: bool, role: bool, da: bool, turn: bool) -> Self {
        Channels {
            word,
            role,
            da,
            turn,
        }
    }

    pub fn validate(&self) -> Result<(), LinearizeError> {
        if self.word || self.role || self.da {
            Ok(())
        } else {
            Err(LinearizeError::NoContentChannel)
        }
    }

    pub fn has_entities(&self) -> bool {
        self.word || self.role
    }

    /// Acts are IOB2-tagged over entity positions when both are present.
    pub fn da_is_iob(&self) -> bool {
        self.da && self.has_entities()
    }

    /// Parses a comma-separated list such as `word,da,turn`.
    pub fn parse(s: &str) -> Result<Self, LinearizeError> {
        let mut c = Channels::new(false, false, false, false);
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "word" | "ent_word" => c.word = true,
                "role" | "ent_role" => c.role = true,
                "da" => c.da = true,
                "turn" => c.turn = true,
                "all" => c = Channels::new(true, true, true, true),
                other => return Err(LinearizeError::UnknownChannel(other.to_string())),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.word {
            parts.push("word");
        }
        if self.role {
            parts.push("role");
        }
        if self.da {
            parts.push("da");
        }
        if self.turn {
            parts.push("turn");
        }
        parts.join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub channels: Channels,
    pub vocabularies: Vocabularies,
}

impl EncodingConfig {
    pub fn new(channels: Channels, vocabularies: Vocabularies) -> Result<Self, LinearizeError> {
        channels.validate()?;
        Ok(EncodingConfig {
            channels,
            vocabularies,
        })
    }

    pub fn da_vocab_len(&self) -> usize {
        if self.channels.da_is_iob() {
            self.vocabularies.das_iob.len()
        } else {
            self.vocabularies.das.len()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenStream {
    pub len: usize,
    pub word: Option<Vec<u32>>,
    pub role: Option<Vec<u32>>,
    pub da: Option<Vec<u32>>,
    pub turn: Option<Vec<u32>>,
}

impl TokenStream {
    pub fn channels(&self) -> Channels {
        Channels::new(
            self.word.is_some(),
            self.role.is_some(),
            self.da.is_some(),
            self.turn.is_some(),
        )
    }

    pub fn present(&self) -> impl Iterator<Item = &Vec<u32>> {
        [&self.word, &self.role, &self.da, &self.turn]
            .into_iter()
            .flatten()
    }

    /// One row per position: `word role da turn`, `_` for absent channels.
    pub fn debug_tsv(&self, vocab: &Vocabularies) -> String {
        let iob = self.word.is_some() || self.role.is_some();
        let da_vocab = if iob { &vocab.das_iob } else { &vocab.das };
        let col = |ch: &Option<Vec<u32>>, v: &crate::corpus::Vocab, i: usize| -> String {
            ch.as_ref()
                .and_then(|c| v.token(c[i]))
                .unwrap_or("_")
                .to_string()
        };
        let mut out = String::from("word\trole\tda\tturn\n");
        for i in 0..self.len {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                col(&self.word, &vocab.words, i),
                col(&self.role, &vocab.roles, i),
                col(&self.da, da_vocab, i),
                col(&self.turn, &vocab.turns, i)
            );
        }
        out
    }
}

fn lookup(v: &crate::corpus::Vocab, channel: &'static str, token: &str) -> Result<u32, LinearizeError> {
    v.get(token).ok_or_else(|| LinearizeError::VocabMiss {
        channel,
        token: token.to_string(),
    })
}

fn turn_tag(speaker: SpeakerId, begin: bool) -> &'static str {
    match (speaker, begin) {
        (SpeakerId::A, true) => "B-A",
        (SpeakerId::A, false) => "I-A",
        (SpeakerId::B, true) => "B-B",
        (SpeakerId::B, false) => "I-B",
    }
}

/// Content of one position before id lookup.
struct Slot<'a> {
    word: &'a str,
    role: &'a str,
    da: String,
}

pub fn linearize(turns: &[Turn], cfg: &EncodingConfig) -> Result<TokenStream, LinearizeError> {
    let ch = cfg.channels;
    ch.validate()?;
    if turns.is_empty() {
        return Err(LinearizeError::Empty);
    }
    let v = &cfg.vocabularies;

    let mut slots: Vec<Slot<'_>> = Vec::new();
    let mut turn_ids: Vec<u32> = Vec::new();
    for turn in turns {
        let start = slots.len();
        if ch.has_entities() && ch.da {
            for seg in &turn.segments {
                if seg.entities.is_empty() {
                    slots.push(Slot {
                        word: NO_ENT,
                        role: NO_ENT,
                        da: format!("B-{}", seg.da),
                    });
                }
                for (i, m) in seg.entities.iter().enumerate() {
                    let prefix = if i == 0 { "B" } else { "I" };
                    slots.push(Slot {
                        word: &m.head,
                        role: m.role.symbol(),
                        da: format!("{prefix}-{}", seg.da),
                    });
                }
            }
        } else if ch.has_entities() {
            let mut any = false;
            for m in turn.mentions() {
                any = true;
                slots.push(Slot {
                    word: &m.head,
                    role: m.role.symbol(),
                    da: String::new(),
                });
            }
            if !any {
                slots.push(Slot {
                    word: NO_ENT,
                    role: NO_ENT,
                    da: String::new(),
                });
            }
        } else {
            for seg in &turn.segments {
                slots.push(Slot {
                    word: NO_ENT,
                    role: NO_ENT,
                    da: seg.da.0.clone(),
                });
            }
        }
        if ch.turn {
            let b = lookup(&v.turns, "turn", turn_tag(turn.speaker, true))?;
            let i = lookup(&v.turns, "turn", turn_tag(turn.speaker, false))?;
            turn_ids.extend((start..slots.len()).map(|p| if p == start { b } else { i }));
        }
    }

    let len = slots.len();
    let word = if ch.word {
        Some(slots.iter().map(|s| v.word_id(s.word)).collect())
    } else {
        None
    };
    let role = if ch.role {
        Some(
            slots
                .iter()
                .map(|s| lookup(&v.roles, "role", s.role))
                .collect::<Result<Vec<_>, _>>()?,
        )
    } else {
        None
    };
    let da = if ch.da {
        let dv = if ch.has_entities() { &v.das_iob } else { &v.das };
        Some(
            slots
                .iter()
                .map(|s| lookup(dv, "dialogue-act", &s.da))
                .collect::<Result<Vec<_>, _>>()?,
        )
    } else {
        None
    };
    Ok(TokenStream {
        len,
        word,
        role,
        da,
        turn: ch.turn.then_some(turn_ids),
    })
}

/// The context followed by the candidate as its final turn.
pub fn encode_pairwise_inputs(
    context: &[Turn],
    candidate: &Turn,
    cfg: &EncodingConfig,
) -> Result<TokenStream, LinearizeError> {
    if context.is_empty() {
        return Err(LinearizeError::EmptyContext);
    }
    let mut turns = Vec::with_capacity(context.len() + 1);
    turns.extend_from_slice(context);
    turns.push(candidate.clone());
    linearize(&turns, cfg)
}
