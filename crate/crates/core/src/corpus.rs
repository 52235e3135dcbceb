//! Annotated dialogue data model, JSONL ingestion and vocabulary derivation.
//!
//! Dialogues arrive pre-annotated: every turn is a list of utterance segments,
//! each carrying one dialogue-act label and the entity mentions (NP heads with
//! their grammatical role) found in it. Heads are case-folded on ingestion.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NO_ENT: &str = "<no_ent>";
pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";

/// Content tags of the turn channel, in index order.
pub const TURN_TAGS: [&str; 4] = ["B-A", "I-A", "B-B", "I-B"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty corpus")]
    Empty,
    #[error("line {line}: invalid field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate dialogue id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown dialogue act `{tag}` (not in tagset)")]
    UnknownDa { line: usize, tag: String },
    #[error("line {line}: dialogue `{id}` is invalid: {}", .violations.join("; "))]
    Invalid {
        line: usize,
        id: String,
        violations: Vec<String>,
    },
    #[error("empty tagset")]
    EmptyTagset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpeakerId {
    A,
    B,
}

impl SpeakerId {
    pub fn as_str(self) -> &'static str {
        match self {
            SpeakerId::A => "A",
            SpeakerId::B => "B",
        }
    }
}

/// Grammatical role of an entity in a turn. `Absent` only occurs in grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GrammRole {
    S,
    O,
    X,
    #[serde(rename = "-")]
    Absent,
}

impl GrammRole {
    /// Fixed alphabet order used for transition indexing.
    pub const ALL: [GrammRole; 4] = [GrammRole::S, GrammRole::O, GrammRole::X, GrammRole::Absent];

    pub fn index(self) -> usize {
        match self {
            GrammRole::S => 0,
            GrammRole::O => 1,
            GrammRole::X => 2,
            GrammRole::Absent => 3,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            GrammRole::S => "S",
            GrammRole::O => "O",
            GrammRole::X => "X",
            GrammRole::Absent => "-",
        }
    }

    /// Precedence when an entity is mentioned several times in a turn: S > O > X.
    pub fn salience(self) -> u8 {
        match self {
            GrammRole::S => 3,
            GrammRole::O => 2,
            GrammRole::X => 1,
            GrammRole::Absent => 0,
        }
    }
}

impl fmt::Display for GrammRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DaTag(pub String);

impl DaTag {
    pub fn new(s: impl Into<String>) -> Self {
        DaTag(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for DaTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityMention {
    pub head: String,
    pub role: GrammRole,
}

impl EntityMention {
    pub fn new(head: impl Into<String>, role: GrammRole) -> Self {
        EntityMention {
            head: head.into(),
            role,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UtteranceSegment {
    pub da: DaTag,
    #[serde(default)]
    pub entities: Vec<EntityMention>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl UtteranceSegment {
    pub fn new(da: &str, entities: Vec<EntityMention>) -> Self {
        UtteranceSegment {
            da: DaTag::new(da),
            entities,
            text: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: SpeakerId,
    pub segments: Vec<UtteranceSegment>,
}

impl Turn {
    pub fn new(speaker: SpeakerId, segments: Vec<UtteranceSegment>) -> Self {
        Turn { speaker, segments }
    }

    pub fn mentions(&self) -> impl Iterator<Item = &EntityMention> {
        self.segments.iter().flat_map(|s| s.entities.iter())
    }

    pub fn das(&self) -> impl Iterator<Item = &DaTag> {
        self.segments.iter().map(|s| &s.da)
    }

    /// Same content, regardless of who speaks.
    pub fn same_content(&self, other: &Turn) -> bool {
        self.segments == other.segments
    }

    pub fn text(&self) -> String {
        let parts: Vec<&str> = self
            .segments
            .iter()
            .filter_map(|s| s.text.as_deref())
            .collect();
        parts.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

pub type Corpus = Vec<Dialogue>;

/// Lists every invariant violation of a dialogue. Empty means valid.
pub fn validate_dialogue(d: &Dialogue) -> Vec<String> {
    let mut out = Vec::new();
    if d.id.is_empty() {
        out.push("dialogue id is empty".to_string());
    }
    if d.turns.is_empty() {
        out.push("dialogue has no turns".to_string());
    }
    for (ti, turn) in d.turns.iter().enumerate() {
        if turn.segments.is_empty() {
            out.push(format!("turn {ti}: no segments"));
        }
        for (si, seg) in turn.segments.iter().enumerate() {
            if seg.da.0.trim().is_empty() {
                out.push(format!("turn {ti} segment {si}: empty dialogue act"));
            }
            for (ei, m) in seg.entities.iter().enumerate() {
                if m.head.is_empty() {
                    out.push(format!("turn {ti} segment {si} entity {ei}: empty head"));
                } else if m.head.chars().any(char::is_whitespace) {
                    out.push(format!(
                        "turn {ti} segment {si} entity {ei}: head `{}` contains whitespace",
                        m.head
                    ));
                }
                if m.role == GrammRole::Absent {
                    out.push(format!(
                        "turn {ti} segment {si} entity {ei}: role `-` is only valid in grid cells"
                    ));
                }
            }
        }
    }
    out
}

fn case_fold(d: &mut Dialogue) {
    for turn in &mut d.turns {
        for seg in &mut turn.segments {
            for m in &mut seg.entities {
                m.head = m.head.to_lowercase();
            }
        }
    }
}

/// Parses a JSONL corpus held in memory. `tagset`, when given, restricts the
/// admissible dialogue acts.
pub fn parse_corpus(content: &str, tagset: Option<&Tagset>) -> Result<Corpus, CorpusError> {
    let mut corpus = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(line);
        let mut d: Dialogue = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            CorpusError::Parse {
                line: line_no,
                field,
                message: e.into_inner().to_string(),
            }
        })?;
        case_fold(&mut d);
        let violations = validate_dialogue(&d);
        if !violations.is_empty() {
            return Err(CorpusError::Invalid {
                line: line_no,
                id: d.id,
                violations,
            });
        }
        if let Some(ts) = tagset {
            if let Some(tag) = d.turns.iter().flat_map(|t| t.das()).find(|t| !ts.contains(t)) {
                return Err(CorpusError::UnknownDa {
                    line: line_no,
                    tag: tag.0.clone(),
                });
            }
        }
        if !seen.insert(d.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: d.id,
            });
        }
        corpus.push(d);
    }
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(corpus)
}

pub fn load_corpus(path: &Path, tagset: Option<&Tagset>) -> Result<Corpus, CorpusError> {
    let content = read(path)?;
    parse_corpus(&content, tagset)
}

/// Canonical JSONL form: one dialogue per line, fixed key order, trailing newline.
pub fn serialize_corpus(corpus: &[Dialogue]) -> String {
    let mut out = String::new();
    for d in corpus {
        out.push_str(&serde_json::to_string(d).expect("dialogue serializes"));
        out.push('\n');
    }
    out
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Closed dialogue-act vocabulary, one label per line in the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tagset {
    tags: BTreeSet<DaTag>,
}

impl Tagset {
    pub fn new<I: IntoIterator<Item = DaTag>>(tags: I) -> Result<Self, CorpusError> {
        let tags: BTreeSet<DaTag> = tags.into_iter().collect();
        if tags.is_empty() {
            return Err(CorpusError::EmptyTagset);
        }
        Ok(Tagset { tags })
    }

    pub fn parse(content: &str) -> Result<Self, CorpusError> {
        Self::new(
            content
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(DaTag::new),
        )
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::parse(&read(path)?)
    }

    pub fn from_corpus(corpus: &[Dialogue]) -> Result<Self, CorpusError> {
        Self::new(corpus.iter().flat_map(|d| d.turns.iter().flat_map(|t| t.das().cloned())))
    }

    pub fn contains(&self, tag: &DaTag) -> bool {
        self.tags.contains(tag)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Sorted order.
    pub fn iter(&self) -> impl Iterator<Item = &DaTag> {
        self.tags.iter()
    }
}

/// Ordered token→index map. Indices are dense in `[0, len)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let mut v = Vocab {
            tokens: Vec::with_capacity(tokens.len()),
            index: HashMap::new(),
        };
        for t in tokens {
            v.push(t);
        }
        v
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn new() -> Self {
        Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Appends a token unless already present; returns its index.
    pub fn push(&mut self, token: impl Into<String>) -> u32 {
        let token = token.into();
        if let Some(&i) = self.index.get(&token) {
            return i;
        }
        let i = self.tokens.len() as u32;
        self.index.insert(token.clone(), i);
        self.tokens.push(token);
        i
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

/// Vocabularies for the four input channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabularies {
    pub min_word_count: usize,
    /// Entity heads: `<pad>`, `<unk>`, `<no_ent>`, then heads in sorted order.
    pub words: Vocab,
    /// `<no_ent>`, O, S, X.
    pub roles: Vocab,
    /// Base dialogue-act labels, sorted.
    pub das: Vocab,
    /// IOB2-expanded labels: `B-x`, `I-x` per base label, in base order.
    pub das_iob: Vocab,
    pub turns: Vocab,
}

impl Vocabularies {
    pub fn word_id(&self, head: &str) -> u32 {
        self.words
            .get(head)
            .unwrap_or_else(|| self.words.get(UNK).expect("reserved <unk>"))
    }
}

/// Builds vocabularies from a corpus. When `tagset` is supplied it defines the
/// dialogue-act vocabulary; otherwise the acts observed in the corpus do.
pub fn derive_vocabularies(
    corpus: &[Dialogue],
    min_word_count: usize,
    tagset: Option<&Tagset>,
) -> Result<Vocabularies, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in corpus.iter().flat_map(|d| d.turns.iter().flat_map(|t| t.mentions())) {
        *counts.entry(m.head.as_str()).or_default() += 1;
    }
    let mut words = Vocab::from(vec![PAD.to_string(), UNK.to_string(), NO_ENT.to_string()]);
    for (head, n) in counts {
        if n >= min_word_count {
            words.push(head);
        }
    }

    let roles = Vocab::from(vec![
        NO_ENT.to_string(),
        "O".to_string(),
        "S".to_string(),
        "X".to_string(),
    ]);

    let owned;
    let tagset = match tagset {
        Some(t) => t,
        None => {
            owned = Tagset::from_corpus(corpus)?;
            &owned
        }
    };
    let das = Vocab::from(tagset.iter().map(|t| t.0.clone()).collect::<Vec<_>>());
    let mut das_iob = Vocab::new();
    for t in tagset.iter() {
        das_iob.push(format!("B-{}", t.0));
        das_iob.push(format!("I-{}", t.0));
    }
    let turns = Vocab::from(TURN_TAGS.iter().map(|s| s.to_string()).collect::<Vec<_>>());

    Ok(Vocabularies {
        min_word_count,
        words,
        roles,
        das,
        das_iob,
        turns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_TURNS: &str = r#"{"id":"d1","turns":[{"speaker":"A","segments":[{"da":"sd","entities":[{"head":"Movie","role":"O"}],"text":"I saw a movie."}]},{"speaker":"B","segments":[{"da":"qy","entities":[]}]}]}"#;

    fn two_turn() -> Dialogue {
        parse_corpus(TWO_TURNS, None).unwrap().remove(0)
    }

    #[test]
    fn loads_minimal_corpus() {
        let c = parse_corpus(TWO_TURNS, None).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].turns.len(), 2);
        assert_eq!(c[0].turns[0].segments[0].entities[0].head, "movie");
    }

    #[test]
    fn empty_file_is_an_error() {
        let err = parse_corpus("\n\n", None).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
    }

    #[test]
    fn bad_role_names_line_and_field() {
        let bad = TWO_TURNS.replace(r#""role":"O""#, r#""role":"Q""#);
        let input = format!("{TWO_TURNS_2}\n{bad}", TWO_TURNS_2 = TWO_TURNS.replace("d1", "d0"));
        match parse_corpus(&input, None).unwrap_err() {
            CorpusError::Parse { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "turns[0].segments[0].entities[0].role");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = format!("{TWO_TURNS}\n{TWO_TURNS}");
        assert!(matches!(
            parse_corpus(&input, None),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn tagset_membership_enforced() {
        let ts = Tagset::parse("sd\nb\n").unwrap();
        assert!(matches!(
            parse_corpus(TWO_TURNS, Some(&ts)),
            Err(CorpusError::UnknownDa { tag, .. }) if tag == "qy"
        ));
    }

    #[test]
    fn validation_reports() {
        assert!(validate_dialogue(&two_turn()).is_empty());

        let empty = Dialogue {
            id: "e".into(),
            turns: vec![],
        };
        assert_eq!(validate_dialogue(&empty).len(), 1);

        let mut d = two_turn();
        d.turns[0].segments[0].entities[0].head.clear();
        assert_eq!(validate_dialogue(&d).len(), 1);
    }

    #[test]
    fn vocab_threshold_and_reserved_tokens() {
        let c = vec![two_turn()];
        let v = derive_vocabularies(&c, 1, None).unwrap();
        assert_eq!(v.words.tokens(), &[PAD, UNK, NO_ENT, "movie"]);
        assert_eq!(v.turns.tokens(), &TURN_TAGS);
        assert_eq!(v.roles.len(), 4);
        assert_eq!(v.das.tokens(), &["qy", "sd"]);
        assert_eq!(v.das_iob.len(), 2 * v.das.len());

        let v2 = derive_vocabularies(&c, 2, None).unwrap();
        assert_eq!(v2.word_id("movie"), v2.words.get(UNK).unwrap());
        assert_eq!(v, derive_vocabularies(&c, 1, None).unwrap());
    }

    #[test]
    fn vocab_json_is_a_token_list() {
        let v = Vocab::from(vec!["a".to_string(), "b".to_string()]);
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"["a","b"]"#);
        let back: Vocab = serde_json::from_str(r#"["a","b"]"#).unwrap();
        assert_eq!(back.get("b"), Some(1));
    }
}
