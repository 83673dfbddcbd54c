//! Distantly supervised corpora: samples, relation/token vocabularies,
//! OpenNRE-style JSONL ingestion, bagging, the P/N split and a synthetic
//! generator that plants false negatives at a known rate.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FanError, Result};

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    /// Index of the last token covered.
    pub fn last(&self) -> usize {
        self.end - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
}

/// One distantly supervised sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub words: Vec<String>,
    pub tokens: Vec<usize>,
    pub head: Entity,
    pub tail: Entity,
    pub head_span: Span,
    pub tail_span: Span,
    pub ds_relation: usize,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        let bad = |message: String| FanError::InvalidSample {
            id: self.id.clone(),
            message,
        };
        if n == 0 {
            return Err(bad("empty token sequence".into()));
        }
        if self.words.len() != n {
            return Err(bad(format!("{} words for {n} token ids", self.words.len())));
        }
        for (label, span) in [("head", self.head_span), ("tail", self.tail_span)] {
            if span.start >= span.end || span.end > n {
                return Err(bad(format!(
                    "{label} span [{}, {}) outside sentence of length {n}",
                    span.start, span.end
                )));
            }
        }
        let whole = Span::new(0, n);
        if n > 1 && self.head_span == whole && self.tail_span == whole {
            return Err(bad("head and tail both cover the whole sentence".into()));
        }
        Ok(())
    }
}

/// Relation names with a distinguished no-relation entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationVocab {
    names: Vec<String>,
    na_index: usize,
}

impl RelationVocab {
    pub fn new(names: Vec<String>, na_name: &str) -> Result<Self> {
        let unique: BTreeSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(FanError::Config("relation names are not unique".into()));
        }
        let na_index = names
            .iter()
            .position(|n| n == na_name)
            .ok_or_else(|| FanError::Config(format!("no-relation label {na_name:?} missing")))?;
        Ok(RelationVocab { names, na_index })
    }

    /// Reads an OpenNRE `rel2id` object (`{"NA": 0, "/people/...": 1, ...}`).
    pub fn from_rel2id(path: &Path, na_name: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FanError::io(path, e))?;
        let map: BTreeMap<String, usize> = serde_json::from_str(&text).map_err(|e| FanError::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let mut names = vec![String::new(); map.len()];
        for (name, id) in map {
            if id >= names.len() || !names[id].is_empty() {
                return Err(FanError::Config(format!(
                    "rel2id ids are not a permutation (at {name:?})"
                )));
            }
            names[id] = name;
        }
        RelationVocab::new(names, na_name)
    }

    pub fn write_rel2id(&self, path: &Path) -> Result<()> {
        let map: serde_json::Map<String, serde_json::Value> = self
            .names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), serde_json::Value::from(i)))
            .collect();
        let text = serde_json::to_string_pretty(&map).expect("rel2id map serializes");
        std::fs::write(path, text + "\n").map_err(|e| FanError::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn na_index(&self) -> usize {
        self.na_index
    }

    pub fn is_na(&self, relation: usize) -> bool {
        relation == self.na_index
    }

    pub fn name(&self, relation: usize) -> &str {
        &self.names[relation]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Every relation index except the no-relation one, ascending.
    pub fn predefined(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.names.len()).filter(move |&r| r != self.na_index)
    }
}

/// Token vocabulary; id 0 is reserved for out-of-vocabulary words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNKNOWN_TOKEN: &str = "<unk>";

impl TokenVocab {
    pub fn new() -> Self {
        TokenVocab::from(vec![UNKNOWN_TOKEN.to_string()])
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(0)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Adds `word` if new; returns its id either way.
    pub fn insert(&mut self, word: &str) -> usize {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        self.index.insert(word.to_string(), self.words.len());
        self.words.push(word.to_string());
        self.words.len() - 1
    }
}

impl Default for TokenVocab {
    fn default() -> Self {
        TokenVocab::new()
    }
}

impl From<Vec<String>> for TokenVocab {
    fn from(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        TokenVocab { words, index }
    }
}

impl From<TokenVocab> for Vec<String> {
    fn from(v: TokenVocab) -> Self {
        v.words
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntityRecord {
    #[serde(default)]
    id: Option<String>,
    name: String,
    pos: [usize; 2],
}

#[derive(Debug, Clone, Deserialize)]
struct InputRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    token: Option<Vec<String>>,
    h: EntityRecord,
    t: EntityRecord,
    relation: String,
}

#[derive(Debug, Clone, Serialize)]
struct OutputRecord<'a> {
    id: &'a str,
    token: &'a [String],
    h: EntityRecord,
    t: EntityRecord,
    relation: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pseudo_relation: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
}

/// A loaded corpus and the token vocabulary its ids refer to.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub tokens: TokenVocab,
}

struct ParsedLine {
    line: usize,
    id: String,
    words: Vec<String>,
    head: Entity,
    tail: Entity,
    head_span: Span,
    tail_span: Span,
    relation: usize,
}

/// Whitespace tokenization keeping each token's character range.
fn tokenize_with_offsets(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut count = 0;
    for (i, ch) in text.chars().enumerate() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                out.push((std::mem::take(&mut current), start, i));
            }
        } else {
            if current.is_empty() {
                start = i;
            }
            current.push(ch);
        }
        count = i + 1;
    }
    if !current.is_empty() {
        out.push((current, start, count));
    }
    out
}

/// Maps a character range onto the tokens it overlaps.
fn char_span_to_tokens(offsets: &[(String, usize, usize)], pos: [usize; 2]) -> Option<Span> {
    let hits: Vec<usize> = offsets
        .iter()
        .enumerate()
        .filter(|(_, (_, s, e))| *s < pos[1] && pos[0] < *e)
        .map(|(i, _)| i)
        .collect();
    Some(Span::new(*hits.first()?, hits.last()? + 1))
}

fn parse_line(path: &str, line: usize, text: &str, relations: &RelationVocab) -> Result<ParsedLine> {
    let parse_err = |message: String| FanError::Parse {
        path: path.to_string(),
        line,
        message,
    };
    let rec: InputRecord = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
    let relation = relations
        .index_of(&rec.relation)
        .ok_or_else(|| parse_err(format!("unknown relation {:?}", rec.relation)))?;
    let id = rec.id.clone().unwrap_or_else(|| format!("L{line}"));
    let span_err = |message: String| FanError::InvalidSample {
        id: id.clone(),
        message,
    };
    let (words, head_span, tail_span) = match (&rec.token, &rec.text) {
        (Some(tokens), _) => (
            tokens.clone(),
            Span::new(rec.h.pos[0], rec.h.pos[1]),
            Span::new(rec.t.pos[0], rec.t.pos[1]),
        ),
        (None, Some(text)) => {
            let offsets = tokenize_with_offsets(text);
            let head = char_span_to_tokens(&offsets, rec.h.pos)
                .ok_or_else(|| span_err(format!("head position {:?} covers no token", rec.h.pos)))?;
            let tail = char_span_to_tokens(&offsets, rec.t.pos)
                .ok_or_else(|| span_err(format!("tail position {:?} covers no token", rec.t.pos)))?;
            (offsets.into_iter().map(|(w, _, _)| w).collect(), head, tail)
        }
        (None, None) => return Err(parse_err("record has neither \"token\" nor \"text\"".into())),
    };
    let entity = |e: &EntityRecord| Entity {
        id: e.id.clone().unwrap_or_else(|| e.name.clone()),
        name: e.name.clone(),
    };
    Ok(ParsedLine {
        line,
        head: entity(&rec.h),
        tail: entity(&rec.t),
        id,
        words,
        head_span,
        tail_span,
        relation,
    })
}

/// Loads an OpenNRE-format JSONL file.
///
/// With `tokens = None` the token vocabulary is built from this file in
/// first-occurrence order; otherwise the given vocabulary is used frozen and
/// unseen words map to id 0.
pub fn load_jsonl(path: &Path, relations: &RelationVocab, tokens: Option<&TokenVocab>) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| FanError::io(path, e))?;
    let shown = path.display().to_string();
    let mut parsed = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FanError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        parsed.push(parse_line(&shown, i + 1, &line, relations)?);
    }
    let vocab = match tokens {
        Some(v) => v.clone(),
        None => {
            let mut v = TokenVocab::new();
            for p in &parsed {
                p.words.iter().for_each(|w| {
                    v.insert(w);
                });
            }
            v
        }
    };
    let mut seen = BTreeSet::new();
    let mut samples = Vec::with_capacity(parsed.len());
    for p in parsed {
        if !seen.insert(p.id.clone()) {
            return Err(FanError::Parse {
                path: shown.clone(),
                line: p.line,
                message: format!("duplicate sample id {:?}", p.id),
            });
        }
        let sample = Sample {
            tokens: p.words.iter().map(|w| vocab.get(w)).collect(),
            id: p.id,
            words: p.words,
            head: p.head,
            tail: p.tail,
            head_span: p.head_span,
            tail_span: p.tail_span,
            ds_relation: p.relation,
        };
        sample.validate()?;
        samples.push(sample);
    }
    Ok(Corpus { samples, tokens: vocab })
}

/// Pseudo label and confidence attached to a written sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub pseudo_relation: Option<usize>,
    pub confidence: f64,
}

fn output_record<'a>(sample: &'a Sample, relations: &'a RelationVocab, note: Option<&Annotation>) -> OutputRecord<'a> {
    let entity = |e: &Entity, s: Span| EntityRecord {
        id: Some(e.id.clone()),
        name: e.name.clone(),
        pos: [s.start, s.end],
    };
    OutputRecord {
        id: &sample.id,
        token: &sample.words,
        h: entity(&sample.head, sample.head_span),
        t: entity(&sample.tail, sample.tail_span),
        relation: relations.name(sample.ds_relation),
        pseudo_relation: note.map(|n| n.pseudo_relation.map_or("", |r| relations.name(r))),
        confidence: note.map(|n| n.confidence),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| FanError::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| FanError::io(path, e))?))
}

/// Writes samples in the token form of the input schema.
pub fn write_jsonl(path: &Path, samples: &[Sample], relations: &RelationVocab) -> Result<()> {
    let mut out = create(path)?;
    for s in samples {
        let line = serde_json::to_string(&output_record(s, relations, None)).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| FanError::io(path, e))?;
    }
    out.flush().map_err(|e| FanError::io(path, e))
}

/// Writes the mined-set schema: each sample plus `pseudo_relation` and `confidence`.
pub fn write_annotated_jsonl(path: &Path, rows: &[(&Sample, Annotation)], relations: &RelationVocab) -> Result<()> {
    let mut out = create(path)?;
    for (s, note) in rows {
        let line = serde_json::to_string(&output_record(s, relations, Some(note))).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| FanError::io(path, e))?;
    }
    out.flush().map_err(|e| FanError::io(path, e))
}

/// Reads `(id, confidence)` pairs back from a mined-set file.
pub fn read_annotations(path: &Path) -> Result<Vec<(String, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        confidence: f64,
    }
    let file = File::open(path).map_err(|e| FanError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FanError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| FanError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push((row.id, row.confidence));
    }
    Ok(rows)
}

/// Splits sample ids into the positive set P and the N/A set N.
pub fn split_pn(samples: &[Sample], relations: &RelationVocab) -> (Vec<String>, Vec<String>) {
    let (n, p): (Vec<&Sample>, Vec<&Sample>) = samples.iter().partition(|s| relations.is_na(s.ds_relation));
    (
        p.into_iter().map(|s| s.id.clone()).collect(),
        n.into_iter().map(|s| s.id.clone()).collect(),
    )
}

/// Grouping key of a bag: the entity pair and the DS relation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BagKey {
    pub head: String,
    pub tail: String,
    pub relation: usize,
}

impl fmt::Display for BagKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}#{}", self.head, self.tail, self.relation)
    }
}

/// Sentences sharing one (head, tail, relation) key; `members` index the
/// sample slice the bag was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    pub key: BagKey,
    pub members: Vec<usize>,
}

impl Bag {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn sample_ids<'a>(&'a self, samples: &'a [Sample]) -> impl Iterator<Item = &'a str> + 'a {
        self.members.iter().map(move |&i| samples[i].id.as_str())
    }
}

pub fn build_bags(samples: &[Sample]) -> Vec<Bag> {
    let mut groups: BTreeMap<BagKey, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let key = BagKey {
            head: s.head.id.clone(),
            tail: s.tail.id.clone(),
            relation: s.ds_relation,
        };
        groups.entry(key).or_default().push(i);
    }
    groups.into_iter().map(|(key, members)| Bag { key, members }).collect()
}

/// Samples together with the bags built over them.
#[derive(Debug, Clone, Default)]
pub struct BagSet {
    pub samples: Vec<Sample>,
    pub bags: Vec<Bag>,
}

impl BagSet {
    pub fn new(samples: Vec<Sample>) -> Self {
        let bags = build_bags(&samples);
        BagSet { samples, bags }
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn sentences(&self, bag: usize) -> impl Iterator<Item = &Sample> + '_ {
        self.bags[bag].members.iter().map(move |&i| &self.samples[i])
    }
}

/// Knobs of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of filler words.
    pub vocab_size: usize,
    /// Relation count including N/A.
    pub relation_count: usize,
    pub sentences_per_relation: usize,
    /// Genuine no-relation sentences.
    pub na_sentences: usize,
    /// Fraction of pattern-bearing sentences relabelled N/A.
    pub fn_rate: f64,
    pub seed: u64,
    pub max_len: usize,
    /// Sentences per entity pair are drawn from `1..=max_bag_size`.
    pub max_bag_size: usize,
    /// Probability that a genuine N/A sentence carries one lone pattern token.
    pub distractor_rate: f64,
    /// Prefix for sample and entity ids, so train and test corpora never collide.
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 200,
            relation_count: 6,
            sentences_per_relation: 100,
            na_sentences: 600,
            fn_rate: 0.2,
            seed: 7,
            max_len: 16,
            max_bag_size: 3,
            distractor_rate: 0.3,
            id_prefix: "train".into(),
        }
    }
}

pub const NA_RELATION: &str = "NA";

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.fn_rate) {
            return Err(FanError::Config(format!(
                "fn_rate must lie in [0, 1), got {}",
                self.fn_rate
            )));
        }
        if self.relation_count < 2 {
            return Err(FanError::Config(
                "relation_count must be at least 2 (N/A plus one relation)".into(),
            ));
        }
        if self.vocab_size == 0 || self.max_bag_size == 0 {
            return Err(FanError::Config("vocab_size and max_bag_size must be positive".into()));
        }
        if self.max_len < 5 {
            return Err(FanError::Config(format!(
                "max_len must be at least 5, got {}",
                self.max_len
            )));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(FanError::Config("distractor_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// The matching held-out corpus: same knobs, unrelated seed, `test` ids.
    pub fn held_out(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed ^ 0x9e37_79b9_7f4a_7c15,
            id_prefix: format!("{}-test", self.id_prefix),
            ..self.clone()
        }
    }

    pub fn relations(&self) -> RelationVocab {
        let mut names = vec![NA_RELATION.to_string()];
        names.extend((1..self.relation_count).map(|r| format!("rel_{r}")));
        RelationVocab::new(names, NA_RELATION).expect("generated names are unique")
    }

    /// Planted false negatives per relation: `⌊fn_rate · sentences_per_relation⌋`.
    pub fn planted_per_relation(&self) -> usize {
        // The epsilon keeps e.g. 0.29 · 100 from flooring to 28.
        (self.fn_rate * self.sentences_per_relation as f64 + 1e-9).floor() as usize
    }
}

/// True relation of every synthetic sample, keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub relations: BTreeMap<String, usize>,
}

impl GroundTruth {
    pub fn get(&self, id: &str) -> Option<usize> {
        self.relations.get(id).copied()
    }

    /// Ids whose DS label disagrees with the truth.
    pub fn planted(&self, samples: &[Sample]) -> BTreeSet<String> {
        samples
            .iter()
            .filter(|s| self.get(&s.id).is_some_and(|t| t != s.ds_relation))
            .map(|s| s.id.clone())
            .collect()
    }

    pub fn write(&self, path: &Path, relations: &RelationVocab) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            id: &'a str,
            true_relation: &'a str,
        }
        let mut out = create(path)?;
        for (id, &r) in &self.relations {
            let row = Row {
                id,
                true_relation: relations.name(r),
            };
            writeln!(out, "{}", serde_json::to_string(&row).expect("row serializes"))
                .map_err(|e| FanError::io(path, e))?;
        }
        out.flush().map_err(|e| FanError::io(path, e))
    }

    pub fn read(path: &Path, relations: &RelationVocab) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: String,
            true_relation: String,
        }
        let file = File::open(path).map_err(|e| FanError::io(path, e))?;
        let mut truth = GroundTruth::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| FanError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| FanError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message,
            };
            let row: Row = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
            let r = relations
                .index_of(&row.true_relation)
                .ok_or_else(|| err(format!("unknown relation {:?}", row.true_relation)))?;
            truth.relations.insert(row.id, r);
        }
        Ok(truth)
    }
}

/// Generated corpus with its truth labels.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub samples: Vec<Sample>,
    pub truth: GroundTruth,
    pub relations: RelationVocab,
    pub tokens: TokenVocab,
}

/// Tokens of the collocation marking relation `r` (2 or 3 tokens).
pub fn relation_pattern(r: usize) -> Vec<String> {
    let len = if r % 2 == 1 { 2 } else { 3 };
    ["a", "b", "c"][..len].iter().map(|s| format!("p{r}_{s}")).collect()
}

struct SynthBuilder<'a> {
    config: &'a SynthConfig,
    rng: ChaCha8Rng,
    next_entity: usize,
}

impl SynthBuilder<'_> {
    fn filler(&mut self) -> String {
        format!("w{}", self.rng.gen_range(0..self.config.vocab_size))
    }

    fn entity(&mut self) -> Entity {
        let id = format!("{}-e{}", self.config.id_prefix, self.next_entity);
        self.next_entity += 1;
        Entity { name: id.clone(), id }
    }

    /// Lays out `prefix HEAD middle TAIL suffix` (entities swapped with
    /// probability 0.2) within `max_len` tokens.
    fn sentence(&mut self, head: &Entity, tail: &Entity, core: Vec<String>) -> (Vec<String>, Span, Span) {
        let budget = self.config.max_len - 2 - core.len();
        let take = |rng: &mut ChaCha8Rng, budget: &mut usize, most: usize| {
            let k = rng.gen_range(0..=most.min(*budget));
            *budget -= k;
            k
        };
        let mut left = budget;
        let pre = take(&mut self.rng, &mut left, 2);
        let mid_before = take(&mut self.rng, &mut left, 2);
        let mid_after = take(&mut self.rng, &mut left, 1);
        let post = take(&mut self.rng, &mut left, 2);

        let swapped = self.rng.gen_bool(0.2);
        let (first, second) = if swapped { (tail, head) } else { (head, tail) };
        let mut words: Vec<String> = (0..pre).map(|_| self.filler()).collect();
        let first_at = words.len();
        words.push(first.name.clone());
        words.extend((0..mid_before).map(|_| self.filler()));
        words.extend(core);
        words.extend((0..mid_after).map(|_| self.filler()));
        let second_at = words.len();
        words.push(second.name.clone());
        words.extend((0..post).map(|_| self.filler()));

        let (h, t) = if swapped {
            (second_at, first_at)
        } else {
            (first_at, second_at)
        };
        (words, Span::new(h, h + 1), Span::new(t, t + 1))
    }

    fn no_relation_core(&mut self) -> Vec<String> {
        let len = self.rng.gen_range(1..=3);
        let mut core: Vec<String> = (0..len).map(|_| self.filler()).collect();
        if self.config.relation_count > 1 && self.rng.gen_bool(self.config.distractor_rate) {
            let r = self.rng.gen_range(1..self.config.relation_count);
            let pattern = relation_pattern(r);
            let lone = pattern[self.rng.gen_range(0..pattern.len())].clone();
            let at = self.rng.gen_range(0..core.len());
            core[at] = lone;
        }
        core
    }

    /// Splits `total` sentences into facts of size `1..=max_bag_size`.
    fn fact_sizes(&mut self, total: usize) -> Vec<usize> {
        let mut sizes = Vec::new();
        let mut left = total;
        while left > 0 {
            let k = self.rng.gen_range(1..=self.config.max_bag_size).min(left);
            sizes.push(k);
            left -= k;
        }
        sizes
    }
}

/// Words with head and tail spans, before ids and tokens are attached.
type SentenceDraft = (Vec<String>, Span, Span);

/// Generates a template corpus with planted false negatives.
///
/// Each predefined relation `r` marks its sentences with the collocation
/// [`relation_pattern`]`(r)` between the two entity slots; genuine N/A
/// sentences carry only filler (and occasionally one isolated pattern
/// token). Afterwards exactly `⌊fn_rate · sentences_per_relation⌋`
/// sentences of every relation are relabelled N/A, whole entity pairs first.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let relations = config.relations();
    let mut b = SynthBuilder {
        config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        next_entity: 0,
    };

    // (head, tail, sentences, true relation)
    let mut facts: Vec<(Entity, Entity, Vec<SentenceDraft>, usize)> = Vec::new();
    for r in relations.predefined().collect::<Vec<_>>() {
        for size in b.fact_sizes(config.sentences_per_relation) {
            let (h, t) = (b.entity(), b.entity());
            let sentences = (0..size).map(|_| b.sentence(&h, &t, relation_pattern(r))).collect();
            facts.push((h, t, sentences, r));
        }
    }
    for size in b.fact_sizes(config.na_sentences) {
        let (h, t) = (b.entity(), b.entity());
        let sentences = (0..size)
            .map(|_| {
                let core = b.no_relation_core();
                b.sentence(&h, &t, core)
            })
            .collect();
        facts.push((h, t, sentences, relations.na_index()));
    }

    let mut samples = Vec::new();
    let mut truth = GroundTruth::default();
    let mut by_relation: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    for (h, t, sentences, r) in facts {
        let mut members = Vec::new();
        for (words, head_span, tail_span) in sentences {
            let id = format!("{}-s{}", config.id_prefix, samples.len());
            truth.relations.insert(id.clone(), r);
            members.push(samples.len());
            samples.push(Sample {
                id,
                tokens: Vec::new(),
                words,
                head: h.clone(),
                tail: t.clone(),
                head_span,
                tail_span,
                ds_relation: r,
            });
        }
        by_relation.entry(r).or_default().push(members);
    }

    let target = config.planted_per_relation();
    for (r, mut groups) in by_relation {
        if relations.is_na(r) || target == 0 {
            continue;
        }
        groups.shuffle(&mut b.rng);
        let mut planted = 0;
        'facts: for members in groups {
            for i in members {
                if planted == target {
                    break 'facts;
                }
                samples[i].ds_relation = relations.na_index();
                planted += 1;
            }
        }
    }

    samples.shuffle(&mut b.rng);
    let mut tokens = TokenVocab::new();
    for s in &samples {
        s.words.iter().for_each(|w| {
            tokens.insert(w);
        });
    }
    for s in &mut samples {
        s.tokens = s.words.iter().map(|w| tokens.get(w)).collect();
    }
    Ok(SynthCorpus {
        samples,
        truth,
        relations,
        tokens,
    })
}

/// Re-maps sample token ids onto another vocabulary (unseen words become 0).
pub fn retokenize(samples: &mut [Sample], vocab: &TokenVocab) {
    for s in samples {
        s.tokens = s.words.iter().map(|w| vocab.get(w)).collect();
    }
}
