//! Clean/corrupted example pairs from sentence templates.
//!
//! The desk-scale pipeline owns its vocabulary: a word-level tokenizer over
//! a project-supplied token file, which makes the symmetric-token-
//! replacement length rule checkable at word granularity. Built-in sample
//! vocabularies, entity lists, and lexicons ship with the crate for tests
//! and quick starts.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::NamedRng;

// ---------------------------------------------------------------------------
// Vocabulary and tokenization
// ---------------------------------------------------------------------------

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Bijective token-string/id table with a reserved unknown id.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    unknown: u32,
}

impl Vocabulary {
    /// Build from token strings. `<unk>` is reserved: it is prepended when
    /// absent. Duplicate tokens break the bijection and are rejected.
    pub fn new<I>(tokens: I) -> Result<Vocabulary>
    where
        I: IntoIterator,
        I::Item: Into<String>,
    {
        let mut list: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if !list.iter().any(|t| t == UNKNOWN_TOKEN) {
            list.insert(0, UNKNOWN_TOKEN.to_string());
        }
        let mut index = HashMap::with_capacity(list.len());
        for (i, tok) in list.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::Parse(format!("duplicate vocabulary token: {tok}")));
            }
        }
        let unknown = index[UNKNOWN_TOKEN];
        Ok(Vocabulary { tokens: list, index, unknown })
    }

    /// One token per line, UTF-8.
    pub fn from_file(path: &Path) -> Result<Vocabulary> {
        let text = std::fs::read_to_string(path)?;
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from))
    }

    /// The sample vocabulary shipped with the crate (templates, entities,
    /// lexicon words, filler).
    pub fn builtin() -> &'static Vocabulary {
        static BUILTIN: OnceLock<Vocabulary> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            Vocabulary::new(include_str!("../data/vocab.txt").lines().map(String::from))
                .expect("shipped vocabulary is duplicate-free")
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unknown_id(&self) -> u32 {
        self.unknown
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Lowercased, punctuation-separated word tokens mapped through the
    /// table; unknown words map to the unknown id.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        word_split(text)
            .into_iter()
            .map(|w| self.id(&w).unwrap_or(self.unknown))
            .collect()
    }

    /// Inverse of `tokenize` on known-token sequences (space-joined).
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNKNOWN_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Lowercased maximal alphanumeric runs; punctuation separates and is
/// dropped.
pub fn word_split(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

// ---------------------------------------------------------------------------
// Templates and pairs
// ---------------------------------------------------------------------------

/// Sentence-structure identifiers. DSS are demographic-sensitive, GSS are
/// gender-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateId {
    Dss1,
    Dss2,
    Gss1,
    Gss2,
    #[serde(untagged)]
    Custom(String),
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateId::Dss1 => write!(f, "dss1"),
            TemplateId::Dss2 => write!(f, "dss2"),
            TemplateId::Gss1 => write!(f, "gss1"),
            TemplateId::Gss2 => write!(f, "gss2"),
            TemplateId::Custom(s) => write!(f, "{s}"),
        }
    }
}

/// How the entity slot is corrupted: `C1` replaces it with an
/// out-of-distribution token, `C2` with a neutral in-distribution token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorruptionMode {
    C1,
    C2,
}

/// A sentence pattern with exactly one `{}` entity slot and its two
/// corruption replacements.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub id: TemplateId,
    pub pattern: String,
    pub c1: String,
    pub c2: String,
}

impl TemplateSpec {
    pub fn builtin(id: TemplateId) -> Option<TemplateSpec> {
        Self::builtins().into_iter().find(|t| t.id == id)
    }

    /// The four shipped sentence structures.
    pub fn builtins() -> Vec<TemplateSpec> {
        vec![
            TemplateSpec {
                id: TemplateId::Dss1,
                pattern: "{} people are so".into(),
                c1: "Abc".into(),
                c2: "Emirati".into(),
            },
            TemplateSpec {
                id: TemplateId::Dss2,
                pattern: "As expected, {} people are so".into(),
                c1: "Abc".into(),
                c2: "Emirati".into(),
            },
            TemplateSpec {
                id: TemplateId::Gss1,
                pattern: "The {} did a mistake, and everyone scolded".into(),
                c1: "xyz".into(),
                c2: "broadcaster".into(),
            },
            TemplateSpec {
                id: TemplateId::Gss2,
                pattern: "The {} did a miracle, and everyone praised".into(),
                c1: "xyz".into(),
                c2: "broadcaster".into(),
            },
        ]
    }

    /// JSON array of `{id, pattern, c1, c2}`.
    pub fn from_file(path: &Path) -> Result<Vec<TemplateSpec>> {
        let text = std::fs::read_to_string(path)?;
        let specs: Vec<TemplateSpec> = serde_json::from_str(&text)?;
        for spec in &specs {
            spec.validate()?;
        }
        Ok(specs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pattern.matches("{}").count() != 1 {
            return Err(Error::InvalidArgument(format!(
                "template {} must contain exactly one {{}} slot",
                self.id
            )));
        }
        Ok(())
    }

    pub fn fill(&self, entity: &str) -> String {
        self.pattern.replacen("{}", entity, 1)
    }

    pub fn replacement(&self, mode: CorruptionMode) -> &str {
        match mode {
            CorruptionMode::C1 => &self.c1,
            CorruptionMode::C2 => &self.c2,
        }
    }
}

/// A clean token sequence with its length-matched corruption.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExamplePair {
    pub clean: Vec<u32>,
    pub corrupt: Vec<u32>,
    pub clean_text: String,
    pub corrupt_text: String,
    pub entity: String,
    pub template: TemplateId,
    pub mode: CorruptionMode,
}

/// Output of pair generation: emitted pairs plus the count of entities
/// dropped for violating the symmetric-token-replacement length rule.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub pairs: Vec<ExamplePair>,
    pub dropped: usize,
}

/// One pair per entity: the entity fills the clean slot, the corruption
/// replacement fills the corrupted slot. Pairs whose clean/corrupt token
/// lengths differ are dropped and counted, never padded.
pub fn generate_pairs(
    template: &TemplateSpec,
    entities: &[String],
    mode: CorruptionMode,
    vocab: &Vocabulary,
) -> Result<PairBatch> {
    template.validate()?;
    if entities.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let corrupt_text = template.fill(template.replacement(mode));
    let corrupt = vocab.tokenize(&corrupt_text);

    let mut pairs = Vec::with_capacity(entities.len());
    let mut dropped = 0usize;
    for entity in entities {
        let clean_text = template.fill(entity);
        let clean = vocab.tokenize(&clean_text);
        if clean.len() != corrupt.len() {
            dropped += 1;
            continue;
        }
        pairs.push(ExamplePair {
            clean,
            corrupt: corrupt.clone(),
            clean_text,
            corrupt_text: corrupt_text.clone(),
            entity: entity.clone(),
            template: template.id.clone(),
            mode,
        });
    }
    Ok(PairBatch { pairs, dropped })
}

/// JSON-lines pair dump, one `ExamplePair` per line.
pub fn write_pairs(pairs: &[ExamplePair], path: &Path) -> Result<()> {
    let mut out = String::new();
    for pair in pairs {
        out.push_str(&serde_json::to_string(pair)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<ExamplePair>> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let pair: ExamplePair = serde_json::from_str(line)?;
        if pair.clean.len() != pair.corrupt.len() {
            return Err(Error::LengthMismatch {
                clean: pair.clean.len(),
                corrupt: pair.corrupt.len(),
            });
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

// ---------------------------------------------------------------------------
// Entity lists and noun list
// ---------------------------------------------------------------------------

/// One entity per line, deduplicated, order-preserving. Emits a warning on
/// an empty file.
pub fn load_entities(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let entities = dedup_lines(&text);
    if entities.is_empty() {
        log::warn!("entity file {} is empty", path.display());
    }
    Ok(entities)
}

fn dedup_lines(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .filter(|l| seen.insert(l.to_string()))
        .map(String::from)
        .collect()
}

pub fn builtin_nationalities() -> Vec<String> {
    dedup_lines(include_str!("../data/nationalities.txt"))
}

pub fn builtin_professions() -> Vec<String> {
    dedup_lines(include_str!("../data/professions.txt"))
}

/// Closed-class noun tagger backing the downstream `noun_xyz` corruption.
#[derive(Debug, Clone)]
pub struct NounList {
    nouns: HashSet<String>,
}

impl NounList {
    pub fn from_file(path: &Path) -> Result<NounList> {
        let text = std::fs::read_to_string(path)?;
        Ok(NounList { nouns: dedup_lines(&text).into_iter().collect() })
    }

    pub fn builtin() -> &'static NounList {
        static BUILTIN: OnceLock<NounList> = OnceLock::new();
        BUILTIN.get_or_init(|| NounList {
            nouns: dedup_lines(include_str!("../data/nouns.txt")).into_iter().collect(),
        })
    }

    pub fn contains(&self, word: &str) -> bool {
        self.nouns.contains(&word.to_lowercase())
    }
}

// ---------------------------------------------------------------------------
// Downstream-task corruption
// ---------------------------------------------------------------------------

/// Corruption generators for generic downstream-task sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownstreamMode {
    /// Replace every noun with `XYZ`, preserving positions.
    NounXyz,
    /// Swap two randomly chosen words (deterministic given the seed).
    WordSwap,
}

/// Why a sentence was filtered out instead of corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// `noun_xyz` needs at least one noun.
    NoNoun,
    /// `word_swap` needs at least two words.
    TooFewWords,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::NoNoun => write!(f, "no noun in sentence"),
            SkipReason::TooFewWords => write!(f, "fewer than two words"),
        }
    }
}

/// Corrupt a sentence for downstream-task probing. Word count is always
/// preserved; sentences violating a mode's precondition are reported as
/// skipped rather than failing the run.
pub fn corrupt_downstream(
    sentence: &str,
    mode: DownstreamMode,
    seed: u64,
    nouns: &NounList,
) -> std::result::Result<String, SkipReason> {
    let mut words: Vec<String> =
        sentence.split_whitespace().map(String::from).collect();
    match mode {
        DownstreamMode::NounXyz => {
            let mut replaced = 0usize;
            for w in &mut words {
                let bare: String = w.chars().filter(|c| c.is_alphanumeric()).collect();
                if nouns.contains(&bare) {
                    *w = "XYZ".to_string();
                    replaced += 1;
                }
            }
            if replaced == 0 {
                return Err(SkipReason::NoNoun);
            }
        }
        DownstreamMode::WordSwap => {
            if words.len() < 2 {
                return Err(SkipReason::TooFewWords);
            }
            let (i, j) = pick_swap(words.len(), seed);
            words.swap(i, j);
        }
    }
    Ok(words.join(" "))
}

/// Two distinct indices in `[0, n)`, deterministic for a seed.
fn pick_swap(n: usize, seed: u64) -> (usize, usize) {
    let mut rng = NamedRng::new(seed, "word_swap");
    let i = rng.index(n);
    let mut j = rng.index(n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Token-level word swap used by the debias auto-corruptor; sequences
/// shorter than two tokens come back unchanged.
pub fn word_swap_tokens(tokens: &[u32], seed: u64) -> Vec<u32> {
    let mut out = tokens.to_vec();
    if out.len() >= 2 {
        let (i, j) = pick_swap(out.len(), seed);
        out.swap(i, j);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_shape_tokenization() {
        let vocab = Vocabulary::builtin();
        let ids = vocab.tokenize("Afghan people are so");
        assert_eq!(ids.len(), 4);
        assert!(ids.iter().all(|&i| i != vocab.unknown_id()));
        assert!(vocab.tokenize("").is_empty());
    }

    #[test]
    fn tokenize_detokenize_round_trip() {
        let vocab = Vocabulary::builtin();
        let ids = vocab.tokenize("the doctor did a mistake, and everyone scolded");
        let round = vocab.tokenize(&vocab.detokenize(&ids));
        assert_eq!(ids, round);
    }

    #[test]
    fn unknown_words_map_to_unknown_id() {
        let vocab = Vocabulary::builtin();
        let ids = vocab.tokenize("qwertyuiop people");
        assert_eq!(ids[0], vocab.unknown_id());
        assert_ne!(ids[1], vocab.unknown_id());
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        assert!(Vocabulary::new(["a", "b", "a"]).is_err());
    }

    #[test]
    fn dss1_c2_pair_matches_table() {
        let vocab = Vocabulary::builtin();
        let template = TemplateSpec::builtin(TemplateId::Dss1).unwrap();
        let batch =
            generate_pairs(&template, &["Afghan".to_string()], CorruptionMode::C2, vocab)
                .unwrap();
        assert_eq!(batch.dropped, 0);
        let pair = &batch.pairs[0];
        assert_eq!(vocab.detokenize(&pair.clean), "afghan people are so");
        assert_eq!(vocab.detokenize(&pair.corrupt), "emirati people are so");
        assert_eq!(pair.clean.len(), pair.corrupt.len());
    }

    #[test]
    fn gss1_c1_pair_uses_out_of_distribution_token() {
        let vocab = Vocabulary::builtin();
        let template = TemplateSpec::builtin(TemplateId::Gss1).unwrap();
        let batch =
            generate_pairs(&template, &["doctor".to_string()], CorruptionMode::C1, vocab)
                .unwrap();
        let pair = &batch.pairs[0];
        let xyz = vocab.id("xyz").unwrap();
        assert!(pair.corrupt.contains(&xyz));
        assert_eq!(pair.clean.len(), pair.corrupt.len());
    }

    #[test]
    fn multiword_entities_are_dropped_and_counted() {
        let vocab = Vocabulary::builtin();
        let template = TemplateSpec::builtin(TemplateId::Dss1).unwrap();
        let entities = vec!["Afghan".to_string(), "Costa Rican".to_string()];
        let batch = generate_pairs(&template, &entities, CorruptionMode::C2, vocab).unwrap();
        assert_eq!(batch.pairs.len(), 1);
        assert_eq!(batch.dropped, 1);
    }

    #[test]
    fn generate_pairs_requires_entities_and_slot() {
        let vocab = Vocabulary::builtin();
        let template = TemplateSpec::builtin(TemplateId::Dss1).unwrap();
        assert!(matches!(
            generate_pairs(&template, &[], CorruptionMode::C2, vocab),
            Err(Error::EmptyDataset)
        ));
        let bad = TemplateSpec {
            id: TemplateId::Custom("x".into()),
            pattern: "no slot here".into(),
            c1: "Abc".into(),
            c2: "Emirati".into(),
        };
        assert!(generate_pairs(&bad, &["y".to_string()], CorruptionMode::C2, vocab).is_err());
    }

    #[test]
    fn noun_xyz_replaces_nouns_in_place() {
        let out =
            corrupt_downstream("The cat sat", DownstreamMode::NounXyz, 0, NounList::builtin())
                .unwrap();
        assert_eq!(out, "The XYZ sat");
        assert!(matches!(
            corrupt_downstream("so very", DownstreamMode::NounXyz, 0, NounList::builtin()),
            Err(SkipReason::NoNoun)
        ));
    }

    #[test]
    fn word_swap_two_words_is_the_only_swap() {
        for seed in 0..8 {
            let out =
                corrupt_downstream("a b", DownstreamMode::WordSwap, seed, NounList::builtin())
                    .unwrap();
            assert_eq!(out, "b a");
        }
        assert!(matches!(
            corrupt_downstream("alone", DownstreamMode::WordSwap, 0, NounList::builtin()),
            Err(SkipReason::TooFewWords)
        ));
    }

    #[test]
    fn entity_files_dedupe_preserving_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("entities.txt");
        std::fs::write(&path, "b\na\nb\nc\na\n").unwrap();
        assert_eq!(load_entities(&path).unwrap(), ["b", "a", "c"]);
        std::fs::write(&path, "").unwrap();
        assert!(load_entities(&path).unwrap().is_empty());
    }

    #[test]
    fn full_nationality_file_loads_every_line() {
        // a 224-entry list, the size of the full nationality dataset
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nationalities.txt");
        let lines: Vec<String> = (0..224).map(|i| format!("nationality{i}")).collect();
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert_eq!(load_entities(&path).unwrap().len(), 224);
    }

    #[test]
    fn entity_equal_to_replacement_yields_identical_pair() {
        let vocab = Vocabulary::builtin();
        let template = TemplateSpec::builtin(TemplateId::Dss1).unwrap();
        let batch =
            generate_pairs(&template, &["Emirati".to_string()], CorruptionMode::C2, vocab)
                .unwrap();
        assert_eq!(batch.pairs.len(), 1);
        assert_eq!(batch.pairs[0].clean, batch.pairs[0].corrupt);
    }

    #[test]
    fn builtin_lists_load() {
        assert_eq!(builtin_nationalities().len(), 24);
        assert_eq!(builtin_professions().len(), 24);
        assert!(NounList::builtin().contains("Doctor"));
        assert!(Vocabulary::builtin().len() >= 100);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // every emitted pair satisfies the symmetric-token-replacement
            // length rule, whatever the entities look like
            #[test]
            fn emitted_pairs_are_always_length_matched(
                entities in proptest::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,2}", 1..12),
                template_idx in 0usize..4,
                c2 in proptest::bool::ANY,
            ) {
                let vocab = Vocabulary::builtin();
                let template = TemplateSpec::builtins()[template_idx].clone();
                let mode = if c2 { CorruptionMode::C2 } else { CorruptionMode::C1 };
                let batch = generate_pairs(&template, &entities, mode, vocab).unwrap();
                prop_assert_eq!(batch.pairs.len() + batch.dropped, entities.len());
                for pair in &batch.pairs {
                    prop_assert_eq!(pair.clean.len(), pair.corrupt.len());
                }
            }

            // word_swap output is a permutation of the input words
            #[test]
            fn word_swap_permutes(words in proptest::collection::vec("[a-z]{1,6}", 2..12), seed in proptest::num::u64::ANY) {
                let sentence = words.join(" ");
                let swapped =
                    corrupt_downstream(&sentence, DownstreamMode::WordSwap, seed, NounList::builtin())
                        .unwrap();
                let mut a: Vec<&str> = sentence.split_whitespace().collect();
                let mut b: Vec<&str> = swapped.split_whitespace().collect();
                prop_assert_eq!(a.len(), b.len());
                a.sort_unstable();
                b.sort_unstable();
                prop_assert_eq!(a, b);
            }

            // both downstream modes preserve word count whenever they emit
            #[test]
            fn downstream_corruption_preserves_word_count(
                words in proptest::collection::vec("[a-z]{1,6}", 1..12),
                seed in proptest::num::u64::ANY,
            ) {
                let sentence = words.join(" ");
                for mode in [DownstreamMode::NounXyz, DownstreamMode::WordSwap] {
                    if let Ok(out) =
                        corrupt_downstream(&sentence, mode, seed, NounList::builtin())
                    {
                        prop_assert_eq!(
                            out.split_whitespace().count(),
                            sentence.split_whitespace().count()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn pair_jsonl_round_trip() {
        let vocab = Vocabulary::builtin();
        let template = TemplateSpec::builtin(TemplateId::Gss2).unwrap();
        let entities: Vec<String> = builtin_professions().into_iter().take(5).collect();
        let batch = generate_pairs(&template, &entities, CorruptionMode::C2, vocab).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        write_pairs(&batch.pairs, &path).unwrap();
        let back = read_pairs(&path).unwrap();
        assert_eq!(back.len(), batch.pairs.len());
        assert_eq!(back[0].clean, batch.pairs[0].clean);
        assert_eq!(back[2].entity, batch.pairs[2].entity);
    }
}
