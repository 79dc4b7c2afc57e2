//! Keyword mining from captions: tokenization, part-of-speech tagging
//! with canonicalization, frequency-ranked keyword tables, and multi-hot
//! label encoding.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

/// A tokenized caption: lowercase words, punctuation removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub clip_id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pos {
    Noun,
    Verb,
    Other,
}

/// Word -> part-of-speech map with irregular verb inflections. Bundled
/// data covers the synthetic vocabulary plus common audio-caption words;
/// the type is pluggable so a full tagger can be substituted.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pos: HashMap<String, Pos>,
    irregular: HashMap<String, String>,
    verb_bases: HashSet<String>,
    nouns: HashSet<String>,
}

const BUNDLED_LEXICON: &str = include_str!("../../data/lexicon.tsv");
const BUNDLED_STOPLIST: &str = include_str!("../../data/stoplist.txt");

impl Lexicon {
    pub fn parse(text: &str) -> Result<Lexicon> {
        let mut pos = HashMap::new();
        let mut irregular = HashMap::new();
        let mut verb_bases = HashSet::new();
        let mut nouns = HashSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 || cols.len() > 3 {
                return Err(Error::Data(format!("lexicon line {}: expected 2-3 columns", lineno + 1)));
            }
            let word = cols[0].to_string();
            let p = match cols[1] {
                "noun" => Pos::Noun,
                "verb" => Pos::Verb,
                other => return Err(Error::Data(format!("lexicon line {}: unknown pos {other}", lineno + 1))),
            };
            if pos.insert(word.clone(), p).is_some() {
                return Err(Error::Data(format!("lexicon line {}: duplicate word {word}", lineno + 1)));
            }
            match p {
                Pos::Noun => {
                    nouns.insert(word.clone());
                }
                Pos::Verb => {
                    if let Some(base) = cols.get(2) {
                        irregular.insert(word.clone(), base.to_string());
                    } else {
                        verb_bases.insert(word.clone());
                    }
                }
                Pos::Other => {}
            }
        }
        Ok(Lexicon { pos, irregular, verb_bases, nouns })
    }

    pub fn bundled() -> Result<Lexicon> {
        Lexicon::parse(BUNDLED_LEXICON)
    }

    pub fn load(path: &Path) -> Result<Lexicon> {
        Lexicon::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }
}

/// Lowercases, treats every non-alphanumeric character (including hyphens
/// and apostrophes) as a separator, and splits on whitespace. Digits are
/// kept as tokens.
pub fn tokenize_caption(clip_id: &str, text: &str) -> Result<Caption> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let tokens: Vec<String> = cleaned.split_whitespace().map(|s| s.to_string()).collect();
    if tokens.is_empty() {
        return Err(Error::Data(format!("caption for clip {clip_id:?} is empty after cleaning")));
    }
    Ok(Caption { clip_id: clip_id.to_string(), tokens })
}

/// Candidate base forms for a possibly inflected verb, in rule order.
fn verb_candidates(token: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut push = |s: String| {
        if !s.is_empty() && !out.contains(&s) {
            out.push(s);
        }
    };
    if let Some(stem) = token.strip_suffix("ies") {
        push(format!("{stem}y"));
    }
    if let Some(stem) = token.strip_suffix("ing") {
        push(stem.to_string());
        push(format!("{stem}e"));
        if stem.len() >= 2 {
            let b = stem.as_bytes();
            if b[b.len() - 1] == b[b.len() - 2] {
                push(stem[..stem.len() - 1].to_string());
            }
        }
    }
    if let Some(stem) = token.strip_suffix("ed") {
        push(stem.to_string());
        push(format!("{stem}e"));
        if stem.len() >= 2 {
            let b = stem.as_bytes();
            if b[b.len() - 1] == b[b.len() - 2] {
                push(stem[..stem.len() - 1].to_string());
            }
        }
    }
    if let Some(stem) = token.strip_suffix("es") {
        push(stem.to_string());
    }
    if let Some(stem) = token.strip_suffix('s') {
        push(stem.to_string());
    }
    out
}

/// Candidate singular forms for a possibly plural noun.
fn noun_candidates(token: &str) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(stem) = token.strip_suffix("ies") {
        out.push(format!("{stem}y"));
    }
    if let Some(stem) = token.strip_suffix("es") {
        out.push(stem.to_string());
    }
    if let Some(stem) = token.strip_suffix('s') {
        out.push(stem.to_string());
    }
    out
}

/// Tags a lowercase token and returns its canonical form: verbs are
/// mapped to their base form, nouns keep their surface form (plurals stay
/// distinct), unknown words are tagged `Other` unchanged.
pub fn tag_and_canonicalize(token: &str, lexicon: &Lexicon) -> (Pos, String) {
    if let Some(&p) = lexicon.pos.get(token) {
        let canonical = match p {
            Pos::Verb => lexicon.irregular.get(token).cloned().unwrap_or_else(|| token.to_string()),
            _ => token.to_string(),
        };
        return (p, canonical);
    }
    for cand in verb_candidates(token) {
        if lexicon.verb_bases.contains(&cand) {
            return (Pos::Verb, cand);
        }
    }
    for cand in noun_candidates(token) {
        if lexicon.nouns.contains(&cand) {
            return (Pos::Noun, token.to_string());
        }
    }
    (Pos::Other, token.to_string())
}

/// Frequency-ranked table of the top-N canonical noun/verb keywords.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordTable {
    entries: Vec<String>,
    freqs: Vec<u64>,
    index: HashMap<String, usize>,
    requested_n: usize,
}

impl KeywordTable {
    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn freqs(&self) -> &[u64] {
        &self.freqs
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// N as requested at build time; `len()` may be smaller when the
    /// corpus had fewer candidates.
    pub fn requested_n(&self) -> usize {
        self.requested_n
    }

    pub fn position(&self, keyword: &str) -> Option<usize> {
        self.index.get(keyword).copied()
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (word, freq) in self.entries.iter().zip(&self.freqs) {
            out.push_str(word);
            out.push('\t');
            out.push_str(&freq.to_string());
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load_tsv(path: &Path) -> Result<KeywordTable> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        let mut freqs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, freq) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("keyword tsv line {}: missing tab", lineno + 1)))?;
            entries.push(word.to_string());
            freqs.push(
                freq.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Data(format!("keyword tsv line {}: bad frequency", lineno + 1)))?,
            );
        }
        if entries.is_empty() {
            return Err(Error::Data("keyword tsv is empty".into()));
        }
        let index = entries.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let requested_n = entries.len();
        Ok(KeywordTable { entries, freqs, index, requested_n })
    }
}

pub fn bundled_stoplist() -> BTreeSet<String> {
    parse_stoplist(BUNDLED_STOPLIST)
}

pub fn parse_stoplist(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn load_stoplist(path: &Path) -> Result<BTreeSet<String>> {
    Ok(parse_stoplist(&std::fs::read_to_string(path)?))
}

/// Counts canonical noun/verb forms across all captions, removes stoplist
/// words, and keeps the top `n` by frequency (ties broken
/// lexicographically). If fewer than `n` candidates exist they are all
/// kept; `requested_n` records the requested size.
pub fn build_keyword_table(
    corpus: &[Caption],
    n: usize,
    stoplist: &BTreeSet<String>,
    lexicon: &Lexicon,
) -> Result<KeywordTable> {
    if n == 0 {
        return Err(Error::invalid("build_keyword_table", "N must be >= 1"));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("build_keyword_table", "empty corpus"));
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for caption in corpus {
        for token in &caption.tokens {
            let (pos, canonical) = tag_and_canonicalize(token, lexicon);
            if matches!(pos, Pos::Noun | Pos::Verb) && !stoplist.contains(&canonical) {
                *counts.entry(canonical).or_insert(0) += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::Data("no keyword candidates after tagging and stoplist removal".into()));
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    // descending frequency, lexicographic tie-break (BTreeMap order is
    // already lexicographic, sort_by is stable)
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.truncate(n);
    let entries: Vec<String> = ranked.iter().map(|(w, _)| w.clone()).collect();
    let freqs: Vec<u64> = ranked.iter().map(|(_, f)| *f).collect();
    let index = entries.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    Ok(KeywordTable { entries, freqs, index, requested_n: n })
}

/// Binary keyword-presence vector for one audio clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHotLabel {
    pub clip_id: String,
    pub bits: Vec<u8>,
}

impl MultiHotLabel {
    pub fn to_floats(&self) -> Vec<f64> {
        self.bits.iter().map(|b| *b as f64).collect()
    }
}

/// Union over the clip's captions: a bit is set iff some caption contains
/// a token whose canonical form equals that table entry.
pub fn encode_multihot(
    clip_captions: &[Caption],
    table: &KeywordTable,
    lexicon: &Lexicon,
) -> Result<MultiHotLabel> {
    if clip_captions.is_empty() {
        return Err(Error::invalid("encode_multihot", "need at least one caption"));
    }
    let clip_id = clip_captions[0].clip_id.clone();
    let mut bits = vec![0u8; table.len()];
    for caption in clip_captions {
        for token in &caption.tokens {
            let (_, canonical) = tag_and_canonicalize(token, lexicon);
            if let Some(i) = table.position(&canonical) {
                bits[i] = 1;
            }
        }
    }
    Ok(MultiHotLabel { clip_id, bits })
}
