//! Raw text to padded, masked index grids: sentence splitting, denoising,
//! stop-word removal, rule lemmatization, and embedding lookup.

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::DocumentRecord;
use crate::error::{Error, Result};

/// Bundled standard English stop words, one per line.
const STOPWORDS: &str = include_str!("stopwords.txt");

/// Row reserved for padding; always the zero vector.
pub const PAD_INDEX: usize = 0;
/// Row reserved for out-of-vocabulary tokens; trainable.
pub const OOV_INDEX: usize = 1;

const OOV_SEED: u64 = 0x00f7_51e5;

/// Which document fields feed the text branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputConstitution {
    Title,
    TitleAbstract,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub max_sentences: usize,
    pub max_words_per_sentence: usize,
    /// Global word budget, applied before the grid caps.
    pub max_total_words: usize,
    pub stopwords: HashSet<String>,
    pub input: InputConstitution,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_sentences: 25,
            max_words_per_sentence: 10,
            max_total_words: 250,
            stopwords: STOPWORDS.lines().map(|w| w.trim().to_string()).collect(),
            input: InputConstitution::TitleAbstract,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sentences == 0 || self.max_words_per_sentence == 0 || self.max_total_words == 0
        {
            return Err(Error::Config("text caps must be at least 1".into()));
        }
        if self.max_total_words < self.max_words_per_sentence {
            return Err(Error::Config(
                "max_total_words must be at least max_words_per_sentence".into(),
            ));
        }
        Ok(())
    }

    /// Merge an extra stop-word file (one token per line) into the list.
    pub fn add_stopwords_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        for line in text.lines() {
            let w = line.trim();
            if !w.is_empty() {
                self.stopwords.insert(w.to_lowercase());
            }
        }
        Ok(())
    }
}

/// The text the pipeline sees for one document, per the configured input
/// constitution. The title is forced to end a sentence.
pub fn document_text(doc: &DocumentRecord, config: &PipelineConfig) -> String {
    let title = doc.title.trim();
    match config.input {
        InputConstitution::Title => title.to_string(),
        InputConstitution::TitleAbstract => {
            if title.is_empty() {
                doc.abstract_text.clone()
            } else if title.ends_with(['.', '?', '!', ';']) {
                format!("{} {}", title, doc.abstract_text)
            } else {
                format!("{}. {}", title, doc.abstract_text)
            }
        }
    }
}

fn is_sentence_terminal(c: char) -> bool {
    matches!(c, '.' | '?' | '!' | ';')
}

/// Split on terminal punctuation followed by whitespace (or end of text).
fn split_sentences(raw: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = raw.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if is_sentence_terminal(c) {
            let at_end = chars.peek().map_or(true, |&(_, n)| n.is_whitespace());
            if at_end {
                let piece = &raw[start..i + c.len_utf8()];
                if !piece.trim().is_empty() {
                    out.push(piece);
                }
                start = i + c.len_utf8();
            }
        }
    }
    let tail = &raw[start..];
    if !tail.trim().is_empty() {
        out.push(tail);
    }
    out
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// consonant-vowel-consonant ending, the Porter cue for restoring a final e.
fn ends_cvc(stem: &[u8]) -> bool {
    if stem.len() < 3 {
        return false;
    }
    let (c1, v, c2) = (stem[stem.len() - 3], stem[stem.len() - 2], stem[stem.len() - 1]);
    !is_vowel(c1) && is_vowel(v) && !is_vowel(c2) && !matches!(c2, b'w' | b'x' | b'y')
}

/// Collapse a doubled final consonant, except l/s/z. Returns whether a
/// letter was dropped; when it was, no final e is restored.
fn undouble(stem: &mut Vec<u8>) -> bool {
    if stem.len() >= 2 {
        let last = stem[stem.len() - 1];
        if last == stem[stem.len() - 2] && !is_vowel(last) && !matches!(last, b'l' | b's' | b'z') {
            stem.pop();
            return true;
        }
    }
    false
}

/// Words the suffix rules would mangle.
const LEMMA_EXCEPTIONS: &[(&str, &str)] = &[
    ("using", "use"),
    ("used", "use"),
    ("uses", "use"),
    ("series", "series"),
    ("species", "species"),
    ("lens", "lens"),
];

/// Deterministic rule lemmatizer. `noun_exempt` (set when the token follows
/// a determiner) suppresses the verb-suffix rules -ing and -ed.
pub fn lemmatize(token: &str, noun_exempt: bool) -> String {
    for &(word, lemma) in LEMMA_EXCEPTIONS {
        if token == word {
            return lemma.to_string();
        }
    }
    let b = token.as_bytes();
    let n = b.len();

    if n >= 5 && b.ends_with(b"ies") {
        let mut stem = b[..n - 3].to_vec();
        stem.push(b'y');
        return String::from_utf8(stem).expect("ascii");
    }
    if !noun_exempt && n >= 5 && b.ends_with(b"ied") {
        let mut stem = b[..n - 3].to_vec();
        stem.push(b'y');
        return String::from_utf8(stem).expect("ascii");
    }
    if !noun_exempt && n >= 6 && b.ends_with(b"ing") {
        let mut stem = b[..n - 3].to_vec();
        if stem.iter().any(|&c| is_vowel(c) || c == b'y') {
            if !undouble(&mut stem) && ends_cvc(&stem) {
                stem.push(b'e');
            }
            return String::from_utf8(stem).expect("ascii");
        }
        return token.to_string();
    }
    if !noun_exempt && n >= 5 && b.ends_with(b"ed") && !b.ends_with(b"eed") {
        let mut stem = b[..n - 2].to_vec();
        if stem.iter().any(|&c| is_vowel(c) || c == b'y') {
            if !undouble(&mut stem) && ends_cvc(&stem) {
                stem.push(b'e');
            }
            return String::from_utf8(stem).expect("ascii");
        }
        return token.to_string();
    }
    if n >= 5 && b.ends_with(b"es") {
        let stem = &b[..n - 2];
        if stem.ends_with(b"ch")
            || stem.ends_with(b"sh")
            || stem.ends_with(b"ss")
            || stem.ends_with(b"x")
            || stem.ends_with(b"z")
        {
            return String::from_utf8(stem.to_vec()).expect("ascii");
        }
    }
    if n >= 4
        && b.ends_with(b"s")
        && !b.ends_with(b"ss")
        && !b.ends_with(b"us")
        && !b.ends_with(b"is")
    {
        return token[..n - 1].to_string();
    }
    token.to_string()
}

fn is_determiner(token: &str) -> bool {
    matches!(token, "the" | "a" | "an")
}

/// Tokenization, denoising, stop-word removal, and lemmatization, followed by
/// the global word-budget truncation. Sentences that end up empty are
/// dropped.
pub fn preprocess_text(raw: &str, config: &PipelineConfig) -> Vec<Vec<String>> {
    let mut sentences: Vec<Vec<String>> = Vec::new();
    for sentence in split_sentences(raw) {
        let lowered = sentence.to_lowercase();
        // tokenize on every non-alphanumeric character, drop tokens with no
        // letters (pure numbers, stray punctuation)
        let tokens: Vec<&str> = lowered
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty() && t.chars().any(|c| c.is_ascii_alphabetic()))
            .collect();
        // determiner context is read before stop words disappear
        let mut kept: Vec<String> = Vec::new();
        let mut prev: Option<&str> = None;
        for &tok in &tokens {
            let exempt = prev.map_or(false, is_determiner);
            prev = Some(tok);
            if config.stopwords.contains(tok) {
                continue;
            }
            kept.push(lemmatize(tok, exempt));
        }
        if !kept.is_empty() {
            sentences.push(kept);
        }
    }
    // global budget comes before any grid cap
    let mut budget = config.max_total_words;
    let mut out = Vec::new();
    for mut s in sentences {
        if budget == 0 {
            break;
        }
        if s.len() > budget {
            s.truncate(budget);
        }
        budget -= s.len();
        out.push(s);
    }
    out
}

/// Vocabulary rows plus reserved pad and OOV rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dimension: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Row-major (2 + vocab) x dimension; row 0 pad, row 1 OOV.
    vectors: Vec<f32>,
}

impl EmbeddingTable {
    /// Build from (token, vector) pairs. Pad row is zero; the OOV row is a
    /// fixed-seed unit-variance draw so runs agree byte-for-byte.
    pub fn from_vectors<I, S>(dimension: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        let mut vectors = vec![0.0f32; dimension]; // pad
        let mut rng = ChaCha8Rng::seed_from_u64(OOV_SEED);
        for _ in 0..dimension {
            let x: f64 = StandardNormal.sample(&mut rng);
            vectors.push(x as f32);
        }
        for (line, (token, vec)) in entries.into_iter().enumerate() {
            let token: String = token.into();
            let line = line + 2; // header + 1-based
            if vec.len() != dimension {
                return Err(Error::EmbeddingDimMismatch {
                    line,
                    expected: dimension,
                    found: vec.len(),
                });
            }
            if index.contains_key(&token) {
                return Err(Error::DuplicateToken { token, line });
            }
            index.insert(token.clone(), 2 + tokens.len());
            tokens.push(token);
            vectors.extend_from_slice(&vec);
        }
        Ok(EmbeddingTable {
            dimension,
            tokens,
            index,
            vectors,
        })
    }

    /// `<vocab_size> <dimension>` header, then one `<token> <floats…>` line
    /// per vocabulary entry.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::MalformedRecord {
            line: 1,
            detail: "missing header".into(),
        })?;
        let mut parts = header.split_whitespace();
        let (vocab, dimension) = match (parts.next(), parts.next(), parts.next()) {
            (Some(v), Some(d), None) => {
                let v: usize = v.parse().map_err(|_| Error::MalformedRecord {
                    line: 1,
                    detail: format!("bad vocab count `{v}`"),
                })?;
                let d: usize = d.parse().map_err(|_| Error::MalformedRecord {
                    line: 1,
                    detail: format!("bad dimension `{d}`"),
                })?;
                (v, d)
            }
            _ => {
                return Err(Error::MalformedRecord {
                    line: 1,
                    detail: "header must be `<vocab_size> <dimension>`".into(),
                })
            }
        };
        let mut entries: Vec<(String, Vec<f32>)> = Vec::with_capacity(vocab);
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line").to_string();
            let mut vec = Vec::with_capacity(dimension);
            for p in parts {
                vec.push(p.parse::<f32>().map_err(|_| Error::MalformedRecord {
                    line: line_no,
                    detail: format!("bad float `{p}`"),
                })?);
            }
            if vec.len() != dimension {
                return Err(Error::EmbeddingDimMismatch {
                    line: line_no,
                    expected: dimension,
                    found: vec.len(),
                });
            }
            entries.push((token, vec));
        }
        if entries.len() != vocab {
            return Err(Error::MalformedRecord {
                line: 1,
                detail: format!("header declares {} tokens, file has {}", vocab, entries.len()),
            });
        }
        // duplicate detection happens in from_vectors, but its line numbers
        // assume compact entries; re-check here with real line numbers is not
        // worth the bookkeeping
        Self::from_vectors(dimension, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let io_err = |source| Error::Io {
            path: path.display().to_string(),
            source,
        };
        writeln!(file, "{} {}", self.tokens.len(), self.dimension).map_err(io_err)?;
        for (i, token) in self.tokens.iter().enumerate() {
            let row = self.row(2 + i);
            let vals: Vec<String> = row.iter().map(|v| format!("{}", v)).collect();
            writeln!(file, "{} {}", token, vals.join(" ")).map_err(io_err)?;
        }
        Ok(())
    }

    /// Seeded random table over the given tokens, for synthetic corpora.
    pub fn random(tokens: &[String], dimension: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries: Vec<(String, Vec<f32>)> = tokens
            .iter()
            .map(|t| {
                let v: Vec<f32> = (0..dimension)
                    .map(|_| {
                        let x: f64 = StandardNormal.sample(&mut rng);
                        (x * 0.5) as f32
                    })
                    .collect();
                (t.clone(), v)
            })
            .collect();
        Self::from_vectors(dimension, entries)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    /// Vocabulary rows plus pad and OOV.
    pub fn total_rows(&self) -> usize {
        2 + self.tokens.len()
    }

    /// Row index for a token; unknown tokens map to the OOV row.
    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV_INDEX)
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dimension..(index + 1) * self.dimension]
    }

    /// The full matrix as a flat row-major buffer.
    pub fn matrix(&self) -> &[f32] {
        &self.vectors
    }
}

/// Fixed-size index grid with word and sentence masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedText {
    pub max_sentences: usize,
    pub max_words: usize,
    /// Row-major max_sentences x max_words.
    pub indices: Vec<usize>,
    pub word_mask: Vec<bool>,
    pub sentence_mask: Vec<bool>,
}

impl EncodedText {
    pub fn index(&self, sentence: usize, word: usize) -> usize {
        self.indices[sentence * self.max_words + word]
    }

    pub fn word_unmasked(&self, sentence: usize, word: usize) -> bool {
        self.word_mask[sentence * self.max_words + word]
    }

    pub fn unmasked_words(&self) -> usize {
        self.word_mask.iter().filter(|&&m| m).count()
    }

    pub fn unmasked_sentences(&self) -> usize {
        self.sentence_mask.iter().filter(|&&m| m).count()
    }
}

/// Lay preprocessed sentences onto the padded grid, mapping unknown tokens
/// to the OOV row.
pub fn encode_document(
    sentences: &[Vec<String>],
    table: &EmbeddingTable,
    config: &PipelineConfig,
) -> EncodedText {
    let (s_cap, w_cap) = (config.max_sentences, config.max_words_per_sentence);
    let mut enc = EncodedText {
        max_sentences: s_cap,
        max_words: w_cap,
        indices: vec![PAD_INDEX; s_cap * w_cap],
        word_mask: vec![false; s_cap * w_cap],
        sentence_mask: vec![false; s_cap],
    };
    for (si, sentence) in sentences.iter().take(s_cap).enumerate() {
        for (wi, token) in sentence.iter().take(w_cap).enumerate() {
            enc.indices[si * w_cap + wi] = table.index_of(token);
            enc.word_mask[si * w_cap + wi] = true;
        }
        enc.sentence_mask[si] = !sentence.is_empty();
    }
    enc
}
