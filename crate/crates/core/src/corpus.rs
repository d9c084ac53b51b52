//! Documents, the three-level label taxonomy, dataset splits, the citation
//! graph, and a synthetic corpus generator so the whole pipeline runs at desk
//! scale.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;

/// Root-to-leaf label chain: section (level 1), class (level 2),
/// subclass (level 3).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelPath {
    pub section: String,
    pub cls: String,
    pub subclass: String,
}

impl LabelPath {
    pub fn code(&self, level: usize) -> &str {
        match level {
            1 => &self.section,
            2 => &self.cls,
            _ => &self.subclass,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentRecord {
    pub id: String,
    pub title: String,
    pub abstract_text: String,
    /// Per-image feature vectors; the model consumes the first.
    pub image_features: Vec<Vec<f32>>,
    /// Optional file holding one feature vector per line, resolved lazily.
    pub image_feature_path: Option<String>,
    pub citations: Vec<String>,
    pub label: LabelPath,
}

/// Three-level label vocabulary with parent links.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    sections: Vec<String>,
    classes: Vec<String>,
    subclasses: Vec<String>,
    section_index: BTreeMap<String, usize>,
    class_index: BTreeMap<String, usize>,
    subclass_index: BTreeMap<String, usize>,
    class_parent: Vec<usize>,
    subclass_parent: Vec<usize>,
}

impl Taxonomy {
    /// Build from (section, class, subclass) leaf chains, keeping first-seen
    /// order per level. A class or subclass reappearing under a different
    /// parent is an error.
    pub fn from_chains<I, S>(chains: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: Into<String>,
    {
        let mut t = Taxonomy {
            sections: Vec::new(),
            classes: Vec::new(),
            subclasses: Vec::new(),
            section_index: BTreeMap::new(),
            class_index: BTreeMap::new(),
            subclass_index: BTreeMap::new(),
            class_parent: Vec::new(),
            subclass_parent: Vec::new(),
        };
        for (line, (sec, cls, sub)) in chains.into_iter().enumerate() {
            let (sec, cls, sub) = (sec.into(), cls.into(), sub.into());
            let line = line + 1;
            if sec.is_empty() || cls.is_empty() || sub.is_empty() {
                return Err(Error::MalformedRecord {
                    line,
                    detail: "empty taxonomy code".into(),
                });
            }
            let si = *t.section_index.entry(sec.clone()).or_insert_with(|| {
                t.sections.push(sec.clone());
                t.sections.len() - 1
            });
            let ci = match t.class_index.get(&cls) {
                Some(&ci) => {
                    if t.class_parent[ci] != si {
                        return Err(Error::MalformedRecord {
                            line,
                            detail: format!(
                                "class `{}` listed under both `{}` and `{}`",
                                cls, t.sections[t.class_parent[ci]], sec
                            ),
                        });
                    }
                    ci
                }
                None => {
                    t.classes.push(cls.clone());
                    t.class_parent.push(si);
                    t.class_index.insert(cls.clone(), t.classes.len() - 1);
                    t.classes.len() - 1
                }
            };
            match t.subclass_index.get(&sub) {
                Some(&bi) => {
                    if t.subclass_parent[bi] != ci {
                        return Err(Error::MalformedRecord {
                            line,
                            detail: format!(
                                "subclass `{}` listed under both `{}` and `{}`",
                                sub, t.classes[t.subclass_parent[bi]], cls
                            ),
                        });
                    }
                }
                None => {
                    t.subclasses.push(sub.clone());
                    t.subclass_parent.push(ci);
                    t.subclass_index.insert(sub.clone(), t.subclasses.len() - 1);
                }
            }
        }
        Ok(t)
    }

    /// Tab-separated `SECTION\tCLASS\tSUBCLASS`, one leaf per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut chains = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c), None) => {
                    chains.push((a.to_string(), b.to_string(), c.to_string()))
                }
                _ => {
                    return Err(Error::MalformedRecord {
                        line: i + 1,
                        detail: "expected 3 tab-separated taxonomy codes".into(),
                    })
                }
            }
        }
        Self::from_chains(chains)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (bi, sub) in self.subclasses.iter().enumerate() {
            let ci = self.subclass_parent[bi];
            let si = self.class_parent[ci];
            out.push_str(&format!("{}\t{}\t{}\n", self.sections[si], self.classes[ci], sub));
        }
        std::fs::write(path, out).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Evenly spread synthetic taxonomy with the requested level sizes.
    pub fn synthetic(sections: usize, classes: usize, subclasses: usize) -> Result<Self> {
        if sections == 0 || sections > 26 || classes < sections || subclasses < classes {
            return Err(Error::BadSynthSpec(format!(
                "level sizes ({sections}, {classes}, {subclasses}) must be increasing, sections <= 26"
            )));
        }
        let sec_code = |i: usize| ((b'A' + i as u8) as char).to_string();
        let mut chains = Vec::with_capacity(subclasses);
        let class_code: Vec<String> = (0..classes)
            .map(|j| format!("{}{:02}", sec_code(j % sections), j / sections))
            .collect();
        for k in 0..subclasses {
            let ci = k % classes;
            let sub = format!("{}{}", class_code[ci], (b'A' + (k / classes) as u8) as char);
            chains.push((sec_code(ci % sections), class_code[ci].clone(), sub));
        }
        Self::from_chains(chains)
    }

    pub fn level_size(&self, level: usize) -> usize {
        match level {
            1 => self.sections.len(),
            2 => self.classes.len(),
            _ => self.subclasses.len(),
        }
    }

    pub fn index_of(&self, level: usize, code: &str) -> Option<usize> {
        match level {
            1 => self.section_index.get(code).copied(),
            2 => self.class_index.get(code).copied(),
            _ => self.subclass_index.get(code).copied(),
        }
    }

    pub fn code(&self, level: usize, index: usize) -> &str {
        match level {
            1 => &self.sections[index],
            2 => &self.classes[index],
            _ => &self.subclasses[index],
        }
    }

    /// Section index of a class, class index of a subclass.
    pub fn parent_index(&self, level: usize, index: usize) -> Option<usize> {
        match level {
            2 => Some(self.class_parent[index]),
            3 => Some(self.subclass_parent[index]),
            _ => None,
        }
    }

    /// (section, class, subclass) indices if all three codes exist.
    pub fn label_indices(&self, label: &LabelPath) -> Option<(usize, usize, usize)> {
        Some((
            self.index_of(1, &label.section)?,
            self.index_of(2, &label.cls)?,
            self.index_of(3, &label.subclass)?,
        ))
    }

    /// Whether the label is a true root-to-leaf chain.
    pub fn is_chain(&self, label: &LabelPath) -> bool {
        match self.label_indices(label) {
            Some((si, ci, bi)) => self.subclass_parent[bi] == ci && self.class_parent[ci] == si,
            None => false,
        }
    }

    /// Label chain for a subclass index.
    pub fn chain_of_subclass(&self, bi: usize) -> LabelPath {
        let ci = self.subclass_parent[bi];
        let si = self.class_parent[ci];
        LabelPath {
            section: self.sections[si].clone(),
            cls: self.classes[ci].clone(),
            subclass: self.subclasses[bi].clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub documents: Vec<DocumentRecord>,
    pub taxonomy: Taxonomy,
    /// Directory image-feature paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Document-id to position map; positions follow document order.
    pub fn id_map(&self) -> HashMap<&str, usize> {
        self.documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.id.as_str(), i))
            .collect()
    }
}

/// On-disk record shape. Unknown keys are ignored on read; absent optional
/// fields are omitted on write.
#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    #[serde(default)]
    title: String,
    #[serde(rename = "abstract", default)]
    abstract_text: String,
    section: String,
    class: String,
    subclass: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    citations: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    image_features: Vec<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_feature_path: Option<String>,
}

/// Read a line-per-record corpus file, validating ids and label codes.
pub fn load_corpus(path: &Path, taxonomy: &Taxonomy) -> Result<Corpus> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut documents = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            detail: e.to_string(),
        })?;
        if raw.id.is_empty() {
            return Err(Error::MalformedRecord {
                line: line_no,
                detail: "empty id".into(),
            });
        }
        if let Some(&first_line) = seen.get(&raw.id) {
            return Err(Error::DuplicateId {
                id: raw.id,
                first_line,
                second_line: line_no,
            });
        }
        seen.insert(raw.id.clone(), line_no);
        for (level, code) in [(1, &raw.section), (2, &raw.class), (3, &raw.subclass)] {
            if taxonomy.index_of(level, code).is_none() {
                return Err(Error::UnknownLabel {
                    code: code.clone(),
                    level,
                    line: line_no,
                });
            }
        }
        documents.push(DocumentRecord {
            id: raw.id,
            title: raw.title,
            abstract_text: raw.abstract_text,
            image_features: raw.image_features,
            image_feature_path: raw.image_feature_path,
            citations: raw.citations,
            label: LabelPath {
                section: raw.section,
                cls: raw.class,
                subclass: raw.subclass,
            },
        });
    }
    Ok(Corpus {
        documents,
        taxonomy: taxonomy.clone(),
        base_dir: path.parent().map(|p| p.to_path_buf()),
    })
}

/// Write the corpus in the same line-per-record format `load_corpus` reads.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    for d in &corpus.documents {
        let raw = RawRecord {
            id: d.id.clone(),
            title: d.title.clone(),
            abstract_text: d.abstract_text.clone(),
            section: d.label.section.clone(),
            class: d.label.cls.clone(),
            subclass: d.label.subclass.clone(),
            citations: d.citations.clone(),
            image_features: d.image_features.clone(),
            image_feature_path: d.image_feature_path.clone(),
        };
        let line = serde_json::to_string(&raw).expect("record serializes");
        writeln!(file, "{}", line).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Deterministic shuffle then floor-based partition; remainder rows go to
/// the training part.
pub fn split_corpus(
    corpus: &Corpus,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 || ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::BadSplitRatios(ratios));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_val = (n as f64 * ratios[1]).floor() as usize;
    let n_test = (n as f64 * ratios[2]).floor() as usize;
    let n_train = n - n_val - n_test;
    let part = |idx: &[usize]| Corpus {
        documents: idx.iter().map(|&i| corpus.documents[i].clone()).collect(),
        taxonomy: corpus.taxonomy.clone(),
        base_dir: corpus.base_dir.clone(),
    };
    Ok((
        part(&order[..n_train]),
        part(&order[n_train..n_train + n_val]),
        part(&order[n_train + n_val..]),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    ChainViolation { id: String, detail: String },
    DanglingCitation { id: String, target: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::ChainViolation { id, detail } => {
                write!(f, "document `{}`: broken label chain: {}", id, detail)
            }
            Finding::DanglingCitation { id, target } => {
                write!(f, "document `{}`: citation to unknown id `{}`", id, target)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn chain_violations(&self) -> usize {
        self.findings
            .iter()
            .filter(|f| matches!(f, Finding::ChainViolation { .. }))
            .count()
    }

    pub fn dangling_citations(&self) -> usize {
        self.findings
            .iter()
            .filter(|f| matches!(f, Finding::DanglingCitation { .. }))
            .count()
    }
}

/// Collect label-chain violations and dangling citations; does not fail.
pub fn validate_against_taxonomy(corpus: &Corpus) -> ValidationReport {
    let ids: HashSet<&str> = corpus.documents.iter().map(|d| d.id.as_str()).collect();
    let mut report = ValidationReport::default();
    for d in &corpus.documents {
        if !corpus.taxonomy.is_chain(&d.label) {
            report.findings.push(Finding::ChainViolation {
                id: d.id.clone(),
                detail: format!(
                    "{} -> {} -> {}",
                    d.label.section, d.label.cls, d.label.subclass
                ),
            });
        }
        for c in &d.citations {
            if !ids.contains(c.as_str()) {
                report.findings.push(Finding::DanglingCitation {
                    id: d.id.clone(),
                    target: c.clone(),
                });
            }
        }
    }
    report
}

/// Undirected citation graph over document positions; isolated nodes carry a
/// self-loop so neighbor sampling is always defined.
#[derive(Debug, Clone)]
pub struct CitationGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<usize>>,
}

impl Default for CitationGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl CitationGraph {
    pub fn new() -> Self {
        CitationGraph {
            ids: Vec::new(),
            index: HashMap::new(),
            adjacency: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn node_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    fn finish_node(adj: &mut Vec<usize>, node: usize) {
        adj.sort_unstable();
        adj.dedup();
        adj.retain(|&v| v != node);
        if adj.is_empty() {
            adj.push(node);
        }
    }

    /// Add a node after construction (inductive insertion). Edges to
    /// unresolvable citation targets are dropped; an unconnected node gets a
    /// self-loop. Returns the new node's index.
    pub fn insert_node(&mut self, id: &str, citations: &[String]) -> usize {
        let node = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), node);
        let mut adj = Vec::new();
        for c in citations {
            if let Some(&t) = self.index.get(c.as_str()) {
                if t != node {
                    adj.push(t);
                }
            }
        }
        Self::finish_node(&mut adj, node);
        for &t in &adj {
            if t != node {
                self.adjacency[t].retain(|&v| v != t);
                self.adjacency[t].push(node);
                self.adjacency[t].sort_unstable();
            }
        }
        self.adjacency.push(adj);
        node
    }
}

/// Build the undirected graph from resolvable citations.
pub fn build_citation_graph(corpus: &Corpus) -> CitationGraph {
    let n = corpus.len();
    let ids: Vec<String> = corpus.documents.iter().map(|d| d.id.clone()).collect();
    let index: HashMap<String, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (u, d) in corpus.documents.iter().enumerate() {
        for c in &d.citations {
            if let Some(&v) = index.get(c.as_str()) {
                if u != v {
                    adjacency[u].push(v);
                    adjacency[v].push(u);
                }
            }
        }
    }
    for (u, adj) in adjacency.iter_mut().enumerate() {
        CitationGraph::finish_node(adj, u);
    }
    CitationGraph {
        ids,
        index,
        adjacency,
    }
}

/// Knobs for the synthetic corpus. Every modality carries label signal:
/// tokens come from per-subclass vocabulary blocks, image features from
/// per-subclass mean vectors, citations prefer same-subclass targets.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub docs: usize,
    /// Subclasses actually used, round-robin over documents. 0 = all.
    pub used_subclasses: usize,
    /// Vocabulary block size owned by each subclass.
    pub vocab_per_subclass: usize,
    pub sentences_per_doc: usize,
    pub words_per_sentence: usize,
    /// Probability a token is drawn from a random block instead of the
    /// document's own.
    pub token_noise: f64,
    pub feature_dim: usize,
    /// Standard deviation of the noise around the per-subclass feature mean.
    pub feature_noise: f64,
    pub citations_per_doc: usize,
    /// Probability a citation targets a same-subclass document.
    pub within_class_bias: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            docs: 64,
            used_subclasses: 0,
            vocab_per_subclass: 6,
            sentences_per_doc: 4,
            words_per_sentence: 6,
            token_noise: 0.1,
            feature_dim: 16,
            feature_noise: 0.3,
            citations_per_doc: 3,
            within_class_bias: 0.9,
            seed: 1,
        }
    }
}

/// Letters used to spell synthetic tokens. No vowels, no `s`/`g`/`d`, so
/// tokens pass the text pipeline unchanged (not stop words, no suffix the
/// lemmatizer strips).
const TOKEN_ALPHABET: &[u8] = b"bcfhjklmnpqrtvwz";

fn spell_token(mut n: usize) -> String {
    let base = TOKEN_ALPHABET.len();
    let mut out = vec![b'x'];
    loop {
        out.push(TOKEN_ALPHABET[n % base]);
        n /= base;
        if n == 0 {
            break;
        }
    }
    String::from_utf8(out).expect("ascii")
}

/// All distinct tokens the generator can emit for a taxonomy-sized run, in
/// block order. Useful for building embedding vocabularies.
pub fn synthetic_vocabulary(spec: &SynthSpec, taxonomy: &Taxonomy) -> Vec<String> {
    let used = effective_subclasses(spec, taxonomy);
    (0..used * spec.vocab_per_subclass).map(spell_token).collect()
}

fn effective_subclasses(spec: &SynthSpec, taxonomy: &Taxonomy) -> usize {
    if spec.used_subclasses == 0 {
        taxonomy.level_size(3)
    } else {
        spec.used_subclasses
    }
}

pub fn generate_synthetic_corpus(spec: &SynthSpec, taxonomy: &Taxonomy) -> Result<Corpus> {
    let used = effective_subclasses(spec, taxonomy);
    if used == 0 || used > taxonomy.level_size(3) {
        return Err(Error::BadSynthSpec(format!(
            "{} subclasses requested, taxonomy has {}",
            used,
            taxonomy.level_size(3)
        )));
    }
    if spec.docs == 0 || spec.vocab_per_subclass == 0 {
        return Err(Error::BadSynthSpec("docs and vocab block must be positive".into()));
    }

    // per-subclass feature means, independent of the main stream so that
    // changing doc count leaves them fixed
    let means: Vec<Vec<f32>> = (0..used)
        .map(|s| {
            let code = taxonomy.code(3, s);
            let mut rng =
                ChaCha8Rng::seed_from_u64(spec.seed ^ fnv1a64(code.as_bytes()));
            (0..spec.feature_dim)
                .map(|_| if rng.random::<f64>() < 0.5 { -0.5 } else { 0.5 })
                .collect()
        })
        .collect();

    let subclass_of = |i: usize| i % used;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise_dist = Normal::new(0.0, spec.feature_noise.max(0.0)).expect("finite sigma");
    let mut documents = Vec::with_capacity(spec.docs);
    for i in 0..spec.docs {
        let s = subclass_of(i);
        let label = taxonomy.chain_of_subclass(s);
        let mut sentences: Vec<String> = Vec::with_capacity(spec.sentences_per_doc);
        for _ in 0..spec.sentences_per_doc {
            let words: Vec<String> = (0..spec.words_per_sentence)
                .map(|_| {
                    let block = if rng.random::<f64>() < spec.token_noise {
                        rng.random_range(0..used)
                    } else {
                        s
                    };
                    spell_token(block * spec.vocab_per_subclass
                        + rng.random_range(0..spec.vocab_per_subclass))
                })
                .collect();
            sentences.push(words.join(" "));
        }
        let title = sentences[0].clone();
        let abstract_text = sentences[1..]
            .iter()
            .map(|s| format!("{}.", s))
            .collect::<Vec<_>>()
            .join(" ");

        let feature: Vec<f32> = means[s]
            .iter()
            .map(|&m| m + noise_dist.sample(&mut rng) as f32)
            .collect();

        let same: Vec<usize> = (0..spec.docs).filter(|&j| j != i && subclass_of(j) == s).collect();
        let mut citations = Vec::new();
        for _ in 0..spec.citations_per_doc {
            let target = if rng.random::<f64>() < spec.within_class_bias {
                if same.is_empty() {
                    continue;
                }
                same[rng.random_range(0..same.len())]
            } else {
                let mut t = rng.random_range(0..spec.docs);
                if t == i {
                    t = (t + 1) % spec.docs;
                }
                t
            };
            citations.push(format!("D{:05}", target));
        }
        citations.sort();
        citations.dedup();

        documents.push(DocumentRecord {
            id: format!("D{:05}", i),
            title,
            abstract_text,
            image_features: vec![feature],
            image_feature_path: None,
            citations,
            label,
        });
    }
    Ok(Corpus {
        documents,
        taxonomy: taxonomy.clone(),
        base_dir: None,
    })
}
