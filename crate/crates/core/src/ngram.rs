//! Character n-gram extraction and an exact inverted index over a corpus field.
//!
//! Texts are normalized before gram extraction, so a query whose normalized
//! form equals an indexed text always has coverage 1.0. Strings shorter than
//! `n` code points contribute themselves as a single gram; such a query gram
//! counts as present when it occurs as a substring of some indexed text.

use std::cmp::Reverse;
use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::textnorm::{normalize, NormalizedText};

pub const DEFAULT_N: usize = 8;

const INDEX_MAGIC: &[u8; 8] = b"CANGRAM\0";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Target,
    Source,
}

impl Field {
    pub fn of<'a>(&self, sample: &'a Sample) -> &'a str {
        match self {
            Field::Target => &sample.target,
            Field::Source => &sample.source,
        }
    }
}

/// Contiguous code-point windows of length `n`, or the whole string when it
/// is shorter than `n`.
pub fn char_ngrams(text: &str, n: usize) -> Result<Vec<&str>> {
    if n == 0 {
        return Err(Error::ZeroGramLength);
    }
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    let chars = bounds.len();
    bounds.push(text.len());
    if chars < n {
        return Ok(vec![text]);
    }
    Ok((0..=chars - n).map(|i| &text[bounds[i]..bounds[i + n]]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CoverageScore {
    pub value: f64,
    pub gram_count: usize,
    pub matched: usize,
    /// Query was empty after normalization.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
    /// Query was shorter than `n` and scored as a single whole-string gram.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub short_fallback: bool,
}

impl CoverageScore {
    fn new(matched: usize, gram_count: usize, short_fallback: bool) -> Self {
        CoverageScore {
            value: if gram_count == 0 {
                0.0
            } else {
                matched as f64 / gram_count as f64
            },
            gram_count,
            matched,
            degenerate: gram_count == 0,
            short_fallback,
        }
    }

    /// `value >= threshold`, evaluated on the integer counts.
    pub fn at_least(&self, threshold: f64) -> bool {
        self.gram_count > 0 && self.matched as f64 >= threshold * self.gram_count as f64 - 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramIndex {
    n: usize,
    field: Field,
    corpus_hash: String,
    ids: Vec<String>,
    texts: Vec<NormalizedText>,
    char_lens: Vec<usize>,
    positions: HashMap<String, usize>,
    /// gram -> ascending sample positions
    postings: HashMap<String, Vec<u32>>,
    /// all sample positions ordered by (text length, id)
    tie_order: Vec<u32>,
}

/// A query prepared against an index: normalized text and its grams.
struct Query {
    grams: Vec<String>,
    short: bool,
}

impl NgramIndex {
    pub fn build(corpus: &Corpus, n: usize, field: Field) -> Result<Self> {
        if n == 0 {
            return Err(Error::ZeroGramLength);
        }
        if corpus.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let texts: Vec<NormalizedText> = corpus
            .samples()
            .par_iter()
            .map(|s| normalize(field.of(s)))
            .collect();
        let mut postings: HashMap<String, Vec<u32>> = HashMap::new();
        for (pos, text) in texts.iter().enumerate() {
            for g in char_ngrams(text.as_str(), n)? {
                let list = postings.entry(g.to_owned()).or_default();
                if list.last() != Some(&(pos as u32)) {
                    list.push(pos as u32);
                }
            }
        }
        let ids = corpus.iter().map(|s| s.id.clone()).collect();
        Ok(Self::assemble(n, field, corpus.content_hash(), ids, texts, postings))
    }

    fn assemble(
        n: usize,
        field: Field,
        corpus_hash: String,
        ids: Vec<String>,
        texts: Vec<NormalizedText>,
        postings: HashMap<String, Vec<u32>>,
    ) -> Self {
        let char_lens: Vec<usize> = texts.iter().map(|t| t.as_str().chars().count()).collect();
        let positions = ids.iter().enumerate().map(|(p, id)| (id.clone(), p)).collect();
        let mut tie_order: Vec<u32> = (0..ids.len() as u32).collect();
        tie_order.sort_by(|&a, &b| {
            (char_lens[a as usize], &ids[a as usize]).cmp(&(char_lens[b as usize], &ids[b as usize]))
        });
        NgramIndex {
            n,
            field,
            corpus_hash,
            ids,
            texts,
            char_lens,
            positions,
            postings,
            tie_order,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn corpus_hash(&self) -> &str {
        &self.corpus_hash
    }

    pub fn gram_count(&self) -> usize {
        self.postings.len()
    }

    pub fn contains_gram(&self, gram: &str) -> bool {
        if gram.chars().count() >= self.n {
            return self.postings.contains_key(gram);
        }
        self.texts.iter().any(|t| t.as_str().contains(gram))
    }

    /// Sample ids containing `gram`, for grams of full length `n`.
    pub fn postings(&self, gram: &str) -> impl Iterator<Item = &str> {
        self.postings
            .get(gram)
            .into_iter()
            .flatten()
            .map(|&p| self.ids[p as usize].as_str())
    }

    pub fn text_of(&self, id: &str) -> Option<&NormalizedText> {
        self.position(id).map(|p| &self.texts[p])
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn prepare(&self, raw: &str) -> Query {
        let norm = normalize(raw);
        let grams = char_ngrams(norm.as_str(), self.n)
            .expect("n validated at build")
            .into_iter()
            .map(str::to_owned)
            .collect::<Vec<_>>();
        let short = !grams.is_empty() && grams[0].chars().count() < self.n;
        Query { grams, short }
    }

    /// Fraction of the query's gram occurrences present anywhere in the index.
    pub fn coverage(&self, query: &str) -> CoverageScore {
        let q = self.prepare(query);
        let matched = q.grams.iter().filter(|g| self.contains_gram(g)).count();
        CoverageScore::new(matched, q.grams.len(), q.short)
    }

    /// Coverage of the query against a single indexed sample.
    pub fn coverage_against(&self, query: &str, id: &str) -> Option<CoverageScore> {
        let pos = self.position(id)?;
        let q = self.prepare(query);
        let text = self.texts[pos].as_str();
        let matched = q.grams.iter().filter(|g| text.contains(g.as_str())).count();
        Some(CoverageScore::new(matched, q.grams.len(), q.short))
    }

    /// Per-candidate matched-occurrence counts for every sample sharing a gram.
    fn candidate_matches(&self, q: &Query) -> HashMap<u32, usize> {
        let mut counts: HashMap<u32, usize> = HashMap::new();
        if q.short {
            let g = q.grams[0].as_str();
            for (pos, t) in self.texts.iter().enumerate() {
                if t.as_str().contains(g) {
                    counts.insert(pos as u32, 1);
                }
            }
            return counts;
        }
        for g in &q.grams {
            if let Some(list) = self.postings.get(g) {
                for &p in list {
                    *counts.entry(p).or_default() += 1;
                }
            }
        }
        counts
    }

    /// The `k` samples with highest single-candidate coverage, ties broken by
    /// shorter normalized text, then smaller id. Zero-coverage samples fill
    /// the tail when fewer than `k` samples share a gram with the query.
    pub fn top_k(&self, query: &str, k: usize) -> Result<Vec<(String, CoverageScore)>> {
        let q = self.prepare(query);
        if q.grams.is_empty() {
            return Err(Error::DegenerateQuery);
        }
        let counts = self.candidate_matches(&q);
        let mut ranked: Vec<(u32, usize)> = counts.into_iter().collect();
        ranked.sort_by_key(|&(p, m)| {
            (Reverse(m), self.char_lens[p as usize], self.ids[p as usize].as_str())
        });
        ranked.truncate(k);
        if ranked.len() < k {
            let taken: std::collections::HashSet<u32> = ranked.iter().map(|&(p, _)| p).collect();
            let fill = self
                .tie_order
                .iter()
                .filter(|p| !taken.contains(p))
                .take(k - ranked.len())
                .map(|&p| (p, 0));
            ranked.extend(fill.collect::<Vec<_>>());
        }
        Ok(ranked
            .into_iter()
            .map(|(p, m)| {
                (
                    self.ids[p as usize].clone(),
                    CoverageScore::new(m, q.grams.len(), q.short),
                )
            })
            .collect())
    }

    pub fn best_match(&self, query: &str) -> Result<(String, CoverageScore)> {
        Ok(self
            .top_k(query, 1)?
            .into_iter()
            .next()
            .expect("index is non-empty"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(INDEX_MAGIC);
        buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.push(match self.field {
            Field::Target => 0,
            Field::Source => 1,
        });
        put_str(&mut buf, &self.corpus_hash);
        buf.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, text) in self.ids.iter().zip(&self.texts) {
            put_str(&mut buf, id);
            put_str(&mut buf, text.as_str());
        }
        let mut grams: Vec<(&String, &Vec<u32>)> = self.postings.iter().collect();
        grams.sort();
        buf.extend_from_slice(&(grams.len() as u64).to_le_bytes());
        for (g, list) in grams {
            put_str(&mut buf, g);
            buf.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for p in list {
                buf.extend_from_slice(&p.to_le_bytes());
            }
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    /// Loads an index saved by [`NgramIndex::save`], refusing it unless it was
    /// built from a corpus with the same content hash as `corpus`.
    pub fn load(path: &Path, corpus: &Corpus) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::Index(format!("{}: {what}", path.display()));
        let mut r = io::Cursor::new(bytes.as_slice());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != INDEX_MAGIC {
            return Err(bad("not an n-gram index file"));
        }
        let version = get_u32(&mut r).ok_or_else(|| bad("truncated header"))?;
        if version != INDEX_VERSION {
            return Err(bad(&format!("unsupported index version {version}")));
        }
        let n = get_u32(&mut r).ok_or_else(|| bad("truncated header"))? as usize;
        let mut field = [0u8; 1];
        r.read_exact(&mut field).map_err(|_| bad("truncated header"))?;
        let field = match field[0] {
            0 => Field::Target,
            1 => Field::Source,
            _ => return Err(bad("unknown field tag")),
        };
        let hash = get_str(&mut r).ok_or_else(|| bad("truncated header"))?;
        let expected = corpus.content_hash();
        if hash != expected {
            return Err(bad(&format!(
                "built from corpus {hash}, refusing to use it with corpus {expected}"
            )));
        }
        let count = get_u64(&mut r).ok_or_else(|| bad("truncated"))? as usize;
        let mut ids = Vec::with_capacity(count);
        let mut texts = Vec::with_capacity(count);
        for _ in 0..count {
            ids.push(get_str(&mut r).ok_or_else(|| bad("truncated samples"))?);
            let text = get_str(&mut r).ok_or_else(|| bad("truncated samples"))?;
            texts.push(normalize(&text));
        }
        let grams = get_u64(&mut r).ok_or_else(|| bad("truncated"))? as usize;
        let mut postings = HashMap::with_capacity(grams);
        for _ in 0..grams {
            let g = get_str(&mut r).ok_or_else(|| bad("truncated postings"))?;
            let len = get_u32(&mut r).ok_or_else(|| bad("truncated postings"))? as usize;
            let list = (0..len)
                .map(|_| get_u32(&mut r).filter(|&p| (p as usize) < count))
                .collect::<Option<Vec<u32>>>()
                .ok_or_else(|| bad("bad postings"))?;
            postings.insert(g, list);
        }
        Ok(Self::assemble(n, field, hash, ids, texts, postings))
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn get_u32(r: &mut impl Read) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

fn get_u64(r: &mut impl Read) -> Option<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).ok()?;
    Some(u64::from_le_bytes(b))
}

fn get_str(r: &mut impl Read) -> Option<String> {
    let len = get_u32(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).ok()?;
    String::from_utf8(b).ok()
}
