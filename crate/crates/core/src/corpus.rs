//! Parallel-corpus ingestion, the validity filter, and dataset statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::textnorm::normalize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_tag: Option<String>,
}

impl Sample {
    pub fn new(id: impl Into<String>, source: impl Into<String>, target: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            doc_id: None,
            source: source.into(),
            target: target.into(),
            genre: None,
            split_tag: None,
        }
    }

    pub fn with_doc(mut self, doc_id: impl Into<String>) -> Self {
        self.doc_id = Some(doc_id.into());
        self
    }

    pub fn with_genre(mut self, genre: impl Into<String>) -> Self {
        self.genre = Some(genre.into());
        self
    }

    /// Document id for document-level operations; empty ids count as missing.
    pub fn require_doc(&self) -> Result<&str> {
        match self.doc_id.as_deref() {
            Some(d) if !d.trim().is_empty() => Ok(d),
            _ => Err(Error::MissingDocId(self.id.clone())),
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.source.trim().is_empty() && !self.target.trim().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Tsv,
}

impl Format {
    /// `.tsv` means TSV, anything else JSONL.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("tsv") => Format::Tsv,
            _ => Format::Jsonl,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "tsv" => Ok(Format::Tsv),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

/// An ordered, id-unique collection of samples. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub name: String,
    samples: Vec<Sample>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids.
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Result<Self> {
        let name = name.into();
        let mut seen: HashMap<&str, usize> = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if let Some(first) = seen.insert(s.id.as_str(), i) {
                return Err(Error::DuplicateId {
                    path: name.clone().into(),
                    id: s.id.clone(),
                    first: first + 1,
                    second: i + 1,
                });
            }
        }
        Ok(Corpus { name, samples })
    }

    /// Subset of an already id-unique corpus; cannot introduce duplicates.
    pub(crate) fn derived(&self, name: impl Into<String>, samples: Vec<Sample>) -> Corpus {
        Corpus {
            name: name.into(),
            samples,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn filter(&self, name: impl Into<String>, mut keep: impl FnMut(&Sample) -> bool) -> Corpus {
        self.derived(
            name,
            self.samples.iter().filter(|s| keep(s)).cloned().collect(),
        )
    }

    /// SHA-256 over ids and texts in order; identifies the corpus content.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.samples {
            for field in [
                s.id.as_str(),
                s.doc_id.as_deref().unwrap_or(""),
                s.source.as_str(),
                s.target.as_str(),
            ] {
                h.update((field.len() as u64).to_le_bytes());
                h.update(field.as_bytes());
            }
        }
        hex(&h.finalize())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for s in &self.samples {
            serde_json::to_writer(&mut out, s).expect("sample serializes");
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_corpus(path: &Path, format: Format) -> Result<Corpus> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut samples = Vec::new();
    let mut lines_of: HashMap<String, usize> = HashMap::new();

    let mut push = |sample: Sample, line: usize, samples: &mut Vec<Sample>| -> Result<()> {
        if let Some(first) = lines_of.insert(sample.id.clone(), line) {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                id: sample.id,
                first,
                second: line,
            });
        }
        samples.push(sample);
        Ok(())
    };

    let mut header: Option<TsvHeader> = None;
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line_no = i + 1;
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| Error::InvalidUtf8 {
            path: path.to_path_buf(),
            line: line_no,
        })?;
        let malformed = |reason: String| Error::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            reason,
        };
        match format {
            Format::Jsonl => {
                if line.trim().is_empty() {
                    continue;
                }
                let sample = parse_json_sample(line).map_err(malformed)?;
                push(sample, line_no, &mut samples)?;
            }
            Format::Tsv => {
                if line.is_empty() && header.is_some() {
                    continue;
                }
                match &header {
                    None => {
                        if line.is_empty() {
                            continue;
                        }
                        header = Some(TsvHeader::parse(line).map_err(malformed)?);
                    }
                    Some(h) => {
                        let sample = h.sample(line).map_err(malformed)?;
                        push(sample, line_no, &mut samples)?;
                    }
                }
            }
        }
    }
    Ok(Corpus { name, samples })
}

fn parse_json_sample(line: &str) -> std::result::Result<Sample, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let text = |key: &str, required: bool| -> std::result::Result<Option<String>, String> {
        match obj.get(key) {
            None | Some(Value::Null) if required => Err(format!("missing field {key:?}")),
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            // numeric ids are common in exported datasets
            Some(Value::Number(n)) if key.ends_with("id") => Ok(Some(n.to_string())),
            Some(other) => Err(format!("field {key:?} must be a string, got {other}")),
        }
    };
    Ok(Sample {
        id: text("id", true)?.unwrap_or_default(),
        doc_id: text("doc_id", false)?,
        source: text("source", true)?.unwrap_or_default(),
        target: text("target", true)?.unwrap_or_default(),
        genre: text("genre", false)?,
        split_tag: text("split_tag", false)?,
    })
}

struct TsvHeader {
    width: usize,
    id: usize,
    source: usize,
    target: usize,
    doc_id: Option<usize>,
    genre: Option<usize>,
    split_tag: Option<usize>,
}

impl TsvHeader {
    fn parse(line: &str) -> std::result::Result<Self, String> {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        let find = |name: &str| cols.iter().position(|c| *c == name);
        let need = |name: &str| find(name).ok_or_else(|| format!("header lacks column {name:?}"));
        Ok(TsvHeader {
            width: cols.len(),
            id: need("id")?,
            source: need("source")?,
            target: need("target")?,
            doc_id: find("doc_id"),
            genre: find("genre"),
            split_tag: find("split_tag"),
        })
    }

    fn sample(&self, line: &str) -> std::result::Result<Sample, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != self.width {
            return Err(format!(
                "expected {} tab-separated fields, found {}",
                self.width,
                fields.len()
            ));
        }
        let opt = |idx: Option<usize>| {
            idx.map(|i| fields[i])
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
        };
        Ok(Sample {
            id: fields[self.id].to_owned(),
            doc_id: opt(self.doc_id),
            source: fields[self.source].to_owned(),
            target: fields[self.target].to_owned(),
            genre: opt(self.genre),
            split_tag: opt(self.split_tag),
        })
    }
}

/// Reads one JSON value per non-blank line, returning each with its 1-based
/// line number.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = std::str::from_utf8(raw).map_err(|_| Error::InvalidUtf8 {
            path: path.to_path_buf(),
            line: i + 1,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

/// Keeps samples whose source and target are non-empty after whitespace trim.
pub fn filter_valid(corpus: &Corpus) -> Corpus {
    corpus.filter(corpus.name.clone(), Sample::is_valid)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
pub struct CorpusStats {
    pub total: usize,
    pub valid: usize,
    pub nonempty_target: usize,
    /// Distinct normalized targets among valid samples.
    pub unique_targets: usize,
    pub docs: usize,
    pub per_doc_counts: BTreeMap<String, usize>,
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut stats = CorpusStats {
        total: corpus.len(),
        ..CorpusStats::default()
    };
    let mut targets = HashSet::new();
    for s in corpus {
        if !s.target.trim().is_empty() {
            stats.nonempty_target += 1;
        }
        if s.is_valid() {
            stats.valid += 1;
            targets.insert(normalize(&s.target));
        }
        if let Ok(doc) = s.require_doc() {
            *stats.per_doc_counts.entry(doc.to_owned()).or_default() += 1;
        }
    }
    stats.unique_targets = targets.len();
    stats.docs = stats.per_doc_counts.len();
    stats
}
