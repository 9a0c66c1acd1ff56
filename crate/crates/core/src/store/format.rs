use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AudioSpan, Role, Session, Utterance, UtteranceKey};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TEXT_DIM: usize = 1024;
pub const DEFAULT_AUDIO_DIM: usize = 527;

pub const META_FILE: &str = "meta.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const TEXT_FILE: &str = "text.f32";
pub const AUDIO_FILE: &str = "audio.f32";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreMeta {
    pub format_version: u32,
    pub d_text: usize,
    pub d_audio: usize,
    pub n_records: usize,
}

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub session_id: String,
    pub seq_index: u32,
    pub role: Role,
    pub label: String,
    pub text: String,
    pub start_ms: Option<u64>,
    pub end_ms: Option<u64>,
    pub row_index: usize,
}

impl ManifestRecord {
    pub fn key(&self) -> UtteranceKey {
        UtteranceKey {
            session_id: self.session_id.clone(),
            role: self.role,
            seq_index: self.seq_index,
        }
    }

    pub fn to_utterance(&self) -> Result<Utterance> {
        let audio = match (self.start_ms, self.end_ms) {
            (Some(start_ms), Some(end_ms)) => Some(AudioSpan { start_ms, end_ms }),
            (None, None) => None,
            _ => {
                return Err(Error::InvalidUtterance(format!(
                    "{}: start_ms and end_ms must both be present or absent",
                    self.key()
                )))
            }
        };
        Utterance::new(
            self.session_id.clone(),
            self.seq_index,
            self.role,
            self.text.clone(),
            audio,
            self.role.label_index(&self.label)?,
        )
    }
}

/// Per-utterance text and audio embeddings with their manifest.
///
/// Rows are ordered by `(session_id, role, seq_index)` and `row_index` equals
/// the manifest line number.
#[derive(Clone, Debug)]
pub struct EmbeddingStore {
    meta: StoreMeta,
    records: Vec<ManifestRecord>,
    text: Vec<f32>,
    audio: Vec<f32>,
    index: HashMap<UtteranceKey, usize>,
}

impl PartialEq for EmbeddingStore {
    fn eq(&self, other: &Self) -> bool {
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.meta == other.meta
            && self.records == other.records
            && bits(&self.text) == bits(&other.text)
            && bits(&self.audio) == bits(&other.audio)
    }
}

impl EmbeddingStore {
    /// Builds a store from utterances and their embedding vectors (parallel
    /// slices).
    pub fn from_utterances(
        utterances: &[Utterance],
        text: &[Vec<f32>],
        audio: &[Vec<f32>],
        d_text: usize,
        d_audio: usize,
    ) -> Result<Self> {
        if text.len() != utterances.len() || audio.len() != utterances.len() {
            return Err(Error::CountMismatch(format!(
                "{} utterances, {} text vectors, {} audio vectors",
                utterances.len(),
                text.len(),
                audio.len()
            )));
        }
        let mut order: Vec<usize> = (0..utterances.len()).collect();
        order.sort_by_key(|&i| utterances[i].key());

        let mut records = Vec::with_capacity(order.len());
        let mut text_blob = Vec::with_capacity(order.len() * d_text);
        let mut audio_blob = Vec::with_capacity(order.len() * d_audio);
        for (row, &i) in order.iter().enumerate() {
            let u = &utterances[i];
            u.validate()?;
            for (what, v, d) in [("text", &text[i], d_text), ("audio", &audio[i], d_audio)] {
                if v.len() != d {
                    return Err(Error::DimMismatch {
                        what: format!("{what} vector of {}", u.key()),
                        expected: d,
                        got: v.len(),
                    });
                }
            }
            text_blob.extend_from_slice(&text[i]);
            audio_blob.extend_from_slice(&audio[i]);
            records.push(ManifestRecord {
                session_id: u.session_id.clone(),
                seq_index: u.seq_index,
                role: u.role,
                label: u.role.label_name(u.label)?.to_string(),
                text: u.text.clone(),
                start_ms: u.audio.map(|a| a.start_ms),
                end_ms: u.audio.map(|a| a.end_ms),
                row_index: row,
            });
        }
        let meta = StoreMeta {
            format_version: FORMAT_VERSION,
            d_text,
            d_audio,
            n_records: records.len(),
        };
        Self::assemble(meta, records, text_blob, audio_blob)
    }

    fn assemble(
        meta: StoreMeta,
        records: Vec<ManifestRecord>,
        text: Vec<f32>,
        audio: Vec<f32>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for r in &records {
            if r.row_index >= meta.n_records {
                return Err(Error::CountMismatch(format!(
                    "{} addresses row {} of {}",
                    r.key(),
                    r.row_index,
                    meta.n_records
                )));
            }
            if index.insert(r.key(), r.row_index).is_some() {
                return Err(Error::InvalidUtterance(format!(
                    "duplicate record {}",
                    r.key()
                )));
            }
        }
        Ok(EmbeddingStore {
            meta,
            records,
            text,
            audio,
            index,
        })
    }

    pub fn meta(&self) -> &StoreMeta {
        &self.meta
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn row_of(&self, key: &UtteranceKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn text_row(&self, row: usize) -> &[f32] {
        let d = self.meta.d_text;
        &self.text[row * d..(row + 1) * d]
    }

    pub fn audio_row(&self, row: usize) -> &[f32] {
        let d = self.meta.d_audio;
        &self.audio[row * d..(row + 1) * d]
    }

    /// Sessions reconstructed from the manifest, ordered by id.
    pub fn sessions(&self) -> Result<Vec<Session>> {
        let mut grouped: BTreeMap<&str, Vec<Utterance>> = BTreeMap::new();
        for r in &self.records {
            grouped
                .entry(&r.session_id)
                .or_default()
                .push(r.to_utterance()?);
        }
        grouped
            .into_iter()
            .map(|(id, us)| Session::new(id, us, None))
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        write_file(&dir.join(META_FILE), meta.as_bytes())?;

        let mut manifest = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut manifest, r).expect("record serializes");
            manifest.push(b'\n');
        }
        write_file(&dir.join(MANIFEST_FILE), &manifest)?;
        write_file(&dir.join(TEXT_FILE), &f32_bytes(&self.text))?;
        write_file(&dir.join(AUDIO_FILE), &f32_bytes(&self.audio))?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let meta: StoreMeta = serde_json::from_slice(&read_file(&meta_path)?)
            .map_err(|e| Error::json(&meta_path, e))?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion(meta.format_version));
        }

        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = read_file(&manifest_path)?;
        let mut records = Vec::with_capacity(meta.n_records);
        for line in manifest.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            let r: ManifestRecord =
                serde_json::from_slice(line).map_err(|e| Error::json(&manifest_path, e))?;
            records.push(r);
        }
        if records.len() != meta.n_records {
            return Err(Error::CountMismatch(format!(
                "meta.json declares {} records, manifest has {}",
                meta.n_records,
                records.len()
            )));
        }

        let text = read_blob(&dir.join(TEXT_FILE), meta.n_records * meta.d_text)?;
        let audio = read_blob(&dir.join(AUDIO_FILE), meta.n_records * meta.d_audio)?;
        Self::assemble(meta, records, text, audio)
    }
}

pub fn write_store(store: &EmbeddingStore, dir: &Path) -> Result<()> {
    store.write(dir)
}

pub fn read_store(dir: &Path) -> Result<EmbeddingStore> {
    EmbeddingStore::read(dir)
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads a headerless little-endian f32 matrix with exactly `n` values.
pub(crate) fn read_blob(path: &Path, n: usize) -> Result<Vec<f32>> {
    let bytes = read_file(path)?;
    let needed = n * 4;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::CountMismatch(format!(
            "{} holds {} bytes, expected {needed}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
