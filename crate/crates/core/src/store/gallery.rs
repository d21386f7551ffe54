use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{self, EmbeddingManifest, LoadOptions};
use super::EmbeddingMatrix;
use crate::allocator::AllocConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryManifest {
    pub source: String,
    pub encoder: String,
    pub created_utc: String,
}

impl GalleryManifest {
    pub fn new(source: &str, encoder: &str) -> Self {
        Self {
            source: source.to_string(),
            encoder: encoder.to_string(),
            created_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }
}

/// Enrolled real-identity centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    pub centroids: EmbeddingMatrix,
    pub labels: Option<Vec<String>>,
    pub manifest: GalleryManifest,
}

fn labels_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels.txt");
    PathBuf::from(s)
}

impl Gallery {
    pub fn new(
        centroids: EmbeddingMatrix,
        labels: Option<Vec<String>>,
        manifest: GalleryManifest,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != centroids.count() {
                return Err(Error::LabelCountMismatch { labels: l.len(), count: centroids.count() });
            }
        }
        Ok(Self { centroids, labels, manifest })
    }

    /// Gallery with synthetic provenance and no labels.
    pub fn unlabeled(centroids: EmbeddingMatrix, source: &str) -> Self {
        Self { centroids, labels: None, manifest: GalleryManifest::new(source, "none") }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.centroids.count()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.centroids.dim()
    }

    /// Writes the embedding file, its sidecar and (if present) a labels file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        io::save_embeddings(&self.centroids, path)?;
        let man = EmbeddingManifest::describe(
            &self.centroids,
            &self.manifest.source,
            &self.manifest.encoder,
            &self.manifest.created_utc,
        );
        io::write_manifest(path, &man)?;
        if let Some(labels) = &self.labels {
            fs::write(labels_path(path), labels.join("\n"))?;
        }
        Ok(())
    }

    /// Loads an embedding file as a gallery. A sidecar, when present, is
    /// checked against the payload.
    pub fn load(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Self> {
        let path = path.as_ref();
        let centroids = io::load_embeddings_with(path, opts)?;
        let manifest = match io::read_manifest(path)? {
            Some(m) => {
                m.verify(&centroids)?;
                GalleryManifest { source: m.source, encoder: m.encoder, created_utc: m.created_utc }
            }
            None => GalleryManifest {
                source: path.display().to_string(),
                encoder: "unknown".into(),
                created_utc: String::new(),
            },
        };
        let lp = labels_path(path);
        let labels = if lp.exists() {
            Some(fs::read_to_string(lp)?.lines().map(str::to_string).collect())
        } else {
            None
        };
        Self::new(centroids, labels, manifest)
    }
}

/// Construction provenance of one accepted virtual identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualRecord {
    pub index: usize,
    pub reference_index: usize,
    pub alpha_used: f64,
    pub attempts: u32,
    pub max_cos_to_gallery: f64,
}

/// Accepted virtual embeddings, one record per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualSet {
    pub embeddings: EmbeddingMatrix,
    pub records: Vec<VirtualRecord>,
    pub config_snapshot: AllocConfig,
}

#[derive(Serialize, Deserialize)]
struct RecordsFile {
    config_snapshot: AllocConfig,
    records: Vec<VirtualRecord>,
}

impl VirtualSet {
    pub fn new(dim: usize, config: AllocConfig) -> Self {
        Self { embeddings: EmbeddingMatrix::empty(dim), records: Vec::new(), config_snapshot: config }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.embeddings.count()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub(crate) fn push(&mut self, row: &[f32], mut record: VirtualRecord) -> Result<()> {
        record.index = self.records.len();
        self.embeddings.push_row(row)?;
        self.records.push(record);
        Ok(())
    }

    pub fn records_path(prefix: impl AsRef<Path>) -> PathBuf {
        with_suffix(prefix.as_ref(), ".records.json")
    }

    pub fn embeddings_path(prefix: impl AsRef<Path>) -> PathBuf {
        with_suffix(prefix.as_ref(), ".bipe")
    }

    /// Writes `<prefix>.bipe` (+ sidecar) and `<prefix>.records.json`.
    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<()> {
        let prefix = prefix.as_ref();
        let emb = Self::embeddings_path(prefix);
        io::save_embeddings(&self.embeddings, &emb)?;
        let created = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
        io::write_manifest(
            &emb,
            &EmbeddingManifest::describe(&self.embeddings, "bip-provision", "virtual", &created),
        )?;
        let file = RecordsFile { config_snapshot: self.config_snapshot.clone(), records: self.records.clone() };
        fs::write(Self::records_path(prefix), serde_json::to_vec_pretty(&file)?)?;
        Ok(())
    }

    pub fn load(prefix: impl AsRef<Path>) -> Result<Self> {
        let prefix = prefix.as_ref();
        let emb_path = Self::embeddings_path(prefix);
        let embeddings = io::load_embeddings(&emb_path)?;
        if let Some(m) = io::read_manifest(&emb_path)? {
            m.verify(&embeddings)?;
        }
        let file: RecordsFile = serde_json::from_slice(&fs::read(Self::records_path(prefix))?)?;
        if file.records.len() != embeddings.count() {
            return Err(Error::LabelCountMismatch { labels: file.records.len(), count: embeddings.count() });
        }
        Ok(Self { embeddings, records: file.records, config_snapshot: file.config_snapshot })
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
