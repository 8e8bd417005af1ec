//! Versioned on-disk dataset.
//!
//! ```text
//! dataset/<tag>/catalog.json
//! dataset/<tag>/manifest.json
//! dataset/<tag>/observations-0000.jsonl
//! dataset/<tag>/sessions-0000.jsonl
//! dataset/<tag>/ensembles/iter-000.json
//! dataset/<tag>/trials/iter-000.jsonl
//! ```
//!
//! Record streams are JSON lines. Every append writes a new numbered file
//! (through a temporary file and a rename) and then rewrites the manifest,
//! so existing record files are never modified. Floats are written with the
//! shortest representation that parses back to the same bits.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::active::SelectedTrial;
use crate::error::{Error, Result};
use crate::inference::Ensemble;
use crate::model::{EmbeddingPosterior, Observation};
use crate::quality::Session;
use crate::seed::stable_hash;

pub const FORMAT_VERSION: u32 = 1;

/// One stimulus as shown to judges. URLs are opaque to the engine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusEntry {
    pub id: String,
    pub url: String,
    /// Mirrored rendition used by catch trials.
    pub mirror_url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub stimuli: Vec<StimulusEntry>,
}

impl Catalog {
    /// Catalog with ids `s0000, s0001, ...` and opaque placeholder URLs.
    pub fn synthetic(n: usize) -> Self {
        Catalog {
            stimuli: (0..n)
                .map(|i| StimulusEntry {
                    id: format!("s{i:04}"),
                    url: format!("/stimuli/{:016x}.png", stable_hash([i as u64, 0])),
                    mirror_url: format!("/stimuli/{:016x}.png", stable_hash([i as u64, 1])),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.stimuli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimuli.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.stimuli.iter().map(|s| s.id.clone()).collect()
    }

    /// Ids must be unique, and so must every URL, mirrors included.
    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::HashSet::new();
        let mut urls = std::collections::HashSet::new();
        for s in &self.stimuli {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::arg(format!("duplicate stimulus id {:?}", s.id)));
            }
            for u in [&s.url, &s.mirror_url] {
                if !urls.insert(u.as_str()) {
                    return Err(Error::arg(format!("duplicate stimulus url {u:?}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFile {
    pub name: String,
    pub count: usize,
    /// Caller-supplied tag that makes a batch append idempotent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tag: String,
    pub n_stimuli: usize,
    pub observation_files: Vec<RecordFile>,
    pub session_files: Vec<RecordFile>,
}

impl Manifest {
    pub fn observation_count(&self) -> usize {
        self.observation_files.iter().map(|f| f.count).sum()
    }

    pub fn session_count(&self) -> usize {
        self.session_files.iter().map(|f| f.count).sum()
    }
}

/// Serialized posterior. Ground-truth embeddings use the same format with
/// zero variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDocument {
    pub format_version: u32,
    pub n: usize,
    pub d: usize,
    pub beta: f64,
    pub prior_sigma: f64,
    pub mu: Vec<Vec<f64>>,
    pub sigma2: Vec<Vec<f64>>,
    pub stimulus_ids: Vec<String>,
}

fn to_rows(a: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: &[Vec<f64>], n: usize, d: usize, what: &str) -> Result<Array2<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != d) {
        return Err(Error::arg(format!("{what} is not {n}x{d}")));
    }
    Ok(Array2::from_shape_vec((n, d), rows.concat()).expect("checked shape"))
}

impl EmbeddingDocument {
    pub fn from_posterior(posterior: &EmbeddingPosterior, stimulus_ids: Vec<String>) -> Result<Self> {
        if stimulus_ids.len() != posterior.n() {
            return Err(Error::arg("one stimulus id per row is required"));
        }
        Ok(EmbeddingDocument {
            format_version: FORMAT_VERSION,
            n: posterior.n(),
            d: posterior.d(),
            beta: posterior.beta(),
            prior_sigma: posterior.prior_sigma(),
            mu: to_rows(posterior.mu()),
            sigma2: to_rows(posterior.sigma2()),
            stimulus_ids,
        })
    }

    pub fn to_posterior(&self) -> Result<EmbeddingPosterior> {
        if self.stimulus_ids.len() != self.n {
            return Err(Error::arg("one stimulus id per row is required"));
        }
        EmbeddingPosterior::new(
            from_rows(&self.mu, self.n, self.d, "mu")?,
            from_rows(&self.sigma2, self.n, self.d, "sigma2")?,
            self.prior_sigma,
            self.beta,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDocument {
    pub format_version: u32,
    pub members: Vec<EmbeddingDocument>,
    pub val_loss: Vec<f64>,
    pub iteration: u32,
    pub holdout_masks: Vec<Vec<usize>>,
    #[serde(default)]
    pub n_observations: usize,
}

impl EnsembleDocument {
    pub fn from_ensemble(ensemble: &Ensemble, stimulus_ids: &[String]) -> Result<Self> {
        Ok(EnsembleDocument {
            format_version: FORMAT_VERSION,
            members: ensemble
                .members()
                .iter()
                .map(|m| EmbeddingDocument::from_posterior(m, stimulus_ids.to_vec()))
                .collect::<Result<_>>()?,
            val_loss: ensemble.val_loss().to_vec(),
            iteration: ensemble.iteration(),
            holdout_masks: ensemble.holdout_masks().to_vec(),
            n_observations: ensemble.n_observations(),
        })
    }

    pub fn to_ensemble(&self) -> Result<Ensemble> {
        let members = self.members.iter().map(|m| m.to_posterior()).collect::<Result<_>>()?;
        Ok(Ensemble::from_parts(members, self.holdout_masks.clone(), self.val_loss.clone(), self.iteration)?
            .with_observation_count(self.n_observations))
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut bytes = Vec::new();
    for r in records {
        serde_json::to_writer(&mut bytes, r)?;
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)
}

/// Reads JSON lines strictly: every line must parse, and a final line
/// without its newline is reported as truncated.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let lines: Vec<&str> = text.split_terminator('\n').collect();
    if !text.ends_with('\n') {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: lines.len(),
            message: "truncated final line".into(),
        });
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// One dataset version on disk.
#[derive(Debug, Clone)]
pub struct DatasetStore {
    dir: PathBuf,
    catalog: Catalog,
    manifest: Manifest,
}

impl DatasetStore {
    /// Directory of version `tag` under `root`.
    pub fn version_dir(root: &Path, tag: &str) -> PathBuf {
        root.join(tag)
    }

    /// Creates a new, empty version. Fails if it already exists.
    pub fn create(root: &Path, tag: &str, catalog: Catalog) -> Result<Self> {
        catalog.validate()?;
        if tag.is_empty() || tag.contains(['/', '\\']) {
            return Err(Error::arg(format!("bad version tag {tag:?}")));
        }
        let dir = Self::version_dir(root, tag);
        if dir.join("manifest.json").exists() {
            return Err(Error::state(format!("version {tag} already exists")));
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            tag: tag.to_string(),
            n_stimuli: catalog.len(),
            observation_files: Vec::new(),
            session_files: Vec::new(),
        };
        write_json(&dir.join("catalog.json"), &catalog)?;
        write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(DatasetStore { dir, catalog, manifest })
    }

    pub fn open(root: &Path, tag: &str) -> Result<Self> {
        let dir = Self::version_dir(root, tag);
        let catalog: Catalog = read_json(&dir.join("catalog.json"))?;
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        if manifest.n_stimuli != catalog.len() {
            return Err(Error::state("manifest and catalog disagree on stimulus count"));
        }
        Ok(DatasetStore { dir, catalog, manifest })
    }

    pub fn open_or_create(root: &Path, tag: &str, catalog: Catalog) -> Result<Self> {
        if Self::version_dir(root, tag).join("manifest.json").exists() {
            let store = Self::open(root, tag)?;
            if store.catalog != catalog {
                return Err(Error::state(format!("version {tag} has a different catalog")));
            }
            Ok(store)
        } else {
            Self::create(root, tag, catalog)
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn n_stimuli(&self) -> usize {
        self.catalog.len()
    }

    /// Whether a batch with this label was already appended.
    pub fn has_observation_batch(&self, label: &str) -> bool {
        self.manifest
            .observation_files
            .iter()
            .any(|f| f.label.as_deref() == Some(label))
    }

    /// Appends a batch as a new record file. The whole batch is rejected if
    /// any record is invalid. A batch whose `label` is already present is a
    /// no-op, which makes retried appends safe.
    pub fn append_observations(&mut self, observations: &[Observation], label: Option<&str>) -> Result<&Manifest> {
        if label.is_some_and(|l| self.has_observation_batch(l)) {
            return Ok(&self.manifest);
        }
        let n = self.n_stimuli();
        for (i, obs) in observations.iter().enumerate() {
            obs.validate()
                .map_err(|e| Error::arg(format!("record {i}: {e}")))?;
            if obs.trial.max_index() >= n {
                return Err(Error::arg(format!(
                    "record {i}: stimulus {} not in the catalog of {n}",
                    obs.trial.max_index()
                )));
            }
        }
        let name = format!("observations-{:04}.jsonl", self.manifest.observation_files.len());
        write_jsonl(&self.dir.join(&name), observations)?;
        self.manifest.observation_files.push(RecordFile {
            name,
            count: observations.len(),
            label: label.map(str::to_string),
        });
        write_json(&self.dir.join("manifest.json"), &self.manifest)?;
        Ok(&self.manifest)
    }

    pub fn load_observations(&self) -> Result<Vec<Observation>> {
        let mut out = Vec::with_capacity(self.manifest.observation_count());
        for f in &self.manifest.observation_files {
            let batch: Vec<Observation> = read_jsonl(&self.dir.join(&f.name))?;
            if batch.len() != f.count {
                return Err(Error::state(format!(
                    "{} holds {} records, manifest says {}",
                    f.name,
                    batch.len(),
                    f.count
                )));
            }
            out.extend(batch);
        }
        Ok(out)
    }

    pub fn has_session_batch(&self, label: &str) -> bool {
        self.manifest
            .session_files
            .iter()
            .any(|f| f.label.as_deref() == Some(label))
    }

    /// Appends completed sessions (with catch metadata) as a new record file.
    pub fn append_sessions(&mut self, sessions: &[Session], label: Option<&str>) -> Result<&Manifest> {
        if label.is_some_and(|l| self.has_session_batch(l)) {
            return Ok(&self.manifest);
        }
        let n = self.n_stimuli();
        for s in sessions {
            if s.trials.iter().any(|slot| slot.trial().max_index() >= n) {
                return Err(Error::arg(format!("session {} references a stimulus outside the catalog", s.id)));
            }
        }
        let name = format!("sessions-{:04}.jsonl", self.manifest.session_files.len());
        write_jsonl(&self.dir.join(&name), sessions)?;
        self.manifest.session_files.push(RecordFile {
            name,
            count: sessions.len(),
            label: label.map(str::to_string),
        });
        write_json(&self.dir.join("manifest.json"), &self.manifest)?;
        Ok(&self.manifest)
    }

    pub fn load_sessions(&self) -> Result<Vec<Session>> {
        let mut out = Vec::new();
        for f in &self.manifest.session_files {
            out.extend(read_jsonl::<Session>(&self.dir.join(&f.name))?);
        }
        Ok(out)
    }

    pub fn ensemble_path(&self, iteration: u32) -> PathBuf {
        self.dir.join("ensembles").join(format!("iter-{iteration:03}.json"))
    }

    pub fn save_ensemble(&self, ensemble: &Ensemble) -> Result<PathBuf> {
        let path = self.ensemble_path(ensemble.iteration());
        write_json(&path, &EnsembleDocument::from_ensemble(ensemble, &self.catalog.ids())?)?;
        Ok(path)
    }

    pub fn load_ensemble(&self, iteration: u32) -> Result<Option<Ensemble>> {
        let path = self.ensemble_path(iteration);
        if !path.exists() {
            return Ok(None);
        }
        read_json::<EnsembleDocument>(&path)?.to_ensemble().map(Some)
    }

    pub fn trials_path(&self, iteration: u32) -> PathBuf {
        self.dir.join("trials").join(format!("iter-{iteration:03}.jsonl"))
    }

    pub fn save_trials(&self, iteration: u32, trials: &[SelectedTrial]) -> Result<PathBuf> {
        let n = self.n_stimuli();
        if trials.iter().any(|t| t.trial.max_index() >= n) {
            return Err(Error::arg("trial references a stimulus outside the catalog"));
        }
        let path = self.trials_path(iteration);
        write_jsonl(&path, trials)?;
        Ok(path)
    }

    pub fn load_trials(&self, iteration: u32) -> Result<Option<Vec<SelectedTrial>>> {
        let path = self.trials_path(iteration);
        if !path.exists() {
            return Ok(None);
        }
        read_jsonl(&path).map(Some)
    }
}
