//! Dataset CSV files and run manifests.
//!
//! Dataset files have the header `user_id,item_id` and one 1-based row per
//! interaction, sorted by user then item, LF-terminated.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::generator::{GeneratorConfig, InteractionDataset, Interactions};
use crate::latent::build_partitions;

pub const DATASET_HEADER: &str = "user_id,item_id";
pub const DATASET_FILE: &str = "interactions.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// First eight bytes of the SHA-256 digest, big-endian.
pub fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_be_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

pub fn format_checksum(sum: u64) -> String {
    format!("{sum:016x}")
}

pub fn dataset_bytes(data: &Interactions) -> Vec<u8> {
    let mut out = String::with_capacity(16 * data.n_interactions() + 16);
    out.push_str(DATASET_HEADER);
    out.push('\n');
    for (u, i) in data.pairs() {
        out.push_str(&format!("{},{}\n", u + 1, i + 1));
    }
    out.into_bytes()
}

/// Writes `bytes` to a temporary file next to `path`; nothing appears at
/// `path` until [`NamedTempFile::persist`].
pub fn stage_file(path: &Path, bytes: &[u8]) -> Result<NamedTempFile> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    Ok(tmp)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    stage_file(path, bytes)?.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Writes the dataset atomically and returns its checksum.
pub fn write_dataset(data: &Interactions, path: &Path) -> Result<u64> {
    let bytes = dataset_bytes(data);
    write_atomic(path, &bytes)?;
    Ok(checksum(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedDataset {
    pub interactions: Interactions,
    /// Added to every user id in the file to make it 1-based (0 or 1).
    pub user_offset: usize,
    /// Added to every item id in the file to make it 1-based (0 or 1).
    pub item_offset: usize,
}

/// Reads a two-column interaction CSV.
///
/// The header is optional. A column whose smallest id is 0 is shifted to
/// start at 1. Without `dims` the id ranges are the largest ids seen.
pub fn read_dataset(path: &Path, dims: Option<(usize, usize)>) -> Result<LoadedDataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, dims)
}

pub fn parse_dataset(text: &str, dims: Option<(usize, usize)>) -> Result<LoadedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<(usize, u64, u64)> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Ingest {
            line: e.position().map_or(idx + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.iter().all(str::is_empty) {
            continue;
        }
        if idx == 0 && record.iter().any(|f| f.parse::<u64>().is_err()) {
            // header
            continue;
        }
        if record.len() != 2 {
            return Err(Error::Ingest {
                line,
                message: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let id = |k: usize| {
            record[k].parse::<u64>().map_err(|_| Error::Ingest {
                line,
                message: format!("`{}` is not a nonnegative integer id", &record[k]),
            })
        };
        rows.push((line, id(0)?, id(1)?));
    }

    let user_offset = usize::from(rows.iter().any(|r| r.1 == 0));
    let item_offset = usize::from(rows.iter().any(|r| r.2 == 0));
    let max_user = rows.iter().map(|r| r.1 as usize + user_offset).max().unwrap_or(0);
    let max_item = rows.iter().map(|r| r.2 as usize + item_offset).max().unwrap_or(0);
    let (n_users, n_items) = dims.unwrap_or((max_user, max_item));

    let mut seen = HashSet::with_capacity(rows.len());
    let mut histories = vec![Vec::new(); n_users];
    for &(line, u, i) in &rows {
        let (u, i) = (u as usize + user_offset, i as usize + item_offset);
        if u > n_users || i > n_items {
            return Err(Error::Ingest {
                line,
                message: format!("id ({u}, {i}) outside {n_users} users x {n_items} items"),
            });
        }
        if !seen.insert((u, i)) {
            return Err(Error::Ingest {
                line,
                message: format!("duplicate interaction ({u}, {i})"),
            });
        }
        histories[u - 1].push(i - 1);
    }
    Ok(LoadedDataset {
        interactions: Interactions::new(n_users, n_items, histories)?,
        user_offset,
        item_offset,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    /// Interactions made by each population.
    pub population_interactions: Vec<usize>,
    /// Interactions received by each category.
    pub category_interactions: Vec<usize>,
    /// Users completed by the fallback fill.
    pub degenerate_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_echo: GeneratorConfig,
    pub master_seed: u64,
    pub tool_version: String,
    /// Hex form of [`checksum`] over the dataset file bytes.
    pub dataset_checksum: String,
    pub summary: ManifestSummary,
}

impl RunManifest {
    pub fn new(dataset: &InteractionDataset, dataset_checksum: u64) -> Result<Self> {
        let config = &dataset.config;
        let part = build_partitions(
            config.n_users,
            config.n_items,
            config.latent_dim,
            config.populations,
            config.categories,
        )?;
        let mut population_interactions = vec![0; config.populations];
        let mut category_interactions = vec![0; config.categories];
        for (u, i) in dataset.interactions.pairs() {
            population_interactions[part.user_assignment[u]] += 1;
            category_interactions[part.item_assignment[i]] += 1;
        }
        Ok(RunManifest {
            config_echo: config.clone(),
            master_seed: config.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            dataset_checksum: format_checksum(dataset_checksum),
            summary: ManifestSummary {
                n_users: config.n_users,
                n_items: config.n_items,
                n_interactions: dataset.interactions.n_interactions(),
                population_interactions,
                category_interactions,
                degenerate_users: dataset.degenerate_users.len(),
            },
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::param(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Ingest {
            line: e.line(),
            message: e.to_string(),
        })
    }
}
