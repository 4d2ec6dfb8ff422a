//! Sample manifest CSV: `source_id,image,instance_mask,grade_mask,label,fold`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::RiskLabel;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub source_id: String,
    /// Paths relative to the manifest's directory (the data root).
    pub image: PathBuf,
    pub instance_mask: PathBuf,
    pub grade_mask: Option<PathBuf>,
    pub label: Option<RiskLabel>,
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_HEADER: &str = "source_id,image,instance_mask,grade_mask,label,fold";

impl Manifest {
    pub fn image_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.image)
    }

    pub fn instance_mask_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.instance_mask)
    }

    pub fn grade_mask_path(&self, e: &ManifestEntry) -> Option<PathBuf> {
        e.grade_mask.as_ref().map(|g| self.root.join(g))
    }

    /// Parses the CSV and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Manifest> {
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::data(path, e.to_string()))?;
        let headers = reader.headers()?.clone();
        let want: Vec<&str> = MANIFEST_HEADER.split(',').collect();
        if headers.iter().collect::<Vec<_>>() != want {
            return Err(Error::data(
                path,
                format!("manifest header must be `{MANIFEST_HEADER}`, got {headers:?}"),
            ));
        }
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record?;
            let get = |i: usize| record.get(i).unwrap_or("").trim().to_string();
            let label = match get(4).as_str() {
                "" => None,
                s => Some(RiskLabel::from_index(s.parse::<u64>().map_err(|_| {
                    Error::data(path, format!("bad label `{s}` for {}", get(0)))
                })?)?),
            };
            let fold = match get(5).as_str() {
                "" => None,
                s => Some(
                    s.parse::<usize>()
                        .map_err(|_| Error::data(path, format!("bad fold `{s}` for {}", get(0))))?,
                ),
            };
            let grade = match get(3).as_str() {
                "" => None,
                s => Some(PathBuf::from(s)),
            };
            entries.push(ManifestEntry {
                source_id: get(0),
                image: PathBuf::from(get(1)),
                instance_mask: PathBuf::from(get(2)),
                grade_mask: grade,
                label,
                fold,
            });
        }
        let manifest = Manifest { root, entries };
        for e in &manifest.entries {
            for p in [manifest.image_path(e), manifest.instance_mask_path(e)]
                .into_iter()
                .chain(manifest.grade_mask_path(e))
            {
                if !p.exists() {
                    return Err(Error::data(
                        path,
                        format!("manifest references missing file {}", p.display()),
                    ));
                }
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.source_id,
                e.image.display(),
                e.instance_mask.display(),
                e.grade_mask
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                e.label
                    .map(|l| l.class_index().to_string())
                    .unwrap_or_default(),
                e.fold.map(|f| f.to_string()).unwrap_or_default(),
            ));
        }
        crate::imgio::write_atomic(path, out.as_bytes())
    }
}
