//! Dataset manifests: one `id<TAB>image<TAB>mask` line per sample, paths
//! relative to the manifest's directory.

use std::path::{Path, PathBuf};

use super::{load_image, load_mask, save_image, save_mask, ClassMap, SegSample};
use crate::error::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

/// Parses a manifest, resolving relative paths against its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::ConfigParse {
                line: i + 1,
                msg: format!("manifest lines are `id<TAB>image<TAB>mask`, got {} fields", parts.len()),
            });
        }
        entries.push(ManifestEntry {
            id: parts[0].to_string(),
            image: base.join(parts[1]),
            mask: base.join(parts[2]),
        });
    }
    Ok(entries)
}

/// Loads every sample listed in a manifest.
pub fn load_dataset(manifest: impl AsRef<Path>, class_map: Option<&ClassMap>) -> Result<Vec<SegSample>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let image = load_image(&e.image)?;
            let mask = load_mask(&e.mask, class_map)?;
            SegSample::new(e.id, image, mask)
        })
        .collect()
}

/// Writes `images/<id>.ppm`, `masks/<id>.pgm` and the manifest under `dir`;
/// returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[SegSample]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut text = String::new();
    for s in samples {
        if s.id.contains(['\t', '\n', '/', '\\']) {
            return Err(Error::Dataset(format!("sample id `{}` is not a plain file name", s.id)));
        }
        let image = format!("images/{}.ppm", s.id);
        let mask = format!("masks/{}.pgm", s.id);
        save_image(dir.join(&image), &s.image)?;
        save_mask(dir.join(&mask), &s.mask)?;
        text.push_str(&format!("{}\t{image}\t{mask}\n", s.id));
    }
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, text)?;
    Ok(path)
}
