use std::path::Path;

use super::{load_image, Image, ImageError};

/// Optional manifest file: relative image paths, one per line.
pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub struct DatasetEntry {
    /// Path relative to the dataset root (used in reports and CSV output).
    pub path: String,
    pub image: Image,
}

/// An in-memory set of images, loaded from a directory (optionally driven by
/// a `manifest.txt`) or built directly from images.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn from_images(named: impl IntoIterator<Item = (String, Image)>) -> Self {
        Self {
            entries: named
                .into_iter()
                .map(|(path, image)| DatasetEntry { path, image })
                .collect(),
        }
    }

    /// Load every image in `dir`. With a `manifest.txt` present only the
    /// listed files are read, in manifest order; otherwise files with a
    /// supported extension are read in sorted order.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, ImageError> {
        let dir = dir.as_ref();
        let manifest = dir.join(MANIFEST_NAME);
        let rel_paths: Vec<String> = if manifest.is_file() {
            let text = std::fs::read_to_string(&manifest).map_err(|e| ImageError::Io {
                path: manifest.clone(),
                source: e,
            })?;
            let entries: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect();
            for entry in &entries {
                if !dir.join(entry).is_file() {
                    return Err(ImageError::ManifestEntryMissing {
                        manifest: manifest.clone(),
                        entry: entry.clone(),
                    });
                }
            }
            entries
        } else {
            let mut found: Vec<String> = std::fs::read_dir(dir)
                .map_err(|e| ImageError::Io {
                    path: dir.to_path_buf(),
                    source: e,
                })?
                .filter_map(|r| r.ok())
                .filter(|e| e.path().is_file())
                .filter_map(|e| {
                    let name = e.file_name().to_string_lossy().into_owned();
                    let ext = Path::new(&name)
                        .extension()
                        .map(|x| x.to_string_lossy().to_lowercase());
                    matches!(
                        ext.as_deref(),
                        Some("png" | "pgm" | "ppm" | "pnm" | "pbm")
                    )
                    .then_some(name)
                })
                .collect();
            found.sort();
            found
        };

        let mut entries = Vec::with_capacity(rel_paths.len());
        for rel in rel_paths {
            let image = load_image(dir.join(&rel))?;
            entries.push(DatasetEntry { path: rel, image });
        }
        if entries.is_empty() {
            return Err(ImageError::EmptyDataset(dir.to_path_buf()));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.path.as_str())
    }
}
