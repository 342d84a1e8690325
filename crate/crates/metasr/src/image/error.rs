use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("images must have 1 or 3 channels, got {0}")]
    BadChannelCount(usize),
    #[error("{width}x{height}x{channels} image needs {} values, got {got}", width * height * channels)]
    DataLength {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("normalization std must be positive, got {0}")]
    BadStd(f64),
    #[error("expected a [C,H,W] tensor, got shape {0:?}")]
    BadTensorShape(Vec<usize>),
    #[error("unsupported image format for {path}: {detail}")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("failed to decode {path}: {detail}")]
    Decode { path: PathBuf, detail: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {detail}")]
    Encode { path: PathBuf, detail: String },
    #[error("crop {crop_h}x{crop_w} exceeds image {height}x{width}")]
    CropTooLarge {
        crop_h: usize,
        crop_w: usize,
        height: usize,
        width: usize,
    },
    #[error("crop {avail_h}x{avail_w} is too small for a {need}x{need} patch (LR {p_lr} at scale {scale})")]
    CropTooSmall {
        need: usize,
        avail_h: usize,
        avail_w: usize,
        p_lr: usize,
        scale: f64,
    },
    #[error("scale factor must be >= 1 and finite, got {0}")]
    BadScale(f64),
    #[error("dataset directory {0} contains no loadable images")]
    EmptyDataset(PathBuf),
    #[error("manifest {manifest} lists missing file {entry}")]
    ManifestEntryMissing { manifest: PathBuf, entry: String },
}
