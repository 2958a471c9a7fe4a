//! Paired dataset discovery and loading for the `root/low`, `root/high`
//! layout.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use lumidec_core::augment::ImagePair;

use crate::error::{Error, Result};
use crate::image_io::{load_png, resize};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub low_dir: String,
    pub high_dir: String,
}

impl Default for Layout {
    fn default() -> Self {
        Layout { low_dir: "low".into(), high_dir: "high".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairedSample {
    /// Shared file name of the two images.
    pub name: String,
    pub low: PathBuf,
    pub high: PathBuf,
    pub dataset_id: String,
}

/// A file present on one side only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipReport {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Scan {
    pub samples: Vec<PairedSample>,
    pub skipped: Vec<SkipReport>,
}

fn pngs(dir: &Path) -> Result<BTreeSet<String>> {
    if !dir.is_dir() {
        return Err(lumidec_core::Error::Dataset(format!("missing directory {}", dir.display())).into());
    }
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if png && path.is_file() {
            out.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(out)
}

/// Pairs files by identical name, in lexicographic order. Files without a
/// partner are reported and skipped.
pub fn scan_dataset(root: &Path, layout: &Layout) -> Result<Scan> {
    let (low_dir, high_dir) = (root.join(&layout.low_dir), root.join(&layout.high_dir));
    let (low, high) = (pngs(&low_dir)?, pngs(&high_dir)?);
    let dataset_id = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| root.display().to_string());
    let mut scan = Scan::default();
    for name in low.union(&high) {
        match (low.contains(name), high.contains(name)) {
            (true, true) => scan.samples.push(PairedSample {
                name: name.clone(),
                low: low_dir.join(name),
                high: high_dir.join(name),
                dataset_id: dataset_id.clone(),
            }),
            (true, false) => scan.skipped.push(SkipReport { path: low_dir.join(name), reason: format!("no partner in {}", high_dir.display()) }),
            _ => scan.skipped.push(SkipReport { path: high_dir.join(name), reason: format!("no partner in {}", low_dir.display()) }),
        }
    }
    for s in &scan.skipped {
        log::warn!("skipping {}: {}", s.path.display(), s.reason);
    }
    if scan.samples.is_empty() {
        return Err(lumidec_core::Error::Dataset(format!("no paired images under {}", root.display())).into());
    }
    Ok(scan)
}

/// Decodes one pair, resizing both images identically when asked.
pub fn load_pair(sample: &PairedSample, size: Option<(usize, usize)>) -> Result<ImagePair> {
    let mut low = load_png(&sample.low)?;
    let mut high = load_png(&sample.high)?;
    if let Some((w, h)) = size {
        low = resize(&low, w, h)?;
        high = resize(&high, w, h)?;
    }
    ImagePair::new(sample.name.clone(), low, high).map_err(|e| Error::file(&sample.low, e))
}

pub fn load_pairs(samples: &[PairedSample], size: Option<(usize, usize)>) -> Result<Vec<ImagePair>> {
    samples.iter().map(|s| load_pair(s, size)).collect()
}

/// Scans and loads in one go.
pub fn load_dataset(root: &Path, layout: &Layout, size: Option<(usize, usize)>) -> Result<Vec<ImagePair>> {
    load_pairs(&scan_dataset(root, layout)?.samples, size)
}

/// Parses `WxH`.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::config(format!("size {s:?} is not of the form WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let (w, h): (usize, usize) = (w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?);
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok((w, h))
}
