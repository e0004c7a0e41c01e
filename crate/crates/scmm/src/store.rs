//! Corpus directories: `manifest.json` plus one sample file per segment under `samples/`.

use std::fs;
use std::path::Path;

use scmm_core::corpus::{Corpus, CorpusManifest};

use crate::error::{Error, Result};
use crate::sample::{load_sample, store_sample};

pub const MANIFEST: &str = "manifest.json";

/// Writes every sample and then the manifest.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    let samples = dir.join("samples");
    fs::create_dir_all(&samples).map_err(Error::io(&samples))?;
    for (entry, m) in corpus.manifest.sample_files.iter().zip(&corpus.samples) {
        store_sample(m, &dir.join(&entry.path))?;
    }
    write_manifest(&corpus.manifest, &dir.join(MANIFEST))
}

pub fn write_manifest(manifest: &CorpusManifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let m: CorpusManifest = serde_json::from_str(&text).map_err(Error::json(path))?;
    m.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(m)
}

/// Loads a corpus directory, checking every sample against the manifest.
pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest = read_manifest(&dir.join(MANIFEST))?;
    let mut samples = Vec::with_capacity(manifest.sample_files.len());
    for entry in &manifest.sample_files {
        let path = dir.join(&entry.path);
        let mut m = load_sample(&path)?;
        if m.channels() != manifest.channel_count || m.bands() != manifest.band_count {
            return Err(Error::format(
                &path,
                format!(
                    "sample is {}x{}, manifest says {}x{}",
                    m.channels(),
                    m.bands(),
                    manifest.channel_count,
                    manifest.band_count
                ),
            ));
        }
        m.label = Some(entry.label);
        m.provenance = entry.provenance();
        samples.push(m);
    }
    Ok(Corpus::new(manifest, samples)?)
}
