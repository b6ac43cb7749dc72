//! Dataset directories: one `RSA1` file per sample under `samples/` plus `manifest.json`,
//! which is written last.

use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{assign_splits, DatasetConfig, SampleRecord, Split};
use crate::dsp::{decode_rsa, encode_rsa};
use crate::radar_sim::GestureParams;
use crate::{Error, GestureClass, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "gesturekit-rsa-dataset";
const VERSION: u32 = 1;
const SAMPLE_DIR: &str = "samples";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Path relative to the dataset directory.
    pub file: String,
    pub label: GestureClass,
    pub split: Split,
    pub recording: usize,
    /// Recording seed, the subject surrogate.
    pub seed: u64,
    pub params: GestureParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub val_ratio: f64,
    pub config: DatasetConfig,
    pub samples: Vec<ManifestEntry>,
}

/// A loaded or freshly generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub val_ratio: f64,
    pub config: DatasetConfig,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }
}

fn sample_name(index: usize) -> String {
    format!("{SAMPLE_DIR}/{index:06}.rsa")
}

fn create_dirs(dir: &Path) -> Result<()> {
    let samples = dir.join(SAMPLE_DIR);
    fs::create_dir_all(&samples).map_err(|e| Error::io(samples, e))
}

fn write_sample(dir: &Path, index: usize, record: &SampleRecord) -> Result<String> {
    let name = sample_name(index);
    let mut image = record.image.clone();
    image.label = Some(record.label);
    let path = dir.join(&name);
    fs::write(&path, encode_rsa(&image)).map_err(|e| Error::io(path, e))?;
    Ok(name)
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Writes every record (splits must be assigned) and then the manifest.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    create_dirs(dir)?;
    let samples = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let split = r
                .split
                .ok_or_else(|| Error::invalid(format!("record {i} has no split; run split_dataset first")))?;
            Ok(ManifestEntry {
                file: write_sample(dir, i, r)?,
                label: r.label,
                split,
                recording: r.recording,
                seed: r.seed,
                params: r.params,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_manifest(
        dir,
        &Manifest {
            format: FORMAT.into(),
            version: VERSION,
            seed: dataset.seed,
            val_ratio: dataset.val_ratio,
            config: dataset.config.clone(),
            samples,
        },
    )
}

/// Streams samples to disk as they are produced; splits are assigned when finishing.
pub struct DatasetWriter {
    dir: PathBuf,
    seed: u64,
    val_ratio: f64,
    config: DatasetConfig,
    entries: Vec<ManifestEntry>,
}

impl DatasetWriter {
    pub fn create(dir: &Path, config: &DatasetConfig, seed: u64, val_ratio: f64) -> Result<Self> {
        if !(val_ratio > 0.0 && val_ratio < 1.0) {
            return Err(Error::invalid(format!("validation ratio must be in (0, 1), got {val_ratio}")));
        }
        create_dirs(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            seed,
            val_ratio,
            config: config.clone(),
            entries: Vec::new(),
        })
    }

    pub fn add(&mut self, record: &SampleRecord) -> Result<()> {
        let file = write_sample(&self.dir, self.entries.len(), record)?;
        self.entries.push(ManifestEntry {
            file,
            label: record.label,
            split: Split::Train,
            recording: record.recording,
            seed: record.seed,
            params: record.params,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Assigns splits (seeded by the dataset seed) and commits the manifest.
    pub fn finish(mut self) -> Result<Manifest> {
        let recs: Vec<_> = self.entries.iter().map(|e| (e.recording, e.label)).collect();
        let splits = assign_splits(&recs, self.val_ratio, self.seed)?;
        for e in &mut self.entries {
            e.split = splits[&e.recording];
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            seed: self.seed,
            val_ratio: self.val_ratio,
            config: self.config,
            samples: self.entries,
        };
        write_manifest(&self.dir, &manifest)?;
        Ok(manifest)
    }
}

/// Byte offset of a serde_json error position.
fn json_offset(text: &str, err: &serde_json::Error) -> u64 {
    let line_start: usize = text.split_inclusive('\n').take(err.line().saturating_sub(1)).map(str::len).sum();
    (line_start + err.column().saturating_sub(1)) as u64
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, json_offset(&text, &e), e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::format(
            &path,
            0,
            format!("unsupported dataset format {} v{}", manifest.format, manifest.version),
        ));
    }
    manifest
        .config
        .validate()
        .map_err(|e| Error::format(&path, 0, format!("invalid generator config: {e}")))?;
    Ok(manifest)
}

fn safe_relative(file: &str) -> bool {
    let p = Path::new(file);
    !file.is_empty() && p.components().all(|c| matches!(c, Component::Normal(_)))
}

/// Loads a dataset directory, checking every sample against its manifest entry.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut records = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        if !safe_relative(&entry.file) {
            return Err(Error::format(dir.join(MANIFEST_FILE), 0, format!("unsafe sample path '{}'", entry.file)));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut image = decode_rsa(&bytes, &path)?;
        if image.label != Some(entry.label) {
            return Err(Error::format(&path, 4, format!("label byte disagrees with manifest ({})", entry.label)));
        }
        image.label = Some(entry.label);
        records.push(SampleRecord {
            image,
            label: entry.label,
            recording: entry.recording,
            seed: entry.seed,
            params: entry.params,
            split: Some(entry.split),
        });
    }
    Ok(Dataset {
        seed: manifest.seed,
        val_ratio: manifest.val_ratio,
        config: manifest.config,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, split_dataset};

    fn small() -> Dataset {
        let config = DatasetConfig {
            per_class: 2,
            crops: 1,
            ..Default::default()
        };
        let mut records = generate_dataset(&config, 5).unwrap();
        split_dataset(&mut records, 0.5, 5).unwrap();
        Dataset {
            seed: 5,
            val_ratio: 0.5,
            config,
            records,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &d).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn writer_matches_save() {
        let d = small();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_dataset(a.path(), &d).unwrap();
        let mut w = DatasetWriter::create(b.path(), &d.config, d.seed, d.val_ratio).unwrap();
        for r in &d.records {
            w.add(r).unwrap();
        }
        w.finish().unwrap();
        let ma = fs::read(a.path().join(MANIFEST_FILE)).unwrap();
        let mb = fs::read(b.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let d = small();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(dir.path(), &d).unwrap();
        let sample = dir.path().join(sample_name(0));
        let mut bytes = fs::read(&sample).unwrap();
        bytes[1] = b'X';
        fs::write(&sample, &bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { offset: 0, .. })));

        let manifest = dir.path().join(MANIFEST_FILE);
        fs::write(&manifest, "{\n  \"format\": 3\n}").unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unsplit_records_are_rejected() {
        let mut d = small();
        d.records[0].split = None;
        let dir = tempfile::tempdir().unwrap();
        assert!(save_dataset(dir.path(), &d).is_err());
    }
}
