use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::ImageTensor;
use super::labels::{Label, LabelSet, Provenance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Argument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEntry {
    pub frame_id: String,
    /// Path as written in the manifest, relative to the manifest directory unless absolute.
    pub path: PathBuf,
    pub split: Split,
    pub camera: String,
    pub labels: Option<LabelSet>,
}

/// On-disk line format.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    frame_id: String,
    path: PathBuf,
    split: Split,
    camera: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<Label>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

/// Ordered list of frames with optional inline labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameManifest {
    base_dir: PathBuf,
    entries: Vec<FrameEntry>,
}

impl FrameManifest {
    pub fn new(base_dir: impl Into<PathBuf>, entries: Vec<FrameEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.frame_id.as_str()) {
                return Err(Error::Argument(format!(
                    "duplicate frame_id `{}` in manifest",
                    e.frame_id
                )));
            }
        }
        Ok(Self {
            base_dir: base_dir.into(),
            entries,
        })
    }

    pub fn entries(&self) -> &[FrameEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [FrameEntry] {
        &mut self.entries
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &FrameEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn load_frame(&self, entry: &FrameEntry) -> Result<ImageTensor> {
        ImageTensor::load_png(self.resolve(entry)).map_err(|e| e.in_frame(&entry.frame_id))
    }

    /// Keeps only the entries of one split; the base directory is shared.
    pub fn split(&self, split: Split) -> FrameManifest {
        FrameManifest {
            base_dir: self.base_dir.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| e.split == split)
                .cloned()
                .collect(),
        }
    }

    pub fn cameras(&self) -> Vec<String> {
        let mut cams: Vec<String> = Vec::new();
        for e in &self.entries {
            if !cams.contains(&e.camera) {
                cams.push(e.camera.clone());
            }
        }
        cams
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            let rec = Record {
                frame_id: e.frame_id.clone(),
                path: e.path.clone(),
                split: e.split,
                camera: e.camera.clone(),
                labels: e.labels.as_ref().map(|l| l.boxes.clone()),
                provenance: e.labels.as_ref().map(|l| l.provenance.clone()),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_with_header(path, &[])
    }

    /// Writes the manifest preceded by `# key: value` comment lines, which
    /// [`FrameManifest::read`] skips.
    pub fn write_with_header(&self, path: impl AsRef<Path>, header: &[(&str, &str)]) -> Result<()> {
        let path = path.as_ref();
        let mut text = String::new();
        for (k, v) in header {
            text.push_str(&format!("# {k}: {v}\n"));
        }
        text.push_str(&self.to_jsonl()?);
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest and checks that every referenced frame exists.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut entries = Vec::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| {
                Error::Serde(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            let labels = match (rec.labels, rec.provenance) {
                (Some(boxes), Some(provenance)) => {
                    Some(LabelSet::new(rec.frame_id.clone(), boxes, provenance))
                }
                (None, None) => None,
                _ => {
                    return Err(Error::Serde(format!(
                        "{}:{}: labels and provenance must appear together",
                        path.display(),
                        lineno + 1
                    )))
                }
            };
            entries.push(FrameEntry {
                frame_id: rec.frame_id,
                path: rec.path,
                split: rec.split,
                camera: rec.camera,
                labels,
            });
        }
        let manifest = Self::new(base_dir, entries)?;
        for e in &manifest.entries {
            let p = manifest.resolve(e);
            if !p.is_file() {
                return Err(Error::Dependency(format!(
                    "frame `{}` references missing file {}",
                    e.frame_id,
                    p.display()
                )));
            }
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{BoundingBox, PERSON_CLASS};

    fn entry(id: &str, split: Split, camera: &str, labelled: bool) -> FrameEntry {
        FrameEntry {
            frame_id: id.into(),
            path: format!("{id}.png").into(),
            split,
            camera: camera.into(),
            labels: labelled.then(|| {
                LabelSet::new(
                    id,
                    vec![Label {
                        bbox: BoundingBox::new(1.0, 2.0, 5.0, 9.0).unwrap(),
                        class_id: PERSON_CLASS,
                        score: Some(0.75),
                    }],
                    Provenance::Pseudo {
                        detector_id: "toy-conv".into(),
                        score_threshold: 0.5,
                    },
                )
            }),
        }
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = vec![
            entry("a", Split::Train, "cam-a", true),
            entry("b", Split::Test, "cam-b", false),
        ];
        for e in &entries {
            ImageTensor::filled(8, 8, 0.5)
                .unwrap()
                .save_png(dir.path().join(&e.path), &[])
                .unwrap();
        }
        let m = FrameManifest::new(dir.path(), entries).unwrap();
        let path = dir.path().join("manifest.jsonl");
        m.write(&path).unwrap();
        let back = FrameManifest::read(&path).unwrap();
        assert_eq!(back.entries(), m.entries());
        assert_eq!(back.cameras(), vec!["cam-a".to_string(), "cam-b".to_string()]);
        assert_eq!(back.split(Split::Test).len(), 1);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let entries = vec![
            entry("a", Split::Train, "c", false),
            entry("a", Split::Test, "c", false),
        ];
        assert!(FrameManifest::new("", entries).is_err());
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = FrameManifest::new(dir.path(), vec![entry("a", Split::Train, "c", false)]).unwrap();
        let path = dir.path().join("manifest.jsonl");
        m.write(&path).unwrap();
        let err = FrameManifest::read(&path).unwrap_err();
        assert!(matches!(err, Error::Dependency(_)), "{err}");
    }
}
