//! Layout of a working directory and loading of upstream artifacts.
//!
//! ```text
//! <workdir>/documents.jsonl            ingest
//! <workdir>/slices/<topic>/<period>/   slice, ladder
//! <workdir>/manifest.jsonl             train
//! <workdir>/curves.json                curves
//! <workdir>/series.json                effectiveness
//! <workdir>/reports/                   CSV and SVG outputs
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use perishability::backend::{Manifest, ManifestEntry};
use perishability::corpus::{load_slice, PeriodSlice, SliceManifest};
use perishability::curves::{EffectivenessSeries, NativeCurve};
use perishability::Document;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::MissingArtifact;

pub struct Workdir {
    pub root: PathBuf,
}

/// JSON artifact with the hash of the configuration that produced it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub data: T,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn documents(&self) -> PathBuf {
        self.root.join("documents.jsonl")
    }

    pub fn slices(&self) -> PathBuf {
        self.root.join("slices")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.jsonl")
    }

    pub fn curves(&self) -> PathBuf {
        self.root.join("curves.json")
    }

    pub fn series(&self) -> PathBuf {
        self.root.join("series.json")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    fn require(&self, path: &Path, producer: &'static str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(MissingArtifact {
                path: path.to_path_buf(),
                producer,
            }
            .into())
        }
    }

    pub fn write_documents(&self, docs: &[Document]) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        let mut w = BufWriter::new(fs::File::create(self.documents())?);
        for d in docs {
            serde_json::to_writer(&mut w, d)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_documents(&self) -> Result<Vec<Document>> {
        let path = self.documents();
        self.require(&path, "ingest")?;
        let reader = BufReader::new(fs::File::open(&path)?);
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(
                serde_json::from_str(&line)
                    .with_context(|| format!("{}: line {}", path.display(), i + 1))?,
            );
        }
        Ok(out)
    }

    pub fn slice_dir(&self, topic: &str, period: &str) -> PathBuf {
        self.slices()
            .join(perishability::report::file_stem(topic))
            .join(period)
    }

    /// Every slice directory, sorted.
    pub fn slice_dirs(&self) -> Result<Vec<PathBuf>> {
        let root = self.slices();
        self.require(&root, "slice")?;
        let mut dirs = Vec::new();
        for topic in fs::read_dir(&root)? {
            let topic = topic?.path();
            if !topic.is_dir() {
                continue;
            }
            for period in fs::read_dir(&topic)? {
                let period = period?.path();
                if period.join("slice.json").exists() {
                    dirs.push(period);
                }
            }
        }
        dirs.sort();
        if dirs.is_empty() {
            return Err(MissingArtifact {
                path: root,
                producer: "slice",
            }
            .into());
        }
        Ok(dirs)
    }

    pub fn load_slices(&self) -> Result<Vec<(PathBuf, SliceManifest, PeriodSlice)>> {
        self.slice_dirs()?
            .into_iter()
            .map(|dir| {
                let (m, s) = load_slice(&dir).with_context(|| format!("loading {}", dir.display()))?;
                Ok((dir, m, s))
            })
            .collect()
    }

    pub fn read_manifest(&self) -> Result<Vec<ManifestEntry>> {
        let path = self.manifest();
        self.require(&path, "train")?;
        Ok(Manifest::read(&path)?)
    }

    pub fn read_curves(&self) -> Result<Stamped<Vec<NativeCurve>>> {
        self.read_json(&self.curves(), "curves")
    }

    pub fn read_series(&self) -> Result<Stamped<Vec<EffectivenessSeries>>> {
        self.read_json(&self.series(), "effectiveness")
    }

    fn read_json<T: DeserializeOwned>(&self, path: &Path, producer: &'static str) -> Result<T> {
        self.require(path, producer)?;
        let raw = fs::read_to_string(path)?;
        serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, hash: &str, data: &T) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let stamped = Stamped {
            config_hash: hash.to_string(),
            data,
        };
        fs::write(path, serde_json::to_string_pretty(&stamped)?)?;
        Ok(())
    }

    /// Write a report file with the config-hash comment line prepended.
    pub fn write_report(&self, name: &str, hash: &str, body: &str) -> Result<PathBuf> {
        let dir = self.reports();
        fs::create_dir_all(&dir)?;
        let path = dir.join(name);
        fs::write(&path, perishability::report::with_hash(hash, body))?;
        Ok(path)
    }

    pub fn write_svg(&self, name: &str, hash: &str, svg: &str) -> Result<PathBuf> {
        let dir = self.reports();
        fs::create_dir_all(&dir)?;
        let path = dir.join(name);
        let body = svg.replacen('\n', &format!("\n<!-- config_hash: {hash} -->\n"), 1);
        fs::write(&path, body)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamped_json_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::new(dir.path());
        wd.write_json(&wd.series(), "abc", &Vec::<EffectivenessSeries>::new()).unwrap();
        let back = wd.read_series().unwrap();
        assert_eq!(back.config_hash, "abc");
        assert!(back.data.is_empty());
    }

    #[test]
    fn missing_inputs_point_at_their_producer() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::new(dir.path());
        let err = wd.read_documents().unwrap_err();
        assert_eq!(err.downcast_ref::<MissingArtifact>().unwrap().producer, "ingest");
        let err = wd.slice_dirs().unwrap_err();
        assert_eq!(err.downcast_ref::<MissingArtifact>().unwrap().producer, "slice");
    }

    #[test]
    fn reports_and_charts_carry_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let wd = Workdir::new(dir.path());
        let csv = wd.write_report("x.csv", "h1", "a,b\n").unwrap();
        assert_eq!(fs::read_to_string(csv).unwrap(), "# config_hash: h1\na,b\n");
        let svg = wd.write_svg("x.svg", "h1", "<svg>\n</svg>\n").unwrap();
        assert!(fs::read_to_string(svg).unwrap().contains("<!-- config_hash: h1 -->"));
    }
}
