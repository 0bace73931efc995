//! Line-delimited manifest: one tab-separated record per sample with fields
//! `image_path, label_index, timestamp_hours, description, split`, preceded by
//! a `#` header line.

use std::fs;
use std::path::Path;

use super::{Sample, Split, StageLabel};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.tsv";
const HEADER: &str = "# image_path\tlabel\ttimestamp_hours\tdescription\tsplit";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub samples: Vec<Sample>,
}

impl Manifest {
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.samples.len() + 1));
        out.push_str(HEADER);
        out.push('\n');
        for s in &self.samples {
            out.push_str(&format!(
                "{}\t{}\t{:.1}\t{}\t{}\n",
                s.image_path,
                s.label.index(),
                s.timestamp_hours,
                s.description,
                s.split
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Data(format!("manifest line {}: {what}", lineno + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(bad(&format!("expected 5 fields, found {}", fields.len())));
            }
            let label: usize = fields[1].parse().map_err(|_| bad("label is not an integer"))?;
            let label = StageLabel::from_index(label).map_err(|_| bad("label out of range"))?;
            let timestamp_hours: f64 = fields[2].parse().map_err(|_| bad("timestamp is not a number"))?;
            let split: Split = fields[4].parse().map_err(|_| bad("unknown split"))?;
            samples.push(Sample {
                image_path: fields[0].to_string(),
                label,
                timestamp_hours,
                description: fields[3].to_string(),
                split,
            });
        }
        Ok(Self { samples })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn count(&self, split: Option<Split>, label: StageLabel) -> usize {
        self.samples
            .iter()
            .filter(|s| s.label == label && split.is_none_or(|sp| s.split == sp))
            .count()
    }
}
