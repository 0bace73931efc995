//! Per-epoch loss history, serialized as tab-separated lines
//! `epoch, split, l_class, l_time, l_total`.

use std::fs;
use std::path::Path;

use super::LossBreakdown;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const HISTORY_FILE: &str = "history.tsv";
const HEADER: &str = "# epoch\tsplit\tl_class\tl_time\tl_total";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(HEADER);
        s.push('\n');
        for r in &self.epochs {
            for (name, l) in [("train", r.train), ("val", r.val)] {
                s.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    r.epoch, name, l.l_class, l.l_time, l.l_total
                ));
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut epochs: Vec<EpochRecord> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = || Error::Data(format!("history line {}: malformed record", i + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let epoch: usize = f[0].parse().map_err(|_| bad())?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let l = LossBreakdown {
                l_class: num(f[2])?,
                l_time: num(f[3])?,
                l_total: num(f[4])?,
            };
            let zero = LossBreakdown {
                l_class: 0.0,
                l_time: 0.0,
                l_total: 0.0,
            };
            if epochs.last().map(|r| r.epoch) != Some(epoch) {
                epochs.push(EpochRecord {
                    epoch,
                    train: zero,
                    val: zero,
                });
            }
            let rec = epochs.last_mut().expect("pushed above");
            match f[1] {
                "train" => rec.train = l,
                "val" => rec.val = l,
                _ => return Err(bad()),
            }
        }
        Ok(Self { epochs })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip_has_two_lines_per_epoch() {
        let l = |x: f64| LossBreakdown {
            l_class: x,
            l_time: x / 10.0,
            l_total: x * 1.1,
        };
        let h = History {
            epochs: vec![
                EpochRecord { epoch: 1, train: l(1.0), val: l(0.9) },
                EpochRecord { epoch: 2, train: l(0.5), val: l(0.45) },
            ],
        };
        let text = h.to_tsv();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
        assert_eq!(History::parse(&text).unwrap(), h);
    }
}
