//! Deterministic synthetic fungal-growth dataset.
//!
//! Every sample is a time-aligned quadruple (image, stage label, timestamp in
//! hours, text description). Images are rendered procedurally from a
//! per-sample seed so a dataset is a pure function of its [`GenConfig`].

mod describe;
mod manifest;
mod render;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;

pub use describe::{describe_sample, template_words, NEUTRAL_PROMPT};
pub use manifest::{Manifest, MANIFEST_FILE};
pub use render::{foreground_pixel_count, render_stage_image, is_foreground, MIN_IMAGE_SIZE};

/// Directory (relative to the data directory) holding the rendered images.
pub const IMAGE_DIR: &str = "images";

/// Growth stage. Index mapping is fixed: spore = 0, hyphae = 1, mycelium = 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageLabel {
    Spore = 0,
    Hyphae = 1,
    Mycelium = 2,
}

impl StageLabel {
    pub const ALL: [StageLabel; 3] = [StageLabel::Spore, StageLabel::Hyphae, StageLabel::Mycelium];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Input(format!("stage index {i} is not in [0, 3)")))
    }

    pub fn name(self) -> &'static str {
        match self {
            StageLabel::Spore => "spore",
            StageLabel::Hyphae => "hyphae",
            StageLabel::Mycelium => "mycelium",
        }
    }
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split {other:?}"))),
        }
    }
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Relative to the data directory.
    pub image_path: String,
    pub label: StageLabel,
    pub timestamp_hours: f64,
    pub description: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_per_stage: usize,
    pub image_size: u32,
    pub t_min: f64,
    pub t_max: f64,
    /// Spore→hyphae and hyphae→mycelium transition times, in hours.
    pub stage_boundaries: [f64; 2],
    pub seed: u64,
    /// Train, val and test fractions.
    pub split_ratios: [f64; 3],
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_per_stage: 200,
            image_size: 96,
            t_min: 0.0,
            t_max: 720.0,
            stage_boundaries: [240.0, 480.0],
            seed: 7,
            split_ratios: [0.7, 0.15, 0.15],
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let [t1, t2] = self.stage_boundaries;
        if !(self.t_min < t1 && t1 < t2 && t2 < self.t_max) || !self.t_min.is_finite() || !self.t_max.is_finite() {
            return Err(Error::Config(format!(
                "stage boundaries must satisfy t_min < T1 < T2 < t_max, got {} < {} < {} < {}",
                self.t_min, t1, t2, self.t_max
            )));
        }
        if self.n_per_stage == 0 {
            return Err(Error::Config("n_per_stage must be positive".into()));
        }
        if self.image_size < MIN_IMAGE_SIZE {
            return Err(Error::Config(format!(
                "image_size must be at least {MIN_IMAGE_SIZE}, got {}",
                self.image_size
            )));
        }
        if self.split_ratios.iter().any(|r| !(*r >= 0.0)) {
            return Err(Error::Config("split ratios must be nonnegative".into()));
        }
        let sum: f64 = self.split_ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }

    /// Half-open time band `[lo, hi)` of a stage; the mycelium band is closed at `t_max`.
    pub fn stage_band(&self, stage: StageLabel) -> (f64, f64) {
        let [t1, t2] = self.stage_boundaries;
        match stage {
            StageLabel::Spore => (self.t_min, t1),
            StageLabel::Hyphae => (t1, t2),
            StageLabel::Mycelium => (t2, self.t_max),
        }
    }

    pub fn stage_at(&self, t: f64) -> StageLabel {
        let [t1, t2] = self.stage_boundaries;
        if t < t1 {
            StageLabel::Spore
        } else if t < t2 {
            StageLabel::Hyphae
        } else {
            StageLabel::Mycelium
        }
    }
}

/// Rendering parameters derived from a timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageParams {
    pub stage: StageLabel,
    /// Overall maturity in `[0, 1]`, linear in time.
    pub density: f64,
    /// Progress from spore germination to `t_max`, in `[0, 1]`; zero before T1.
    pub branching: f64,
    /// Normalized positions of the two stage boundaries on the density axis.
    pub boundaries: [f64; 2],
}

/// Map a timestamp to its stage and continuous growth parameters.
pub fn growth_params_from_time(t: f64, cfg: &GenConfig) -> Result<StageParams> {
    if !(t >= cfg.t_min && t <= cfg.t_max) {
        return Err(Error::Range {
            t,
            t_min: cfg.t_min,
            t_max: cfg.t_max,
        });
    }
    let span = cfg.t_max - cfg.t_min;
    let density = (t - cfg.t_min) / span;
    let b1 = (cfg.stage_boundaries[0] - cfg.t_min) / span;
    let b2 = (cfg.stage_boundaries[1] - cfg.t_min) / span;
    let branching = ((density - b1) / (1.0 - b1)).clamp(0.0, 1.0);
    Ok(StageParams {
        stage: cfg.stage_at(t),
        density,
        branching,
        boundaries: [b1, b2],
    })
}

/// Mix a base seed with a stream tag and an index (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED69);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_TIME: u64 = 1;
const STREAM_IMAGE: u64 = 2;
const STREAM_TEXT: u64 = 3;
const STREAM_SPLIT: u64 = 4;

/// Draw a timestamp uniformly from a stage band on a 0.1 h grid, so the value
/// survives a decimal round trip through the manifest without changing stage.
fn sample_timestamp(cfg: &GenConfig, stage: StageLabel, seed: u64) -> f64 {
    let (lo, hi) = cfg.stage_band(stage);
    let k_lo = (lo * 10.0).ceil() as i64;
    let k_hi = if stage == StageLabel::Mycelium {
        (hi * 10.0).floor() as i64
    } else {
        (hi * 10.0).ceil() as i64 - 1
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if k_hi < k_lo {
        // band narrower than the grid: fall back to the continuous draw
        return if stage == StageLabel::Mycelium {
            rng.gen_range(lo..=hi)
        } else {
            rng.gen_range(lo..hi)
        };
    }
    rng.gen_range(k_lo..=k_hi) as f64 / 10.0
}

/// Per-stage split sizes for `n` samples.
pub fn split_counts(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let train = ((n as f64) * ratios[0]).round() as usize;
    let train = train.min(n);
    let val = (((n as f64) * ratios[1]).round() as usize).min(n - train);
    [train, val, n - train - val]
}

struct Planned {
    sample: Sample,
    image_seed: u64,
}

fn plan(cfg: &GenConfig) -> Result<Vec<Planned>> {
    let n = cfg.n_per_stage;
    let mut planned = Vec::with_capacity(3 * n);
    for stage in StageLabel::ALL {
        let mut splits = Vec::with_capacity(n);
        let [n_train, n_val, n_test] = split_counts(n, cfg.split_ratios);
        splits.extend(std::iter::repeat_n(Split::Train, n_train));
        splits.extend(std::iter::repeat_n(Split::Val, n_val));
        splits.extend(std::iter::repeat_n(Split::Test, n_test));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SPLIT, stage.index() as u64));
        splits.shuffle(&mut rng);

        for (i, split) in splits.into_iter().enumerate() {
            let index = (stage.index() * n + i) as u64;
            let t = sample_timestamp(cfg, stage, derive_seed(cfg.seed, STREAM_TIME, index));
            let description = describe_sample(stage, t, derive_seed(cfg.seed, STREAM_TEXT, index), cfg)?;
            planned.push(Planned {
                sample: Sample {
                    image_path: format!("{IMAGE_DIR}/{index:05}_{}.png", stage.name()),
                    label: stage,
                    timestamp_hours: t,
                    description,
                    split,
                },
                image_seed: derive_seed(cfg.seed, STREAM_IMAGE, index),
            });
        }
    }
    Ok(planned)
}

/// Render one planned sample.
fn render_sample(cfg: &GenConfig, p: &Planned) -> Result<RgbImage> {
    let params = growth_params_from_time(p.sample.timestamp_hours, cfg)?;
    render_stage_image(&params, p.image_seed, cfg.image_size)
}

fn encode_png(img: &RgbImage, path: &Path) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf.into_inner())
}

/// Generate the full dataset under `out_dir`: `images/*.png` plus `manifest.tsv`.
///
/// Refuses to write into a directory that already holds a manifest or an
/// image directory; callers wanting a clean regeneration remove those first.
pub fn generate_dataset(cfg: &GenConfig, out_dir: &Path, exec: Exec) -> Result<Manifest> {
    cfg.validate()?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let image_dir = out_dir.join(IMAGE_DIR);
    if manifest_path.exists() || image_dir.exists() {
        return Err(Error::Data(format!(
            "{} already contains a dataset",
            out_dir.display()
        )));
    }
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let planned = plan(cfg)?;
    let written: Vec<Result<()>> = exec.map_slice(&planned, |p| {
        let path = out_dir.join(&p.sample.image_path);
        let img = render_sample(cfg, p)?;
        let bytes = encode_png(&img, &path)?;
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    });
    written.into_iter().collect::<Result<Vec<()>>>()?;

    let manifest = Manifest {
        samples: planned.into_iter().map(|p| p.sample).collect(),
    };
    manifest.write(&manifest_path)?;
    Ok(manifest)
}

/// Render the image for an arbitrary timestamp with an explicit seed.
pub fn render_at_time(cfg: &GenConfig, t: f64, seed: u64) -> Result<RgbImage> {
    let params = growth_params_from_time(t, cfg)?;
    render_stage_image(&params, seed, cfg.image_size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> GenConfig {
        GenConfig::default()
    }

    #[test]
    fn stage_boundaries_follow_convention() {
        let c = cfg();
        assert_eq!(growth_params_from_time(0.0, &c).unwrap().stage, StageLabel::Spore);
        assert_eq!(growth_params_from_time(0.0, &c).unwrap().density, 0.0);
        assert_eq!(growth_params_from_time(239.9, &c).unwrap().stage, StageLabel::Spore);
        assert_eq!(growth_params_from_time(240.0, &c).unwrap().stage, StageLabel::Hyphae);
        assert_eq!(growth_params_from_time(480.0, &c).unwrap().stage, StageLabel::Mycelium);
        assert_eq!(growth_params_from_time(720.0, &c).unwrap().stage, StageLabel::Mycelium);
    }

    #[test]
    fn qualitative_exemplar_times_land_in_their_stages() {
        let c = cfg();
        assert_eq!(growth_params_from_time(220.0, &c).unwrap().stage, StageLabel::Spore);
        assert_eq!(growth_params_from_time(684.0, &c).unwrap().stage, StageLabel::Mycelium);
    }

    #[test]
    fn out_of_range_time_is_rejected() {
        let c = cfg();
        for t in [-0.1, 720.5, f64::NAN] {
            assert!(matches!(growth_params_from_time(t, &c), Err(Error::Range { .. })));
        }
    }

    #[test]
    fn params_are_nondecreasing_in_time() {
        let c = cfg();
        let mut prev = growth_params_from_time(0.0, &c).unwrap();
        for k in 1..=720 {
            let p = growth_params_from_time(k as f64, &c).unwrap();
            assert!(p.density >= prev.density);
            assert!(p.branching >= prev.branching);
            assert!(p.stage >= prev.stage);
            prev = p;
        }
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.stage_boundaries = [500.0, 400.0];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = cfg();
        c.n_per_stage = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = cfg();
        c.split_ratios = [0.7, 0.2, 0.2];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = cfg();
        c.image_size = 16;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn split_counts_are_stratified() {
        assert_eq!(split_counts(200, [0.7, 0.15, 0.15]), [140, 30, 30]);
        assert_eq!(split_counts(20, [0.7, 0.15, 0.15]), [14, 3, 3]);
        assert_eq!(split_counts(7, [1.0, 0.0, 0.0]), [7, 0, 0]);
    }

    #[test]
    fn sampled_timestamps_stay_in_band() {
        let c = cfg();
        for stage in StageLabel::ALL {
            let (lo, hi) = c.stage_band(stage);
            for i in 0..500 {
                let t = sample_timestamp(&c, stage, derive_seed(1, 9, i));
                assert!(t >= lo && t <= hi);
                assert_eq!(c.stage_at(t), stage);
                let reparsed: f64 = format!("{t:.1}").parse().unwrap();
                assert_eq!(reparsed, t);
            }
        }
    }

    #[test]
    fn derived_seeds_differ_across_streams_and_indices() {
        let a = derive_seed(7, STREAM_IMAGE, 0);
        assert_ne!(a, derive_seed(7, STREAM_IMAGE, 1));
        assert_ne!(a, derive_seed(7, STREAM_TEXT, 0));
        assert_ne!(a, derive_seed(8, STREAM_IMAGE, 0));
        assert_eq!(a, derive_seed(7, STREAM_IMAGE, 0));
    }
}
