#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cliptime::cli::{cmd_evaluate, cmd_generate, cmd_train, EvaluateArgs, GenerateArgs, TrainArgs, BEST_CHECKPOINT};
use cliptime::config::PipelineConfig;
use cliptime::encoders::{EncoderConfig, ImageTensor, VisionArch, Vocabulary};
use cliptime::heads::{Mode, ModelConfig};
use cliptime::model::Model;
use cliptime::par::Exec;
use cliptime::synthgen::{Split, StageLabel, MANIFEST_FILE};
use cliptime::training::{batch_gradients, BatchItem, PreparedSample};

pub fn reference_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.toml")
}

pub fn reference_config() -> PipelineConfig {
    PipelineConfig::load(&reference_config_path()).expect("reference config parses")
}

/// Model at `d = 8` with two heads, used by the gradient checks.
pub fn tiny_model(arch: VisionArch, normalize: bool, seed: u64) -> Model {
    let enc = EncoderConfig {
        d: 8,
        vocab_size: 128,
        max_tokens: 8,
        vision_arch: arch,
        normalize_embeddings: normalize,
    };
    let m = ModelConfig {
        d: 8,
        n_encoder_layers: 2,
        ffn_hidden: 16,
        n_attention_heads: 2,
        n_classes: 3,
        dropout: 0.0,
    };
    Model::new(enc, m, Vocabulary::from_templates(), seed).unwrap()
}

pub fn random_samples(model: &Model, n: usize, side: usize, seed: u64) -> Vec<PreparedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompts = ["early spore stage", "a dense mycelium mat late", "branching hyphae mid", "an image of fungal growth"];
    (0..n)
        .map(|i| {
            let data = (0..side * side * 3).map(|_| rng.gen::<f64>()).collect();
            PreparedSample {
                image_path: format!("random{i}"),
                image: ImageTensor::new(side, side, 3, data).unwrap(),
                tokens: model.tokenize(prompts[i % prompts.len()]).unwrap(),
                label: StageLabel::ALL[i % 3],
                timestamp_hours: 0.0,
                t_norm: rng.gen(),
            }
        })
        .collect()
}

pub fn eval_items(samples: &[PreparedSample]) -> Vec<BatchItem<'_>> {
    samples
        .iter()
        .map(|s| BatchItem {
            sample: s,
            tokens: &s.tokens,
            mode: Mode::Eval,
        })
        .collect()
}

/// Batch objective `alpha * mean CE + beta * mean squared time error`,
/// computed from forward passes only.
pub fn objective(model: &Model, samples: &[PreparedSample], alpha: f64, beta: f64) -> f64 {
    let n = samples.len() as f64;
    let mut ce = 0.0;
    let mut se = 0.0;
    for s in samples {
        let (out, _) = model.forward(&s.image, &s.tokens, Mode::Eval).unwrap();
        let z = &out.logits;
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        ce += -(z[s.label.index()].exp() / denom).ln();
        se += (out.t_hat - s.t_norm).powi(2);
    }
    alpha * ce / n + beta * se / n
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub max_rel: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compare analytic gradients with central differences (step `h`) on every
/// element of the named parameters. Relative error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check(model: &mut Model, samples: &[PreparedSample], names: &[String], h: f64) -> Vec<GradCheck> {
    let (alpha, beta) = (0.7, 1.3);
    let (_, grads) = batch_gradients(model, &eval_items(samples), alpha, beta, Exec::Sequential).unwrap();
    names
        .iter()
        .map(|name| {
            let spec = model.params.spec(name).unwrap().clone();
            let mut worst = (0.0f64, 0usize);
            for k in 0..spec.id.len() {
                let i = spec.id.range().start + k;
                let orig = model.params.data()[i];
                model.params.data_mut()[i] = orig + h;
                let up = objective(model, samples, alpha, beta);
                model.params.data_mut()[i] = orig - h;
                let down = objective(model, samples, alpha, beta);
                model.params.data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.data()[i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                if rel > worst.0 {
                    worst = (rel, k);
                }
            }
            GradCheck {
                name: name.clone(),
                max_rel: worst.0,
                worst_index: worst.1,
                checked: spec.id.len(),
            }
        })
        .collect()
}

/// Files produced by one generate, train, evaluate pass.
pub struct PipelineRun {
    pub root: tempfile::TempDir,
    pub config: PipelineConfig,
    pub config_path: PathBuf,
    pub elapsed: Duration,
    pub report: cliptime::evaluation::EvalReport,
}

impl PipelineRun {
    pub fn data_dir(&self) -> PathBuf {
        self.config.paths.data_dir.clone()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.config.paths.run_dir.clone()
    }

    pub fn best_checkpoint(&self) -> PathBuf {
        self.run_dir().join(BEST_CHECKPOINT)
    }

    pub fn manifest_bytes(&self) -> Vec<u8> {
        fs::read(self.data_dir().join(MANIFEST_FILE)).unwrap()
    }

    pub fn report_dir(&self) -> PathBuf {
        self.run_dir().join("eval-test")
    }
}

/// Generate, train and evaluate `cfg` inside a fresh temporary directory.
pub fn run_pipeline(mut cfg: PipelineConfig, exec: Exec) -> cliptime::Result<PipelineRun> {
    let root = tempfile::tempdir().unwrap();
    cfg.paths.data_dir = PathBuf::from("data");
    cfg.paths.run_dir = PathBuf::from("run");
    let config_path = root.path().join("pipeline.toml");
    fs::write(&config_path, toml::to_string(&cfg).unwrap()).unwrap();
    let start = Instant::now();
    cmd_generate(
        &GenerateArgs {
            config: config_path.clone(),
            force: false,
            seed: None,
            out: None,
        },
        exec,
    )?;
    cmd_train(
        &TrainArgs {
            config: config_path.clone(),
            seed: None,
            out: None,
        },
        exec,
    )?;
    let report = cmd_evaluate(
        &EvaluateArgs {
            config: config_path.clone(),
            checkpoint: None,
            split: Split::Test,
            prompt: None,
            out: None,
            seed: None,
        },
        exec,
    )?;
    let elapsed = start.elapsed();
    let config = PipelineConfig::load(&config_path)?;
    Ok(PipelineRun {
        root,
        config,
        config_path,
        elapsed,
        report,
    })
}
