use super::{derive_seed, GenConfig, StageLabel};
use crate::error::{Error, Result};

/// Class-agnostic prompt used at inference time.
pub const NEUTRAL_PROMPT: &str = "an image of fungal growth";

const PHASES: [&str; 3] = ["early", "mid", "late"];

const SPORE_TEMPLATES: [&str; 3] = [
    "microscopy image of fungal spores in the {phase} spore stage",
    "{phase} spore stage with small round dormant spores",
    "an image of fungal growth showing isolated spores during the {phase} spore phase",
];

const HYPHAE_TEMPLATES: [&str; 3] = [
    "microscopy image of fungal hyphae in the {phase} hyphae stage",
    "{phase} hyphae stage with branching filaments growing from spores",
    "an image of fungal growth showing hyphae during the {phase} hyphae phase",
];

const MYCELIUM_TEMPLATES: [&str; 3] = [
    "microscopy image of a fungal mycelium in the {phase} mycelium stage",
    "{phase} mycelium stage with a dense interconnected filament network",
    "an image of fungal growth showing mycelium during the {phase} mycelium phase",
];

fn templates(stage: StageLabel) -> &'static [&'static str] {
    match stage {
        StageLabel::Spore => &SPORE_TEMPLATES,
        StageLabel::Hyphae => &HYPHAE_TEMPLATES,
        StageLabel::Mycelium => &MYCELIUM_TEMPLATES,
    }
}

/// Coarse position of `t` inside its stage band: early, mid or late third.
fn phase(stage: StageLabel, t: f64, cfg: &GenConfig) -> &'static str {
    let (lo, hi) = cfg.stage_band(stage);
    let f = ((t - lo) / (hi - lo)).clamp(0.0, 1.0);
    PHASES[((f * 3.0) as usize).min(2)]
}

/// Templated text description of a sample.
pub fn describe_sample(stage: StageLabel, t: f64, template_seed: u64, cfg: &GenConfig) -> Result<String> {
    if !(t >= cfg.t_min && t <= cfg.t_max) {
        return Err(Error::Range {
            t,
            t_min: cfg.t_min,
            t_max: cfg.t_max,
        });
    }
    let options = templates(stage);
    let pick = (derive_seed(template_seed, 0, 0) % options.len() as u64) as usize;
    Ok(options[pick].replace("{phase}", phase(stage, t, cfg)))
}

/// Every word the generator can emit, plus the neutral prompt, in first-seen order.
pub fn template_words() -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    let mut push = |w: &str| {
        if !words.iter().any(|x| x == w) {
            words.push(w.to_string());
        }
    };
    for stage in StageLabel::ALL {
        push(stage.name());
    }
    for p in PHASES {
        push(p);
    }
    for w in NEUTRAL_PROMPT.split_whitespace() {
        push(w);
    }
    for stage in StageLabel::ALL {
        for t in templates(stage) {
            for w in t.split_whitespace().filter(|w| *w != "{phase}") {
                push(w);
            }
        }
    }
    words
}
