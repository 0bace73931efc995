//! Procedural renderer for the three growth stages.
//!
//! A per-seed *plan* (spore positions, random-walk turn sequences, branch
//! points, mesh strands) is drawn first with a fixed number of RNG calls; the
//! growth parameters only decide how much of that plan is drawn. Because every
//! element is drawn as a prefix of its planned geometry, and brushes only grow,
//! the foreground of a denser image is a superset of a sparser one.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{StageLabel, StageParams};
use crate::error::{Error, Result};

pub const MIN_IMAGE_SIZE: u32 = 32;

/// Layout reference size; lengths scale with `image_size / REFERENCE_SIZE`.
const REFERENCE_SIZE: f64 = 96.0;
const MAX_SPORES: usize = 12;
const MIN_SPORES: usize = 4;
const WALK_STEPS: usize = 60;
const GERM_MIN_STEPS: usize = 12;
const BRANCHES_PER_SPORE: usize = 4;
const BRANCH_STEPS: usize = 24;
const MESH_STRANDS: usize = 36;
const MESH_MIN_STRANDS: usize = 8;
const MESH_STEPS: usize = 70;

const BACKGROUND: u8 = 244;
const BACKGROUND_NOISE: i32 = 6;
const FOREGROUND_LUMA: f64 = 160.0;

const SPORE_RGB: [u8; 3] = [100, 72, 48];
const HYPHA_RGB: [u8; 3] = [72, 70, 58];
const MESH_RGB: [u8; 3] = [52, 48, 40];

/// Foreground pixels are markedly darker than the near-white background.
pub fn is_foreground(px: &Rgb<u8>) -> bool {
    let [r, g, b] = px.0;
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * (b as f64) < FOREGROUND_LUMA
}

pub fn foreground_pixel_count(img: &RgbImage) -> usize {
    img.pixels().filter(|p| is_foreground(p)).count()
}

struct Spore {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    color: [u8; 3],
}

struct Walk {
    x: f64,
    y: f64,
    angle: f64,
    turns: Vec<f64>,
    color: [u8; 3],
}

impl Walk {
    /// Points visited by the first `steps` steps, including the start.
    fn points(&self, steps: usize, step_len: f64) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(steps + 1);
        let (mut x, mut y, mut a) = (self.x, self.y, self.angle);
        pts.push((x, y));
        for turn in self.turns.iter().take(steps) {
            a += turn;
            x += a.cos() * step_len;
            y += a.sin() * step_len;
            pts.push((x, y));
        }
        pts
    }
}

struct Branch {
    at_step: usize,
    angle_offset: f64,
    turns: Vec<f64>,
}

struct Plan {
    spores: Vec<Spore>,
    germ_tubes: Vec<Walk>,
    branches: Vec<Vec<Branch>>,
    mesh: Vec<Walk>,
}

fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3]) -> [u8; 3] {
    let d: i32 = rng.gen_range(-8..=8);
    base.map(|c| (c as i32 + d).clamp(0, 255) as u8)
}

fn make_plan(rng: &mut ChaCha8Rng, size: f64) -> Plan {
    let s = size / REFERENCE_SIZE;
    let margin = 0.12 * size;
    let mut spores = Vec::with_capacity(MAX_SPORES);
    let mut germ_tubes = Vec::with_capacity(MAX_SPORES);
    let mut branches = Vec::with_capacity(MAX_SPORES);
    for _ in 0..MAX_SPORES {
        let cx = rng.gen_range(margin..size - margin);
        let cy = rng.gen_range(margin..size - margin);
        let a = rng.gen_range(1.8..2.8) * s;
        let b = a * rng.gen_range(0.6..0.9);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let color = jitter(rng, SPORE_RGB);
        spores.push(Spore {
            cx,
            cy,
            a,
            b,
            cos: theta.cos(),
            sin: theta.sin(),
            color,
        });

        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let turns = (0..WALK_STEPS).map(|_| rng.gen_range(-0.35..0.35)).collect();
        let color = jitter(rng, HYPHA_RGB);
        germ_tubes.push(Walk {
            x: cx,
            y: cy,
            angle,
            turns,
            color,
        });

        let mut spore_branches: Vec<Branch> = (0..BRANCHES_PER_SPORE)
            .map(|_| {
                let at_step = rng.gen_range(GERM_MIN_STEPS / 2..WALK_STEPS);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let angle_offset = sign * rng.gen_range(0.5..1.1);
                let turns = (0..BRANCH_STEPS).map(|_| rng.gen_range(-0.3..0.3)).collect();
                Branch {
                    at_step,
                    angle_offset,
                    turns,
                }
            })
            .collect();
        spore_branches.sort_by_key(|b| b.at_step);
        branches.push(spore_branches);
    }
    let mesh = (0..MESH_STRANDS)
        .map(|_| {
            let x = rng.gen_range(0.0..size);
            let y = rng.gen_range(0.0..size);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let turns = (0..MESH_STEPS).map(|_| rng.gen_range(-0.12..0.12)).collect();
            let color = jitter(rng, MESH_RGB);
            Walk {
                x,
                y,
                angle,
                turns,
                color,
            }
        })
        .collect();
    Plan {
        spores,
        germ_tubes,
        branches,
        mesh,
    }
}

struct Canvas {
    img: RgbImage,
    size: i64,
}

impl Canvas {
    fn stamp(&mut self, x: f64, y: f64, radius: f64, color: [u8; 3]) {
        let r2 = radius.max(0.5).powi(2);
        let reach = radius.ceil() as i64 + 1;
        let (px, py) = (x.floor() as i64, y.floor() as i64);
        for yy in (py - reach).max(0)..=(py + reach).min(self.size - 1) {
            for xx in (px - reach).max(0)..=(px + reach).min(self.size - 1) {
                let dx = xx as f64 + 0.5 - x;
                let dy = yy as f64 + 0.5 - y;
                if dx * dx + dy * dy <= r2 {
                    self.img.put_pixel(xx as u32, yy as u32, Rgb(color));
                }
            }
        }
    }

    /// Stamp along a polyline at half-pixel spacing.
    fn stroke(&mut self, pts: &[(f64, f64)], radius: f64, color: [u8; 3]) {
        if let Some(&(x, y)) = pts.first() {
            self.stamp(x, y, radius, color);
        }
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
            let n = (len / 0.5).ceil().max(1.0) as usize;
            for k in 1..=n {
                let f = k as f64 / n as f64;
                self.stamp(x0 + (x1 - x0) * f, y0 + (y1 - y0) * f, radius, color);
            }
        }
    }

    fn ellipse(&mut self, sp: &Spore, scale: f64) {
        let (a, b) = (sp.a * scale, sp.b * scale);
        let reach = a.ceil() as i64 + 1;
        let (px, py) = (sp.cx.floor() as i64, sp.cy.floor() as i64);
        for yy in (py - reach).max(0)..=(py + reach).min(self.size - 1) {
            for xx in (px - reach).max(0)..=(px + reach).min(self.size - 1) {
                let dx = xx as f64 + 0.5 - sp.cx;
                let dy = yy as f64 + 0.5 - sp.cy;
                let u = (dx * sp.cos + dy * sp.sin) / a;
                let v = (-dx * sp.sin + dy * sp.cos) / b;
                if u * u + v * v <= 1.0 {
                    self.img.put_pixel(xx as u32, yy as u32, Rgb(sp.color));
                }
            }
        }
    }
}

/// Render a growth-stage image. Identical `(params, seed, image_size)` always
/// yields identical pixels.
pub fn render_stage_image(params: &StageParams, seed: u64, image_size: u32) -> Result<RgbImage> {
    if image_size < MIN_IMAGE_SIZE {
        return Err(Error::Config(format!(
            "image_size must be at least {MIN_IMAGE_SIZE}, got {image_size}"
        )));
    }
    let size = image_size as f64;
    let s = size / REFERENCE_SIZE;
    let mut plan_rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = make_plan(&mut plan_rng, size);

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66_D1CE_5EED);
    let img = RgbImage::from_fn(image_size, image_size, |_, _| {
        let warm = [0i32, -1, -4];
        Rgb(warm.map(|w| {
            (BACKGROUND as i32 + w + noise_rng.gen_range(-BACKGROUND_NOISE..=BACKGROUND_NOISE)).clamp(0, 255) as u8
        }))
    });
    let mut canvas = Canvas {
        img,
        size: image_size as i64,
    };

    let density = params.density.clamp(0.0, 1.0);
    let [b1, b2] = params.boundaries;
    let n_spores = (MIN_SPORES + ((MAX_SPORES - MIN_SPORES) as f64 * density).round() as usize).min(MAX_SPORES);
    let spore_scale = 1.0 + 0.35 * density;

    for sp in &plan.spores[..n_spores] {
        canvas.ellipse(sp, spore_scale);
    }

    if params.stage >= StageLabel::Hyphae {
        let growth = if params.stage == StageLabel::Mycelium {
            1.0
        } else {
            ((density - b1) / (b2 - b1)).clamp(0.0, 1.0)
        };
        let steps = GERM_MIN_STEPS + ((WALK_STEPS - GERM_MIN_STEPS) as f64 * growth).round() as usize;
        let n_branches = ((params.branching.clamp(0.0, 1.0) * BRANCHES_PER_SPORE as f64).round() as usize)
            .min(BRANCHES_PER_SPORE);
        let radius = if params.stage == StageLabel::Mycelium { 1.0 * s } else { 0.55 * s };

        for (tube, branches) in plan.germ_tubes.iter().zip(&plan.branches).take(n_spores) {
            let pts = tube.points(steps, s);
            canvas.stroke(&pts, radius, tube.color);
            for br in branches.iter().take(n_branches) {
                if br.at_step >= steps {
                    continue;
                }
                let len = BRANCH_STEPS.min(steps - br.at_step);
                let (x, y) = pts[br.at_step];
                let heading = tube.angle + tube.turns[..br.at_step].iter().sum::<f64>();
                let walk = Walk {
                    x,
                    y,
                    angle: heading + br.angle_offset,
                    turns: br.turns.clone(),
                    color: tube.color,
                };
                canvas.stroke(&walk.points(len, s), radius, tube.color);
            }
        }
    }

    if params.stage == StageLabel::Mycelium {
        let maturity = ((density - b2) / (1.0 - b2)).clamp(0.0, 1.0);
        let n_mesh = MESH_MIN_STRANDS + ((MESH_STRANDS - MESH_MIN_STRANDS) as f64 * maturity).round() as usize;
        for strand in plan.mesh.iter().take(n_mesh) {
            canvas.stroke(&strand.points(MESH_STEPS, s), 0.8 * s, strand.color);
        }
    }

    Ok(canvas.img)
}
