//! Report files: one SVG figure per view, each next to the TSV data it was
//! drawn from.

use std::fmt::Write as _;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{ensure_dir, EvalReport};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::synthgen::StageLabel;
use crate::training::{load_rgb, History};

pub const QUALITATIVE_COUNT: usize = 8;

const STAGE_COLORS: [&str; 3] = ["#4c72b0", "#dd8452", "#55a868"];

/// Indices of up to [`QUALITATIVE_COUNT`] samples, drawn with `seed`.
pub fn select_qualitative(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(QUALITATIVE_COUNT);
    idx
}

struct Svg {
    width: f64,
    height: f64,
    body: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        let mut s = Self {
            width,
            height,
            body: String::new(),
        };
        s.rect(0.0, 0.0, width, height, "white", None);
        s
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: Option<&str>) {
        let stroke = stroke.map(|c| format!(r#" stroke="{c}""#)).unwrap_or_default();
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"{stroke}/>"#
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" {extra}/>"#
        );
    }

    fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r}" fill="{fill}" fill-opacity="0.6"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
            esc(s)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str, extra: &str) {
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="2" {extra}/>"#,
            p.join(" ")
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Linear map from a data interval onto a pixel interval.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    p0: f64,
    p1: f64,
}

impl Axis {
    fn at(&self, v: f64) -> f64 {
        let f = if self.hi > self.lo { (v - self.lo) / (self.hi - self.lo) } else { 0.5 };
        self.p0 + f.clamp(0.0, 1.0) * (self.p1 - self.p0)
    }
}

fn write(out_dir: &Path, name: &str, content: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = out_dir.join(name);
    write_atomic(&path, content.as_bytes())?;
    written.push(path);
    Ok(())
}

fn confusion_tsv(r: &EvalReport) -> String {
    let mut s = String::from("# true\\pred");
    for st in StageLabel::ALL {
        s.push('\t');
        s.push_str(st.name());
    }
    s.push('\n');
    for (st, row) in StageLabel::ALL.iter().zip(&r.confusion) {
        s.push_str(st.name());
        for v in row {
            let _ = write!(s, "\t{v}");
        }
        s.push('\n');
    }
    s
}

fn confusion_svg(r: &EvalReport) -> String {
    let cell = 90.0;
    let (ox, oy) = (120.0, 60.0);
    let mut svg = Svg::new(ox + 3.0 * cell + 30.0, oy + 3.0 * cell + 60.0);
    svg.text(ox + 1.5 * cell, 25.0, 16.0, "middle", &format!("Confusion matrix ({} split, accuracy {:.4})", r.split, r.accuracy));
    for (i, row) in r.confusion.iter().enumerate() {
        let row_sum: u64 = row.iter().sum::<u64>().max(1);
        for (j, &v) in row.iter().enumerate() {
            let f = v as f64 / row_sum as f64;
            let shade = (255.0 * (1.0 - 0.85 * f)).round() as u8;
            let fill = format!("rgb({shade},{shade},255)");
            let (x, y) = (ox + j as f64 * cell, oy + i as f64 * cell);
            svg.rect(x, y, cell, cell, &fill, Some("#333"));
            svg.text(x + cell / 2.0, y + cell / 2.0 + 5.0, 16.0, "middle", &v.to_string());
        }
        svg.text(ox - 8.0, oy + (i as f64 + 0.5) * cell + 5.0, 13.0, "end", StageLabel::ALL[i].name());
        svg.text(ox + (i as f64 + 0.5) * cell, oy + 3.0 * cell + 20.0, 13.0, "middle", StageLabel::ALL[i].name());
    }
    svg.text(ox + 1.5 * cell, oy + 3.0 * cell + 45.0, 13.0, "middle", "predicted stage");
    svg.finish()
}

fn scatter_tsv(r: &EvalReport) -> String {
    let mut s = String::from("# image_path\ttrue_hours\tpred_hours\ttrue_stage\tpred_stage\n");
    for p in &r.scatter {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            p.image_path,
            p.true_hours,
            p.pred_hours,
            p.true_stage.name(),
            p.pred_stage.name()
        );
    }
    s
}

/// One panel per true stage; both axes span the checkpoint's time scale and
/// the dashed diagonal marks perfect prediction.
fn scatter_svg(r: &EvalReport) -> String {
    let (pw, ph, pad) = (260.0, 260.0, 50.0);
    let mut svg = Svg::new(3.0 * (pw + pad) + pad, ph + 2.0 * pad + 30.0);
    let (lo, hi) = (r.time_scale.t_min, r.time_scale.t_max);
    for (k, stage) in StageLabel::ALL.iter().enumerate() {
        let x0 = pad + k as f64 * (pw + pad);
        let y0 = pad + 10.0;
        let ax = Axis { lo, hi, p0: x0, p1: x0 + pw };
        let ay = Axis { lo, hi, p0: y0 + ph, p1: y0 };
        svg.rect(x0, y0, pw, ph, "none", Some("#333"));
        svg.text(x0 + pw / 2.0, y0 - 12.0, 14.0, "middle", stage.name());
        svg.line(ax.at(lo), ay.at(lo), ax.at(hi), ay.at(hi), "#888", r#"stroke-dasharray="6,4" class="identity""#);
        for p in r.scatter.iter().filter(|p| p.true_stage == *stage) {
            svg.circle(ax.at(p.true_hours), ay.at(p.pred_hours), 2.5, STAGE_COLORS[k]);
        }
        svg.text(x0, y0 + ph + 16.0, 11.0, "start", &format!("{lo:.0}"));
        svg.text(x0 + pw, y0 + ph + 16.0, 11.0, "end", &format!("{hi:.0}"));
        svg.text(x0 + pw / 2.0, y0 + ph + 32.0, 12.0, "middle", "true hours");
        svg.text(x0 - 6.0, y0 + ph, 11.0, "end", &format!("{lo:.0}"));
        svg.text(x0 - 6.0, y0 + 10.0, 11.0, "end", &format!("{hi:.0}"));
    }
    svg.finish()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

fn mae_tsv(r: &EvalReport) -> String {
    let mut s = String::from("# stage\tcount\tmae_hours\tstd_hours\n");
    for (st, e) in StageLabel::ALL.iter().zip(&r.per_stage_mae) {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", st.name(), e.count, fmt_opt(e.mean), fmt_opt(e.std));
    }
    s
}

fn mae_svg(r: &EvalReport) -> String {
    let (w, h, pad) = (420.0, 300.0, 60.0);
    let mut svg = Svg::new(w + 2.0 * pad, h + 2.0 * pad);
    let top = r
        .per_stage_mae
        .iter()
        .filter_map(|e| Some(e.mean? + e.std?))
        .fold(1.0f64, f64::max)
        * 1.1;
    let ay = Axis { lo: 0.0, hi: top, p0: pad + h, p1: pad };
    svg.text(pad + w / 2.0, 30.0, 16.0, "middle", "Time MAE per true stage (error bars: population std)");
    svg.line(pad, pad + h, pad + w, pad + h, "#333", "");
    svg.line(pad, pad, pad, pad + h, "#333", "");
    svg.text(pad - 6.0, pad + 5.0, 11.0, "end", &format!("{top:.0}"));
    svg.text(pad - 6.0, pad + h, 11.0, "end", "0");
    let slot = w / 3.0;
    for (k, (st, e)) in StageLabel::ALL.iter().zip(&r.per_stage_mae).enumerate() {
        let cx = pad + (k as f64 + 0.5) * slot;
        svg.text(cx, pad + h + 20.0, 13.0, "middle", st.name());
        let (Some(mean), Some(std)) = (e.mean, e.std) else {
            svg.text(cx, pad + h - 10.0, 12.0, "middle", "no samples");
            continue;
        };
        let bw = slot * 0.5;
        svg.rect(cx - bw / 2.0, ay.at(mean), bw, ay.at(0.0) - ay.at(mean), STAGE_COLORS[k], None);
        let (y_lo, y_hi) = (ay.at((mean - std).max(0.0)), ay.at(mean + std));
        svg.line(cx, y_lo, cx, y_hi, "#000", r#"stroke-width="1.5""#);
        svg.line(cx - 8.0, y_lo, cx + 8.0, y_lo, "#000", "");
        svg.line(cx - 8.0, y_hi, cx + 8.0, y_hi, "#000", "");
        svg.text(cx, y_hi - 6.0, 11.0, "middle", &format!("{mean:.1} h"));
    }
    svg.finish()
}

fn loss_svg(history: &History) -> String {
    let (w, h, pad) = (520.0, 300.0, 60.0);
    let mut svg = Svg::new(w + 2.0 * pad + 100.0, h + 2.0 * pad);
    let n = history.epochs.len().max(2) as f64;
    let top = history
        .epochs
        .iter()
        .flat_map(|e| [e.train.l_total, e.val.l_total])
        .fold(1e-12f64, f64::max)
        * 1.05;
    let ax = Axis { lo: 1.0, hi: n, p0: pad, p1: pad + w };
    let ay = Axis { lo: 0.0, hi: top, p0: pad + h, p1: pad };
    svg.text(pad + w / 2.0, 30.0, 16.0, "middle", "Total loss per epoch");
    svg.line(pad, pad + h, pad + w, pad + h, "#333", "");
    svg.line(pad, pad, pad, pad + h, "#333", "");
    svg.text(pad - 6.0, pad + 5.0, 11.0, "end", &format!("{top:.3}"));
    svg.text(pad - 6.0, pad + h, 11.0, "end", "0");
    svg.text(pad + w / 2.0, pad + h + 30.0, 12.0, "middle", "epoch");
    let series = [("train", STAGE_COLORS[0]), ("val", STAGE_COLORS[1])];
    for (k, (name, color)) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = history
            .epochs
            .iter()
            .map(|e| {
                let v = if k == 0 { e.train.l_total } else { e.val.l_total };
                (ax.at(e.epoch as f64), ay.at(v))
            })
            .collect();
        svg.polyline(&pts, color, "");
        let ly = pad + 20.0 * k as f64;
        svg.line(pad + w + 15.0, ly, pad + w + 40.0, ly, color, r#"stroke-width="2""#);
        svg.text(pad + w + 45.0, ly + 4.0, 12.0, "start", name);
    }
    svg.finish()
}

fn png_base64(img: &image::RgbImage) -> Result<String> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::Data(format!("cannot encode thumbnail: {e}")))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
}

fn qualitative(r: &EvalReport, data_dir: &Path, picks: &[usize]) -> Result<(String, String)> {
    let mut tsv = String::from("# image_path\ttrue_stage\ttrue_hours\tpred_stage\tpred_hours\n");
    let (cell, cols) = (150.0, 4usize);
    let rows = picks.len().div_ceil(cols).max(1);
    let mut svg = Svg::new(cols as f64 * cell + 20.0, rows as f64 * (cell + 50.0) + 50.0);
    svg.text(10.0, 28.0, 16.0, "start", &format!("Seeded {} split samples", r.split));
    for (k, &i) in picks.iter().enumerate() {
        let p = &r.scatter[i];
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}",
            p.image_path,
            p.true_stage.name(),
            p.true_hours,
            p.pred_stage.name(),
            p.pred_hours
        );
        let x = 10.0 + (k % cols) as f64 * cell;
        let y = 45.0 + (k / cols) as f64 * (cell + 50.0);
        match load_rgb(&data_dir.join(&p.image_path)).and_then(|img| png_base64(&img)) {
            Ok(b64) => {
                let _ = writeln!(
                    svg.body,
                    r#"<image x="{x:.2}" y="{y:.2}" width="{s}" height="{s}" href="data:image/png;base64,{b64}"/>"#,
                    s = cell - 10.0
                );
            }
            Err(_) => svg.rect(x, y, cell - 10.0, cell - 10.0, "#eee", Some("#999")),
        }
        let ok = if p.true_stage == p.pred_stage { "" } else { " (miss)" };
        svg.text(x, y + cell + 4.0, 11.0, "start", &format!("pred {} {:.0} h{ok}", p.pred_stage.name(), p.pred_hours));
        svg.text(x, y + cell + 18.0, 11.0, "start", &format!("true {} {:.0} h", p.true_stage.name(), p.true_hours));
    }
    Ok((tsv, svg.finish()))
}

fn report_json(r: &EvalReport, files: &[String]) -> String {
    let mae: Vec<_> = StageLabel::ALL
        .iter()
        .zip(&r.per_stage_mae)
        .map(|(st, e)| {
            json!({
                "stage": st.name(),
                "count": e.count,
                "defined": e.mean.is_some(),
                "mae_hours": e.mean,
                "std_hours": e.std,
            })
        })
        .collect();
    let doc = json!({
        "split": r.split.name(),
        "prompt": r.prompt,
        "n_samples": r.n_samples,
        "n_excluded": r.excluded.len(),
        "excluded": r.excluded,
        "accuracy": r.accuracy,
        "confusion": {
            "labels": StageLabel::ALL.iter().map(|s| s.name()).collect::<Vec<_>>(),
            "rows": "true stage",
            "columns": "predicted stage",
            "counts": r.confusion,
        },
        "per_stage_mae": mae,
        "time_scale": r.time_scale,
        "notes": {
            "std": "population standard deviation",
            "mae_grouping": "true stage",
            "mae_scope": "all evaluated samples, including misclassified ones",
        },
        "files": files,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

/// Write `report.json` plus figure and data files into `out_dir`; returns the
/// written paths. The loss figure is only produced when `history` is given.
pub fn render_report(
    report: &EvalReport,
    history: Option<&History>,
    data_dir: &Path,
    out_dir: &Path,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    report.check_invariants()?;
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    write(out_dir, "confusion.tsv", &confusion_tsv(report), &mut written)?;
    write(out_dir, "confusion.svg", &confusion_svg(report), &mut written)?;
    write(out_dir, "scatter.tsv", &scatter_tsv(report), &mut written)?;
    write(out_dir, "scatter.svg", &scatter_svg(report), &mut written)?;
    write(out_dir, "mae.tsv", &mae_tsv(report), &mut written)?;
    write(out_dir, "mae.svg", &mae_svg(report), &mut written)?;
    if let Some(h) = history {
        write(out_dir, "history.tsv", &h.to_tsv(), &mut written)?;
        write(out_dir, "loss_curves.svg", &loss_svg(h), &mut written)?;
    }
    let picks = select_qualitative(report.scatter.len(), seed);
    let (q_tsv, q_svg) = qualitative(report, data_dir, &picks)?;
    write(out_dir, "qualitative.tsv", &q_tsv, &mut written)?;
    write(out_dir, "qualitative.svg", &q_svg, &mut written)?;
    let names: Vec<String> = written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    write(out_dir, "report.json", &report_json(report, &names), &mut written)?;
    Ok(written)
}
