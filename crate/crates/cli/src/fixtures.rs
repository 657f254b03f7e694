//! Procedural desk-scale data standing in for the public common-domain set,
//! the weakly labeled web corpus and the field-captured target images.
//!
//! Everything is drawn from keyed random streams, so one seed always
//! produces byte-identical files.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use cedg_augment::{bilinear_resize, ImageU8};
use cedg_core::rng::stream;
use cedg_forge::dataset::SIDE;
use cedg_forge::{write_dataset, write_manifest, LabeledDataset, PrecomputedProposals, RegionProposal, TopicTable};

use crate::error::{CliError, Result};

/// Shape classes of the common domain, in label order.
pub const COMMON_CLASSES: [&str; 10] =
    ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub corpus_images: usize,
    pub val_images: usize,
    pub test_images: usize,
    pub common_train: usize,
    pub common_val: usize,
    /// Chance that a corpus image shows an object of another category
    /// than its topic implies.
    pub label_noise: f64,
    /// Target-domain share of each category (Person, Wheeled, Tracked, Other).
    pub target_mix: [f64; 4],
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            corpus_images: 400,
            val_images: 200,
            test_images: 200,
            common_train: 1500,
            common_val: 200,
            label_noise: 0.1,
            target_mix: [0.35, 0.35, 0.2, 0.1],
        }
    }
}

/// Where [`make_fixtures`] puts things, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixturePaths {
    pub manifest: PathBuf,
    pub proposals: PathBuf,
    pub truth: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub common_train: PathBuf,
    pub common_val: PathBuf,
}

impl FixturePaths {
    pub fn under(dir: &Path) -> Self {
        Self {
            manifest: dir.join("corpus/manifest.jsonl"),
            proposals: dir.join("corpus/proposals.jsonl"),
            truth: dir.join("corpus/truth.jsonl"),
            val: dir.join("target_val.bin"),
            test: dir.join("target_test.bin"),
            common_train: dir.join("common_train.bin"),
            common_val: dir.join("common_val.bin"),
        }
    }
}

/// Ground truth of one corpus image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusTruth {
    pub image: PathBuf,
    pub topic: String,
    /// Target category actually drawn.
    pub category: usize,
    pub bbox: [i64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub paths: FixturePaths,
    pub corpus_images: usize,
    pub noisy_images: usize,
    pub val_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub common_train: usize,
    pub common_val: usize,
}

type Rgb = [f32; 3];

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<Rgb>,
}

impl Canvas {
    fn background(w: usize, h: usize, rng: &mut ChaCha8Rng, dim: f32) -> Self {
        let base: Rgb = [0, 1, 2].map(|_| rng.gen_range(40.0..200.0) * dim);
        let grad: Rgb = [0, 1, 2].map(|_| rng.gen_range(-40.0..40.0) * dim);
        let vertical = rng.gen_bool(0.5);
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let t = if vertical { y as f32 / h as f32 } else { x as f32 / w as f32 };
                let n = rng.gen_range(-18.0..18.0) * dim;
                px.push([0, 1, 2].map(|c| base[c] + grad[c] * t + n));
            }
        }
        Self { w, h, px }
    }

    fn paint(&mut self, x: f32, y: f32, color: Rgb) {
        if x < 0.0 || y < 0.0 {
            return;
        }
        let (xi, yi) = (x as usize, y as usize);
        if xi < self.w && yi < self.h {
            self.px[yi * self.w + xi] = color;
        }
    }

    /// Fills every pixel whose centre satisfies `inside`, within a box.
    fn fill(&mut self, x0: f32, y0: f32, x1: f32, y1: f32, color: Rgb, inside: impl Fn(f32, f32) -> bool) {
        let (xa, ya) = (x0.floor().max(0.0) as usize, y0.floor().max(0.0) as usize);
        let (xb, yb) = (x1.ceil().min(self.w as f32) as usize, y1.ceil().min(self.h as f32) as usize);
        for y in ya..yb {
            for x in xa..xb {
                let (cx, cy) = (x as f32 + 0.5, y as f32 + 0.5);
                if inside(cx, cy) {
                    self.paint(cx, cy, color);
                }
            }
        }
    }

    fn rect(&mut self, x0: f32, y0: f32, x1: f32, y1: f32, color: Rgb) {
        self.fill(x0, y0, x1, y1, color, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1);
    }

    fn ellipse(&mut self, cx: f32, cy: f32, rx: f32, ry: f32, color: Rgb) {
        self.fill(cx - rx, cy - ry, cx + rx, cy + ry, color, |x, y| {
            ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2) <= 1.0
        });
    }

    fn ring(&mut self, cx: f32, cy: f32, r: f32, width: f32, color: Rgb) {
        self.fill(cx - r, cy - r, cx + r, cy + r, color, |x, y| {
            let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            d <= r && d >= r - width
        });
    }

    fn triangle(&mut self, cx: f32, cy: f32, r: f32, color: Rgb) {
        let (top, bottom) = (cy - r, cy + r);
        self.fill(cx - r, top, cx + r, bottom, color, |x, y| {
            let t = (y - top) / (bottom - top);
            (x - cx).abs() <= r * t
        });
    }

    fn segment(&mut self, (x0, y0): (f32, f32), (x1, y1): (f32, f32), width: f32, color: Rgb) {
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len2 = (dx * dx + dy * dy).max(1e-6);
        let pad = width;
        self.fill(x0.min(x1) - pad, y0.min(y1) - pad, x0.max(x1) + pad, y0.max(y1) + pad, color, |x, y| {
            let t = (((x - x0) * dx + (y - y0) * dy) / len2).clamp(0.0, 1.0);
            let (px, py) = (x0 + t * dx, y0 + t * dy);
            ((x - px).powi(2) + (y - py).powi(2)).sqrt() <= width / 2.0
        });
    }

    fn into_image(self) -> ImageU8 {
        ImageU8::from_fn(self.w, self.h, |c, y, x| self.px[y * self.w + x][c].round().clamp(0.0, 255.0) as u8)
    }
}

fn vivid(rng: &mut ChaCha8Rng) -> Rgb {
    let mut c: Rgb = [0, 1, 2].map(|_| rng.gen_range(0.0..120.0));
    c[rng.gen_range(0..3)] = rng.gen_range(170.0..255.0);
    c
}

fn shade(c: Rgb, k: f32) -> Rgb {
    c.map(|v| v * k)
}

/// Clutter shape `kind` (one of 6) centred at (cx, cy) with radius r.
fn draw_clutter(cv: &mut Canvas, kind: usize, cx: f32, cy: f32, r: f32, color: Rgb) {
    match kind % 6 {
        0 => cv.ellipse(cx, cy, r, r, color),
        1 => cv.rect(cx - r * 0.8, cy - r * 0.8, cx + r * 0.8, cy + r * 0.8, color),
        2 => cv.triangle(cx, cy, r, color),
        3 => cv.ring(cx, cy, r, (r * 0.35).max(1.5), color),
        4 => cv.rect(cx - r, cy - r * 0.25, cx + r, cy + r * 0.25, color),
        _ => cv.segment((cx - r, cy + r), (cx + r, cy - r), (r * 0.35).max(1.5), color),
    }
}

const TYRE: Rgb = [25.0, 25.0, 25.0];

/// Side view of a road vehicle in the box `[x, y, w, h]`: body, a cabin
/// spanning `cabin` (fractions of the width), `wheels` round wheels.
fn vehicle(cv: &mut Canvas, b: [f32; 4], wheels: usize, cabin: (f32, f32), cargo: bool, color: Rgb) {
    let [x, y, w, h] = b;
    if cargo {
        cv.rect(x, y, x + w * 0.68, y + h * 0.72, shade(color, 0.75));
    }
    cv.rect(x + w * cabin.0, y + h * 0.05, x + w * cabin.1, y + h * 0.35, shade(color, 0.85));
    cv.rect(x, y + h * 0.35, x + w, y + h * 0.72, color);
    let r = (w * 0.12).min(h * 0.22);
    for i in 0..wheels {
        let t = if wheels == 1 { 0.5 } else { 0.18 + 0.64 * i as f32 / (wheels - 1) as f32 };
        cv.ellipse(x + w * t, y + h - r, r, r, TYRE);
    }
}

#[derive(Clone, Copy)]
struct Quadruped {
    /// Body height and leg length as fractions of the box height.
    body: f32,
    legs: f32,
    head: f32,
    /// Neck lift of the head as a fraction of the box height.
    neck: f32,
    ears: bool,
    antlers: bool,
    tail_up: bool,
}

fn quadruped(cv: &mut Canvas, b: [f32; 4], q: Quadruped, facing: f32, color: Rgb) {
    let [x, y, w, h] = b;
    let cx = x + w / 2.0;
    let legs_top = y + h * (1.0 - q.legs);
    let body_cy = legs_top - h * q.body * 0.35;
    let dark = shade(color, 0.45);
    for lx in [-0.3, -0.17, 0.12, 0.25] {
        let lx = cx + facing * lx * w;
        cv.rect(lx - w * 0.03, legs_top - h * 0.05, lx + w * 0.03, y + h, dark);
    }
    cv.ellipse(cx, body_cy, w * 0.33, h * q.body / 2.0, color);
    let hx = cx + facing * w * 0.36;
    let hy = body_cy - h * q.neck;
    cv.segment((cx + facing * w * 0.22, body_cy), (hx, hy), w * 0.09, color);
    let hr = h * q.head;
    cv.ellipse(hx + facing * hr * 0.4, hy, hr, hr * 0.8, shade(color, 0.9));
    if q.ears {
        cv.triangle(hx, hy - hr * 1.1, hr * 0.5, shade(color, 0.7));
    }
    if q.antlers {
        let top = (hx, hy - hr * 2.6);
        cv.segment((hx, hy - hr * 0.6), top, 1.2, dark);
        cv.segment((top.0, hy - hr * 1.8), (top.0 - facing * hr * 1.1, hy - hr * 2.4), 1.2, dark);
        cv.segment((top.0, hy - hr * 1.6), (top.0 + facing * hr * 1.1, hy - hr * 2.3), 1.2, dark);
    }
    let tail_from = (cx - facing * w * 0.32, body_cy - h * q.body * 0.2);
    let tail_to = if q.tail_up {
        (tail_from.0 - facing * w * 0.08, tail_from.1 - h * 0.3)
    } else {
        (tail_from.0 - facing * w * 0.16, tail_from.1 + h * 0.05)
    };
    cv.segment(tail_from, tail_to, w * 0.04, color);
}

fn facing(rng: &mut ChaCha8Rng) -> f32 {
    if rng.gen_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

/// Box `[x, y, w, h]` of width `w` and aspect `h / w` centred at (cx, cy).
fn centred(cx: f32, cy: f32, w: f32, aspect: f32) -> [f32; 4] {
    let h = w * aspect;
    [cx - w / 2.0, cy - h / 2.0, w, h]
}

/// Draws common-domain class `class` (see [`COMMON_CLASSES`]) centred at
/// (cx, cy) with width `w`.
fn draw_common(cv: &mut Canvas, class: usize, cx: f32, cy: f32, w: f32, rng: &mut ChaCha8Rng) {
    let color = vivid(rng);
    let f = facing(rng);
    match class {
        // Airplane: long fuselage, swept wings, tail fin.
        0 => {
            cv.ellipse(cx, cy, w * 0.5, w * 0.08, color);
            cv.segment((cx, cy), (cx - f * w * 0.2, cy - w * 0.38), w * 0.1, shade(color, 0.8));
            cv.segment((cx, cy), (cx - f * w * 0.2, cy + w * 0.38), w * 0.1, shade(color, 0.8));
            cv.segment((cx - f * w * 0.42, cy), (cx - f * w * 0.5, cy - w * 0.18), w * 0.07, shade(color, 0.7));
        }
        1 => vehicle(cv, centred(cx, cy, w, 0.55), 2, (0.25, 0.7), false, color),
        // Bird: small round body, head, beak, wing, thin legs.
        2 => {
            let r = w * 0.25;
            cv.ellipse(cx, cy, r * 1.3, r, color);
            cv.ellipse(cx + f * r * 1.3, cy - r * 0.8, r * 0.55, r * 0.55, shade(color, 0.9));
            cv.triangle(cx + f * r * 2.0, cy - r * 0.8, r * 0.3, [220.0, 180.0, 40.0]);
            cv.segment((cx - f * r * 0.4, cy - r * 0.2), (cx - f * r * 1.5, cy - r * 1.1), r * 0.35, shade(color, 0.6));
            for lx in [-0.3, 0.3] {
                cv.segment((cx + lx * r, cy + r * 0.8), (cx + lx * r, cy + r * 1.7), 1.0, TYRE);
            }
        }
        3 => {
            let q = Quadruped { body: 0.4, legs: 0.25, head: 0.17, neck: 0.15, ears: true, antlers: false, tail_up: true };
            quadruped(cv, centred(cx, cy, w * 0.8, 0.85), q, f, color);
        }
        4 => {
            let q = Quadruped { body: 0.28, legs: 0.45, head: 0.1, neck: 0.22, ears: false, antlers: true, tail_up: false };
            quadruped(cv, centred(cx, cy, w, 1.0), q, f, color);
        }
        5 => {
            let q = Quadruped { body: 0.38, legs: 0.32, head: 0.16, neck: 0.1, ears: true, antlers: false, tail_up: false };
            quadruped(cv, centred(cx, cy, w, 0.8), q, f, color);
        }
        // Frog: wide squat body, two eyes, bent legs.
        6 => {
            cv.ellipse(cx, cy, w * 0.4, w * 0.22, color);
            for ex in [-0.18, 0.18] {
                cv.ellipse(cx + ex * w, cy - w * 0.2, w * 0.08, w * 0.08, shade(color, 1.2));
            }
            for sx in [-1.0, 1.0] {
                cv.segment((cx + sx * w * 0.3, cy + w * 0.1), (cx + sx * w * 0.48, cy + w * 0.25), w * 0.08, shade(color, 0.6));
            }
        }
        7 => {
            let q = Quadruped { body: 0.3, legs: 0.42, head: 0.11, neck: 0.3, ears: false, antlers: false, tail_up: false };
            quadruped(cv, centred(cx, cy, w * 1.05, 0.9), q, f, color);
        }
        // Ship: hull narrowing to the keel, superstructure, mast, water band.
        8 => {
            let b = centred(cx, cy, w, 0.7);
            let (top, keel) = (b[1] + b[3] * 0.5, b[1] + b[3] * 0.85);
            cv.fill(b[0], top, b[0] + b[2], keel, color, |x, y| {
                let t = (y - top) / (keel - top);
                (x - cx).abs() <= b[2] / 2.0 * (1.0 - 0.35 * t)
            });
            cv.rect(cx - w * 0.15, b[1] + b[3] * 0.28, cx + w * 0.2, top, shade(color, 0.8));
            cv.segment((cx, b[1]), (cx, top), 1.2, TYRE);
            cv.rect(0.0, keel, cv.w as f32, cv.h as f32, [40.0, 70.0, 140.0]);
        }
        _ => vehicle(cv, centred(cx, cy, w * 1.1, 0.6), 3, (0.7, 0.98), true, color),
    }
}

/// Draws a target-category object whose bounding box is centred at
/// (cx, cy) with width `w`; returns its box `[x, y, w, h]`.
fn draw_object(cv: &mut Canvas, category: usize, cx: f32, cy: f32, w: f32, rng: &mut ChaCha8Rng) -> [f32; 4] {
    let color = vivid(rng);
    let dark = shade(color, 0.35);
    match category {
        // Person: upright figure, head on a narrow body and two legs.
        0 => {
            let h = w * 2.4;
            let (top, half) = (cy - h / 2.0, w / 2.0);
            cv.ellipse(cx, top + h * 0.11, w * 0.28, h * 0.11, shade(color, 0.9));
            cv.rect(cx - half * 0.8, top + h * 0.22, cx + half * 0.8, top + h * 0.62, color);
            cv.rect(cx - half * 0.75, top + h * 0.62, cx - half * 0.1, top + h, dark);
            cv.rect(cx + half * 0.1, top + h * 0.62, cx + half * 0.75, top + h, dark);
            [cx - half, top, w, h]
        }
        1 => {
            let b = centred(cx, cy, w, rng.gen_range(0.5..0.65));
            let wheels = rng.gen_range(2..=3);
            vehicle(cv, b, wheels, (rng.gen_range(0.2..0.5), rng.gen_range(0.7..0.95)), wheels == 3, color);
            b
        }
        // Tracked vehicle: turret with barrel, hull, long banded track.
        2 => {
            let h = w * 0.6;
            let top = cy - h / 2.0;
            cv.rect(cx - w * 0.2, top + h * 0.05, cx + w * 0.15, top + h * 0.35, shade(color, 0.8));
            cv.rect(cx + w * 0.15, top + h * 0.15, cx + w / 2.0, top + h * 0.23, shade(color, 0.6));
            cv.rect(cx - w * 0.45, top + h * 0.35, cx + w * 0.45, top + h * 0.62, color);
            cv.rect(cx - w / 2.0, top + h * 0.62, cx + w / 2.0, top + h, [30.0, 30.0, 30.0]);
            let links = 7;
            for i in 0..links {
                let x = cx - w / 2.0 + (i as f32 + 0.5) * w / links as f32;
                cv.rect(x - w * 0.025, top + h * 0.68, x + w * 0.025, top + h * 0.94, [110.0, 110.0, 110.0]);
            }
            [cx - w / 2.0, top, w, h]
        }
        // Other: an animal of random build.
        _ => {
            let b = centred(cx, cy, w, rng.gen_range(0.7..0.95));
            let q = Quadruped {
                body: rng.gen_range(0.28..0.4),
                legs: rng.gen_range(0.25..0.45),
                head: rng.gen_range(0.1..0.17),
                neck: rng.gen_range(0.1..0.3),
                ears: rng.gen_bool(0.5),
                antlers: rng.gen_bool(0.2),
                tail_up: rng.gen_bool(0.3),
            };
            let f = facing(rng);
            quadruped(cv, b, q, f, color);
            b
        }
    }
}

fn common_image(seed: u64, purpose: &str, index: usize) -> (usize, ImageU8) {
    let mut rng = stream(seed, purpose, 0, index as u64);
    let class = index % COMMON_CLASSES.len();
    let mut cv = Canvas::background(SIDE, SIDE, &mut rng, 1.0);
    let w = rng.gen_range(20.0..28.0);
    let (cx, cy) = (16.0 + rng.gen_range(-3.0..3.0), 16.0 + rng.gen_range(-3.0..3.0));
    draw_common(&mut cv, class, cx, cy, w, &mut rng);
    (class, cv.into_image())
}

fn common_set(seed: u64, purpose: &str, n: usize) -> Result<LabeledDataset> {
    let mut ds = LabeledDataset::new(COMMON_CLASSES.iter().map(|s| s.to_string()).collect());
    for i in 0..n {
        let (label, img) = common_image(seed, purpose, i);
        ds.push(label, img)?;
    }
    ds.provenance = serde_json::json!({ "generator": "common-objects", "seed": seed, "split": purpose });
    Ok(ds)
}

/// Labels for a target split following `mix`, deterministically shuffled.
fn target_labels(n: usize, mix: &[f64; 4], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let total: f64 = mix.iter().sum();
    let mut labels = Vec::with_capacity(n);
    let mut assigned = 0;
    for (k, m) in mix.iter().enumerate() {
        let count = if k == 3 { n - assigned } else { ((n as f64) * m / total).round() as usize };
        let count = count.min(n - assigned);
        labels.extend(std::iter::repeat(k).take(count));
        assigned += count;
    }
    labels.shuffle(rng);
    labels
}

/// A field-style sample: a dim, desaturated scene around one object, cut
/// out along a slightly jittered box and resized to 32×32 the way detector
/// crops are.
fn target_image(rng: &mut ChaCha8Rng, category: usize) -> Result<ImageU8> {
    let side = 64usize;
    let dim = rng.gen_range(0.45..0.9);
    let mut cv = Canvas::background(side, side, rng, dim);
    let sf = side as f32;
    let w = if category == 0 { rng.gen_range(0.15..0.25) * sf } else { rng.gen_range(0.4..0.6) * sf };
    let b = draw_object(&mut cv, category, sf / 2.0, sf / 2.0, w, rng);
    let gray = rng.gen_range(0.3..0.8f32);
    for p in cv.px.iter_mut() {
        let l = (p[0] + p[1] + p[2]) / 3.0;
        *p = p.map(|v| (v * (1.0 - gray) + l * gray) * dim);
    }
    let mut jitter = |v: f32| (v + rng.gen_range(-2.0..2.0f32)).round().max(0.0) as usize;
    let (x0, y0) = (jitter(b[0]), jitter(b[1]));
    let (x1, y1) = (jitter(b[0] + b[2]).min(side).max(x0 + 2), jitter(b[1] + b[3]).min(side).max(y0 + 2));
    let crop = cv.into_image().crop(x0, y0, x1 - x0, y1 - y0)?;
    Ok(bilinear_resize(&crop, SIDE, SIDE)?)
}

fn target_set(seed: u64, purpose: &str, n: usize, mix: &[f64; 4]) -> Result<LabeledDataset> {
    let mut order_rng = stream(seed, purpose, 1, 0);
    let labels = target_labels(n, mix, &mut order_rng);
    let mut ds = LabeledDataset::new(cedg_forge::TARGET_CATEGORIES.iter().map(|s| s.to_string()).collect());
    for (i, &label) in labels.iter().enumerate() {
        let mut rng = stream(seed, purpose, 0, i as u64);
        ds.push(label, target_image(&mut rng, label)?)?;
    }
    ds.provenance = serde_json::json!({ "generator": "target-scenes", "seed": seed, "split": purpose });
    Ok(ds)
}

fn detector_categories(table: &TopicTable) -> Vec<String> {
    let mut all: Vec<String> = table.topics.iter().flat_map(|t| t.categories.iter().cloned()).collect();
    all.sort();
    all.dedup();
    all
}

struct CorpusItem {
    image: ImageU8,
    truth: CorpusTruth,
    proposals: Vec<RegionProposal>,
}

/// One weakly labeled scene: an object (usually of the topic's category)
/// among clutter, plus what a detector might have proposed for it.
fn corpus_item(seed: u64, index: usize, cfg: &FixtureConfig, table: &TopicTable, all_cats: &[String]) -> CorpusItem {
    let map = cedg_forge::HierarchyMap::default();
    let mut rng = stream(seed, "fixture-corpus", 0, index as u64);
    let spec = &table.topics[index % table.topics.len()];
    let topic_label = map.target(&spec.topic).expect("default tables agree");
    let category = if rng.gen_bool(cfg.label_noise) {
        (topic_label + rng.gen_range(1..4)) % 4
    } else {
        topic_label
    };
    let side = rng.gen_range(48..=64usize);
    let mut cv = Canvas::background(side, side, &mut rng, 1.0);
    for _ in 0..rng.gen_range(1..=3) {
        let r = rng.gen_range(3.0..7.0);
        let (x, y) = (rng.gen_range(0.0..side as f32), rng.gen_range(0.0..side as f32));
        draw_clutter(&mut cv, rng.gen_range(0..6), x, y, r, vivid(&mut rng));
    }
    let sf = side as f32;
    let w = if category == 0 { rng.gen_range(0.15..0.25) * sf } else { rng.gen_range(0.4..0.6) * sf };
    let (cx, cy) = (rng.gen_range(0.35..0.65) * sf, rng.gen_range(0.35..0.65) * sf);
    let b = draw_object(&mut cv, category, cx, cy, w, &mut rng);
    let bbox = [b[0].round() as i64, b[1].round() as i64, b[2].round() as i64, b[3].round() as i64];

    let allowed: Vec<&String> = spec.categories.iter().collect();
    let mut proposals = Vec::new();
    let jitter = |rng: &mut ChaCha8Rng| rng.gen_range(-2..=2i64);
    let det_cat = if rng.gen_bool(0.85) {
        allowed[rng.gen_range(0..allowed.len())].clone()
    } else {
        all_cats[rng.gen_range(0..all_cats.len())].clone()
    };
    proposals.push(RegionProposal {
        x: bbox[0] + jitter(&mut rng),
        y: bbox[1] + jitter(&mut rng),
        w: (bbox[2] + jitter(&mut rng)).max(1) as u32,
        h: (bbox[3] + jitter(&mut rng)).max(1) as u32,
        category: det_cat,
        score: rng.gen_range(0.65..1.0),
    });
    for _ in 0..rng.gen_range(2..=3) {
        let (w, h) = (rng.gen_range(6..side as i64 / 2), rng.gen_range(6..side as i64 / 2));
        proposals.push(RegionProposal {
            x: rng.gen_range(-w / 3..side as i64 - w / 2),
            y: rng.gen_range(-h / 3..side as i64 - h / 2),
            w: w as u32,
            h: h as u32,
            category: all_cats[rng.gen_range(0..all_cats.len())].clone(),
            score: rng.gen_range(0.0..0.95),
        });
    }
    proposals.shuffle(&mut rng);
    let truth = CorpusTruth { image: PathBuf::new(), topic: spec.topic.clone(), category, bbox };
    CorpusItem { image: cv.into_image(), truth, proposals }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Writes the common-domain splits, the weak corpus (images, manifest,
/// proposals, ground truth) and the target validation and test splits.
pub fn make_fixtures(dir: &Path, seed: u64, cfg: &FixtureConfig) -> Result<FixtureSummary> {
    if cfg.corpus_images == 0 || cfg.val_images == 0 || cfg.common_train == 0 {
        return Err(CliError::Config("fixture sizes must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.label_noise) || cfg.target_mix.iter().any(|m| !(*m >= 0.0)) {
        return Err(CliError::Config("label noise must lie in [0, 1] and mix weights be >= 0".into()));
    }
    let paths = FixturePaths::under(dir);
    let corpus_dir = paths.manifest.parent().expect("nested path");
    let images_dir = corpus_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| io_err(&images_dir, e))?;

    let table = TopicTable::default();
    let all_cats = detector_categories(&table);
    let mut entries = Vec::new();
    let mut proposals = PrecomputedProposals::default();
    let mut truth_lines = String::new();
    let mut noisy = 0;
    for i in 0..cfg.corpus_images {
        let mut item = corpus_item(seed, i, cfg, &table, &all_cats);
        let path = images_dir.join(format!("img{i:05}.ppm"));
        item.image.save(&path)?;
        let rel = path.strip_prefix(corpus_dir).unwrap_or(&path).to_path_buf();
        item.truth.image = rel;
        let topic_label = cedg_forge::HierarchyMap::default().target(&item.truth.topic)?;
        noisy += usize::from(item.truth.category != topic_label);
        truth_lines.push_str(&serde_json::to_string(&item.truth).expect("serializes"));
        truth_lines.push('\n');
        proposals.insert(path.clone(), item.proposals);
        entries.push((path, item.truth.topic.clone()));
    }
    write_manifest(&paths.manifest, &entries)?;
    proposals.save(&paths.proposals)?;
    std::fs::write(&paths.truth, truth_lines).map_err(|e| io_err(&paths.truth, e))?;

    let val = target_set(seed, "fixture-val", cfg.val_images, &cfg.target_mix)?;
    let test = target_set(seed, "fixture-test", cfg.test_images, &cfg.target_mix)?;
    write_dataset(&val, &paths.val)?;
    write_dataset(&test, &paths.test)?;
    write_dataset(&common_set(seed, "fixture-common-train", cfg.common_train)?, &paths.common_train)?;
    write_dataset(&common_set(seed, "fixture-common-val", cfg.common_val)?, &paths.common_val)?;

    Ok(FixtureSummary {
        corpus_images: cfg.corpus_images,
        noisy_images: noisy,
        val_counts: val.counts(),
        test_counts: test.counts(),
        common_train: cfg.common_train,
        common_val: cfg.common_val,
        paths,
    })
}
