//! Procedural scenes where a hand is only recognizable through its context.
//!
//! Hands and distractors are drawn identically inside their own grid cell: a
//! disc plus a short stub running to the cell border. A hand's stub continues
//! into an arm bar of the same tone; a distractor's stops at the border. Some
//! distractors borrow a hand's tone, which weakens the similarity cue, and
//! some sit next to an arm, which weakens the spatial cue.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rng::{sub_rng, Stream};
use crate::annotation::{HandAnnotation, OrientedRect, RgbImage};
use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Point2};
use crate::orientation::Angle;

/// Saturated tones so that colour is easy to pick up from a single cell.
pub const PALETTE: [[u8; 3]; 6] = [
    [230, 60, 50],
    [60, 200, 70],
    [70, 90, 235],
    [235, 215, 60],
    [200, 70, 210],
    [60, 210, 215],
];

const MAX_PLACEMENT_TRIES: usize = 200;
const MAX_SCENE_ATTEMPTS: u64 = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub image_size: usize,
    pub cell: usize,
    pub min_hands: usize,
    pub max_hands: usize,
    pub min_distractors: usize,
    pub max_distractors: usize,
    /// Probability that a distractor copies the tone of a hand in the scene.
    pub shared_tone_prob: f64,
    /// Probability that a distractor is placed next to an arm.
    pub near_arm_prob: f64,
    /// Arm length range in pixels, measured from the cell border.
    pub arm_length: (f64, f64),
    /// Uniform per-pixel noise amplitude.
    pub noise: u8,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            image_size: 96,
            cell: 8,
            min_hands: 1,
            max_hands: 3,
            min_distractors: 1,
            max_distractors: 3,
            shared_tone_prob: 0.35,
            near_arm_prob: 0.35,
            arm_length: (14.0, 22.0),
            noise: 12,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if self.cell == 0 || self.image_size == 0 || self.image_size % self.cell != 0 {
            return Err(Error::Config(format!(
                "cell size {} must divide image size {}",
                self.cell, self.image_size
            )));
        }
        if self.cell < 6 {
            return Err(Error::Config("cells must be at least 6 px wide".into()));
        }
        if self.min_hands > self.max_hands || self.min_distractors > self.max_distractors {
            return Err(Error::Config("object count ranges must satisfy min ≤ max".into()));
        }
        if self.max_hands > PALETTE.len() / 2 {
            return Err(Error::Config(format!("at most {} hands per scene", PALETTE.len() / 2)));
        }
        let g = self.grid();
        if (self.max_hands * 4 + self.max_distractors) * 2 > g * g {
            return Err(Error::Config("too many objects for the grid".into()));
        }
        for p in [self.shared_tone_prob, self.near_arm_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} is outside [0, 1]")));
            }
        }
        if !(self.arm_length.0 > 0.0 && self.arm_length.0 <= self.arm_length.1) {
            return Err(Error::Config("arm length range must be positive and ordered".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.cell
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hand {
    pub cell: (usize, usize),
    pub center: Point2<f64>,
    pub radius: f64,
    pub orientation: Angle<f64>,
    pub tone: usize,
    pub bbox: AxisBox<f64>,
    pub quad_rect: OrientedRect<f64>,
    /// Arm bar from the cell border outward.
    pub arm: (Point2<f64>, Point2<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Distractor {
    pub cell: (usize, usize),
    pub center: Point2<f64>,
    pub radius: f64,
    pub tone: usize,
    pub shares_tone: bool,
    pub near_arm: bool,
    pub bbox: AxisBox<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub id: String,
    pub image: RgbImage,
    pub hands: Vec<Hand>,
    pub distractors: Vec<Distractor>,
    /// Attempts needed before the layout was feasible (1 = first try).
    pub attempts: u64,
}

impl SyntheticScene {
    pub fn annotations(&self) -> Vec<HandAnnotation> {
        self.hands
            .iter()
            .map(|h| HandAnnotation {
                image_id: self.id.clone(),
                quad: h.quad_rect.quad(),
                wrist_side: 0,
                theta: h.orientation.radians(),
            })
            .collect()
    }
}

/// Point where the ray from `c` along unit `d` leaves the cell `[x0, x0+s] × [y0, y0+s]`.
fn exit_point(c: Point2<f64>, d: Point2<f64>, x0: f64, y0: f64, s: f64) -> Point2<f64> {
    let mut t = f64::INFINITY;
    if d.x > 0.0 {
        t = t.min((x0 + s - c.x) / d.x);
    } else if d.x < 0.0 {
        t = t.min((x0 - c.x) / d.x);
    }
    if d.y > 0.0 {
        t = t.min((y0 + s - c.y) / d.y);
    } else if d.y < 0.0 {
        t = t.min((y0 - c.y) / d.y);
    }
    c + d * t
}

fn segment_distance(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    p.distance(a + ab * t)
}

/// Cells touched by a thick segment, sampled finely along its length.
fn cells_of_segment(a: Point2<f64>, b: Point2<f64>, half_width: f64, cell: f64, grid: usize) -> Vec<(usize, usize)> {
    let steps = (a.distance(b) * 4.0).ceil() as usize + 1;
    let mut out = Vec::new();
    let perp = {
        let d = b - a;
        let n = d.norm();
        if n > 0.0 { d.perp() * (half_width / n) } else { Point2::default() }
    };
    for k in 0..=steps {
        let p = a + (b - a) * (k as f64 / steps as f64);
        for q in [p, p + perp, p - perp] {
            let (c, r) = ((q.x / cell).floor(), (q.y / cell).floor());
            if c >= 0.0 && r >= 0.0 && (c as usize) < grid && (r as usize) < grid {
                let rc = (r as usize, c as usize);
                if !out.contains(&rc) {
                    out.push(rc);
                }
            }
        }
    }
    out
}

struct Blob {
    center: Point2<f64>,
    radius: f64,
    stub_end: Point2<f64>,
    tone: usize,
}

struct Layout {
    occupied: Vec<bool>,
    arm_cells: Vec<(usize, usize)>,
    blobs: Vec<Blob>,
    /// Segment, tone, and the owning hand's cell, which the arm never paints.
    arms: Vec<(Point2<f64>, Point2<f64>, usize, (usize, usize))>,
    hands: Vec<Hand>,
    distractors: Vec<Distractor>,
}

const STUB_HALF_WIDTH: f64 = 1.1;
const ARM_HALF_WIDTH: f64 = 1.6;

fn try_layout(params: &SceneParams, rng: &mut ChaCha8Rng) -> Option<Layout> {
    let g = params.grid();
    let s = params.cell as f64;
    let n_hands = rng.gen_range(params.min_hands..=params.max_hands);
    let n_distractors = rng.gen_range(params.min_distractors..=params.max_distractors);
    let mut tones: Vec<usize> = (0..PALETTE.len()).collect();
    tones.shuffle(rng);
    let (hand_tones, free_tones) = tones.split_at(n_hands);

    let mut layout = Layout {
        occupied: vec![false; g * g],
        arm_cells: Vec::new(),
        blobs: Vec::new(),
        arms: Vec::new(),
        hands: Vec::new(),
        distractors: Vec::new(),
    };
    let blob_in_cell = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        let jitter = 0.75;
        let center = Point2::new(
            (c as f64 + 0.5) * s + rng.gen_range(-jitter..jitter),
            (r as f64 + 0.5) * s + rng.gen_range(-jitter..jitter),
        );
        let radius = rng.gen_range(0.26 * s..0.34 * s);
        (center, radius)
    };

    for &tone in hand_tones {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let (r, c) = (rng.gen_range(0..g), rng.gen_range(0..g));
            if layout.occupied[r * g + c] {
                continue;
            }
            let theta = Angle::from_radians(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
            let (center, radius) = blob_in_cell(rng, r, c);
            let fwd = theta.image_direction();
            let back = fwd * -1.0;
            let edge = exit_point(center, back, c as f64 * s, r as f64 * s, s);
            let arm_end = edge + back * rng.gen_range(params.arm_length.0..=params.arm_length.1);
            let limit = params.image_size as f64 - 1.0;
            if !(1.0..=limit).contains(&arm_end.x) || !(1.0..=limit).contains(&arm_end.y) {
                continue;
            }
            let cells: Vec<_> = cells_of_segment(edge + back * 0.3, arm_end, ARM_HALF_WIDTH, s, g)
                .into_iter()
                .filter(|&rc| rc != (r, c))
                .collect();
            if cells.iter().any(|&(rr, cc)| layout.occupied[rr * g + cc]) {
                continue;
            }
            let wrist = center + back * (radius + 1.0);
            let tip = center + fwd * radius;
            let quad_rect = OrientedRect {
                center: wrist.midpoint(tip),
                direction: fwd,
                length: wrist.distance(tip),
                width: 2.0 * radius,
            };
            let bbox = AxisBox::bounding(&quad_rect.quad().corners).expect("corners");
            if layout.hands.iter().any(|h| h.bbox.iou(&bbox) > 0.3) {
                continue;
            }
            layout.occupied[r * g + c] = true;
            for &(rr, cc) in &cells {
                layout.occupied[rr * g + cc] = true;
            }
            layout.arm_cells.extend(cells);
            layout.blobs.push(Blob { center, radius, stub_end: edge, tone });
            layout.arms.push((edge, arm_end, tone, (r, c)));
            layout.hands.push(Hand {
                cell: (r, c),
                center,
                radius,
                orientation: theta,
                tone,
                bbox,
                quad_rect,
                arm: (edge, arm_end),
            });
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }

    for _ in 0..n_distractors {
        let shares_tone = !hand_tones.is_empty() && rng.gen_bool(params.shared_tone_prob);
        let tone = if shares_tone {
            *hand_tones.choose(rng).expect("non-empty")
        } else {
            *free_tones.choose(rng).expect("palette has spare tones")
        };
        let near_arm = !layout.arm_cells.is_empty() && rng.gen_bool(params.near_arm_prob);
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let (r, c) = if near_arm {
                let &(ar, ac) = layout.arm_cells.choose(rng).expect("non-empty");
                let (dr, dc) = (rng.gen_range(-1i64..=1), rng.gen_range(-1i64..=1));
                let (r, c) = (ar as i64 + dr, ac as i64 + dc);
                if r < 0 || c < 0 || r >= g as i64 || c >= g as i64 {
                    continue;
                }
                (r as usize, c as usize)
            } else {
                (rng.gen_range(0..g), rng.gen_range(0..g))
            };
            if layout.occupied[r * g + c] {
                continue;
            }
            let adjacent_to_arm = layout
                .arm_cells
                .iter()
                .any(|&(ar, ac)| ar.abs_diff(r) <= 1 && ac.abs_diff(c) <= 1);
            if adjacent_to_arm != near_arm {
                continue;
            }
            let (center, radius) = blob_in_cell(rng, r, c);
            let dir = Angle::from_radians(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)).image_direction();
            let edge = exit_point(center, dir * -1.0, c as f64 * s, r as f64 * s, s);
            let bbox = AxisBox::from_center(center.x, center.y, 2.0 * radius, 2.0 * radius);
            if layout.hands.iter().map(|h| h.bbox).chain(layout.distractors.iter().map(|d| d.bbox)).any(|b| b.iou(&bbox) > 0.3) {
                continue;
            }
            layout.occupied[r * g + c] = true;
            layout.blobs.push(Blob { center, radius, stub_end: edge, tone });
            layout.distractors.push(Distractor {
                cell: (r, c),
                center,
                radius,
                tone,
                shares_tone,
                near_arm,
                bbox,
            });
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    Some(layout)
}

fn render(params: &SceneParams, layout: &Layout, rng: &mut ChaCha8Rng) -> RgbImage {
    let size = params.image_size;
    let base: u8 = rng.gen_range(70..=110);
    let mut img = RgbImage::filled(size, size, [base; 3]);
    let noise = params.noise as i16;
    for v in img.data.iter_mut() {
        *v = (*v as i16 + rng.gen_range(-noise..=noise)).clamp(0, 255) as u8;
    }
    for y in 0..size {
        for x in 0..size {
            let p = Point2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut tone = None;
            let here = (y / params.cell, x / params.cell);
            for &(a, b, t, own) in &layout.arms {
                if here != own && segment_distance(p, a, b) <= ARM_HALF_WIDTH {
                    tone = Some(t);
                }
            }
            for blob in &layout.blobs {
                if p.distance(blob.center) <= blob.radius || segment_distance(p, blob.center, blob.stub_end) <= STUB_HALF_WIDTH {
                    tone = Some(blob.tone);
                }
            }
            if let Some(t) = tone {
                let jitter = rng.gen_range(-noise / 2..=noise / 2);
                let rgb = PALETTE[t].map(|v| (v as i16 + jitter).clamp(0, 255) as u8);
                img.set(x, y, rgb);
            }
        }
    }
    img
}

fn generate_on(params: &SceneParams, seed: u64, stream: Stream, index: usize, id: String) -> Result<SyntheticScene> {
    params.validate()?;
    for attempt in 0..MAX_SCENE_ATTEMPTS {
        let mut rng = sub_rng(seed, stream, ((index as u64) << 8) | attempt);
        if let Some(layout) = try_layout(params, &mut rng) {
            let image = render(params, &layout, &mut rng);
            return Ok(SyntheticScene {
                id,
                image,
                hands: layout.hands,
                distractors: layout.distractors,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::Config(format!("could not place objects for {id} after {MAX_SCENE_ATTEMPTS} attempts")))
}

/// Scene `index` of the training set generated from `seed`.
///
/// Each scene draws from its own sub-stream, so scene `i` does not depend on
/// how many scenes are generated. Infeasible layouts are retried on a fresh
/// sub-stream and the attempt count is recorded on the scene.
pub fn generate_scene(params: &SceneParams, seed: u64, index: usize) -> Result<SyntheticScene> {
    generate_on(params, seed, Stream::SceneGen, index, format!("scene{index:05}"))
}

pub fn generate_scenes(n: usize, seed: u64, params: &SceneParams) -> Result<Vec<SyntheticScene>> {
    if n == 0 {
        return Err(Error::Usage("scene count must be at least 1".into()));
    }
    (0..n).map(|i| generate_scene(params, seed, i)).collect()
}

/// Held-out scenes drawn from a stream disjoint from the training scenes.
pub fn generate_val_scenes(n: usize, seed: u64, params: &SceneParams) -> Result<Vec<SyntheticScene>> {
    if n == 0 {
        return Err(Error::Usage("scene count must be at least 1".into()));
    }
    (0..n)
        .map(|i| generate_on(params, seed, Stream::ValScenes, i, format!("val{i:05}")))
        .collect()
}
