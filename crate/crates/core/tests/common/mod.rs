//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use handctx::annotation::{KeypointDetection, PersonKeypoints};
use handctx::attention::{AttentionParams, FeatureMap};
use handctx::geometry::Point2;
use handctx::tensor::Tensor;
use rand::Rng;

/// Random feasible parameters with every field away from its constraint boundary.
pub fn random_params(m: usize, k: usize, rng: &mut impl Rng) -> AttentionParams<f64> {
    let mut mat = |r: usize, c: usize| Tensor::from_fn(&[r, c], |_| rng.gen_range(-1.0..1.0));
    let w_theta = mat(m, m);
    let w_phi = mat(m, m);
    let w_g = mat(m, m);
    let w_p = mat(k, m);
    let bound = 1.0 / k as f64;
    AttentionParams {
        w_theta,
        w_phi,
        w_g,
        w_p,
        alpha: Tensor::from_fn(&[k], |_| rng.gen_range(0.1 * bound..0.9 * bound)),
        mu: Tensor::from_fn(&[k], |_| rng.gen_range(0.0..3.0)),
        sigma: Tensor::from_fn(&[k], |_| rng.gen_range(0.5..2.5)),
    }
}

pub fn random_map(h: usize, w: usize, m: usize, rng: &mut impl Rng) -> FeatureMap<f64> {
    FeatureMap::new(Tensor::from_fn(&[h, w, m], |_| rng.gen_range(-1.0..1.0))).unwrap()
}

fn mat_vec(w: &Tensor<f64>, x: &[f64]) -> Vec<f64> {
    let (r, c) = w.dims2().unwrap();
    (0..r)
        .map(|a| (0..c).map(|b| w.get(&[a, b]) * x[b]).sum())
        .collect()
}

fn grid_distance(i: usize, j: usize, w: usize) -> f64 {
    let (ri, ci) = ((i / w) as f64, (i % w) as f64);
    let (rj, cj) = ((j / w) as f64, (j % w) as f64);
    ((ri - rj).powi(2) + (ci - cj).powi(2)).sqrt()
}

/// `f(x_i, x_j) / C(x_i)` by explicit double loop, no max-subtraction.
pub fn naive_similarity(x: &FeatureMap<f64>, p: &AttentionParams<f64>) -> Vec<Vec<f64>> {
    let n = x.positions();
    let f: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let ti = mat_vec(&p.w_theta, x.position(i));
            (0..n)
                .map(|j| {
                    let pj = mat_vec(&p.w_phi, x.position(j));
                    ti.iter().zip(&pj).map(|(a, b)| a * b).sum::<f64>().exp()
                })
                .collect()
        })
        .collect();
    f.iter()
        .map(|row| {
            let c: f64 = row.iter().sum();
            row.iter().map(|v| v / c).collect()
        })
        .collect()
}

/// `p(x_j)` by direct exponentiation.
pub fn naive_parts(x: &[f64], p: &AttentionParams<f64>) -> Vec<f64> {
    let logits = mat_vec(&p.w_p, x);
    let e: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// `Σ_k α_k p_k(x_j) h_k(d_ij)` by triple loop.
pub fn naive_semantic(x: &FeatureMap<f64>, p: &AttentionParams<f64>) -> Vec<Vec<f64>> {
    let n = x.positions();
    let w = x.width();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let probs = naive_parts(x.position(j), p);
                    let d = grid_distance(i, j, w);
                    (0..p.parts())
                        .map(|k| {
                            let mu = p.mu.data()[k];
                            let s = p.sigma.data()[k];
                            p.alpha.data()[k] * probs[k] * (-(d - mu).powi(2) / (s * s)).exp()
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// `y_i = Σ_j [S + T]_{ij} W_g x_j`, one pair at a time.
pub fn naive_attention(x: &FeatureMap<f64>, p: &AttentionParams<f64>) -> Vec<Vec<f64>> {
    let n = x.positions();
    let m = x.channels();
    let s = naive_similarity(x, p);
    let t = naive_semantic(x, p);
    (0..n)
        .map(|i| {
            let mut y = vec![0.0; m];
            for j in 0..n {
                let g = mat_vec(&p.w_g, x.position(j));
                let wij = s[i][j] + t[i][j];
                for c in 0..m {
                    y[c] += wij * g[c];
                }
            }
            y
        })
        .collect()
}

/// Largest absolute difference between a feature map and nested rows.
pub fn max_abs_diff(y: &FeatureMap<f64>, rows: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in rows.iter().enumerate() {
        for (a, b) in y.position(i).iter().zip(row) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// From-definition all-points AP: integrate the precision envelope as a step
/// function of recall over [0, 1].
pub fn envelope_ap(labels_in_rank_order: &[bool], total_gt: usize) -> f64 {
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (rank, &is_tp) in labels_in_rank_order.iter().enumerate() {
        if is_tp {
            tp += 1;
        }
        points.push((tp as f64 / total_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    // p_interp(r) = max precision over points with recall >= r
    let envelope = |r: f64| {
        points
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0f64, f64::max)
    };
    let mut levels: Vec<f64> = points.iter().map(|(r, _)| *r).collect();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in levels {
        area += (r - prev) * envelope(r);
        prev = r;
    }
    area
}

/// One row of the reliability fixture: rectangle length, wrist error and
/// the expected outcome, all worked out by hand.
pub struct ReliabilityCase {
    pub length: f64,
    pub error: f64,
    pub keep: bool,
    /// Global index of the closest visible wrist.
    pub wrist: usize,
}

/// Twenty detections in one image, spaced 1000 px apart so each one's
/// closest wrist is its own. Row 18 has two equidistant wrists and row 19 an
/// invisible wrist exactly at the prediction.
pub fn reliability_fixture() -> (Vec<KeypointDetection<f64>>, Vec<PersonKeypoints<f64>>, Vec<ReliabilityCase>) {
    // (L, E, offset direction of the annotated wrist, keep)
    let rows: [(f64, f64, (f64, f64), bool); 20] = [
        (40.0, 0.0, (1.0, 0.0), true),
        (40.0, 8.0, (1.0, 0.0), true),
        (40.0, 9.0, (0.0, 1.0), false),
        (10.0, 2.0, (-1.0, 0.0), true),
        (10.0, 2.5, (0.0, -1.0), false),
        (100.0, 20.0, (0.0, 1.0), true),
        (100.0, 21.0, (1.0, 0.0), false),
        (25.0, 5.0, (0.6, 0.8), true),
        (25.0, 10.0, (0.6, 0.8), false),
        (50.0, 1.0, (-1.0, 0.0), true),
        (50.0, 15.0, (0.6, -0.8), false),
        (200.0, 39.0, (0.0, 1.0), true),
        (200.0, 41.0, (0.0, 1.0), false),
        (5.0, 1.0, (1.0, 0.0), true),
        (5.0, 1.5, (1.0, 0.0), false),
        (80.0, 16.0, (0.0, -1.0), true),
        (80.0, 16.5, (0.0, -1.0), false),
        (60.0, 0.5, (1.0, 0.0), true),
        (30.0, 5.0, (0.0, 1.0), true),
        (30.0, 10.0, (1.0, 0.0), false),
    ];
    let mut dets = Vec::new();
    let mut persons = Vec::new();
    let mut cases = Vec::new();
    let mut next_index = 0;
    let person = |wrists: Vec<Point2<f64>>, visible: Vec<bool>| PersonKeypoints {
        image_id: "fixture".into(),
        elbows: wrists.iter().map(|w| *w + Point2::new(0.0, 30.0)).collect(),
        elbow_visible: vec![true; wrists.len()],
        wrists,
        wrist_visible: visible,
    };
    for (i, &(length, error, (dx, dy), keep)) in rows.iter().enumerate() {
        let w = Point2::new(1000.0 * i as f64, 500.0);
        dets.push(KeypointDetection {
            image_id: "fixture".into(),
            w_pred: w,
            hand_points: vec![Point2::new(w.x + length, w.y + 3.0), Point2::new(w.x + length, w.y - 3.0)],
            confidence: 0.9,
        });
        let gt = Point2::new(w.x + error * dx, w.y + error * dy);
        let wrist = match i {
            18 => {
                let twin = Point2::new(w.x, w.y - error);
                persons.push(person(vec![gt, twin], vec![true, true]));
                next_index += 2;
                next_index - 2
            }
            19 => {
                persons.push(person(vec![w, gt], vec![false, true]));
                next_index += 2;
                next_index - 1
            }
            _ => {
                persons.push(person(vec![gt], vec![true]));
                next_index += 1;
                next_index - 1
            }
        };
        cases.push(ReliabilityCase { length, error, keep, wrist });
    }
    (dets, persons, cases)
}
