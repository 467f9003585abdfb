use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::scene::SyntheticScene;
use super::DetectorConfig;
use crate::attention::{attention_insert_on_tape, AttentionParams, AttentionVars, DistanceTable};
use crate::error::{Error, Result};
use crate::evaluation::DetectionResult;
use crate::geometry::AxisBox;
use crate::orientation::{orientation_loss, orientation_loss_grad, Angle};
use crate::tensor::{CustomOp, Tape, Tensor, Var};

/// Per-cell outputs: objectness logit, box offsets `dx dy dw dh`, then `sin θ`, `cos θ`.
pub const HEAD_OUTPUTS: usize = 7;
const PRIOR_PROBABILITY: f64 = 0.02;
const SMOOTH_L1_BETA: f64 = 1.0;

/// Backbone, head, and attention weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorParams {
    /// Patch embedding, `s×s×3×m` with stride `s`.
    pub conv1: Tensor<f64>,
    pub bias1: Tensor<f64>,
    /// 1×1 convolution stored as an `m×m` matrix.
    pub conv2: Tensor<f64>,
    pub bias2: Tensor<f64>,
    pub head1: Tensor<f64>,
    pub head_bias1: Tensor<f64>,
    pub head2: Tensor<f64>,
    pub head_bias2: Tensor<f64>,
    pub attention: AttentionParams<f64>,
}

const TRUNK_NAMES: [&str; 8] = ["conv1", "bias1", "conv2", "bias2", "head1", "head_bias1", "head2", "head_bias2"];

impl DetectorParams {
    pub fn init(cfg: &DetectorConfig, rng: &mut impl Rng) -> Self {
        let (s, m) = (cfg.stride(), cfg.channels);
        let mut he = |shape: &[usize], fan_in: usize| {
            let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            Tensor::from_fn(shape, |_| n.sample(rng))
        };
        let conv1 = he(&[s, s, 3, m], s * s * 3);
        let conv2 = he(&[m, m], m);
        let head1 = he(&[m, m], m);
        let mut head2 = he(&[m, HEAD_OUTPUTS], m);
        head2.data_mut().iter_mut().for_each(|v| *v *= 0.1);
        let mut head_bias2 = Tensor::zeros(&[HEAD_OUTPUTS]);
        head_bias2.data_mut()[0] = -((1.0 - PRIOR_PROBABILITY) / PRIOR_PROBABILITY).ln();
        let g = cfg.grid();
        Self {
            conv1,
            bias1: Tensor::zeros(&[m]),
            conv2,
            bias2: Tensor::zeros(&[m]),
            head1,
            head_bias1: Tensor::zeros(&[m]),
            head2,
            head_bias2,
            attention: AttentionParams::init(m, cfg.parts, (g, g), rng),
        }
    }

    /// Correctly shaped parameters with every weight zero (and unit σ).
    pub fn zeros(cfg: &DetectorConfig) -> Self {
        let (s, m) = (cfg.stride(), cfg.channels);
        Self {
            conv1: Tensor::zeros(&[s, s, 3, m]),
            bias1: Tensor::zeros(&[m]),
            conv2: Tensor::zeros(&[m, m]),
            bias2: Tensor::zeros(&[m]),
            head1: Tensor::zeros(&[m, m]),
            head_bias1: Tensor::zeros(&[m]),
            head2: Tensor::zeros(&[m, HEAD_OUTPUTS]),
            head_bias2: Tensor::zeros(&[HEAD_OUTPUTS]),
            attention: AttentionParams::zeros(m, cfg.parts),
        }
    }

    /// All tensors with stable names, trunk first, then `attn.*`.
    pub fn named(&self) -> Vec<(String, &Tensor<f64>)> {
        let trunk = [
            &self.conv1,
            &self.bias1,
            &self.conv2,
            &self.bias2,
            &self.head1,
            &self.head_bias1,
            &self.head2,
            &self.head_bias2,
        ];
        let mut out: Vec<(String, &Tensor<f64>)> = TRUNK_NAMES.iter().map(|n| n.to_string()).zip(trunk).collect();
        out.extend(self.attention.fields().into_iter().map(|(n, t)| (format!("attn.{n}"), t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<f64>> {
        let mut out = vec![
            &mut self.conv1,
            &mut self.bias1,
            &mut self.conv2,
            &mut self.bias2,
            &mut self.head1,
            &mut self.head_bias1,
            &mut self.head2,
            &mut self.head_bias2,
        ];
        out.extend(self.attention.fields_mut());
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    pub fn channels(&self) -> usize {
        self.bias1.len()
    }
}

struct ParamVars {
    conv1: Var,
    bias1: Var,
    conv2: Var,
    bias2: Var,
    head1: Var,
    head_bias1: Var,
    head2: Var,
    head_bias2: Var,
    attention: AttentionVars,
}

impl ParamVars {
    fn register(tape: &mut Tape<f64>, p: &DetectorParams) -> Self {
        Self {
            conv1: tape.leaf(p.conv1.clone()),
            bias1: tape.leaf(p.bias1.clone()),
            conv2: tape.leaf(p.conv2.clone()),
            bias2: tape.leaf(p.bias2.clone()),
            head1: tape.leaf(p.head1.clone()),
            head_bias1: tape.leaf(p.head_bias1.clone()),
            head2: tape.leaf(p.head2.clone()),
            head_bias2: tape.leaf(p.head_bias2.clone()),
            attention: AttentionVars::register(tape, &p.attention),
        }
    }

    fn gradients(&self, tape: &Tape<f64>, g: &crate::tensor::Gradients<f64>) -> DetectorParams {
        let t = |v: Var| g.get_or_zeros(tape, v);
        DetectorParams {
            conv1: t(self.conv1),
            bias1: t(self.bias1),
            conv2: t(self.conv2),
            bias2: t(self.bias2),
            head1: t(self.head1),
            head_bias1: t(self.head_bias1),
            head2: t(self.head2),
            head_bias2: t(self.head_bias2),
            attention: self.attention.gradients(tape, g),
        }
    }
}

/// Regression target of a positive cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellTarget {
    pub offsets: [f64; 4],
    pub theta: f64,
}

/// Offsets of `b` relative to the centre of cell `(row, col)`, in stride units.
pub fn encode_box(b: &AxisBox<f64>, row: usize, col: usize, stride: usize) -> [f64; 4] {
    let s = stride as f64;
    let c = b.center();
    [
        (c.x - (col as f64 + 0.5) * s) / s,
        (c.y - (row as f64 + 0.5) * s) / s,
        (b.width() / s).ln(),
        (b.height() / s).ln(),
    ]
}

pub fn decode_box(t: [f64; 4], row: usize, col: usize, stride: usize) -> AxisBox<f64> {
    let s = stride as f64;
    let cx = (col as f64 + 0.5) * s + t[0] * s;
    let cy = (row as f64 + 0.5) * s + t[1] * s;
    AxisBox::from_center(cx, cy, s * t[2].exp(), s * t[3].exp())
}

/// A scene converted to network input and per-cell targets.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub id: String,
    pub input: Tensor<f64>,
    pub targets: Vec<Option<CellTarget>>,
    pub scene: SyntheticScene,
}

pub fn image_tensor(img: &crate::annotation::RgbImage) -> Tensor<f64> {
    Tensor::from_fn(&[img.height, img.width, 3], |k| img.data[k] as f64 / 255.0 - 0.5)
}

pub fn prepare(scene: &SyntheticScene, cfg: &DetectorConfig) -> PreparedScene {
    let g = cfg.grid();
    let mut targets = vec![None; g * g];
    for h in &scene.hands {
        let (r, c) = h.cell;
        targets[r * g + c] = Some(CellTarget {
            offsets: encode_box(&h.bbox, r, c, cfg.stride()),
            theta: h.orientation.radians(),
        });
    }
    PreparedScene {
        id: scene.id.clone(),
        input: image_tensor(&scene.image),
        targets,
        scene: scene.clone(),
    }
}

fn forward(tape: &mut Tape<f64>, vars: &ParamVars, input: &Tensor<f64>, dist: &DistanceTable<f64>, cfg: &DetectorConfig) -> Result<Var> {
    let (g, m) = (cfg.grid(), cfg.channels);
    let shape = input.shape();
    if shape != [cfg.scene.image_size, cfg.scene.image_size, 3] {
        return Err(Error::dim("detector input", shape, &[cfg.scene.image_size, cfg.scene.image_size, 3]));
    }
    let x = tape.leaf(input.clone());
    let c1 = tape.conv2d(x, vars.conv1, cfg.stride(), 0)?;
    let c1 = tape.add_last(c1, vars.bias1)?;
    let c1 = tape.relu(c1);
    let c1 = tape.reshape(c1, &[g * g, m])?;
    let c2 = tape.matmul(c1, vars.conv2)?;
    let c2 = tape.add_last(c2, vars.bias2)?;
    let feat = tape.relu(c2);
    let ctx = attention_insert_on_tape(tape, feat, dist, &vars.attention, cfg.switches)?;
    let h = tape.matmul(ctx, vars.head1)?;
    let h = tape.add_last(h, vars.head_bias1)?;
    let h = tape.relu(h);
    let o = tape.matmul(h, vars.head2)?;
    tape.add_last(o, vars.head_bias2)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < SMOOTH_L1_BETA {
        (0.5 * d * d / SMOOTH_L1_BETA, d / SMOOTH_L1_BETA)
    } else {
        (d.abs() - 0.5 * SMOOTH_L1_BETA, d.signum())
    }
}

/// Dense detection loss over an `n×7` head output, normalized by the positive count.
struct DetectionLoss {
    targets: Vec<Option<CellTarget>>,
    lambda: f64,
}

impl DetectionLoss {
    fn normalizer(&self) -> f64 {
        self.targets.iter().filter(|t| t.is_some()).count().max(1) as f64
    }

    fn evaluate(&self, out: &Tensor<f64>) -> (f64, Tensor<f64>) {
        let d = out.data();
        let mut loss = 0.0;
        let mut grad = Tensor::zeros(out.shape());
        let gd = grad.data_mut();
        for (i, t) in self.targets.iter().enumerate() {
            let row = &d[i * HEAD_OUTPUTS..(i + 1) * HEAD_OUTPUTS];
            let g = &mut gd[i * HEAD_OUTPUTS..(i + 1) * HEAD_OUTPUTS];
            let y = if t.is_some() { 1.0 } else { 0.0 };
            loss += bce_with_logits(row[0], y);
            g[0] = sigmoid(row[0]) - y;
            let Some(t) = t else { continue };
            for k in 0..4 {
                let (l, dl) = smooth_l1(row[1 + k] - t.offsets[k]);
                loss += l;
                g[1 + k] = dl;
            }
            let (s, c) = (row[5], row[6]);
            let r2 = s * s + c * c;
            if self.lambda > 0.0 && r2 > 0.0 {
                let theta = s.atan2(c);
                loss += self.lambda * orientation_loss(theta, t.theta);
                let dtheta = self.lambda * orientation_loss_grad(theta, t.theta);
                g[5] = dtheta * c / r2;
                g[6] = -dtheta * s / r2;
            }
        }
        let z = self.normalizer();
        gd.iter_mut().for_each(|v| *v /= z);
        (loss / z, grad)
    }
}

impl CustomOp<f64> for DetectionLoss {
    fn name(&self) -> &'static str {
        "detection_loss"
    }

    fn backward(&self, inputs: &[&Tensor<f64>], _output: &Tensor<f64>, grad: &Tensor<f64>) -> Vec<Option<Tensor<f64>>> {
        let (_, mut g) = self.evaluate(inputs[0]);
        let up = grad.data()[0];
        g.data_mut().iter_mut().for_each(|v| *v *= up);
        vec![Some(g)]
    }
}

/// Mean loss over `batch` and its gradient with respect to every parameter.
pub fn loss_and_gradients(params: &DetectorParams, batch: &[&PreparedScene], cfg: &DetectorConfig) -> Result<(f64, DetectorParams)> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let g = cfg.grid();
    let dist = DistanceTable::build(g, g);
    let mut total = 0.0;
    let mut acc = params.zeros_like();
    for scene in batch {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, params);
        let out = forward(&mut tape, &vars, &scene.input, &dist, cfg)?;
        let loss_op = DetectionLoss {
            targets: scene.targets.clone(),
            lambda: cfg.lambda,
        };
        let (value, _) = loss_op.evaluate(tape.value(out));
        let loss = tape.custom(&[out], Tensor::scalar(value), loss_op);
        total += value;
        let grads = tape.backward(loss)?;
        let gp = vars.gradients(&tape, &grads);
        for (a, b) in acc.tensors_mut().into_iter().zip(gp.named()) {
            a.add_assign(b.1);
        }
    }
    let n = batch.len() as f64;
    for t in acc.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok((total / n, acc))
}

/// One decoded detection before it is attached to an image id.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub cell: (usize, usize),
    pub bbox: AxisBox<f64>,
    pub score: f64,
    pub orientation: Angle<f64>,
}

/// Greedy NMS: keeps the highest-scoring box and drops boxes overlapping it
/// with IoU above `iou`. Equal scores keep input order.
pub fn nms(preds: Vec<Prediction>, iou: f64) -> Vec<Prediction> {
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let mut kept: Vec<Prediction> = Vec::new();
    for i in crate::evaluation::rank_by_score(&scores) {
        if kept.iter().all(|k| k.bbox.iou(&preds[i].bbox) <= iou) {
            kept.push(preds[i].clone());
        }
    }
    kept
}

/// Decodes every cell, thresholds by score, and applies NMS.
pub fn infer(params: &DetectorParams, input: &Tensor<f64>, cfg: &DetectorConfig) -> Result<Vec<Prediction>> {
    let g = cfg.grid();
    let shape = input.shape();
    if shape.len() != 3 || shape[0] % cfg.stride() != 0 || shape[1] % cfg.stride() != 0 || shape[0] != cfg.scene.image_size {
        return Err(Error::dim("detector input", shape, &[cfg.scene.image_size, cfg.scene.image_size, 3]));
    }
    let dist = DistanceTable::build(g, g);
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let out = forward(&mut tape, &vars, input, &dist, cfg)?;
    let d = tape.value(out).data();
    let mut preds = Vec::new();
    for i in 0..g * g {
        let row = &d[i * HEAD_OUTPUTS..(i + 1) * HEAD_OUTPUTS];
        let score = sigmoid(row[0]);
        if score < cfg.score_threshold {
            continue;
        }
        let (r, c) = (i / g, i % g);
        let norm = row[5].hypot(row[6]);
        let (s, co) = if norm > 0.0 { (row[5] / norm, row[6] / norm) } else { (0.0, 1.0) };
        preds.push(Prediction {
            cell: (r, c),
            bbox: decode_box([row[1], row[2], row[3], row[4]], r, c, cfg.stride()),
            score,
            orientation: Angle::from_radians(s.atan2(co)),
        });
    }
    Ok(nms(preds, cfg.nms_iou))
}

impl Prediction {
    pub fn into_result(self, id: usize, image_id: &str) -> DetectionResult<f64> {
        DetectionResult {
            id,
            image_id: image_id.to_string(),
            bbox: self.bbox,
            score: self.score,
            orientation: Some(self.orientation),
        }
    }
}
