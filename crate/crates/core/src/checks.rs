//! Finite-difference gradient checks for the attention module, the
//! orientation loss and the toy detector's full training loss.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{attention_on_tape, grid_diagonal, AttentionParams, AttentionVars, ContextSwitches, DistanceTable};
use crate::detector::{generate_scenes, loss_and_gradients, prepare, DetectorConfig, DetectorParams, PreparedScene, SceneParams};
use crate::error::{Error, Result};
use crate::orientation::{orientation_loss, orientation_loss_grad};
use crate::tensor::{central_difference, relative_error, Fault, Tape, Tensor};

/// Largest `h·w·m` accepted by [`attention_gradients`].
pub const MAX_CHECK_SIZE: usize = 4096;
pub const ATTENTION_TOLERANCE: f64 = 1e-5;
pub const DETECTOR_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub group: String,
    pub error: f64,
    pub tolerance: f64,
}

impl GroupError {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientReport {
    pub groups: Vec<GroupError>,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(GroupError::passed)
    }

    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.error).fold(0.0, f64::max)
    }

    pub fn extend(&mut self, other: GradientReport) {
        self.groups.extend(other.groups);
    }

    /// One `group error tolerance status` line per group.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            let status = if g.passed() { "PASS" } else { "FAIL" };
            let _ = writeln!(s, "{:<24} {:.3e} (tol {:.0e}) {status}", g.group, g.error, g.tolerance);
        }
        s
    }

    fn push(&mut self, group: impl Into<String>, error: f64, tolerance: f64) {
        self.groups.push(GroupError {
            group: group.into(),
            error,
            tolerance,
        });
    }
}

/// Random parameters kept clear of the `α` and `σ` bounds.
fn random_attention_params(m: usize, k: usize, grid: (usize, usize), rng: &mut impl Rng) -> AttentionParams<f64> {
    let mut mat = |r: usize, c: usize| Tensor::from_fn(&[r, c], |_| rng.gen_range(-1.0..1.0));
    let (w_theta, w_phi, w_g, w_p) = (mat(m, m), mat(m, m), mat(m, m), mat(k, m));
    let reach = grid_diagonal(grid.0, grid.1) / 2.0 + 1.0;
    let bound = 1.0 / k as f64;
    AttentionParams {
        w_theta,
        w_phi,
        w_g,
        w_p,
        alpha: Tensor::from_fn(&[k], |_| rng.gen_range(0.1 * bound..0.9 * bound)),
        mu: Tensor::from_fn(&[k], |_| rng.gen_range(0.0..reach)),
        sigma: Tensor::from_fn(&[k], |_| rng.gen_range(0.5..reach + 0.5)),
    }
}

/// Compares the analytic gradients of `Σ R ⊙ (X + Y)` (random `R`) with
/// central differences for the input and all seven parameter groups.
///
/// A `fault` corrupts the tape used for the analytic pass only.
pub fn attention_gradients(h: usize, w: usize, m: usize, k: usize, seed: u64, fault: Option<Fault>) -> Result<GradientReport> {
    if h == 0 || w == 0 || m == 0 || k == 0 {
        return Err(Error::Usage("h, w, m and K must all be at least 1".into()));
    }
    if h * w * m > MAX_CHECK_SIZE {
        return Err(Error::Usage(format!(
            "h·w·m = {} exceeds {MAX_CHECK_SIZE}; finite differences would take too long, use a smaller map",
            h * w * m
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[h * w, m], |_| rng.gen_range(-1.0..1.0));
    let params = random_attention_params(m, k, (h, w), &mut rng);
    let probe = Tensor::from_fn(&[h * w, m], |_| rng.gen_range(-1.0..1.0));
    let dist = DistanceTable::build(h, w);

    let value_and_grads = |x: &Tensor<f64>, p: &AttentionParams<f64>, want: bool| -> Result<(f64, Option<(Tensor<f64>, AttentionParams<f64>)>)> {
        let mut tape = match fault.filter(|_| want) {
            Some(f) => Tape::with_fault(f),
            None => Tape::new(),
        };
        let xv = tape.leaf(x.clone());
        let vars = AttentionVars::register(&mut tape, p);
        let y = attention_on_tape(&mut tape, xv, &dist, &vars, ContextSwitches::FULL)?;
        let out = tape.add(xv, y)?;
        let r = tape.leaf(probe.clone());
        let prod = tape.mul(out, r)?;
        let loss = tape.sum(prod);
        let value = tape.value(loss).item().expect("scalar loss");
        if !want {
            return Ok((value, None));
        }
        let g = tape.backward(loss)?;
        Ok((value, Some((g.get_or_zeros(&tape, xv), vars.gradients(&tape, &g)))))
    };

    let (_, grads) = value_and_grads(&x, &params, true)?;
    let (gx, gp) = grads.expect("gradients requested");
    let mut report = GradientReport::default();
    let numeric = central_difference(|t| value_and_grads(t, &params, false).map_or(f64::NAN, |v| v.0), &x, EPS);
    report.push("x", relative_error(&gx, &numeric), ATTENTION_TOLERANCE);
    for (idx, (name, analytic)) in gp.fields().into_iter().enumerate() {
        let base = params.fields()[idx].1.clone();
        let numeric = central_difference(
            |t| {
                let mut q = params.clone();
                *q.fields_mut()[idx] = t.clone();
                value_and_grads(&x, &q, false).map_or(f64::NAN, |v| v.0)
            },
            &base,
            EPS,
        );
        report.push(name, relative_error(analytic, &numeric), ATTENTION_TOLERANCE);
    }
    Ok(report)
}

/// Checks the orientation loss derivative on random angle pairs away from
/// its two kinks (wrapped difference 0 and π). Any `fault` flips the sign
/// of the first analytic derivative.
pub fn orientation_gradients(seed: u64, pairs: usize, fault: Option<Fault>) -> GradientReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = std::f64::consts::PI;
    let mut analytic = Vec::with_capacity(pairs);
    let mut numeric = Vec::with_capacity(pairs);
    while analytic.len() < pairs {
        let target = rng.gen_range(-pi..pi);
        let theta = rng.gen_range(-3.0 * pi..3.0 * pi);
        let d = theta - target;
        let wrapped = d.sin().atan2(d.cos()).abs();
        if wrapped < 0.05 || wrapped > pi - 0.05 {
            continue;
        }
        analytic.push(orientation_loss_grad(theta, target));
        numeric.push((orientation_loss(theta + EPS, target) - orientation_loss(theta - EPS, target)) / (2.0 * EPS));
    }
    if fault.is_some() && !analytic.is_empty() {
        analytic[0] = -analytic[0];
    }
    let a = Tensor::new(&[analytic.len()], analytic).expect("vector");
    let n = Tensor::new(&[numeric.len()], numeric).expect("vector");
    let mut report = GradientReport::default();
    report.push("orientation_loss", relative_error(&a, &n), ATTENTION_TOLERANCE);
    report
}

/// A small detector configuration whose full loss is cheap enough to
/// difference parameter by parameter.
pub fn small_detector_config(seed: u64) -> DetectorConfig {
    DetectorConfig {
        scene: SceneParams {
            image_size: 32,
            cell: 8,
            min_hands: 1,
            max_hands: 1,
            min_distractors: 1,
            max_distractors: 1,
            arm_length: (4.0, 8.0),
            ..SceneParams::default()
        },
        channels: 4,
        parts: 2,
        lambda: 0.5,
        seed,
        train_scenes: 2,
        val_scenes: 1,
        ..DetectorConfig::default()
    }
}

/// Compares the analytic gradient of the full detector loss on a frozen
/// two-scene batch with central differences, for every parameter tensor.
pub fn detector_gradients(seed: u64) -> Result<GradientReport> {
    let cfg = small_detector_config(seed);
    let scenes: Vec<PreparedScene> = generate_scenes(2, seed, &cfg.scene)?.iter().map(|s| prepare(s, &cfg)).collect();
    let batch: Vec<&PreparedScene> = scenes.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut params = DetectorParams::init(&cfg, &mut rng);
    // let every attention parameter carry gradient
    params.attention = random_attention_params(cfg.channels, cfg.parts, (cfg.grid(), cfg.grid()), &mut rng);
    let (_, grads) = loss_and_gradients(&params, &batch, &cfg)?;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Tensor<f64>> = grads.named().into_iter().map(|(_, t)| t.clone()).collect();
    let mut report = GradientReport::default();
    for (idx, name) in names.iter().enumerate() {
        let base = params.named()[idx].1.clone();
        let numeric = central_difference(
            |t| {
                let mut q = params.clone();
                *q.tensors_mut()[idx] = t.clone();
                loss_and_gradients(&q, &batch, &cfg).map_or(f64::NAN, |v| v.0)
            },
            &base,
            EPS,
        );
        report.push(name.clone(), relative_error(&analytic[idx], &numeric), DETECTOR_TOLERANCE);
    }
    Ok(report)
}
