//! Contextual attention: non-local pooling weighted by feature similarity and
//! by learned spatial relations to part categories.
//!
//! For a feature map `X` (`h×w×m`) with position vectors `x_i`, the module
//! produces `Y` of the same shape with
//!
//! ```text
//! y_i = Σ_j ( S[i,j] + T[i,j] ) · W_g x_j
//! S[i,j] = softmax_j( (W_θ x_i)ᵀ (W_φ x_j) )
//! T[i,j] = Σ_k α_k · softmax(W_p x_j)_k · exp(-(d_ij - μ_k)² / σ_k²)
//! ```
//!
//! where `d_ij` is the Euclidean distance between grid positions `i` and `j`
//! measured in feature cells. Positions are indexed row-major.
//!
//! The plain functions ([`similarity_weights`], [`semantic_weights`],
//! [`attention_forward`], [`attention_insert`]) evaluate without recording
//! gradients. [`AttentionVars`] and [`attention_on_tape`] build the same
//! computation on a [`Tape`] for training and gradient checks.

mod params;
mod semantic;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

pub use params::{grid_diagonal, AttentionParams, DEFAULT_PARTS, SIGMA_MIN};
pub use semantic::distance_prior;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Tape, Tensor, Var};
use semantic::{semantic_forward, SemanticMix};

/// An `h×w×m` activation map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    tensor: Tensor<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        match tensor.shape() {
            [h, w, m] if *h >= 1 && *w >= 1 && *m >= 1 => {}
            s => return Err(Error::dim("feature map (h×w×m, all ≥ 1)", s, &[1, 1, 1])),
        }
        if !tensor.is_finite() {
            return Err(Error::Numeric("feature map contains non-finite values".into()));
        }
        Ok(Self { tensor })
    }

    /// Builds a map from an `(h·w)×m` matrix of position vectors.
    pub fn from_positions(h: usize, w: usize, matrix: Tensor<T>) -> Result<Self> {
        let (_, m) = matrix.dims2()?;
        Self::new(matrix.reshaped(&[h, w, m])?)
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn positions(&self) -> usize {
        self.height() * self.width()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    /// Feature vector `x_i` at row-major position `i`.
    pub fn position(&self, i: usize) -> &[T] {
        let m = self.channels();
        &self.tensor.data()[i * m..(i + 1) * m]
    }

    /// The map as an `(h·w)×m` matrix.
    pub fn to_positions(&self) -> Tensor<T> {
        self.tensor
            .clone()
            .reshaped(&[self.positions(), self.channels()])
            .expect("same element count")
    }
}

/// Pairwise Euclidean distances between the positions of an `h×w` grid.
///
/// Also keeps the distinct distances and, per pair, the index of its
/// distance among them, so per-distance quantities are computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTable<T> {
    height: usize,
    width: usize,
    table: Tensor<T>,
    levels: DistanceLevels<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct DistanceLevels<T> {
    pub values: Vec<T>,
    pub index: Arc<Vec<u32>>,
}

impl<T: Scalar> DistanceTable<T> {
    pub fn build(height: usize, width: usize) -> Self {
        let n = height * width;
        let squared = |k: usize| {
            let (i, j) = (k / n, k % n);
            let dr = (i / width).abs_diff(j / width);
            let dc = (i % width).abs_diff(j % width);
            dr * dr + dc * dc
        };
        let mut distinct: Vec<usize> = (0..n * n).map(squared).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let index = (0..n * n)
            .map(|k| distinct.binary_search(&squared(k)).expect("listed") as u32)
            .collect();
        let values: Vec<T> = distinct.iter().map(|&d2| T::of((d2 as f64).sqrt())).collect();
        let table = Tensor::from_fn(&[n, n], |k| values[distinct.binary_search(&squared(k)).expect("listed")]);
        Self {
            height,
            width,
            table,
            levels: DistanceLevels {
                values,
                index: Arc::new(index),
            },
        }
    }

    pub(crate) fn levels(&self) -> &DistanceLevels<T> {
        &self.levels
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.table.data()[i * self.positions() + j]
    }

    pub fn as_tensor(&self) -> &Tensor<T> {
        &self.table
    }
}

/// Row-major distance table for an `h×w` grid.
pub fn build_distance_table<T: Scalar>(h: usize, w: usize) -> DistanceTable<T> {
    DistanceTable::build(h, w)
}

/// Which pooling terms contribute to `Y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextSwitches {
    pub similarity: bool,
    pub semantic: bool,
}

impl ContextSwitches {
    pub const FULL: Self = Self {
        similarity: true,
        semantic: true,
    };
    pub const NONE: Self = Self {
        similarity: false,
        semantic: false,
    };

    pub fn any(self) -> bool {
        self.similarity || self.semantic
    }
}

impl Default for ContextSwitches {
    fn default() -> Self {
        Self::FULL
    }
}

/// Attention parameters registered as leaves on a tape.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_theta: Var,
    pub w_phi: Var,
    pub w_g: Var,
    pub w_p: Var,
    pub alpha: Var,
    pub mu: Var,
    pub sigma: Var,
}

impl AttentionVars {
    pub fn register<T: Scalar>(tape: &mut Tape<T>, params: &AttentionParams<T>) -> Self {
        Self {
            w_theta: tape.leaf(params.w_theta.clone()),
            w_phi: tape.leaf(params.w_phi.clone()),
            w_g: tape.leaf(params.w_g.clone()),
            w_p: tape.leaf(params.w_p.clone()),
            alpha: tape.leaf(params.alpha.clone()),
            mu: tape.leaf(params.mu.clone()),
            sigma: tape.leaf(params.sigma.clone()),
        }
    }

    pub fn vars(&self) -> [Var; 7] {
        [
            self.w_theta,
            self.w_phi,
            self.w_g,
            self.w_p,
            self.alpha,
            self.mu,
            self.sigma,
        ]
    }

    /// Gradients packed into the parameter layout (zeros where unreachable).
    pub fn gradients<T: Scalar>(&self, tape: &Tape<T>, grads: &Gradients<T>) -> AttentionParams<T> {
        let g = |v: Var| grads.get_or_zeros(tape, v);
        AttentionParams {
            w_theta: g(self.w_theta),
            w_phi: g(self.w_phi),
            w_g: g(self.w_g),
            w_p: g(self.w_p),
            alpha: g(self.alpha),
            mu: g(self.mu),
            sigma: g(self.sigma),
        }
    }
}

fn check_channels<T: Scalar>(x: &[usize], params: &AttentionParams<T>) -> Result<()> {
    let m = params.channels();
    if x.last() != Some(&m) || params.w_p.shape().get(1) != Some(&m) {
        return Err(Error::dim("attention channels", x, params.w_theta.shape()));
    }
    Ok(())
}

/// Row-normalized similarity weights `S` (`n×n`) from an `n×m` position matrix.
pub fn similarity_on_tape<T: Scalar>(tape: &mut Tape<T>, x: Var, vars: &AttentionVars) -> Result<Var> {
    let wt = tape.transpose(vars.w_theta)?;
    let wf = tape.transpose(vars.w_phi)?;
    let theta = tape.matmul(x, wt)?;
    let phi = tape.matmul(x, wf)?;
    let phi_t = tape.transpose(phi)?;
    let logits = tape.matmul(theta, phi_t)?;
    if !tape.value(logits).is_finite() {
        return Err(Error::Numeric("similarity logits are not finite".into()));
    }
    tape.softmax_rows(logits)
}

/// Part probabilities `p(x_j)` as an `n×K` matrix.
pub fn part_probabilities_on_tape<T: Scalar>(tape: &mut Tape<T>, x: Var, vars: &AttentionVars) -> Result<Var> {
    let wp_t = tape.transpose(vars.w_p)?;
    let logits = tape.matmul(x, wp_t)?;
    tape.softmax_rows(logits)
}

/// Semantic-context weights `T` (`n×n`).
pub fn semantic_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    dist: &DistanceTable<T>,
    vars: &AttentionVars,
) -> Result<Var> {
    let n = tape.shape(x)[0];
    if dist.positions() != n {
        return Err(Error::dim("distance table vs feature grid", &[dist.positions()], &[n]));
    }
    if let Some(s) = tape.value(vars.sigma).data().iter().find(|&&s| s <= T::zero()) {
        return Err(Error::Constraint(format!("sigma {s} must be positive")));
    }
    let probs = part_probabilities_on_tape(tape, x, vars)?;
    let out = semantic_forward(
        tape.value(probs).data(),
        tape.value(vars.alpha).data(),
        tape.value(vars.mu).data(),
        tape.value(vars.sigma).data(),
        dist.levels(),
        n,
    );
    let out = Tensor::new(&[n, n], out)?;
    Ok(tape.custom(
        &[probs, vars.alpha, vars.mu, vars.sigma],
        out,
        SemanticMix {
            levels: dist.levels().clone(),
            n,
        },
    ))
}

/// Contextual map `Y = (S + T)·G` as an `n×m` matrix, with either term switchable.
///
/// With both switches off this returns a zero matrix of the right shape.
pub fn attention_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    dist: &DistanceTable<T>,
    vars: &AttentionVars,
    switches: ContextSwitches,
) -> Result<Var> {
    let (n, m) = tape.value(x).dims2()?;
    let wm = tape.shape(vars.w_g).to_vec();
    if wm != [m, m] || tape.shape(vars.w_theta) != [m, m] || tape.shape(vars.w_p).get(1) != Some(&m) {
        return Err(Error::dim("attention channels", &[n, m], &wm));
    }
    let weights = match (switches.similarity, switches.semantic) {
        (true, true) => {
            let s = similarity_on_tape(tape, x, vars)?;
            let t = semantic_on_tape(tape, x, dist, vars)?;
            Some(tape.add(s, t)?)
        }
        (true, false) => Some(similarity_on_tape(tape, x, vars)?),
        (false, true) => Some(semantic_on_tape(tape, x, dist, vars)?),
        (false, false) => None,
    };
    match weights {
        Some(wts) => {
            let wg_t = tape.transpose(vars.w_g)?;
            let g = tape.matmul(x, wg_t)?;
            tape.matmul(wts, g)
        }
        None => Ok(tape.leaf(Tensor::zeros(&[n, m]))),
    }
}

fn with_tape<T: Scalar, R>(
    x: &FeatureMap<T>,
    params: &AttentionParams<T>,
    f: impl FnOnce(&mut Tape<T>, Var, &AttentionVars) -> Result<R>,
) -> Result<R> {
    check_channels(x.tensor().shape(), params)?;
    let mut tape = Tape::new();
    let xv = tape.leaf(x.to_positions());
    let vars = AttentionVars::register(&mut tape, params);
    f(&mut tape, xv, &vars)
}

/// `S[i,j] = f(x_i, x_j) / C(x_i)`; each row sums to one.
pub fn similarity_weights<T: Scalar>(x: &FeatureMap<T>, params: &AttentionParams<T>) -> Result<Tensor<T>> {
    with_tape(x, params, |tape, xv, vars| {
        let s = similarity_on_tape(tape, xv, vars)?;
        Ok(tape.value(s).clone())
    })
}

/// `T[i,j] = Σ_k α_k p_k(x_j) h_k(d_ij)`.
pub fn semantic_weights<T: Scalar>(
    x: &FeatureMap<T>,
    dist: &DistanceTable<T>,
    params: &AttentionParams<T>,
) -> Result<Tensor<T>> {
    params.check_sigma()?;
    with_tape(x, params, |tape, xv, vars| {
        let t = semantic_on_tape(tape, xv, dist, vars)?;
        Ok(tape.value(t).clone())
    })
}

/// Contextual feature map `Y` with both pooling terms.
pub fn attention_forward<T: Scalar>(x: &FeatureMap<T>, params: &AttentionParams<T>) -> Result<FeatureMap<T>> {
    let dist = DistanceTable::build(x.height(), x.width());
    let y = with_tape(x, params, |tape, xv, vars| {
        let y = attention_on_tape(tape, xv, &dist, vars, ContextSwitches::FULL)?;
        Ok(tape.value(y).clone())
    })?;
    FeatureMap::from_positions(x.height(), x.width(), y)
}

/// Residual insertion `X + Y`.
pub fn attention_insert<T: Scalar>(x: &FeatureMap<T>, params: &AttentionParams<T>) -> Result<FeatureMap<T>> {
    let y = attention_forward(x, params)?;
    let out = x.tensor().zip_map(y.tensor(), |a, b| a + b)?;
    FeatureMap::new(out)
}

/// Residual insertion on a tape: returns `x + Y` as an `n×m` matrix.
pub fn attention_insert_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    dist: &DistanceTable<T>,
    vars: &AttentionVars,
    switches: ContextSwitches,
) -> Result<Var> {
    if !switches.any() {
        return Ok(x);
    }
    let y = attention_on_tape(tape, x, dist, vars, switches)?;
    tape.add(x, y)
}

/// Writes an `n×n` weight matrix (e.g. `S` or `T`) as CSV, one row per query position.
pub fn write_weights_csv<T: Scalar>(weights: &Tensor<T>, path: &Path) -> Result<()> {
    let (r, c) = weights.dims2()?;
    let mut out = String::new();
    for i in 0..r {
        let row: Vec<String> = weights.data()[i * c..(i + 1) * c]
            .iter()
            .map(|v| v.as_f64().to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
