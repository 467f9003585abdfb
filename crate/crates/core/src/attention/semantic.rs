//! Semantic-context weights `T[i,j] = Σ_k α_k p_k(x_j) h_k(d_ij)` as one fused tape op.

use super::DistanceLevels;
use crate::scalar::Scalar;
use crate::tensor::{CustomOp, Tensor};

/// Gaussian distance prior `exp(-(d - μ)² / σ²)`.
#[inline]
pub fn distance_prior<T: Scalar>(d: T, mu: T, sigma: T) -> T {
    let z = (d - mu) / sigma;
    (-(z * z)).exp()
}

/// `h[k·L + l]`: the prior of part `k` at the `l`-th distinct distance.
fn priors<T: Scalar>(levels: &DistanceLevels<T>, mu: &[T], sigma: &[T]) -> Vec<T> {
    let mut h = Vec::with_capacity(mu.len() * levels.values.len());
    for (&m, &s) in mu.iter().zip(sigma) {
        h.extend(levels.values.iter().map(|&d| distance_prior(d, m, s)));
    }
    h
}

/// Forward pass. `probs` is `n×K` (row `j` is `p(x_j)`).
pub(crate) fn semantic_forward<T: Scalar>(
    probs: &[T],
    alpha: &[T],
    mu: &[T],
    sigma: &[T],
    levels: &DistanceLevels<T>,
    n: usize,
) -> Vec<T> {
    let kp = alpha.len();
    let nl = levels.values.len();
    let h = priors(levels, mu, sigma);
    // q[l·n + j] = Σ_k α_k p_k(x_j) h_k(d_l)
    let mut q = vec![T::zero(); nl * n];
    for k in 0..kp {
        if alpha[k] == T::zero() {
            continue;
        }
        for l in 0..nl {
            let ah = alpha[k] * h[k * nl + l];
            for (qj, pj) in q[l * n..(l + 1) * n].iter_mut().zip(probs[k..].iter().step_by(kp)) {
                *qj += ah * *pj;
            }
        }
    }
    let mut out = vec![T::zero(); n * n];
    for (k, (o, &l)) in out.iter_mut().zip(levels.index.iter()).enumerate() {
        *o = q[l as usize * n + k % n];
    }
    out
}

/// Backward rule for inputs `(probs, alpha, mu, sigma)`; distances are constant.
pub(crate) struct SemanticMix<T> {
    pub levels: DistanceLevels<T>,
    pub n: usize,
}

impl<T: Scalar> CustomOp<T> for SemanticMix<T> {
    fn name(&self) -> &'static str {
        "semantic_weights"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (probs, alpha, mu, sigma) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let n = self.n;
        let kp = alpha.len();
        let nl = self.levels.values.len();
        let p = probs.data();
        let g = grad.data();
        let two = T::of(2.0);
        let h = priors(&self.levels, mu.data(), sigma.data());

        // b[l·n + j] = Σ_i G[i,j] over the rows i at distance level l from j
        let mut b = vec![T::zero(); nl * n];
        for (k, (&gij, &l)) in g.iter().zip(self.levels.index.iter()).enumerate() {
            b[l as usize * n + k % n] += gij;
        }

        let mut dp = vec![T::zero(); n * kp];
        let mut da = vec![T::zero(); kp];
        let mut dmu = vec![T::zero(); kp];
        let mut dsig = vec![T::zero(); kp];
        let mut c = vec![T::zero(); 3 * n];
        for k in 0..kp {
            let (a, m, s) = (alpha.data()[k], mu.data()[k], sigma.data()[k]);
            let s2 = s * s;
            // Σ_i G[i,j] h, Σ_i G[i,j] h (d-μ), Σ_i G[i,j] h (d-μ)² per column j.
            c.iter_mut().for_each(|v| *v = T::zero());
            let (c0, rest) = c.split_at_mut(n);
            let (c1, c2) = rest.split_at_mut(n);
            for l in 0..nl {
                let hk = h[k * nl + l];
                let diff = self.levels.values[l] - m;
                for (j, &bl) in b[l * n..(l + 1) * n].iter().enumerate() {
                    let w = bl * hk;
                    c0[j] += w;
                    c1[j] += w * diff;
                    c2[j] += w * diff * diff;
                }
            }
            for j in 0..n {
                let pj = p[j * kp + k];
                dp[j * kp + k] = a * c0[j];
                da[k] += pj * c0[j];
                dmu[k] += a * pj * c1[j];
                dsig[k] += a * pj * c2[j];
            }
            dmu[k] *= two / s2;
            dsig[k] *= two / (s2 * s);
        }
        vec![
            Some(Tensor::new(&[n, kp], dp).expect("shape")),
            Some(Tensor::new(&[kp], da).expect("shape")),
            Some(Tensor::new(&[kp], dmu).expect("shape")),
            Some(Tensor::new(&[kp], dsig).expect("shape")),
        ]
    }
}
