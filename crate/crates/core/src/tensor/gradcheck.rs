//! Central finite differences, for checking backward rules.

use super::Tensor;
use crate::scalar::Scalar;

/// Numerical gradient of `f` at `x` by central differences with step `eps`.
pub fn central_difference<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    eps: T,
) -> Tensor<T> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for k in 0..x.len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[k] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[k] = orig;
        out.data_mut()[k] = (plus - minus) / (eps + eps);
    }
    out
}

/// Norm-wise relative error `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`.
///
/// Returns 0 when both gradients vanish (below `1e-12` in norm), so parameters
/// that legitimately receive no gradient do not register as failures.
pub fn relative_error<T: Scalar>(analytic: &Tensor<T>, numeric: &Tensor<T>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&mut analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| a.as_f64() - n.as_f64()));
    let scale = norm(&mut analytic.data().iter().map(|v| v.as_f64()))
        .max(norm(&mut numeric.data().iter().map(|v| v.as_f64())));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Settings for a finite-difference comparison.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    pub tolerance: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-5,
        }
    }
}

impl GradCheck {
    /// Relative error between `analytic` and the central difference of `f` at `x`.
    pub fn error<T: Scalar>(&self, f: impl FnMut(&Tensor<T>) -> T, x: &Tensor<T>, analytic: &Tensor<T>) -> f64 {
        let numeric = central_difference(f, x, T::of(self.eps));
        relative_error(analytic, &numeric)
    }
}
