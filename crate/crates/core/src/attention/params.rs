use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower bound applied to every `sigma_k` by [`AttentionParams::project_constraints`].
pub const SIGMA_MIN: f64 = 1e-3;

/// Default number of part categories.
pub const DEFAULT_PARTS: usize = 6;

const MAGIC: &[u8; 8] = b"CTXATTN\0";
const VERSION: u32 = 1;

/// Learnable parameters of the contextual attention module.
///
/// `w_theta`, `w_phi` and `w_g` are `m×m`, `w_p` is `K×m`, and `alpha`,
/// `mu`, `sigma` hold one entry per part category. `mu` and `sigma` are in
/// feature-grid cells.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub w_theta: Tensor<T>,
    pub w_phi: Tensor<T>,
    pub w_g: Tensor<T>,
    pub w_p: Tensor<T>,
    pub alpha: Tensor<T>,
    pub mu: Tensor<T>,
    pub sigma: Tensor<T>,
}

/// Largest distance between two positions of an `h×w` grid.
pub fn grid_diagonal(h: usize, w: usize) -> f64 {
    let dh = h.saturating_sub(1) as f64;
    let dw = w.saturating_sub(1) as f64;
    (dh * dh + dw * dw).sqrt()
}

fn xavier_normal<T: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<T> {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(&[rows, cols], |_| T::of(normal.sample(rng)))
}

impl<T: Scalar> AttentionParams<T> {
    /// Initial parameters for an `m`-channel map on an `h×w` grid with `parts` categories.
    ///
    /// Weight matrices are Xavier-normal. `mu` is evenly spaced over
    /// `[0, diag/2]`, `sigma` starts at `diag/4` and `alpha` at `1/(2K)`.
    pub fn init(m: usize, parts: usize, grid: (usize, usize), rng: &mut impl Rng) -> Self {
        assert!(m >= 1 && parts >= 1, "m and K must be positive");
        let diag = grid_diagonal(grid.0, grid.1);
        let sigma0 = if diag > 0.0 { diag / 4.0 } else { 1.0 };
        let mu = Tensor::from_fn(&[parts], |k| {
            if parts == 1 {
                T::zero()
            } else {
                T::of(k as f64 / (parts - 1) as f64 * diag / 2.0)
            }
        });
        Self {
            w_theta: xavier_normal(m, m, rng),
            w_phi: xavier_normal(m, m, rng),
            w_g: xavier_normal(m, m, rng),
            w_p: xavier_normal(parts, m, rng),
            alpha: Tensor::full(&[parts], T::of(0.5 / parts as f64)),
            mu,
            sigma: Tensor::full(&[parts], T::of(sigma0)),
        }
    }

    /// All-zero parameters with unit `sigma`; mostly useful in tests.
    pub fn zeros(m: usize, parts: usize) -> Self {
        Self {
            w_theta: Tensor::zeros(&[m, m]),
            w_phi: Tensor::zeros(&[m, m]),
            w_g: Tensor::zeros(&[m, m]),
            w_p: Tensor::zeros(&[parts, m]),
            alpha: Tensor::zeros(&[parts]),
            mu: Tensor::zeros(&[parts]),
            sigma: Tensor::full(&[parts], T::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.w_theta.shape()[0]
    }

    pub fn parts(&self) -> usize {
        self.alpha.len()
    }

    /// Field tensors in serialization order.
    pub fn fields(&self) -> [(&'static str, &Tensor<T>); 7] {
        [
            ("w_theta", &self.w_theta),
            ("w_phi", &self.w_phi),
            ("w_g", &self.w_g),
            ("w_p", &self.w_p),
            ("alpha", &self.alpha),
            ("mu", &self.mu),
            ("sigma", &self.sigma),
        ]
    }

    pub fn fields_mut(&mut self) -> [&mut Tensor<T>; 7] {
        [
            &mut self.w_theta,
            &mut self.w_phi,
            &mut self.w_g,
            &mut self.w_p,
            &mut self.alpha,
            &mut self.mu,
            &mut self.sigma,
        ]
    }

    /// Checks shapes against each other and the `0 ≤ α_k ≤ 1/K`, `σ_k > 0` constraints.
    pub fn validate(&self) -> Result<()> {
        let m = self.channels();
        let k = self.parts();
        for (name, t) in self.fields() {
            let want: &[usize] = match name {
                "w_theta" | "w_phi" | "w_g" => &[m, m],
                "w_p" => &[k, m],
                _ => &[k],
            };
            if t.shape() != want {
                return Err(Error::dim("attention parameter shape", t.shape(), want));
            }
            if !t.is_finite() {
                return Err(Error::Numeric(format!("attention parameter {name} is not finite")));
            }
        }
        let bound = T::one() / T::of(k as f64);
        if let Some(a) = self.alpha.data().iter().find(|&&a| a < T::zero() || a > bound) {
            return Err(Error::Constraint(format!("alpha {a} outside [0, 1/K]")));
        }
        self.check_sigma()
    }

    pub(crate) fn check_sigma(&self) -> Result<()> {
        match self.sigma.data().iter().find(|&&s| s <= T::zero()) {
            Some(s) => Err(Error::Constraint(format!("sigma {s} must be positive"))),
            None => Ok(()),
        }
    }

    /// Clamps `alpha` to `[0, 1/K]` and `sigma` to `[SIGMA_MIN, ∞)`.
    pub fn project_constraints(&self) -> Self {
        let mut out = self.clone();
        out.project_in_place();
        out
    }

    pub fn project_in_place(&mut self) {
        let bound = T::one() / T::of(self.parts() as f64);
        for a in self.alpha.data_mut() {
            *a = a.max(T::zero()).min(bound);
        }
        let floor = T::of(SIGMA_MIN);
        for s in self.sigma.data_mut() {
            *s = s.max(floor);
        }
    }

    /// Writes the versioned binary container.
    ///
    /// Layout: 8-byte magic `CTXATTN\0`, then `u32` version, `u32` K and
    /// `u32` m (little endian), then every field of [`AttentionParams::fields`]
    /// in order as row-major little-endian `f64`.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.parts() as u32).to_le_bytes())?;
        w.write_all(&(self.channels() as u32).to_le_bytes())?;
        for (_, t) in self.fields() {
            for v in t.data() {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let fmt = |e: std::io::Error| Error::Format(format!("truncated attention parameters: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an attention parameter file (bad magic)".into()));
        }
        let mut word = [0u8; 4];
        let mut next_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut word).map_err(fmt)?;
            Ok(u32::from_le_bytes(word))
        };
        let version = next_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported attention parameter version {version}")));
        }
        let k = next_u32(&mut r)? as usize;
        let m = next_u32(&mut r)? as usize;
        if k == 0 || m == 0 {
            return Err(Error::Format("K and m must be positive".into()));
        }
        let mut read_tensor = |shape: &[usize]| -> Result<Tensor<T>> {
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf).map_err(fmt)?;
            let data = buf
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
                .collect();
            Tensor::new(shape, data)
        };
        Ok(Self {
            w_theta: read_tensor(&[m, m])?,
            w_phi: read_tensor(&[m, m])?,
            w_g: read_tensor(&[m, m])?,
            w_p: read_tensor(&[k, m])?,
            alpha: read_tensor(&[k])?,
            mu: read_tensor(&[k])?,
            sigma: read_tensor(&[k])?,
        })
    }

    /// Human-readable dump: per-category `alpha/mu/sigma` and weight norms.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "attention parameters: K={} m={}", self.parts(), self.channels());
        for (name, t) in &self.fields()[..4] {
            let fro = t.data().iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            let _ = writeln!(s, "  {name:<8} {:?} frobenius={fro:.6}", t.shape());
        }
        let _ = writeln!(s, "  {:>3} {:>12} {:>12} {:>12}", "k", "alpha", "mu", "sigma");
        for k in 0..self.parts() {
            let _ = writeln!(
                s,
                "  {k:>3} {:>12.6} {:>12.6} {:>12.6}",
                self.alpha.data()[k].as_f64(),
                self.mu.data()[k].as_f64(),
                self.sigma.data()[k].as_f64()
            );
        }
        s
    }
}
