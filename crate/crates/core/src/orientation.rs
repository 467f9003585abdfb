//! Hand orientation and the wrap-aware orientation loss.
//!
//! Orientation is the angle of the vector from the wrist to the hand center,
//! measured counter-clockwise from the +x axis with y pointing *up*. Image
//! coordinates have y pointing down, so a point set given in pixels is
//! flipped before taking `atan2`: `θ = atan2(-(c.y - w.y), c.x - w.x)`.
//! Predictions and ground truth go through the same conversion, so errors
//! between them do not depend on the convention.

use crate::error::{Error, Result};
use crate::geometry::{Point2, Quad};
use crate::scalar::Scalar;

/// Angle in radians, canonicalized to `(-π, π]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct Angle<T>(T);

/// Maps any real angle into `(-π, π]`.
pub fn wrap<T: Scalar>(radians: T) -> T {
    let tau = T::TAU();
    let mut r = radians % tau;
    if r <= -T::PI() {
        r += tau;
    } else if r > T::PI() {
        r -= tau;
    }
    r
}

impl<T: Scalar> Angle<T> {
    pub fn from_radians(radians: T) -> Self {
        Self(wrap(radians))
    }

    pub fn from_degrees(degrees: T) -> Self {
        Self::from_radians(degrees.to_radians())
    }

    pub fn radians(self) -> T {
        self.0
    }

    pub fn degrees(self) -> T {
        self.0.to_degrees()
    }

    /// Angle of an image-space direction vector (y down), in the y-up convention.
    pub fn of_image_vector(v: Point2<T>) -> Option<Self> {
        if v.x == T::zero() && v.y == T::zero() {
            None
        } else {
            Some(Self::from_radians((-v.y).atan2(v.x)))
        }
    }

    /// Unit direction in image coordinates (y down).
    pub fn image_direction(self) -> Point2<T> {
        Point2::new(self.0.cos(), -self.0.sin())
    }
}

/// Orientation of an annotated hand quadrilateral.
///
/// Uses the vector from the midpoint of the wrist side to the vertex centroid.
pub fn orientation_from_quad<T: Scalar>(quad: &Quad<T>, wrist_side: usize) -> Result<Angle<T>> {
    if wrist_side > 3 {
        return Err(Error::Usage(format!("wrist side {wrist_side} is not in 0..=3")));
    }
    let wrist = quad.side_midpoint(wrist_side);
    let center = quad.centroid();
    Angle::of_image_vector(center - wrist).ok_or_else(|| {
        Error::Degenerate("hand center coincides with the wrist-side midpoint".into())
    })
}

/// `|atan2(sin(θ − θ*), cos(θ − θ*))|`, the arc distance between two angles.
pub fn orientation_loss<T: Scalar>(theta: T, theta_star: T) -> T {
    let d = theta - theta_star;
    d.sin().atan2(d.cos()).abs()
}

/// Derivative of [`orientation_loss`] with respect to `theta`.
///
/// `±1` by the sign of the wrapped difference; 0 where the wrapped difference
/// is exactly 0 or π.
pub fn orientation_loss_grad<T: Scalar>(theta: T, theta_star: T) -> T {
    let d = theta - theta_star;
    let w = d.sin().atan2(d.cos());
    if w == T::zero() || w.abs() == T::PI() {
        T::zero()
    } else {
        w.signum()
    }
}

/// Weight of the orientation term in the combined loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientationLossConfig {
    pub lambda: f64,
}

impl Default for OrientationLossConfig {
    fn default() -> Self {
        Self { lambda: 0.1 }
    }
}

impl OrientationLossConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        let cfg = Self { lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be a finite value ≥ 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// `Σ task_losses + λ · l_ori`.
pub fn combined_loss<T: Scalar>(task_losses: &[T], l_ori: T, cfg: &OrientationLossConfig) -> Result<T> {
    cfg.validate()?;
    for &l in task_losses.iter().chain(std::iter::once(&l_ori)) {
        if !l.is_finite() || l < T::zero() {
            return Err(Error::Usage(format!("loss terms must be finite and ≥ 0, got {l}")));
        }
    }
    Ok(task_losses.iter().copied().sum::<T>() + T::of(cfg.lambda) * l_ori)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn square(wrist_side: usize) -> (Quad<f64>, usize) {
        // Axis-aligned unit square, corners clockwise on screen starting top-left.
        let q = Quad::new([
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ]);
        (q, wrist_side)
    }

    #[test]
    fn wrist_on_left_points_right() {
        let (q, s) = square(3);
        assert_eq!(orientation_from_quad(&q, s).unwrap().radians(), 0.0);
    }

    #[test]
    fn wrist_on_bottom_points_up() {
        let (q, s) = square(2);
        assert!((orientation_from_quad(&q, s).unwrap().radians() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_quad_is_rejected() {
        let p = Point2::new(2.0, 2.0);
        let q = Quad::new([p; 4]);
        assert!(matches!(orientation_from_quad(&q, 0), Err(Error::Degenerate(_))));
        assert!(matches!(orientation_from_quad(&square(0).0, 4), Err(Error::Usage(_))));
    }

    #[test]
    fn wrap_lands_in_half_open_range() {
        assert_eq!(wrap(PI), PI);
        assert_eq!(wrap(-PI), PI);
        assert!((wrap(3.0 * PI) - PI).abs() < 1e-15);
        assert!((wrap(-0.5f64) + 0.5).abs() < 1e-15);
        assert!((Angle::from_degrees(359.0f64).degrees() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(orientation_loss(1.3f64, 1.3), 0.0);
        assert!((orientation_loss(0.0f64, PI) - PI).abs() < 1e-15);
        let l = orientation_loss(359f64.to_radians(), 1f64.to_radians());
        assert!((l - 2f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn grad_signs_and_kinks() {
        assert_eq!(orientation_loss_grad(0.5f64, 0.0), 1.0);
        assert_eq!(orientation_loss_grad(0.0f64, 0.5), -1.0);
        assert_eq!(orientation_loss_grad(0.7f64, 0.7), 0.0);
        assert_eq!(orientation_loss_grad(PI, 0.0f64), 0.0);
        // crossing the seam flips the sign relative to the raw difference
        assert_eq!(orientation_loss_grad(359f64.to_radians(), 1f64.to_radians()), -1.0);
    }

    #[test]
    fn combined_loss_arithmetic() {
        let cfg = OrientationLossConfig::default();
        assert_eq!(cfg.lambda, 0.1);
        let l = combined_loss(&[1.0f64, 2.0], 3.0, &cfg).unwrap();
        assert!((l - 3.3).abs() < 1e-15);
        let zero = OrientationLossConfig::new(0.0).unwrap();
        assert_eq!(combined_loss(&[1.0f64, 2.0], 3.0, &zero).unwrap(), 3.0);
        assert!(matches!(combined_loss(&[-1.0f64], 0.0, &cfg), Err(Error::Usage(_))));
        assert!(OrientationLossConfig::new(-0.1).is_err());
    }
}
