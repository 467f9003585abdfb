//! Planar points, axis-aligned boxes and quadrilaterals in image coordinates
//! (x to the right, y downward, units of pixels).

use std::ops::{Add, Mul, Sub};

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    /// Counter-clockwise perpendicular in a y-up frame.
    pub fn perp(self) -> Self {
        Self::new(-self.y, self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn midpoint(self, o: Self) -> Self {
        Self::new((self.x + o.x) / T::of(2.0), (self.y + o.y) / T::of(2.0))
    }
}

impl<T: Scalar> Add for Point2<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl<T: Scalar> Sub for Point2<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl<T: Scalar> Mul<T> for Point2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

/// Axis-aligned box `[x_min, x_max] × [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisBox<T> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Scalar> AxisBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_center(cx: T, cy: T, w: T, h: T) -> Self {
        let two = T::of(2.0);
        Self::new(cx - w / two, cy - h / two, cx + w / two, cy + h / two)
    }

    /// Tight box around a set of points.
    pub fn bounding(points: &[Point2<T>]) -> Option<Self> {
        let first = points.first()?;
        Some(points.iter().fold(
            Self::new(first.x, first.y, first.x, first.y),
            |b, p| Self::new(b.x_min.min(p.x), b.y_min.min(p.y), b.x_max.max(p.x), b.y_max.max(p.y)),
        ))
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width().max(T::zero()) * self.height().max(T::zero())
    }

    pub fn center(&self) -> Point2<T> {
        Point2::new(self.x_min, self.y_min).midpoint(Point2::new(self.x_max, self.y_max))
    }

    /// Intersection over union; 0 for disjoint boxes.
    pub fn iou(&self, other: &Self) -> T {
        let iw = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(T::zero());
        let ih = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(T::zero());
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= T::zero() {
            T::zero()
        } else {
            inter / union
        }
    }
}

/// Quadrilateral with corners in order; side `s` joins corner `s` to corner `(s+1) % 4`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quad<T> {
    pub corners: [Point2<T>; 4],
}

impl<T: Scalar> Quad<T> {
    pub fn new(corners: [Point2<T>; 4]) -> Self {
        Self { corners }
    }

    /// Vertex centroid (mean of the four corners).
    pub fn centroid(&self) -> Point2<T> {
        let s = self.corners.iter().fold(Point2::new(T::zero(), T::zero()), |a, &p| a + p);
        s * T::of(0.25)
    }

    pub fn side_midpoint(&self, side: usize) -> Point2<T> {
        self.corners[side % 4].midpoint(self.corners[(side + 1) % 4])
    }

    pub fn bounding_box(&self) -> AxisBox<T> {
        AxisBox::bounding(&self.corners).expect("four corners")
    }

    /// Shoelace area (absolute).
    pub fn area(&self) -> T {
        let c = &self.corners;
        let mut twice = T::zero();
        for k in 0..4 {
            let (a, b) = (c[k], c[(k + 1) % 4]);
            twice += a.x * b.y - b.x * a.y;
        }
        twice.abs() / T::of(2.0)
    }
}
