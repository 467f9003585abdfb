//! Hand annotations derived from keypoint detections and person keypoints.
//!
//! A detection is turned into a rectangle aligned with the wrist-to-hand
//! direction, kept only when its wrist lies close to an annotated wrist
//! relative to the rectangle's length, and annotated wrists that no kept
//! detection accounts for are blacked out with a disc.

mod format;
mod pipeline;
mod ppm;

pub use format::{parse_annotations, read_annotations, write_annotations, HandAnnotation};
pub use pipeline::{derive_dataset, DeriveConfig, DeriveReport};
pub use ppm::RgbImage;

use crate::error::{Error, Result};
use crate::geometry::{Point2, Quad};
use crate::orientation::Angle;
use crate::scalar::Scalar;

/// Largest accepted wrist error relative to the rectangle length.
pub const MAX_ERROR_RATIO: f64 = 0.2;
/// Floor applied to the rectangle width when the points are collinear.
pub const MIN_RECT_WIDTH: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct KeypointDetection<T> {
    pub image_id: String,
    pub w_pred: Point2<T>,
    pub hand_points: Vec<Point2<T>>,
    pub confidence: T,
}

impl<T: Scalar> KeypointDetection<T> {
    pub fn validate(&self) -> Result<()> {
        if self.hand_points.is_empty() {
            return Err(Error::Usage("detection has no hand keypoints".into()));
        }
        if !self.w_pred.is_finite() || !self.hand_points.iter().all(|p| p.is_finite()) || !self.confidence.is_finite() {
            return Err(Error::Usage("detection has non-finite values".into()));
        }
        Ok(())
    }

    /// Mean of the hand keypoints.
    pub fn h_avg(&self) -> Point2<T> {
        let n = T::of(self.hand_points.len() as f64);
        let s = self.hand_points.iter().fold(Point2::default(), |a, &p| a + p);
        Point2::new(s.x / n, s.y / n)
    }
}

/// Annotated wrists and elbows of one person, index-paired.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonKeypoints<T> {
    pub image_id: String,
    pub wrists: Vec<Point2<T>>,
    pub elbows: Vec<Point2<T>>,
    pub wrist_visible: Vec<bool>,
    pub elbow_visible: Vec<bool>,
}

impl<T: Scalar> PersonKeypoints<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.wrists.len();
        if self.elbows.len() != n || self.wrist_visible.len() != n || self.elbow_visible.len() != n {
            return Err(Error::Usage("wrist and elbow lists differ in length".into()));
        }
        Ok(())
    }
}

/// A visible annotated wrist, numbered across all persons of an image in input order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnotatedWrist<T> {
    pub index: usize,
    pub wrist: Point2<T>,
    pub elbow: Option<Point2<T>>,
}

pub fn visible_wrists<T: Scalar>(persons: &[PersonKeypoints<T>]) -> Vec<AnnotatedWrist<T>> {
    let mut out = Vec::new();
    let mut index = 0;
    for p in persons {
        for k in 0..p.wrists.len() {
            if p.wrist_visible[k] {
                out.push(AnnotatedWrist {
                    index,
                    wrist: p.wrists[k],
                    elbow: p.elbow_visible[k].then_some(p.elbows[k]),
                });
            }
            index += 1;
        }
    }
    out
}

/// Rectangle with a unit `direction` along its length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedRect<T> {
    pub center: Point2<T>,
    pub direction: Point2<T>,
    pub length: T,
    pub width: T,
}

impl<T: Scalar> OrientedRect<T> {
    fn local(&self, p: Point2<T>) -> (T, T) {
        let d = p - self.center;
        (d.dot(self.direction), d.dot(self.direction.perp()))
    }

    pub fn contains(&self, p: Point2<T>, tol: T) -> bool {
        let (u, v) = self.local(p);
        let two = T::of(2.0);
        u.abs() <= self.length / two + tol && v.abs() <= self.width / two + tol
    }

    /// Euclidean distance from `p` to the filled rectangle; 0 inside.
    pub fn distance_to(&self, p: Point2<T>) -> T {
        let (u, v) = self.local(p);
        let two = T::of(2.0);
        let du = (u.abs() - self.length / two).max(T::zero());
        let dv = (v.abs() - self.width / two).max(T::zero());
        du.hypot(dv)
    }

    /// Grows every side by `pad`.
    pub fn padded(&self, pad: T) -> Self {
        let two = T::of(2.0);
        Self {
            length: self.length + two * pad,
            width: self.width + two * pad,
            ..*self
        }
    }

    /// Corners with side 0 on the wrist end, so the quad's wrist side is 0.
    pub fn quad(&self) -> Quad<T> {
        let two = T::of(2.0);
        let u = self.direction * (self.length / two);
        let v = self.direction.perp() * (self.width / two);
        let c = self.center;
        Quad::new([c - u - v, c - u + v, c + u + v, c + u - v])
    }

    pub fn orientation(&self) -> Angle<T> {
        Angle::of_image_vector(self.direction).expect("unit direction")
    }
}

/// Minimal rectangle aligned with `h_avg − w_pred` containing the wrist and keypoints.
///
/// The second value reports whether the width had to be floored.
pub fn hand_rect<T: Scalar>(det: &KeypointDetection<T>) -> Result<(OrientedRect<T>, bool)> {
    det.validate()?;
    let axis = det.h_avg() - det.w_pred;
    let norm = axis.norm();
    if !(norm > T::zero()) {
        return Err(Error::Degenerate("keypoint mean coincides with the predicted wrist".into()));
    }
    let dir = axis * (T::one() / norm);
    let perp = dir.perp();
    let (mut u0, mut u1, mut v0, mut v1) = (T::infinity(), T::neg_infinity(), T::infinity(), T::neg_infinity());
    for p in std::iter::once(&det.w_pred).chain(&det.hand_points) {
        let (u, v) = (p.dot(dir), p.dot(perp));
        u0 = u0.min(u);
        u1 = u1.max(u);
        v0 = v0.min(v);
        v1 = v1.max(v);
    }
    let two = T::of(2.0);
    let (uc, vc) = ((u0 + u1) / two, (v0 + v1) / two);
    let mut width = v1 - v0;
    let floored = width < T::of(MIN_RECT_WIDTH);
    if floored {
        width = T::of(MIN_RECT_WIDTH);
    }
    Ok((
        OrientedRect {
            center: dir * uc + perp * vc,
            direction: dir,
            length: u1 - u0,
            width,
        },
        floored,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reliability<T> {
    pub keep: bool,
    /// Distance from the predicted wrist to the closest annotated wrist.
    pub error: T,
    /// Index of that wrist among the image's wrists (lowest on ties).
    pub wrist: usize,
}

/// Keeps a detection iff `E / L ≤ 0.2`, `E` being the distance to the closest visible wrist.
pub fn reliability_check<T: Scalar>(w_pred: Point2<T>, length: T, wrists: &[AnnotatedWrist<T>]) -> Result<Reliability<T>> {
    let mut best: Option<(usize, T)> = None;
    for w in wrists {
        let e = w_pred.distance(w.wrist);
        if best.map_or(true, |(_, b)| e < b) {
            best = Some((w.index, e));
        }
    }
    let (wrist, error) = best.ok_or_else(|| Error::Usage("image has no annotated wrists".into()))?;
    Ok(Reliability {
        keep: error <= T::of(MAX_ERROR_RATIO) * length,
        error,
        wrist,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskDisc<T> {
    pub center: Point2<T>,
    pub radius: T,
}

impl<T: Scalar> MaskDisc<T> {
    /// Disc at the wrist with radius `‖wrist − elbow‖`; `None` when that is 0.
    pub fn from_wrist(wrist: Point2<T>, elbow: Point2<T>) -> Option<Self> {
        let radius = wrist.distance(elbow);
        (radius > T::zero()).then_some(Self { center: wrist, radius })
    }

    /// Touching counts as overlap.
    pub fn overlaps(&self, rect: &OrientedRect<T>) -> bool {
        rect.distance_to(self.center) <= self.radius
    }

    pub fn contains(&self, p: Point2<T>) -> bool {
        self.center.distance(p) <= self.radius
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MaskOutcome {
    Masked(RgbImage),
    /// Disc `disc` overlaps kept rectangle `rect`.
    Discarded { disc: usize, rect: usize },
}

/// Zeroes every pixel whose center (integer coordinates) lies in a disc, unless
/// some disc overlaps a kept rectangle, in which case the image is discarded.
pub fn mask_missed(image: &RgbImage, discs: &[MaskDisc<f64>], kept: &[OrientedRect<f64>]) -> MaskOutcome {
    for (d, disc) in discs.iter().enumerate() {
        if let Some(r) = kept.iter().position(|rect| disc.overlaps(rect)) {
            return MaskOutcome::Discarded { disc: d, rect: r };
        }
    }
    let mut out = image.clone();
    for disc in discs {
        let x0 = (disc.center.x - disc.radius).floor().max(0.0) as usize;
        let y0 = (disc.center.y - disc.radius).floor().max(0.0) as usize;
        let x1 = ((disc.center.x + disc.radius).ceil().max(-1.0) + 1.0) as usize;
        let y1 = ((disc.center.y + disc.radius).ceil().max(-1.0) + 1.0) as usize;
        for y in y0..y1.min(out.height) {
            for x in x0..x1.min(out.width) {
                if disc.contains(Point2::new(x as f64, y as f64)) {
                    out.set(x, y, [0, 0, 0]);
                }
            }
        }
    }
    MaskOutcome::Masked(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(w: (f64, f64), pts: &[(f64, f64)]) -> KeypointDetection<f64> {
        KeypointDetection {
            image_id: "i".into(),
            w_pred: Point2::new(w.0, w.1),
            hand_points: pts.iter().map(|&(x, y)| Point2::new(x, y)).collect(),
            confidence: 1.0,
        }
    }

    #[test]
    fn collinear_examples() {
        let d = det((0.0, 0.0), &[(2.0, 0.0), (4.0, 0.0)]);
        assert_eq!(d.h_avg(), Point2::new(3.0, 0.0));
        let (r, floored) = hand_rect(&d).unwrap();
        assert_eq!(r.direction, Point2::new(1.0, 0.0));
        assert_eq!(r.length, 4.0);
        assert_eq!(r.width, MIN_RECT_WIDTH);
        assert!(floored);

        let (r, _) = hand_rect(&det((0.0, 0.0), &[(0.0, 2.0)])).unwrap();
        assert_eq!(r.direction, Point2::new(0.0, 1.0));
        assert_eq!(r.length, 2.0);
    }

    #[test]
    fn degenerate_direction() {
        let d = det((1.0, 1.0), &[(0.0, 1.0), (2.0, 1.0)]);
        assert!(matches!(hand_rect(&d), Err(Error::Degenerate(_))));
    }

    #[test]
    fn quad_wrist_side_is_zero() {
        let (r, _) = hand_rect(&det((0.0, 0.0), &[(4.0, -1.0), (4.0, 1.0)])).unwrap();
        let q = r.quad();
        let wrist_mid = q.side_midpoint(0);
        assert!(wrist_mid.distance(Point2::new(0.0, 0.0)) < 1e-12);
        let theta = crate::orientation::orientation_from_quad(&q, 0).unwrap();
        assert!(theta.radians().abs() < 1e-12);
    }

    #[test]
    fn reliability_boundary_and_ties() {
        let wrists = [
            AnnotatedWrist { index: 0, wrist: Point2::new(8.0, 0.0), elbow: None },
            AnnotatedWrist { index: 1, wrist: Point2::new(-8.0, 0.0), elbow: None },
        ];
        let r = reliability_check(Point2::new(0.0, 0.0), 40.0, &wrists).unwrap();
        assert!(r.keep);
        assert_eq!(r.wrist, 0);
        let r = reliability_check(Point2::new(0.0, 0.0), 39.9, &wrists).unwrap();
        assert!(!r.keep);
        assert!(reliability_check::<f64>(Point2::new(0.0, 0.0), 1.0, &[]).is_err());
    }

    #[test]
    fn disc_masking_example() {
        let img = RgbImage::filled(30, 30, [200, 150, 100]);
        let disc = MaskDisc::from_wrist(Point2::new(10.0, 10.0), Point2::new(10.0, 20.0)).unwrap();
        assert_eq!(disc.radius, 10.0);
        let MaskOutcome::Masked(out) = mask_missed(&img, &[disc], &[]) else { panic!() };
        assert_eq!(out.get(10, 15), [0, 0, 0]);
        assert_eq!(out.get(10, 20), [0, 0, 0]);
        assert_eq!(out.get(10, 25), [200, 150, 100]);
        assert!(MaskDisc::from_wrist(Point2::new(1.0, 1.0), Point2::new(1.0, 1.0)).is_none());
    }
}
