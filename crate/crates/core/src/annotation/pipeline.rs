use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    hand_rect, mask_missed, reliability_check, visible_wrists, HandAnnotation, KeypointDetection, MaskDisc, MaskOutcome,
    OrientedRect, PersonKeypoints, RgbImage,
};
use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Clone, Debug, PartialEq)]
pub struct DeriveConfig {
    /// Uniform padding added to every side of an emitted rectangle, in pixels.
    pub padding: f64,
}

impl Default for DeriveConfig {
    fn default() -> Self {
        Self { padding: 0.0 }
    }
}

impl DeriveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.padding.is_finite() && self.padding >= 0.0) {
            return Err(Error::Config(format!("padding must be finite and ≥ 0, got {}", self.padding)));
        }
        Ok(())
    }
}

/// Bookkeeping of one derivation run. `detections = kept + rejected + degenerate`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DeriveReport {
    pub detections: usize,
    pub kept: usize,
    pub rejected: usize,
    pub degenerate: usize,
    pub rejected_unreliable: usize,
    pub rejected_no_wrist: usize,
    pub rejected_missing_image: usize,
    pub narrow_rects_floored: usize,
    pub images: usize,
    pub images_written: usize,
    pub images_discarded: usize,
    pub images_missing: usize,
    pub images_no_wrist: usize,
    pub images_without_kept: usize,
    pub kept_in_discarded_images: usize,
    pub annotations_written: usize,
    pub masks_applied: usize,
    pub masks_skipped_zero_radius: usize,
    pub masks_skipped_no_elbow: usize,
    pub parse_errors: usize,
}

impl DeriveReport {
    fn fields(&self) -> [(&'static str, usize); 20] {
        [
            ("detections", self.detections),
            ("kept", self.kept),
            ("rejected", self.rejected),
            ("degenerate", self.degenerate),
            ("rejected_unreliable", self.rejected_unreliable),
            ("rejected_no_wrist", self.rejected_no_wrist),
            ("rejected_missing_image", self.rejected_missing_image),
            ("narrow_rects_floored", self.narrow_rects_floored),
            ("images", self.images),
            ("images_written", self.images_written),
            ("images_discarded", self.images_discarded),
            ("images_missing", self.images_missing),
            ("images_no_wrist", self.images_no_wrist),
            ("images_without_kept", self.images_without_kept),
            ("kept_in_discarded_images", self.kept_in_discarded_images),
            ("annotations_written", self.annotations_written),
            ("masks_applied", self.masks_applied),
            ("masks_skipped_zero_radius", self.masks_skipped_zero_radius),
            ("masks_skipped_no_elbow", self.masks_skipped_no_elbow),
            ("parse_errors", self.parse_errors),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.fields() {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct") + "\n"
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawId {
    Text(String),
    Number(u64),
}

impl RawId {
    fn into_string(self) -> String {
        match self {
            RawId::Text(s) => s,
            RawId::Number(n) => n.to_string(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    image_id: RawId,
    confidence: f64,
    wrist: [f64; 2],
    keypoints: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerson {
    image_id: RawId,
    wrists: Vec<[f64; 3]>,
    elbows: Vec<[f64; 3]>,
}

fn check_image_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Usage(format!("image id `{id}` is not a plain file stem")))
    }
}

fn point(p: [f64; 2]) -> Point2<f64> {
    Point2::new(p[0], p[1])
}

fn parse_detection(line: &str) -> Result<KeypointDetection<f64>> {
    let raw: RawDetection = serde_json::from_str(line).map_err(|e| Error::Usage(e.to_string()))?;
    let det = KeypointDetection {
        image_id: raw.image_id.into_string(),
        w_pred: point(raw.wrist),
        hand_points: raw.keypoints.into_iter().map(point).collect(),
        confidence: raw.confidence,
    };
    check_image_id(&det.image_id)?;
    det.validate()?;
    Ok(det)
}

fn parse_person(line: &str) -> Result<PersonKeypoints<f64>> {
    let raw: RawPerson = serde_json::from_str(line).map_err(|e| Error::Usage(e.to_string()))?;
    let split = |v: Vec<[f64; 3]>| -> (Vec<Point2<f64>>, Vec<bool>) { v.into_iter().map(|p| (Point2::new(p[0], p[1]), p[2] > 0.0)).unzip() };
    let (wrists, wrist_visible) = split(raw.wrists);
    let (elbows, elbow_visible) = split(raw.elbows);
    let person = PersonKeypoints {
        image_id: raw.image_id.into_string(),
        wrists,
        elbows,
        wrist_visible,
        elbow_visible,
    };
    check_image_id(&person.image_id)?;
    person.validate()?;
    if !person.wrists.iter().chain(&person.elbows).all(|p| p.is_finite()) {
        return Err(Error::Usage("non-finite keypoint".into()));
    }
    Ok(person)
}

/// Parses one record per non-blank line, logging and counting records that fail.
fn read_records<R>(
    path: &Path,
    parse: impl Fn(&str) -> Result<R>,
    log: &mut String,
    errors: &mut usize,
) -> Result<Vec<R>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse(line) {
            Ok(r) => out.push(r),
            Err(e) => {
                *errors += 1;
                let _ = writeln!(log, "{}:{}: skipped record: {e}", path.display(), k + 1);
            }
        }
    }
    Ok(out)
}

struct ImageResult {
    annotations: Vec<HandAnnotation>,
    image: Option<RgbImage>,
}

fn process_image(
    image_id: &str,
    dets: &[KeypointDetection<f64>],
    persons: &[PersonKeypoints<f64>],
    images_dir: &Path,
    cfg: &DeriveConfig,
    report: &mut DeriveReport,
    log: &mut String,
) -> Result<ImageResult> {
    let none = ImageResult {
        annotations: Vec::new(),
        image: None,
    };
    report.images += 1;
    report.detections += dets.len();

    let image_path = images_dir.join(format!("{image_id}.ppm"));
    if !image_path.is_file() {
        report.images_missing += 1;
        report.rejected += dets.len();
        report.rejected_missing_image += dets.len();
        let _ = writeln!(log, "{image_id}: image {} not found; skipped", image_path.display());
        return Ok(none);
    }
    let wrists = visible_wrists(persons);
    if wrists.is_empty() {
        report.images_no_wrist += 1;
        report.rejected += dets.len();
        report.rejected_no_wrist += dets.len();
        let _ = writeln!(log, "{image_id}: no annotated wrists; skipped");
        return Ok(none);
    }

    let mut kept: Vec<OrientedRect<f64>> = Vec::new();
    let mut claimed = vec![false; persons.iter().map(|p| p.wrists.len()).sum()];
    for (k, det) in dets.iter().enumerate() {
        let (rect, floored) = match hand_rect(det) {
            Ok(r) => r,
            Err(e) => {
                report.degenerate += 1;
                let _ = writeln!(log, "{image_id}: detection {k}: {e}");
                continue;
            }
        };
        if floored {
            report.narrow_rects_floored += 1;
            let _ = writeln!(log, "{image_id}: detection {k}: collinear points, width floored");
        }
        let r = reliability_check(det.w_pred, rect.length, &wrists)?;
        if r.keep {
            report.kept += 1;
            claimed[r.wrist] = true;
            kept.push(rect.padded(cfg.padding));
        } else {
            report.rejected += 1;
            report.rejected_unreliable += 1;
        }
    }
    if kept.is_empty() {
        report.images_without_kept += 1;
        return Ok(none);
    }

    let mut discs = Vec::new();
    for w in wrists.iter().filter(|w| !claimed[w.index]) {
        match w.elbow {
            None => {
                report.masks_skipped_no_elbow += 1;
                let _ = writeln!(log, "{image_id}: wrist {}: no visible elbow, mask skipped", w.index);
            }
            Some(e) => match MaskDisc::from_wrist(w.wrist, e) {
                Some(d) => discs.push(d),
                None => {
                    report.masks_skipped_zero_radius += 1;
                    let _ = writeln!(log, "{image_id}: wrist {}: wrist equals elbow, mask skipped", w.index);
                }
            },
        }
    }

    let image = RgbImage::read(&image_path)?;
    match mask_missed(&image, &discs, &kept) {
        MaskOutcome::Discarded { disc, rect } => {
            report.images_discarded += 1;
            report.kept_in_discarded_images += kept.len();
            let _ = writeln!(log, "{image_id}: mask {disc} overlaps kept hand {rect}; image discarded");
            Ok(none)
        }
        MaskOutcome::Masked(masked) => {
            report.masks_applied += discs.len();
            report.images_written += 1;
            let annotations: Vec<HandAnnotation> = kept
                .iter()
                .map(|r| HandAnnotation {
                    image_id: image_id.to_string(),
                    quad: r.quad(),
                    wrist_side: 0,
                    theta: r.orientation().radians(),
                })
                .collect();
            report.annotations_written += annotations.len();
            Ok(ImageResult {
                annotations,
                image: Some(masked),
            })
        }
    }
}

/// Turns keypoint detections and person keypoints into hand annotations.
///
/// Writes `annotations.txt`, masked copies under `images/`, `report.txt`,
/// `report.json` and `log.txt` into `out_dir`. Images are processed in
/// ascending id order.
pub fn derive_dataset(
    detections: &Path,
    keypoints: &Path,
    images_dir: &Path,
    out_dir: &Path,
    cfg: &DeriveConfig,
) -> Result<DeriveReport> {
    cfg.validate()?;
    let mut report = DeriveReport::default();
    let mut log = String::new();
    let dets = read_records(detections, parse_detection, &mut log, &mut report.parse_errors)?;
    let persons = read_records(keypoints, parse_person, &mut log, &mut report.parse_errors)?;

    let mut dets_by_image: BTreeMap<String, Vec<KeypointDetection<f64>>> = BTreeMap::new();
    for d in dets {
        dets_by_image.entry(d.image_id.clone()).or_default().push(d);
    }
    let mut persons_by_image: BTreeMap<String, Vec<PersonKeypoints<f64>>> = BTreeMap::new();
    for p in persons {
        persons_by_image.entry(p.image_id.clone()).or_default().push(p);
    }

    let image_out = out_dir.join("images");
    fs::create_dir_all(&image_out).map_err(|e| Error::io(&image_out, e))?;
    let mut annotations = Vec::new();
    for (image_id, dets) in &dets_by_image {
        let persons = persons_by_image.get(image_id).map(Vec::as_slice).unwrap_or(&[]);
        let result = process_image(image_id, dets, persons, images_dir, cfg, &mut report, &mut log)?;
        if let Some(img) = result.image {
            img.write(&image_out.join(format!("{image_id}.ppm")))?;
        }
        annotations.extend(result.annotations);
    }

    super::write_annotations(&annotations, &out_dir.join("annotations.txt"))?;
    let write = |name: &str, body: String| -> Result<()> {
        let p: PathBuf = out_dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(p, e))
    };
    write("report.txt", report.to_text())?;
    write("report.json", report.to_json())?;
    write("log.txt", log)?;
    Ok(report)
}
