use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{DetectionResult, Evaluation, PrCurve};
use crate::error::{Error, Result};
use crate::geometry::AxisBox;
use crate::orientation::Angle;
use crate::scalar::Scalar;

const CSV_HEADER: &str = "recall,precision";

fn parse_err(location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        location,
        message: message.into(),
    }
}

/// Parses `image_id x_min y_min x_max y_max score [theta]` lines.
///
/// Blank lines and `#` comments are skipped; ids number the records from 0.
pub fn parse_detections(text: &str, origin: &str) -> Result<Vec<DetectionResult<f64>>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let loc = || format!("{origin}:{}", lineno + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(6..=7).contains(&fields.len()) {
            return Err(parse_err(loc(), format!("expected 6 or 7 fields, found {}", fields.len())));
        }
        let mut nums = [f64::NAN; 6];
        for (k, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| parse_err(loc(), format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(loc(), format!("`{f}` is not finite")));
            }
            nums[k] = v;
        }
        let det = DetectionResult {
            id: out.len(),
            image_id: fields[0].to_string(),
            bbox: AxisBox::new(nums[0], nums[1], nums[2], nums[3]),
            score: nums[4],
            orientation: (fields.len() == 7).then(|| Angle::from_radians(nums[5])),
        };
        det.validate().map_err(|e| parse_err(loc(), e.to_string()))?;
        out.push(det);
    }
    Ok(out)
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionResult<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, &path.display().to_string())
}

/// Inverse of [`parse_detections`]; ids are not written.
pub fn format_detections(dets: &[DetectionResult<f64>]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = &d.bbox;
        let _ = write!(s, "{} {} {} {} {} {}", d.image_id, b.x_min, b.y_min, b.x_max, b.y_max, d.score);
        if let Some(a) = d.orientation {
            let _ = write!(s, " {}", a.radians());
        }
        s.push('\n');
    }
    s
}

pub fn write_pr_csv<T: Scalar>(curve: &PrCurve<T>, path: &Path) -> Result<()> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for (r, p) in &curve.points {
        let _ = writeln!(s, "{r},{p}");
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads `recall,precision` rows. The AP field is left at zero.
pub fn read_pr_csv<T: Scalar + FromStr>(path: &Path) -> Result<PrCurve<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CSV_HEADER) {
        return Err(Error::Format(format!("{} does not start with `{CSV_HEADER}`", path.display())));
    }
    let mut points = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{}:{}", path.display(), k + 2);
        let (r, p) = line.split_once(',').ok_or_else(|| parse_err(loc(), "expected two columns"))?;
        let r = r.trim().parse::<T>().map_err(|_| parse_err(loc(), format!("bad recall `{r}`")))?;
        let p = p.trim().parse::<T>().map_err(|_| parse_err(loc(), format!("bad precision `{p}`")))?;
        points.push((r, p));
    }
    Ok(PrCurve { points, ap: T::zero() })
}

/// Standalone SVG line plot of precision against recall.
pub fn render_svg<T: Scalar>(curve: &PrCurve<T>, title: &str) -> String {
    const SIZE: f64 = 400.0;
    const MARGIN: f64 = 40.0;
    let span = SIZE - 2.0 * MARGIN;
    let px = |r: f64| MARGIN + span * r;
    let py = |p: f64| SIZE - MARGIN - span * p;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{x0} {y0} H{x1} M{x0} {y0} V{y1}" stroke="black" fill="none"/>"#,
        x0 = px(0.0),
        y0 = py(0.0),
        x1 = px(1.0),
        y1 = py(1.0)
    );
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{v}</text>"#, px(v), py(0.0) + 14.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v}</text>"#, px(0.0) - 4.0, py(v) + 3.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">recall</text>"#, px(0.5), SIZE - 8.0);
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {:.1})">precision</text>"#,
        py(0.5),
        py(0.5)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" font-size="13" text-anchor="middle">{} (AP {:.4})</text>"#,
        px(0.5),
        escape(title),
        curve.ap.as_f64()
    );
    if !curve.points.is_empty() {
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|(r, p)| format!("{:.3},{:.3}", px(r.as_f64()), py(p.as_f64())))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" stroke="steelblue" stroke-width="1.5" fill="none"/>"#, pts.join(" "));
        for (r, p) in &curve.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.3}" cy="{:.3}" r="2" fill="steelblue" data-recall="{r}" data-precision="{p}"/>"#,
                px(r.as_f64()),
                py(p.as_f64())
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<stem>.csv` and `<stem>.svg`.
pub fn emit_pr_curve<T: Scalar>(curve: &PrCurve<T>, stem: &Path, title: &str) -> Result<()> {
    curve.validate()?;
    write_pr_csv(curve, &stem.with_extension("csv"))?;
    let svg = stem.with_extension("svg");
    fs::write(&svg, render_svg(curve, title)).map_err(|e| Error::io(svg, e))
}

/// Plain-text metrics summary.
pub fn format_metrics<T: Scalar>(eval: &Evaluation<T>, thresholds_deg: &[f64]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "detections: {}", eval.detections);
    let _ = writeln!(s, "ground_truths: {}", eval.ground_truths);
    let _ = writeln!(s, "true_positives: {}", eval.true_positives);
    let _ = writeln!(s, "ap: {:.6}", eval.curve.ap.as_f64());
    match &eval.orientation {
        Some(acc) => {
            for (t, a) in thresholds_deg.iter().zip(acc) {
                let _ = writeln!(s, "orientation_acc@{t}: {:.6}", a.as_f64());
            }
        }
        None => {
            let _ = writeln!(s, "orientation_acc: n/a");
        }
    }
    s
}
