use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Point2, Quad};

/// One line of an annotation file:
/// `image_id x0 y0 x1 y1 x2 y2 x3 y3 wrist_side theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct HandAnnotation {
    pub image_id: String,
    pub quad: Quad<f64>,
    pub wrist_side: usize,
    pub theta: f64,
}

impl HandAnnotation {
    pub fn to_line(&self) -> String {
        let mut s = self.image_id.clone();
        for c in &self.quad.corners {
            let _ = write!(s, " {} {}", c.x, c.y);
        }
        let _ = write!(s, " {} {}", self.wrist_side, self.theta);
        s
    }
}

pub fn parse_annotations(text: &str, origin: &str) -> Result<Vec<HandAnnotation>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            location: format!("{origin}:{}", lineno + 1),
            message,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 11 {
            return Err(err(format!("expected 11 fields, found {}", f.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("`{s}` is not a finite number")))
        };
        let mut corners = [Point2::default(); 4];
        for (k, c) in corners.iter_mut().enumerate() {
            *c = Point2::new(num(f[1 + 2 * k])?, num(f[2 + 2 * k])?);
        }
        let wrist_side: usize = f[9]
            .parse()
            .ok()
            .filter(|s| *s < 4)
            .ok_or_else(|| err(format!("wrist side `{}` is not in 0..=3", f[9])))?;
        out.push(HandAnnotation {
            image_id: f[0].to_string(),
            quad: Quad::new(corners),
            wrist_side,
            theta: num(f[10])?,
        });
    }
    Ok(out)
}

pub fn read_annotations(path: &Path) -> Result<Vec<HandAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn write_annotations(annotations: &[HandAnnotation], path: &Path) -> Result<()> {
    let mut s = String::new();
    for a in annotations {
        s.push_str(&a.to_line());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
