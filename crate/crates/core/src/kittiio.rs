//! KITTI object label and detection result files.
//!
//! One object per line, space separated:
//! `type truncated occluded alpha left top right bottom h w l x y z rotation_y [score]`.
//! Locations are in camera coordinates (x right, y down, z forward) and mark
//! the bottom center of the box.
//!
//! World frame used by the rest of the crate: `c_x = z`, `c_y = -x`,
//! `c_z = -y + h/2`, `phi = -rotation_y - π/2` wrapped to `[-π, π)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::evalkit::{GroundTruth, GtMeta};
use crate::geometry::Box3;
use crate::refine::Detection;

pub const DONT_CARE: &str = "DontCare";

#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub kind: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// `left, top, right, bottom` in pixels.
    pub bbox2d: [f64; 4],
    /// `h, w, l` in meters.
    pub dimensions: [f64; 3],
    /// Bottom center `x, y, z` in camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiLabel {
    /// `DontCare` regions and other sentinel-sized objects are not evaluated.
    pub fn is_evaluable(&self) -> bool {
        self.kind != DONT_CARE && self.dimensions.iter().all(|d| *d > 0.0)
    }

    /// Height of the 2D box in pixels.
    pub fn height_px(&self) -> f64 {
        self.bbox2d[3] - self.bbox2d[1]
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(TAU) - PI;
    if r >= PI {
        r - TAU
    } else {
        r
    }
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, name: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse { line, msg: format!("cannot parse {name} from {s:?}") })
}

/// Parses a label (15 fields) or result (16 fields) file.
pub fn parse_label_file(text: &str) -> Result<Vec<KittiLabel>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split_whitespace().collect();
        if f.len() != 15 && f.len() != 16 {
            return Err(Error::Parse { line, msg: format!("expected 15 or 16 fields, found {}", f.len()) });
        }
        let num = |i: usize, name: &str| parse_field::<f64>(f[i], line, name);
        let label = KittiLabel {
            kind: f[0].to_string(),
            truncated: num(1, "truncated")?,
            occluded: parse_field(f[2], line, "occluded")?,
            alpha: num(3, "alpha")?,
            bbox2d: [num(4, "left")?, num(5, "top")?, num(6, "right")?, num(7, "bottom")?],
            dimensions: [num(8, "h")?, num(9, "w")?, num(10, "l")?],
            location: [num(11, "x")?, num(12, "y")?, num(13, "z")?],
            rotation_y: num(14, "rotation_y")?,
            score: if f.len() == 16 { Some(num(15, "score")?) } else { None },
        };
        let b = label.bbox2d;
        if b[2] < b[0] || b[3] < b[1] {
            return Err(Error::Parse { line, msg: format!("2D box {b:?} has negative extent") });
        }
        if label.kind != DONT_CARE && !label.dimensions.iter().all(|d| *d > 0.0) {
            return Err(Error::Parse { line, msg: format!("non-positive dimensions {:?}", label.dimensions) });
        }
        out.push(label);
    }
    Ok(out)
}

/// Writes labels with 6-decimal fields; `score` is emitted when present.
pub fn write_label_file(labels: &[KittiLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        let _ = write!(out, "{} {:.6} {} {:.6}", l.kind, l.truncated, l.occluded, l.alpha);
        for v in l.bbox2d.iter().chain(&l.dimensions).chain(&l.location) {
            let _ = write!(out, " {v:.6}");
        }
        let _ = write!(out, " {:.6}", l.rotation_y);
        if let Some(s) = l.score {
            let _ = write!(out, " {s:.6}");
        }
        out.push('\n');
    }
    out
}

/// Writes a result file; every label must carry a score.
pub fn write_result_file(dets: &[KittiLabel]) -> Result<String> {
    if let Some(i) = dets.iter().position(|d| d.score.is_none()) {
        return Err(Error::Input(format!("result entry {i} has no score")));
    }
    Ok(write_label_file(dets))
}

/// Camera-frame label to world-frame box.
pub fn to_box3d(label: &KittiLabel) -> Result<Box3<f64>> {
    if label.kind == DONT_CARE {
        return Err(Error::Input("DontCare regions have no 3D box".into()));
    }
    let [h, w, l] = label.dimensions;
    let [x, y, z] = label.location;
    Box3::new(z, -x, -y + h / 2.0, h, w, l, wrap_pi(-label.rotation_y - FRAC_PI_2))
}

/// World-frame box to a camera-frame label with an empty 2D box.
pub fn from_box3d(b: &Box3<f64>, kind: &str, score: Option<f64>) -> KittiLabel {
    let x = -b.cy;
    let y = b.h / 2.0 - b.cz;
    let z = b.cx;
    let rotation_y = wrap_pi(-b.phi - FRAC_PI_2);
    KittiLabel {
        kind: kind.to_string(),
        truncated: 0.0,
        occluded: 0,
        alpha: wrap_pi(rotation_y - x.atan2(z)),
        bbox2d: [0.0; 4],
        dimensions: [b.h, b.w, b.l],
        location: [x, y, z],
        rotation_y,
        score,
    }
}

/// Evaluable labels of `class` as ground truths with difficulty metadata.
pub fn labels_to_gts(labels: &[KittiLabel], class: &str) -> Result<Vec<GroundTruth>> {
    labels
        .iter()
        .filter(|l| l.kind == class && l.is_evaluable())
        .map(|l| {
            let occ = u8::try_from(l.occluded).map_err(|_| Error::Input(format!("bad occlusion {}", l.occluded)))?;
            Ok(GroundTruth {
                bbox: to_box3d(l)?,
                meta: Some(GtMeta::new(l.height_px(), occ, l.truncated)?),
            })
        })
        .collect()
}

/// Scored labels of `class` as detections.
pub fn labels_to_dets(labels: &[KittiLabel], class: &str) -> Result<Vec<Detection<f64>>> {
    labels
        .iter()
        .filter(|l| l.kind == class && l.is_evaluable())
        .map(|l| {
            let s = l.score.ok_or_else(|| Error::Input("detection without score".into()))?;
            Ok(Detection { bbox: to_box3d(l)?, score: s })
        })
        .collect()
}
