//! Oriented box types and exact BEV / 3D intersection-over-union.
//!
//! Boxes are gravity aligned: the only rotation is the heading `phi` about
//! the vertical axis. `l` extends along the heading direction and `w`
//! perpendicular to it; `c_z` is the geometric center of the box.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Vertices closer than this (meters) are merged while clipping.
pub const MERGE_TOL: f64 = 1e-9;
/// Intersection areas below this (m²) count as empty.
pub const AREA_TOL: f64 = 1e-12;

/// Oriented 3D box `(c_x, c_y, c_z, h, w, l, phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Box3<T> {
    pub cx: T,
    pub cy: T,
    pub cz: T,
    pub h: T,
    pub w: T,
    pub l: T,
    pub phi: T,
}

/// Oriented bird's-eye-view box `(c_x, c_y, w, l, phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxBev<T> {
    pub cx: T,
    pub cy: T,
    pub w: T,
    pub l: T,
    pub phi: T,
}

impl<T: Real> Box3<T> {
    /// Validating constructor: sizes must be positive and all fields finite.
    pub fn new(cx: T, cy: T, cz: T, h: T, w: T, l: T, phi: T) -> Result<Self> {
        let b = Self { cx, cy, cz, h, w, l, phi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::Input(format!("non-finite box {:?}", self)));
        }
        if !(self.h > T::zero() && self.w > T::zero() && self.l > T::zero()) {
            return Err(Error::Input(format!("box sizes must be positive: {:?}", self)));
        }
        Ok(())
    }

    /// Coordinates in the canonical order `(c_x, c_y, c_z, h, w, l, phi)`.
    #[inline]
    pub fn to_array(&self) -> [T; 7] {
        [self.cx, self.cy, self.cz, self.h, self.w, self.l, self.phi]
    }

    #[inline]
    pub fn from_array(a: [T; 7]) -> Self {
        Self {
            cx: a[0],
            cy: a[1],
            cz: a[2],
            h: a[3],
            w: a[4],
            l: a[5],
            phi: a[6],
        }
    }

    /// Drops `c_z` and `h`.
    #[inline]
    pub fn to_bev(&self) -> BoxBev<T> {
        BoxBev {
            cx: self.cx,
            cy: self.cy,
            w: self.w,
            l: self.l,
            phi: self.phi,
        }
    }

    #[inline]
    pub fn bottom(&self) -> T {
        self.cz - self.h / T::lit(2.0)
    }

    #[inline]
    pub fn top(&self) -> T {
        self.cz + self.h / T::lit(2.0)
    }

    pub fn volume(&self) -> T {
        self.h * self.w * self.l
    }

    pub fn cast<U: Real>(&self) -> Box3<U> {
        Box3::from_array(self.to_array().map(|v| U::lit(v.to_f64_lossy())))
    }
}

/// Free-function form of [`Box3::to_bev`].
pub fn to_bev<T: Real>(b: &Box3<T>) -> BoxBev<T> {
    b.to_bev()
}

impl<T: Real> BoxBev<T> {
    #[inline]
    pub fn to_array(&self) -> [T; 5] {
        [self.cx, self.cy, self.w, self.l, self.phi]
    }

    pub fn area(&self) -> T {
        self.w * self.l
    }

    /// The four corners, counter-clockwise, at `center + R(phi)·(±l/2, ±w/2)`.
    pub fn corners(&self) -> ConvexPolygon<T> {
        let (s, c) = self.phi.wrap_tau().sin_cos();
        let hl = self.l / T::lit(2.0);
        let hw = self.w / T::lit(2.0);
        let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
        let vertices = local
            .iter()
            .map(|&(a, b)| [self.cx + c * a - s * b, self.cy + s * a + c * b])
            .collect();
        ConvexPolygon { vertices }
    }

    /// Whether a world point lies inside the (closed) rectangle.
    pub fn contains(&self, p: [T; 2]) -> bool {
        let (s, c) = self.phi.wrap_tau().sin_cos();
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        let a = c * dx + s * dy;
        let b = -s * dx + c * dy;
        a.abs() <= self.l / T::lit(2.0) && b.abs() <= self.w / T::lit(2.0)
    }
}

/// Free-function form of [`BoxBev::corners`].
pub fn bev_corners<T: Real>(b: &BoxBev<T>) -> ConvexPolygon<T> {
    b.corners()
}

/// Convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon<T> {
    pub vertices: Vec<[T; 2]>,
}

impl<T: Real> ConvexPolygon<T> {
    /// Shoelace signed area (positive for counter-clockwise order).
    pub fn signed_area(&self) -> T {
        let n = self.vertices.len();
        if n < 3 {
            return T::zero();
        }
        let mut acc = T::zero();
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            acc = acc + (p[0] * q[1] - q[0] * p[1]);
        }
        acc / T::lit(2.0)
    }

    pub fn area(&self) -> T {
        self.signed_area().abs()
    }

    /// Sutherland–Hodgman: clips `self` against every edge of the convex `clip`.
    pub fn clip(&self, clip: &ConvexPolygon<T>) -> ConvexPolygon<T> {
        let mut out = self.vertices.clone();
        let m = clip.vertices.len();
        for e in 0..m {
            if out.is_empty() {
                break;
            }
            let a = clip.vertices[e];
            let b = clip.vertices[(e + 1) % m];
            let input = std::mem::take(&mut out);
            let n = input.len();
            for k in 0..n {
                let cur = input[k];
                let prev = input[(k + n - 1) % n];
                let cur_in = edge_side(a, b, cur) >= T::zero();
                let prev_in = edge_side(a, b, prev) >= T::zero();
                if cur_in {
                    if !prev_in {
                        push_merged(&mut out, segment_line_intersection(prev, cur, a, b));
                    }
                    push_merged(&mut out, cur);
                } else if prev_in {
                    push_merged(&mut out, segment_line_intersection(prev, cur, a, b));
                }
            }
            // the closing vertex may duplicate the first one
            if out.len() > 1 && close(out[0], out[out.len() - 1]) {
                out.pop();
            }
        }
        ConvexPolygon { vertices: out }
    }
}

#[inline]
fn edge_side<T: Real>(a: [T; 2], b: [T; 2], p: [T; 2]) -> T {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn segment_line_intersection<T: Real>(p: [T; 2], q: [T; 2], a: [T; 2], b: [T; 2]) -> [T; 2] {
    let sp = edge_side(a, b, p);
    let sq = edge_side(a, b, q);
    let denom = sp - sq;
    if denom == T::zero() {
        return q;
    }
    let t = sp / denom;
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

#[inline]
fn close<T: Real>(p: [T; 2], q: [T; 2]) -> bool {
    let tol = T::lit(MERGE_TOL);
    (p[0] - q[0]).abs() <= tol && (p[1] - q[1]).abs() <= tol
}

fn push_merged<T: Real>(out: &mut Vec<[T; 2]>, p: [T; 2]) {
    if let Some(&last) = out.last() {
        if close(last, p) {
            return;
        }
    }
    out.push(p);
}

/// Total order on boxes so that pairwise functions can fix argument order.
fn canonical_order<T: Real>(a: &BoxBev<T>, b: &BoxBev<T>) -> Ordering {
    let aa = a.to_array();
    let bb = b.to_array();
    for (x, y) in aa.iter().zip(bb.iter()) {
        match x.partial_cmp(y) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Intersection area of two oriented BEV boxes (symmetric in its arguments).
pub fn bev_intersection_area<T: Real>(a: &BoxBev<T>, b: &BoxBev<T>) -> T {
    let (first, second) = if canonical_order(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    // cheap rejection on circumscribed circles
    let ra = (first.w * first.w + first.l * first.l).sqrt() / T::lit(2.0);
    let rb = (second.w * second.w + second.l * second.l).sqrt() / T::lit(2.0);
    let dx = first.cx - second.cx;
    let dy = first.cy - second.cy;
    if (dx * dx + dy * dy).sqrt() > ra + rb {
        return T::zero();
    }
    let inter = first.corners().clip(&second.corners());
    if inter.vertices.len() < 3 {
        return T::zero();
    }
    let area = inter.area();
    if area < T::lit(AREA_TOL) {
        T::zero()
    } else {
        area
    }
}

/// BEV intersection-over-union in `[0, 1]`.
pub fn bev_iou<T: Real>(a: &BoxBev<T>, b: &BoxBev<T>) -> T {
    let inter = bev_intersection_area(a, b);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one()).max(T::zero())
}

/// Overlap of the vertical extents `[c_z - h/2, c_z + h/2]`.
pub fn vertical_overlap<T: Real>(a: &Box3<T>, b: &Box3<T>) -> T {
    let lo = a.bottom().max(b.bottom());
    let hi = a.top().min(b.top());
    (hi - lo).max(T::zero())
}

/// 3D intersection-over-union of gravity-aligned boxes.
pub fn iou_3d<T: Real>(a: &Box3<T>, b: &Box3<T>) -> T {
    let dz = vertical_overlap(a, b);
    if dz <= T::zero() {
        return T::zero();
    }
    let inter_bev = bev_intersection_area(&a.to_bev(), &b.to_bev());
    if inter_bev <= T::zero() {
        return T::zero();
    }
    let inter = inter_bev * dz;
    let union = a.volume() + b.volume() - inter;
    (inter / union).min(T::one()).max(T::zero())
}
