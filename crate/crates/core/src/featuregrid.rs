//! Dense bird's-eye-view feature map with a world↔grid transform.
//!
//! Storage is `W × L × C` with channels innermost, then `L`, then `W`: the
//! value of channel `k` at cell `(i, j)` lives at `(i * L + j) * C + k`. The
//! first grid axis (`W`, index `i`) follows world `x`, the second (`L`, index
//! `j`) follows world `y`. Cells outside the grid read as zero.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<T> {
    data: Vec<T>,
    width: usize,
    length: usize,
    channels: usize,
    /// World coordinate of the center of cell `(0, 0)`.
    pub origin: [T; 2],
    /// Cell size in meters.
    pub res: T,
}

/// Four-corner stencil of a bilinear query.
struct Stencil<T> {
    i0: isize,
    j0: isize,
    fx: T,
    fy: T,
}

impl<T: Real> FeatureGrid<T> {
    pub fn new(
        width: usize,
        length: usize,
        channels: usize,
        data: Vec<T>,
        origin: [T; 2],
        res: T,
    ) -> Result<Self> {
        if width < 2 || length < 2 || channels < 1 {
            return Err(Error::Config(format!(
                "feature grid must be at least 2x2x1, got {width}x{length}x{channels}"
            )));
        }
        if !(res > T::zero()) || !res.is_finite() {
            return Err(Error::Config(format!("grid resolution must be positive, got {res}")));
        }
        if data.len() != width * length * channels {
            return Err(Error::Config(format!(
                "grid payload has {} values, expected {}",
                data.len(),
                width * length * channels
            )));
        }
        if !origin.iter().all(|v| v.is_finite()) || !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("feature grid holds non-finite values".into()));
        }
        Ok(Self {
            data,
            width,
            length,
            channels,
            origin,
            res,
        })
    }

    pub fn zeros(width: usize, length: usize, channels: usize, origin: [T; 2], res: T) -> Result<Self> {
        Self::new(width, length, channels, vec![T::zero(); width * length * channels], origin, res)
    }

    /// Builds a grid from a per-cell function `f(i, j, k)`.
    pub fn from_fn(
        width: usize,
        length: usize,
        channels: usize,
        origin: [T; 2],
        res: T,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * length * channels);
        for i in 0..width {
            for j in 0..length {
                for k in 0..channels {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(width, length, channels, data, origin, res)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn length(&self) -> usize {
        self.length
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> &[T] {
        let base = (i * self.length + j) * self.channels;
        &self.data[base..base + self.channels]
    }

    /// World center of cell `(i, j)`.
    pub fn cell_center(&self, i: usize, j: usize) -> [T; 2] {
        self.grid_to_world([T::lit(i as f64), T::lit(j as f64)])
    }

    pub fn world_to_grid(&self, p: [T; 2]) -> [T; 2] {
        [(p[0] - self.origin[0]) / self.res, (p[1] - self.origin[1]) / self.res]
    }

    pub fn grid_to_world(&self, q: [T; 2]) -> [T; 2] {
        [q[0] * self.res + self.origin[0], q[1] * self.res + self.origin[1]]
    }

    /// World extent `[[x_min, x_max], [y_min, y_max]]` covered by cell areas.
    pub fn world_extent(&self) -> [[T; 2]; 2] {
        let half = self.res / T::lit(2.0);
        let lo = self.grid_to_world([T::zero(), T::zero()]);
        let hi = self.grid_to_world([
            T::lit((self.width - 1) as f64),
            T::lit((self.length - 1) as f64),
        ]);
        [[lo[0] - half, hi[0] + half], [lo[1] - half, hi[1] + half]]
    }

    #[inline]
    fn stencil(q: [T; 2]) -> Option<Stencil<T>> {
        let x0 = q[0].floor();
        let y0 = q[1].floor();
        let (i0, j0) = (x0.to_isize()?, y0.to_isize()?);
        Some(Stencil {
            i0,
            j0,
            fx: q[0] - x0,
            fy: q[1] - y0,
        })
    }

    #[inline]
    fn cell_at(&self, i: isize, j: isize) -> Option<&[T]> {
        if i < 0 || j < 0 || i as usize >= self.width || j as usize >= self.length {
            None
        } else {
            Some(self.cell(i as usize, j as usize))
        }
    }

    /// Bilinear interpolation at a continuous grid coordinate, written into `out`.
    pub fn bilinear_into(&self, q: [T; 2], out: &mut [T]) {
        debug_assert_eq!(out.len(), self.channels);
        out.iter_mut().for_each(|v| *v = T::zero());
        let Some(s) = Self::stencil(q) else { return };
        let one = T::one();
        let corners = [
            (0, 0, (one - s.fx) * (one - s.fy)),
            (1, 0, s.fx * (one - s.fy)),
            (0, 1, (one - s.fx) * s.fy),
            (1, 1, s.fx * s.fy),
        ];
        for (di, dj, wgt) in corners {
            if let Some(cell) = self.cell_at(s.i0 + di, s.j0 + dj) {
                for (o, &v) in out.iter_mut().zip(cell) {
                    *o = *o + wgt * v;
                }
            }
        }
    }

    pub fn bilinear(&self, q: [T; 2]) -> Vec<T> {
        let mut out = vec![T::zero(); self.channels];
        self.bilinear_into(q, &mut out);
        out
    }

    /// Bilinear value plus its derivatives along the two grid axes.
    ///
    /// The value is accumulated exactly as in [`bilinear_into`](Self::bilinear_into).
    /// On cell boundaries the right-sided derivative is returned.
    pub fn bilinear_grad_into(&self, q: [T; 2], value: &mut [T], d_qx: &mut [T], d_qy: &mut [T]) {
        value.iter_mut().for_each(|v| *v = T::zero());
        d_qx.iter_mut().for_each(|v| *v = T::zero());
        d_qy.iter_mut().for_each(|v| *v = T::zero());
        let Some(s) = Self::stencil(q) else { return };
        let one = T::one();
        // (di, dj, weight, d weight / d qx, d weight / d qy)
        let corners = [
            (0, 0, (one - s.fx) * (one - s.fy), -(one - s.fy), -(one - s.fx)),
            (1, 0, s.fx * (one - s.fy), one - s.fy, -s.fx),
            (0, 1, (one - s.fx) * s.fy, -s.fy, one - s.fx),
            (1, 1, s.fx * s.fy, s.fy, s.fx),
        ];
        for (di, dj, wgt, gx, gy) in corners {
            if let Some(cell) = self.cell_at(s.i0 + di, s.j0 + dj) {
                for (k, &v) in cell.iter().enumerate() {
                    value[k] = value[k] + wgt * v;
                    d_qx[k] = d_qx[k] + gx * v;
                    d_qy[k] = d_qy[k] + gy * v;
                }
            }
        }
    }

    /// Returns `(value, jacobian)` with `jacobian[k] = [d value_k / d qx, d value_k / d qy]`.
    pub fn bilinear_grad(&self, q: [T; 2]) -> (Vec<T>, Vec<[T; 2]>) {
        let c = self.channels;
        let (mut v, mut gx, mut gy) = (vec![T::zero(); c], vec![T::zero(); c], vec![T::zero(); c]);
        self.bilinear_grad_into(q, &mut v, &mut gx, &mut gy);
        let jac = gx.into_iter().zip(gy).map(|(a, b)| [a, b]).collect();
        (v, jac)
    }

    /// Converts every stored value into another scalar type.
    pub fn cast<U: Real>(&self) -> FeatureGrid<U> {
        FeatureGrid {
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            width: self.width,
            length: self.length,
            channels: self.channels,
            origin: self.origin.map(|v| U::lit(v.to_f64_lossy())),
            res: U::lit(self.res.to_f64_lossy()),
        }
    }
}
