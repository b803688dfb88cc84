//! Oriented RoIAlign over a BEV box and assembly of the network input.
//!
//! The box footprint is divided into a `W' × L'` grid (`W'` across the width,
//! `L'` along the length). One bilinear sample is taken at each cell center,
//! and the samples are flattened length-major: `h4[(j * W' + i) * C + k]`.
//! Because flattening follows the box frame, a box and its π-rotated twin
//! read the map in opposite orders.

use crate::error::{Error, Result};
use crate::featuregrid::FeatureGrid;
use crate::geometry::BoxBev;
use crate::scalar::Real;

/// Pooling resolution `W' × L'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolConfig {
    pub grid_w: usize,
    pub grid_l: usize,
}

impl Default for PoolConfig {
    /// 4 × 7, the car setting.
    fn default() -> Self {
        Self { grid_w: 4, grid_l: 7 }
    }
}

impl PoolConfig {
    pub fn new(grid_w: usize, grid_l: usize) -> Result<Self> {
        if grid_w == 0 || grid_l == 0 {
            return Err(Error::Config(format!("pool grid must be at least 1x1, got {grid_w}x{grid_l}")));
        }
        Ok(Self { grid_w, grid_l })
    }

    #[inline]
    pub fn points(&self) -> usize {
        self.grid_w * self.grid_l
    }

    /// Length of the pooled vector for `channels` feature channels.
    #[inline]
    pub fn pooled_len(&self, channels: usize) -> usize {
        self.points() * channels
    }
}

/// One sample location and its Jacobian w.r.t. `(c_x, c_y, w, l, phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolPoint<T> {
    pub pos: [T; 2],
    /// `jac[axis][param]`, axis 0 = world x, 1 = world y.
    pub jac: [[T; 5]; 2],
}

/// Pooled features `h4` and their Jacobian w.r.t. the BEV box.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeature<T> {
    pub h4: Vec<T>,
    /// Row-major `h4.len() × 5`.
    pub grad_h4: Vec<T>,
}

impl<T: Real> PooledFeature<T> {
    #[inline]
    pub fn grad_row(&self, r: usize) -> &[T] {
        &self.grad_h4[r * 5..r * 5 + 5]
    }

    /// Chains an upstream gradient `d f / d h4` into `d f / d(c_x, c_y, w, l, phi)`.
    pub fn chain(&self, upstream: &[T]) -> [T; 5] {
        let mut out = [T::zero(); 5];
        for (r, &u) in upstream.iter().enumerate() {
            if u == T::zero() {
                continue;
            }
            for (o, &g) in out.iter_mut().zip(self.grad_row(r)) {
                *o = *o + u * g;
            }
        }
        out
    }
}

#[inline]
fn offsets<T: Real>(cfg: &PoolConfig, i: usize, j: usize) -> (T, T) {
    let half = T::lit(0.5);
    let u = (T::lit(j as f64) + half) / T::lit(cfg.grid_l as f64) - half;
    let v = (T::lit(i as f64) + half) / T::lit(cfg.grid_w as f64) - half;
    (u, v)
}

/// Sample points in flattening order (`j` outer, `i` inner).
pub fn grid_points<T: Real>(b: &BoxBev<T>, cfg: &PoolConfig) -> Vec<PoolPoint<T>> {
    let (s, c) = b.phi.wrap_tau().sin_cos();
    let mut pts = Vec::with_capacity(cfg.points());
    for j in 0..cfg.grid_l {
        for i in 0..cfg.grid_w {
            let (u, v) = offsets::<T>(cfg, i, j);
            let a = u * b.l;
            let bb = v * b.w;
            let pos = [b.cx + c * a - s * bb, b.cy + s * a + c * bb];
            let jac = [
                [T::one(), T::zero(), -s * v, c * u, -s * a - c * bb],
                [T::zero(), T::one(), c * v, s * u, c * a - s * bb],
            ];
            pts.push(PoolPoint { pos, jac });
        }
    }
    pts
}

/// Pooled features only, written into `out` (length `W'·L'·C`).
pub fn pool_bev_into<T: Real>(grid: &FeatureGrid<T>, b: &BoxBev<T>, cfg: &PoolConfig, out: &mut [T]) {
    let (s, c) = b.phi.wrap_tau().sin_cos();
    let ch = grid.channels();
    debug_assert_eq!(out.len(), cfg.pooled_len(ch));
    let mut r = 0;
    for j in 0..cfg.grid_l {
        for i in 0..cfg.grid_w {
            let (u, v) = offsets::<T>(cfg, i, j);
            let a = u * b.l;
            let bb = v * b.w;
            let pos = [b.cx + c * a - s * bb, b.cy + s * a + c * bb];
            grid.bilinear_into(grid.world_to_grid(pos), &mut out[r..r + ch]);
            r += ch;
        }
    }
}

/// Pooled features plus their Jacobian w.r.t. the 5 BEV box parameters.
pub fn pool_bev<T: Real>(grid: &FeatureGrid<T>, b: &BoxBev<T>, cfg: &PoolConfig) -> PooledFeature<T> {
    let ch = grid.channels();
    let n = cfg.pooled_len(ch);
    let mut h4 = vec![T::zero(); n];
    let mut grad_h4 = vec![T::zero(); n * 5];
    let mut gx = vec![T::zero(); ch];
    let mut gy = vec![T::zero(); ch];
    let inv_res = T::one() / grid.res;
    for (p, pt) in grid_points(b, cfg).iter().enumerate() {
        let base = p * ch;
        grid.bilinear_grad_into(grid.world_to_grid(pt.pos), &mut h4[base..base + ch], &mut gx, &mut gy);
        for k in 0..ch {
            // d q / d pos = 1 / res on both axes
            let dx = gx[k] * inv_res;
            let dy = gy[k] * inv_res;
            let row = &mut grad_h4[(base + k) * 5..(base + k) * 5 + 5];
            for (m, g) in row.iter_mut().enumerate() {
                *g = dx * pt.jac[0][m] + dy * pt.jac[1][m];
            }
        }
    }
    PooledFeature { h4, grad_h4 }
}

/// `h5 = h4 ⊕ g_cz ⊕ g_h`, checked against the expected layout.
pub fn assemble_h5<T: Real>(h4: &[T], g_cz: &[T], g_h: &[T], h4_len: usize, enc_len: usize) -> Result<Vec<T>> {
    if h4.len() != h4_len || g_cz.len() != enc_len || g_h.len() != enc_len {
        return Err(Error::Config(format!(
            "h5 parts have lengths {}+{}+{}, expected {}+{}+{}",
            h4.len(),
            g_cz.len(),
            g_h.len(),
            h4_len,
            enc_len,
            enc_len
        )));
    }
    let mut h5 = Vec::with_capacity(h4_len + 2 * enc_len);
    h5.extend_from_slice(h4);
    h5.extend_from_slice(g_cz);
    h5.extend_from_slice(g_h);
    Ok(h5)
}
