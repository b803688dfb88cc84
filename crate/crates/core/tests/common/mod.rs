//! Helpers shared by the integration tests: random instances and a naive
//! scalar re-implementation of the network used as an oracle.

#![allow(dead_code)]

use ebm3d::energynet::{EnergyNet, NetDims};
use ebm3d::pooling::grid_points;
use ebm3d::{Box3D, BoxBEV, Grid, Net, PoolConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_dims(channels: usize) -> NetDims {
    NetDims { pool: PoolConfig::new(2, 3).unwrap(), channels, enc_width: 4, hidden: 12 }
}

/// Grid of uniform values in [-1, 1], 10 x 12 cells at 0.5 m.
pub fn random_grid(r: &mut impl Rng, channels: usize) -> Grid {
    Grid::from_fn(10, 12, channels, [-2.25, -2.75], 0.5, |_, _, _| r.random_range(-1.0..1.0)).unwrap()
}

/// Box whose footprint stays well inside `random_grid`.
pub fn random_box(r: &mut impl Rng) -> Box3D {
    Box3D::new(
        r.random_range(-0.5..0.5),
        r.random_range(-0.5..0.5),
        r.random_range(-0.5..0.5),
        r.random_range(1.0..2.0),
        r.random_range(1.0..1.8),
        r.random_range(1.5..2.5),
        r.random_range(-10.0..10.0),
    )
    .unwrap()
}

/// He-initialized network with random non-zero biases, so no unit sits at
/// a kink by construction.
pub fn random_net(r: &mut impl Rng, dims: NetDims) -> Net {
    let mut net = EnergyNet::init(dims, r.random()).unwrap();
    for l in &mut net.layers {
        l.bias.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    net
}

/// Rounds `phi` to a 2^-40 lattice so that `phi + 2π` is exact in f64
/// (bitwise periodicity can only hold when the shifted angle is exact).
pub fn on_lattice(phi: f64) -> f64 {
    (phi * 2f64.powi(40)).round() / 2f64.powi(40)
}

pub struct NaiveEval {
    pub value: f64,
    /// Smallest |pre-activation| over all ReLU units.
    pub min_pre: f64,
}

fn dense(w: &ndarray::Array2<f64>, b: &ndarray::Array1<f64>, x: &[f64]) -> Vec<f64> {
    (0..w.nrows()).map(|o| b[o] + (0..w.ncols()).map(|i| w[[o, i]] * x[i]).sum::<f64>()).collect()
}

/// Straight-line evaluation with explicit loops, independent of the batched
/// matrix code.
pub fn naive_forward(net: &Net, grid: &Grid, b: &Box3D) -> NaiveEval {
    let dims = net.dims();
    let mut h5 = Vec::new();
    for p in grid_points(&b.to_bev(), &dims.pool) {
        let q = grid.world_to_grid(p.pos);
        h5.extend(manual_bilinear(grid, q));
    }
    let mut min_pre = f64::INFINITY;
    let mut relu = |v: Vec<f64>| -> Vec<f64> {
        v.into_iter()
            .map(|z| {
                min_pre = min_pre.min(z.abs());
                z.max(0.0)
            })
            .collect()
    };
    let l = &net.layers;
    let cz0 = relu(dense(&l[0].weight, &l[0].bias, &[b.cz]));
    let cz = relu(dense(&l[1].weight, &l[1].bias, &cz0));
    let h0 = relu(dense(&l[2].weight, &l[2].bias, &[b.h]));
    let h = relu(dense(&l[3].weight, &l[3].bias, &h0));
    h5.extend(cz);
    h5.extend(h);
    let a1 = relu(dense(&l[4].weight, &l[4].bias, &h5));
    let a2 = relu(dense(&l[5].weight, &l[5].bias, &a1));
    let value = dense(&l[6].weight, &l[6].bias, &a2)[0];
    NaiveEval { value, min_pre }
}

/// Bilinear interpolation with zero padding, written from the definition.
pub fn manual_bilinear(grid: &Grid, q: [f64; 2]) -> Vec<f64> {
    let (i0, j0) = (q[0].floor(), q[1].floor());
    let (fx, fy) = (q[0] - i0, q[1] - j0);
    let mut out = vec![0.0; grid.channels()];
    for (di, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
        for (dj, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            let (i, j) = (i0 + di, j0 + dj);
            if i < 0.0 || j < 0.0 || i >= grid.width() as f64 || j >= grid.length() as f64 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(grid.cell(i as usize, j as usize)) {
                *o += wx * wy * v;
            }
        }
    }
    out
}

/// Distance (in cells) from the nearest sample point coordinate to an
/// integer grid line.
pub fn min_cell_distance(grid: &Grid, b: &Box3D, pool: &PoolConfig) -> f64 {
    grid_points(&b.to_bev(), pool)
        .iter()
        .flat_map(|p| grid.world_to_grid(p.pos))
        .map(|c| (c - c.round()).abs())
        .fold(f64::INFINITY, f64::min)
}

/// True when `b` is at least `margin` away from every kink of `f`.
pub fn smooth_at(net: &Net, grid: &Grid, b: &Box3D, margin: f64) -> bool {
    naive_forward(net, grid, b).min_pre >= margin && min_cell_distance(grid, b, &net.dims().pool) >= margin
}

pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// `|a - b| <= tol * max(|a|, |b|)`, with an absolute floor for values that
/// vanish analytically.
pub fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()) + floor
}

/// A hand-built network with `f = k - |c_x - t_x| - |c_y - t_y| - |c_z - t_z| - |h - t_h|`
/// for the target `t`, independent of `w`, `l` and `phi`. Channels 0 and 1
/// of the returned grid hold the world x and y coordinates, so a single
/// pooling point at the box center reads `(c_x, c_y)` exactly.
pub fn peaked_net(t: &Box3D, k: f64) -> (Net, Grid) {
    use ndarray::{arr1, arr2, Array1, Array2};
    let dims = NetDims { pool: PoolConfig::new(1, 1).unwrap(), channels: 2, enc_width: 2, hidden: 8 };
    let mut net = EnergyNet::zeros(dims).unwrap();
    let identity = |n: usize| Array2::from_shape_fn((n, n), |(a, b)| if a == b { 1.0 } else { 0.0 });
    // encoders emit (relu(v - t), relu(t - v))
    for (first, target) in [(0, t.cz), (2, t.h)] {
        net.layers[first].weight = arr2(&[[1.0], [-1.0]]);
        net.layers[first].bias = arr1(&[-target, target]);
        net.layers[first + 1].weight = identity(2);
    }
    // h5 = [c_x, c_y, cz+, cz-, h+, h-]
    let mut w0 = Array2::zeros((8, 6));
    let mut b0 = Array1::zeros(8);
    for (row, (col, sign, target)) in [(0, 1.0, t.cx), (0, -1.0, t.cx), (1, 1.0, t.cy), (1, -1.0, t.cy)].into_iter().enumerate() {
        w0[[row, col]] = sign;
        b0[row] = -sign * target;
    }
    for e in 0..4 {
        w0[[4 + e, 2 + e]] = 1.0;
    }
    net.layers[4].weight = w0;
    net.layers[4].bias = b0;
    net.layers[5].weight = identity(8);
    net.layers[6].weight = Array2::from_elem((1, 8), -1.0);
    net.layers[6].bias = arr1(&[k]);
    let grid = Grid::from_fn(40, 40, 2, [-10.0, -10.0], 0.5, |i, j, c| if c == 0 { -10.0 + 0.5 * i as f64 } else { -10.0 + 0.5 * j as f64 })
        .unwrap();
    (net, grid)
}

/// Uniform samples inside `a` (its area is exact); the hit rate in `b`
/// estimates the intersection.
pub fn monte_carlo_iou(a: &BoxBEV, b: &BoxBEV, n: usize, r: &mut impl Rng) -> f64 {
    let (s, c) = a.phi.sin_cos();
    let mut hits = 0usize;
    for _ in 0..n {
        let u = r.random_range(-0.5..0.5) * a.l;
        let v = r.random_range(-0.5..0.5) * a.w;
        let p = [a.cx + c * u - s * v, a.cy + s * u + c * v];
        let (sb, cb) = b.phi.sin_cos();
        let (dx, dy) = (p[0] - b.cx, p[1] - b.cy);
        if (cb * dx + sb * dy).abs() <= b.l / 2.0 && (-sb * dx + cb * dy).abs() <= b.w / 2.0 {
            hits += 1;
        }
    }
    let inter = hits as f64 / n as f64 * a.w * a.l;
    inter / (a.w * a.l + b.w * b.l - inter)
}
