//! The energy network `f(x, y)`.
//!
//! Layout (declaration order, which is also the checkpoint and flat-gradient
//! order):
//!
//! | index | layer      | shape             |
//! |-------|------------|-------------------|
//! | 0     | `enc_cz.0` | 1 → C''           |
//! | 1     | `enc_cz.1` | C'' → C''         |
//! | 2     | `enc_h.0`  | 1 → C''           |
//! | 3     | `enc_h.1`  | C'' → C''         |
//! | 4     | `head.0`   | W'L'C' + 2C'' → H |
//! | 5     | `head.1`   | H → H             |
//! | 6     | `head.2`   | H → 1             |
//!
//! Every layer except `head.2` is followed by a ReLU. The encoder outputs
//! `g_cz` and `g_h` are concatenated after the pooled vector `h4` to form `h5`.

mod checkpoint;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::featuregrid::FeatureGrid;
use crate::geometry::Box3;
use crate::pooling::{assemble_h5, pool_bev, pool_bev_into, PoolConfig};
use crate::rng;
use crate::scalar::Real;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const LAYER_NAMES: [&str; 7] = ["enc_cz.0", "enc_cz.1", "enc_h.0", "enc_h.1", "head.0", "head.1", "head.2"];

const ENC_CZ: [usize; 2] = [0, 1];
const ENC_H: [usize; 2] = [2, 3];
const HEAD: [usize; 3] = [4, 5, 6];

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub pool: PoolConfig,
    /// Feature-map channels `C'`.
    pub channels: usize,
    /// Encoder width `C''`.
    pub enc_width: usize,
    /// Head hidden width.
    pub hidden: usize,
}

impl NetDims {
    /// 4×7 pooling over 256 channels, 16-wide encoders, 1024-wide head (h5 of length 7200).
    pub fn full_size() -> Self {
        Self {
            pool: PoolConfig::default(),
            channels: 256,
            enc_width: 16,
            hidden: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        PoolConfig::new(self.pool.grid_w, self.pool.grid_l)?;
        if self.channels == 0 || self.enc_width == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn h4_len(&self) -> usize {
        self.pool.pooled_len(self.channels)
    }

    #[inline]
    pub fn h5_len(&self) -> usize {
        self.h4_len() + 2 * self.enc_width
    }

    /// `(out, in)` for each layer in declaration order.
    pub fn layer_shapes(&self) -> [(usize, usize); 7] {
        let e = self.enc_width;
        let hd = self.hidden;
        [(e, 1), (e, e), (e, 1), (e, e), (hd, self.h5_len()), (hd, hd), (1, hd)]
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }
}

/// Fully connected layer; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    fn forward(&self, x: &ArrayView2<T>) -> Array2<T> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        z
    }
}

/// Value and optional gradients of the energy for one box.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEval<T> {
    pub value: T,
    /// `∂f/∂y` in box order `(c_x, c_y, c_z, h, w, l, phi)`.
    pub grad_box: Option<[T; 7]>,
    /// Flat `∂f/∂θ` in declaration order (weights row-major, then bias, per layer).
    pub grad_params: Option<Vec<T>>,
}

/// Network parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyNet<T> {
    dims: NetDims,
    pub layers: Vec<Dense<T>>,
}

/// Network inputs for a batch of boxes.
#[derive(Debug, Clone)]
pub struct BatchInput<T> {
    /// `n × W'L'C'` pooled features.
    pub h4: Array2<T>,
    pub cz: Array1<T>,
    pub h: Array1<T>,
}

impl<T: Real> BatchInput<T> {
    /// Pools every box against `grid` (value only).
    pub fn from_boxes(net: &EnergyNet<T>, grid: &FeatureGrid<T>, boxes: &[Box3<T>]) -> Result<Self> {
        net.check_grid(grid)?;
        let n = boxes.len();
        let p = net.dims.h4_len();
        let mut h4 = Array2::zeros((n, p));
        for (mut row, b) in h4.rows_mut().into_iter().zip(boxes) {
            let out = row.as_slice_mut().expect("standard layout");
            pool_bev_into(grid, &b.to_bev(), &net.dims.pool, out);
        }
        Ok(Self {
            h4,
            cz: boxes.iter().map(|b| b.cz).collect(),
            h: boxes.iter().map(|b| b.h).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.cz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cz.is_empty()
    }
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Pre-activation and post-ReLU output for layers 0..=5.
    pre: Vec<Array2<T>>,
    post: Vec<Array2<T>>,
    cz: Array2<T>,
    h: Array2<T>,
    h5: Array2<T>,
    pub values: Array1<T>,
}

/// Gradients w.r.t. the network inputs for each batch row.
#[derive(Debug, Clone)]
pub struct InputGrads<T> {
    pub h4: Array2<T>,
    pub cz: Array1<T>,
    pub h: Array1<T>,
}

fn relu<T: Real>(z: &Array2<T>) -> Array2<T> {
    z.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

fn relu_mask<T: Real>(d: &mut Array2<T>, pre: &Array2<T>) {
    d.zip_mut_with(pre, |g, &z| {
        if !(z > T::zero()) {
            *g = T::zero();
        }
    });
}

impl<T: Real> EnergyNet<T> {
    /// All-zero parameters.
    pub fn zeros(dims: NetDims) -> Result<Self> {
        dims.validate()?;
        let layers = dims.layer_shapes().iter().map(|&(o, i)| Dense::zeros(o, i)).collect();
        Ok(Self { dims, layers })
    }

    /// He fan-in normal weights (`std = sqrt(2 / fan_in)`), zero biases.
    ///
    /// Each layer draws from its own stream derived from `seed`.
    pub fn init(dims: NetDims, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for (idx, layer) in net.layers.iter_mut().enumerate() {
            let mut r = rng::seeded(seed, idx as u64);
            let fan_in = layer.weight.ncols() as f64;
            let std = T::lit((2.0 / fan_in).sqrt());
            layer.weight.mapv_inplace(|_| rng::normal::<T, _>(&mut r) * std);
        }
        Ok(net)
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn param_count(&self) -> usize {
        self.dims.param_count()
    }

    /// Parameters flattened in declaration order.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    /// Mutable views of every tensor in declaration order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(14);
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::with_capacity(14);
        for l in &self.layers {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    /// Overwrites parameters from a flat vector in declaration order.
    pub fn set_flat_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn check_grid(&self, grid: &FeatureGrid<T>) -> Result<()> {
        if grid.channels() != self.dims.channels {
            return Err(Error::Config(format!(
                "feature grid has {} channels, network expects {}",
                grid.channels(),
                self.dims.channels
            )));
        }
        Ok(())
    }

    fn check_pool(&self, cfg: &PoolConfig) -> Result<()> {
        if *cfg != self.dims.pool {
            return Err(Error::Config(format!(
                "pool config {:?} does not match network {:?}",
                cfg, self.dims.pool
            )));
        }
        Ok(())
    }

    fn encoder(&self, idx: [usize; 2], x: &Array2<T>, pre: &mut Vec<Array2<T>>, post: &mut Vec<Array2<T>>) {
        let z0 = self.layers[idx[0]].forward(&x.view());
        let a0 = relu(&z0);
        let z1 = self.layers[idx[1]].forward(&a0.view());
        let a1 = relu(&z1);
        pre.extend([z0, z1]);
        post.extend([a0, a1]);
    }

    /// Batched forward pass.
    pub fn forward_batch(&self, input: &BatchInput<T>) -> Result<ForwardCache<T>> {
        let n = input.len();
        let p = self.dims.h4_len();
        if input.h4.ncols() != p || input.h4.nrows() != n || input.h.len() != n {
            return Err(Error::Config(format!(
                "batch input is {}x{} with {} heights, network expects width {}",
                input.h4.nrows(),
                input.h4.ncols(),
                input.h.len(),
                p
            )));
        }
        let e = self.dims.enc_width;
        let cz = input.cz.view().insert_axis(Axis(1)).to_owned();
        let h = input.h.view().insert_axis(Axis(1)).to_owned();
        let mut pre = Vec::with_capacity(6);
        let mut post = Vec::with_capacity(6);
        self.encoder(ENC_CZ, &cz, &mut pre, &mut post);
        self.encoder(ENC_H, &h, &mut pre, &mut post);

        let mut h5 = Array2::zeros((n, p + 2 * e));
        h5.slice_mut(s![.., ..p]).assign(&input.h4);
        h5.slice_mut(s![.., p..p + e]).assign(&post[1]);
        h5.slice_mut(s![.., p + e..]).assign(&post[3]);

        let z4 = self.layers[HEAD[0]].forward(&h5.view());
        let a4 = relu(&z4);
        let z5 = self.layers[HEAD[1]].forward(&a4.view());
        let a5 = relu(&z5);
        let out = self.layers[HEAD[2]].forward(&a5.view());
        pre.extend([z4, z5]);
        post.extend([a4, a5]);
        let values = out.column(0).to_owned();

        let cache = ForwardCache {
            pre,
            post,
            cz,
            h,
            h5,
            values,
        };
        if !cache.values.iter().all(|v| v.is_finite()) {
            return Err(self.locate_non_finite(&cache));
        }
        Ok(cache)
    }

    fn locate_non_finite(&self, cache: &ForwardCache<T>) -> Error {
        for (layer, z) in cache.pre.iter().enumerate() {
            if !z.iter().all(|v| v.is_finite()) {
                return Error::NonFiniteLayer {
                    layer,
                    name: LAYER_NAMES[layer],
                };
            }
        }
        Error::NonFiniteLayer {
            layer: 6,
            name: LAYER_NAMES[6],
        }
    }

    /// Batched backward pass for upstream gradient `d_out = ∂L/∂f` per row.
    ///
    /// Returns the flat parameter gradient (declaration order) and/or the
    /// gradient w.r.t. the inputs.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache<T>,
        d_out: ArrayView1<T>,
        want_params: bool,
        want_inputs: bool,
    ) -> (Option<Vec<T>>, Option<InputGrads<T>>) {
        let p = self.dims.h4_len();
        let e = self.dims.enc_width;
        let mut grads: Vec<Option<(Array2<T>, Array1<T>)>> = vec![None; 7];

        let d_out2 = d_out.insert_axis(Axis(1));
        // head.2
        if want_params {
            grads[6] = Some((d_out2.t().dot(&cache.post[5]), Array1::from_elem(1, d_out.sum())));
        }
        let mut d = d_out2.dot(&self.layers[6].weight);
        relu_mask(&mut d, &cache.pre[5]);
        // head.1
        if want_params {
            grads[5] = Some((d.t().dot(&cache.post[4]), d.sum_axis(Axis(0))));
        }
        let mut d = d.dot(&self.layers[5].weight);
        relu_mask(&mut d, &cache.pre[4]);
        // head.0
        if want_params {
            grads[4] = Some((d.t().dot(&cache.h5), d.sum_axis(Axis(0))));
        }
        let w0 = &self.layers[4].weight;
        let d_h4 = if want_inputs {
            Some(d.dot(&w0.slice(s![.., ..p])))
        } else {
            None
        };
        let d_enc = d.dot(&w0.slice(s![.., p..]));

        let mut d_inputs = [Array1::zeros(0), Array1::zeros(0)];
        for (slot, (idx, x, col0)) in [(ENC_CZ, &cache.cz, p), (ENC_H, &cache.h, p + e)].into_iter().enumerate() {
            let pre_base = idx[0];
            let mut dg = d_enc.slice(s![.., col0 - p..col0 - p + e]).to_owned();
            relu_mask(&mut dg, &cache.pre[pre_base + 1]);
            if want_params {
                grads[idx[1]] = Some((dg.t().dot(&cache.post[pre_base]), dg.sum_axis(Axis(0))));
            }
            let mut da = dg.dot(&self.layers[idx[1]].weight);
            relu_mask(&mut da, &cache.pre[pre_base]);
            if want_params {
                grads[idx[0]] = Some((da.t().dot(x), da.sum_axis(Axis(0))));
            }
            if want_inputs {
                d_inputs[slot] = da.dot(&self.layers[idx[0]].weight).column(0).to_owned();
            }
        }

        let params = want_params.then(|| {
            let mut flat = Vec::with_capacity(self.param_count());
            for g in grads.into_iter() {
                let (w, b) = g.expect("every layer visited");
                flat.extend(w.iter().copied());
                flat.extend(b.iter().copied());
            }
            flat
        });
        let inputs = d_h4.map(|h4| {
            let [cz, h] = d_inputs;
            InputGrads { h4, cz, h }
        });
        (params, inputs)
    }

    /// Energy of a batch of boxes on one feature map.
    pub fn energies(&self, grid: &FeatureGrid<T>, boxes: &[Box3<T>]) -> Result<Array1<T>> {
        let input = BatchInput::from_boxes(self, grid, boxes)?;
        Ok(self.forward_batch(&input)?.values)
    }

    /// `f(x, y)` only.
    pub fn forward(&self, grid: &FeatureGrid<T>, b: &Box3<T>, cfg: &PoolConfig) -> Result<EnergyEval<T>> {
        self.check_pool(cfg)?;
        let input = BatchInput::from_boxes(self, grid, std::slice::from_ref(b))?;
        let cache = self.forward_batch(&input)?;
        Ok(EnergyEval {
            value: cache.values[0],
            grad_box: None,
            grad_params: None,
        })
    }

    /// `f(x, y)` and `∂f/∂y`.
    pub fn backward_box(&self, grid: &FeatureGrid<T>, b: &Box3<T>, cfg: &PoolConfig) -> Result<EnergyEval<T>> {
        self.evaluate(grid, b, cfg, true, false)
    }

    /// `f(x, y)` and `∂f/∂θ`.
    pub fn backward_params(&self, grid: &FeatureGrid<T>, b: &Box3<T>, cfg: &PoolConfig) -> Result<EnergyEval<T>> {
        self.evaluate(grid, b, cfg, false, true)
    }

    /// Value plus whichever gradients are requested, from one shared backward pass.
    pub fn evaluate(
        &self,
        grid: &FeatureGrid<T>,
        b: &Box3<T>,
        cfg: &PoolConfig,
        want_box: bool,
        want_params: bool,
    ) -> Result<EnergyEval<T>> {
        self.check_pool(cfg)?;
        self.check_grid(grid)?;
        let pooled = pool_bev(grid, &b.to_bev(), cfg);
        let input = BatchInput {
            h4: Array2::from_shape_vec((1, pooled.h4.len()), pooled.h4.clone()).expect("row shape"),
            cz: Array1::from_elem(1, b.cz),
            h: Array1::from_elem(1, b.h),
        };
        let cache = self.forward_batch(&input)?;
        let value = cache.values[0];
        if !want_box && !want_params {
            return Ok(EnergyEval {
                value,
                grad_box: None,
                grad_params: None,
            });
        }
        let ones = Array1::from_elem(1, T::one());
        let (grad_params, inputs) = self.backward_batch(&cache, ones.view(), want_params, want_box);
        let grad_box = inputs.map(|g| {
            let bev = pooled.chain(g.h4.row(0).as_slice().expect("row"));
            [bev[0], bev[1], g.cz[0], g.h[0], bev[2], bev[3], bev[4]]
        });
        if let Some(g) = &grad_box {
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric("non-finite box gradient".into()));
            }
        }
        Ok(EnergyEval {
            value,
            grad_box,
            grad_params,
        })
    }

    /// The `h5` vector for one box (exposed for inspection and tests).
    pub fn h5(&self, grid: &FeatureGrid<T>, b: &Box3<T>) -> Result<Vec<T>> {
        let input = BatchInput::from_boxes(self, grid, std::slice::from_ref(b))?;
        let cache = self.forward_batch(&input)?;
        let e = self.dims.enc_width;
        assemble_h5(
            input.h4.row(0).as_slice().expect("row"),
            cache.post[1].row(0).as_slice().expect("row"),
            cache.post[3].row(0).as_slice().expect("row"),
            self.dims.h4_len(),
            e,
        )
    }

    pub fn cast<U: Real>(&self) -> EnergyNet<U> {
        EnergyNet {
            dims: self.dims,
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.mapv(|v| U::lit(v.to_f64_lossy())),
                    bias: l.bias.mapv(|v| U::lit(v.to_f64_lossy())),
                })
                .collect(),
        }
    }

    /// Random draw of parameter indices (for sampled gradient checks).
    pub fn sample_param_indices<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<usize> {
        let n = self.param_count();
        (0..count).map(|_| rng.random_range(0..n)).collect()
    }
}
