//! Noise contrastive estimation for the box energy.
//!
//! For each annotated box `y_i`, `M` noise boxes are drawn from a Gaussian
//! mixture `q(y | y_i)` centered at `y_i`. The true box (or, for NCE+, a
//! perturbed copy of it) must be picked out of the `M + 1` candidates by a
//! softmax over the density-corrected logits `f(x_i, y) - log q(y | y_i)`.

use std::borrow::Cow;
use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};

use crate::energynet::{BatchInput, EnergyNet};
use crate::error::{Error, Result};
use crate::featuregrid::FeatureGrid;
use crate::geometry::Box3;
use crate::rng::{self, StdRng};
use crate::scalar::Real;

/// Per-coordinate `σ₃` for `(c_x, c_y, c_z, h, w, l, phi)`.
pub const DEFAULT_SIGMA3: [f64; 7] = [0.25, 0.25, 0.125, 0.125, 0.125, 0.125, 0.0625];

/// Gaussian mixture `q(y | y_i) = (1/K) Σ_k N(y; y_i, diag(σ_k²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel<T> {
    /// `K × 7` standard deviations.
    pub sigma: Vec<[T; 7]>,
    /// `None` trains plain NCE; `Some(β)` perturbs the true box with the
    /// zero-centered mixture scaled to variance `β σ_k²` (NCE+).
    pub beta: Option<T>,
}

impl<T: Real> NoiseModel<T> {
    pub fn new(sigma: Vec<[T; 7]>, beta: Option<T>) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::Config("noise model needs at least one component".into()));
        }
        if !sigma.iter().flatten().all(|s| *s > T::zero() && s.is_finite()) {
            return Err(Error::Config("noise standard deviations must be positive".into()));
        }
        if let Some(b) = beta {
            if !(b >= T::zero()) || !b.is_finite() {
                return Err(Error::Config(format!("NCE+ beta must be >= 0, got {b}")));
            }
        }
        Ok(Self { sigma, beta })
    }

    /// Three components with `σ₁ = σ₃/4`, `σ₂ = σ₃/2` over the given `σ₃`.
    pub fn three_scale(sigma3: [T; 7], beta: Option<T>) -> Result<Self> {
        let scaled = |f: f64| sigma3.map(|s| s * T::lit(f));
        Self::new(vec![scaled(0.25), scaled(0.5), sigma3], beta)
    }

    /// `K = 3` over [`DEFAULT_SIGMA3`], plain NCE.
    pub fn standard() -> Self {
        Self::three_scale(DEFAULT_SIGMA3.map(T::lit), None).expect("valid constants")
    }

    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    /// One mixture draw around `center` with stds scaled by `scale`.
    fn draw<R: Rng + ?Sized>(&self, center: &Box3<T>, scale: T, rng: &mut R) -> Box3<T> {
        loop {
            let k = rng.random_range(0..self.k());
            let c = center.to_array();
            let mut y = [T::zero(); 7];
            for d in 0..7 {
                y[d] = c[d] + rng::normal::<T, _>(rng) * self.sigma[k][d] * scale;
            }
            let b = Box3::from_array(y);
            // sizes must stay positive; reject and redraw
            if b.h > T::zero() && b.w > T::zero() && b.l > T::zero() {
                return b;
            }
        }
    }

    /// Draws a noise box `y ~ q(· | y_i)`.
    pub fn sample<R: Rng + ?Sized>(&self, y_i: &Box3<T>, rng: &mut R) -> Box3<T> {
        self.draw(y_i, T::one(), rng)
    }

    /// The NCE+ target `y_i + ν`, `ν ~ q_β`; returns `y_i` unchanged without β.
    pub fn perturb_target<R: Rng + ?Sized>(&self, y_i: &Box3<T>, rng: &mut R) -> Box3<T> {
        match self.beta {
            None => *y_i,
            Some(beta) => self.draw(y_i, beta.sqrt(), rng),
        }
    }

    /// `log q(y | y_i)` via log-sum-exp over components.
    pub fn log_q(&self, y: &Box3<T>, y_i: &Box3<T>) -> T {
        let a = y.to_array();
        let c = y_i.to_array();
        let half_log_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        let comps: Vec<T> = self
            .sigma
            .iter()
            .map(|s| {
                let mut acc = T::zero();
                for d in 0..7 {
                    let z = (a[d] - c[d]) / s[d];
                    acc = acc - T::lit(0.5) * z * z - s[d].ln() - half_log_2pi;
                }
                acc
            })
            .collect();
        log_sum_exp(&comps) - T::lit(self.k() as f64).ln()
    }
}

/// Free-function form of [`NoiseModel::sample`].
pub fn sample_noise<T: Real, R: Rng + ?Sized>(nm: &NoiseModel<T>, y_i: &Box3<T>, rng: &mut R) -> Box3<T> {
    nm.sample(y_i, rng)
}

/// Free-function form of [`NoiseModel::log_q`].
pub fn log_q<T: Real>(nm: &NoiseModel<T>, y: &Box3<T>, y_i: &Box3<T>) -> T {
    nm.log_q(y, y_i)
}

/// Numerically stable `log Σ exp(x)`.
pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    let s: T = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// One scene's worth of training signal.
#[derive(Debug, Clone)]
pub struct TrainExample<T> {
    pub id: u64,
    pub grid: FeatureGrid<T>,
    pub targets: Vec<Box3<T>>,
}

/// Random-access collection of training scenes.
pub trait SceneSource<T: Real> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn example(&self, index: usize) -> Result<Cow<'_, TrainExample<T>>>;
}

impl<T: Real> SceneSource<T> for [TrainExample<T>] {
    fn len(&self) -> usize {
        <[TrainExample<T>]>::len(self)
    }

    fn example(&self, index: usize) -> Result<Cow<'_, TrainExample<T>>> {
        self.get(index)
            .map(Cow::Borrowed)
            .ok_or_else(|| Error::Input(format!("scene index {index} out of range")))
    }
}

impl<T: Real> SceneSource<T> for Vec<TrainExample<T>> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn example(&self, index: usize) -> Result<Cow<'_, TrainExample<T>>> {
        self.as_slice().example(index)
    }
}

/// Loss value and flat parameter gradient.
#[derive(Debug, Clone)]
pub struct LossEval<T> {
    pub loss: T,
    pub grad: Vec<T>,
    /// Number of annotations averaged over.
    pub count: usize,
}

/// Logits `z_m = f(x, y_m) - log q(y_m | y_i)` and the softmax-loss terms for
/// one annotation (index 0 is the true box). Returns `J_i = z_0 - lse(z)`
/// and `softmax(z) - e_0`, the derivative of `-J_i` w.r.t. each `f`.
pub fn nce_terms<T: Real>(values: &[T], log_q: &[T]) -> (T, Vec<T>) {
    let z: Vec<T> = values.iter().zip(log_q).map(|(&f, &lq)| f - lq).collect();
    let lse = log_sum_exp(&z);
    let j_i = z[0] - lse;
    let mut w: Vec<T> = z.iter().map(|&zm| (zm - lse).exp()).collect();
    w[0] = w[0] - T::one();
    (j_i, w)
}

/// NCE loss `J = -mean_i J_i` over every annotation in `batch`, with its
/// parameter gradient.
///
/// Random draws per annotation: one `u64` seeding the NCE+ perturbation
/// (consumed whether or not β is set), then the `M` noise boxes.
pub fn nce_loss<T: Real, R: RngCore + ?Sized>(
    net: &EnergyNet<T>,
    batch: &[&TrainExample<T>],
    nm: &NoiseModel<T>,
    num_noise: usize,
    rng: &mut R,
    want_grad: bool,
) -> Result<LossEval<T>> {
    if num_noise == 0 {
        return Err(Error::Config("need at least one noise sample".into()));
    }
    let count: usize = batch.iter().map(|ex| ex.targets.len()).sum();
    let mut grad = if want_grad { vec![T::zero(); net.param_count()] } else { Vec::new() };
    if count == 0 {
        return Ok(LossEval { loss: T::zero(), grad, count });
    }
    let inv_n = T::one() / T::lit(count as f64);
    let mut loss = T::zero();
    let mut boxes = Vec::with_capacity(num_noise + 1);
    for ex in batch {
        for (a, y_i) in ex.targets.iter().enumerate() {
            let perturb_seed = rng.next_u64();
            let mut prng = StdRng::seed_from_u64(perturb_seed);
            boxes.clear();
            boxes.push(nm.perturb_target(y_i, &mut prng));
            for _ in 0..num_noise {
                boxes.push(nm.sample(y_i, rng));
            }
            let lq: Vec<T> = boxes.iter().map(|y| nm.log_q(y, y_i)).collect();
            let input = BatchInput::from_boxes(net, &ex.grid, &boxes)?;
            let cache = net.forward_batch(&input).map_err(|e| {
                Error::Numeric(format!("scene {} annotation {a}: {e}", ex.id))
            })?;
            let (j_i, w) = nce_terms(cache.values.as_slice().expect("contiguous"), &lq);
            if !j_i.is_finite() {
                return Err(Error::Numeric(format!("scene {} annotation {a}: non-finite loss", ex.id)));
            }
            loss = loss - j_i * inv_n;
            if want_grad {
                let d_out = Array1::from_iter(w.into_iter().map(|v| v * inv_n));
                let (g, _) = net.backward_batch(&cache, d_out.view(), true, false);
                for (acc, v) in grad.iter_mut().zip(g.expect("requested")) {
                    *acc = *acc + v;
                }
            }
        }
    }
    Ok(LossEval { loss, grad, count })
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Adam<T> {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            t: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }

    pub fn step(&mut self, net: &mut EnergyNet<T>, grad: &[T], lr: T) {
        self.t += 1;
        let bc1 = T::one() - self.beta1.powi(self.t);
        let bc2 = T::one() - self.beta2.powi(self.t);
        let mut off = 0;
        for tensor in net.tensors_mut() {
            for p in tensor.iter_mut() {
                let g = grad[off];
                let m = self.beta1 * self.m[off] + (T::one() - self.beta1) * g;
                let v = self.beta2 * self.v[off] + (T::one() - self.beta2) * g * g;
                self.m[off] = m;
                self.v[off] = v;
                let m_hat = m / bc1;
                let v_hat = v / bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + self.eps);
                off += 1;
            }
        }
    }
}

/// Optimizer and sampling settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Noise samples `M` per annotation.
    pub num_noise: usize,
    /// Base learning rate (cosine-decayed to zero over the run).
    pub lr: f64,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional cap on optimizer steps per epoch.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            num_noise: 256,
            lr: 1e-4,
            batch_size: 8,
            epochs: 1,
            steps_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_noise == 0 || self.batch_size == 0 {
            return Err(Error::Config("num_noise and batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        Ok(())
    }

    pub fn steps_for(&self, n_scenes: usize) -> usize {
        let full = n_scenes.div_ceil(self.batch_size);
        self.steps_per_epoch.map_or(full, |s| s.min(full))
    }

    /// Cosine schedule from `lr` at step 0 toward 0 at `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if total == 0 {
            return self.lr;
        }
        let frac = step as f64 / total as f64;
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// One optimizer step's log entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub seconds: f64,
}

/// Mini-batch NCE trainer; the feature maps are fixed inputs.
pub struct Trainer<T> {
    pub cfg: TrainConfig,
    pub noise: NoiseModel<T>,
    adam: Adam<T>,
    rng: StdRng,
    step: usize,
    total_steps: usize,
    started: Instant,
    pub log: Vec<LossRecord>,
}

impl<T: Real> Trainer<T> {
    pub fn new(net: &EnergyNet<T>, cfg: TrainConfig, noise: NoiseModel<T>, n_scenes: usize) -> Result<Self> {
        cfg.validate()?;
        if n_scenes == 0 {
            return Err(Error::Config("empty training dataset".into()));
        }
        let total_steps = cfg.epochs * cfg.steps_for(n_scenes);
        Ok(Self {
            adam: Adam::new(net.param_count()),
            rng: rng::seeded(cfg.seed, 0x7EA1),
            step: 0,
            total_steps,
            started: Instant::now(),
            log: Vec::new(),
            cfg,
            noise,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    /// One optimizer step on `batch`; returns the loss before the update.
    pub fn step(&mut self, net: &mut EnergyNet<T>, batch: &[&TrainExample<T>], epoch: usize) -> Result<T> {
        let eval = nce_loss(net, batch, &self.noise, self.cfg.num_noise, &mut self.rng, true)?;
        if eval.count > 0 {
            let lr = T::lit(self.cfg.lr_at(self.step, self.total_steps));
            self.adam.step(net, &eval.grad, lr);
            if !net.all_finite() {
                return Err(Error::Numeric(format!("non-finite parameters after step {}", self.step)));
            }
        }
        self.log.push(LossRecord {
            epoch,
            step: self.step,
            loss: eval.loss.to_f64_lossy(),
            seconds: self.started.elapsed().as_secs_f64(),
        });
        self.step += 1;
        Ok(eval.loss)
    }

    /// Runs one epoch over a shuffled scene order.
    pub fn epoch<S: SceneSource<T> + ?Sized>(&mut self, net: &mut EnergyNet<T>, data: &S, epoch: usize) -> Result<()> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let steps = self.cfg.steps_for(data.len());
        for chunk in order.chunks(self.cfg.batch_size).take(steps) {
            let loaded = chunk.iter().map(|&i| data.example(i)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&TrainExample<T>> = loaded.iter().map(|c| c.as_ref()).collect();
            self.step(net, &refs, epoch)?;
        }
        Ok(())
    }
}

/// Trains `net` in place for `cfg.epochs` epochs and returns the per-step log.
pub fn train<T: Real, S: SceneSource<T> + ?Sized>(
    net: &mut EnergyNet<T>,
    data: &S,
    cfg: &TrainConfig,
    nm: &NoiseModel<T>,
) -> Result<Vec<LossRecord>> {
    let mut trainer = Trainer::new(net, cfg.clone(), nm.clone(), data.len())?;
    for epoch in 0..cfg.epochs {
        trainer.epoch(net, data, epoch)?;
    }
    Ok(trainer.log)
}

/// Loss log as CSV (`epoch,step,J,seconds`); `timing = false` writes zero seconds.
pub fn loss_csv(records: &[LossRecord], comment: &str, timing: bool) -> String {
    let mut out = crate::csv::CsvText::new(comment, &["epoch", "step", "J", "seconds"]);
    for r in records {
        let secs = if timing { r.seconds } else { 0.0 };
        out.row([
            r.epoch.to_string(),
            r.step.to_string(),
            crate::csv::fmt_f64(r.loss),
            format!("{secs:.3}"),
        ]);
    }
    out.finish()
}
