//! Synthetic scenes standing in for a LiDAR backbone and detector.
//!
//! A scene holds car-like ground-truth boxes, a BEV feature grid rendered
//! from them, and one perturbed initial detection per ground truth.
//!
//! Feature channels per cell center `p`, with `sd(p)` the signed distance to
//! the union of box footprints (negative inside):
//!
//! | channel | value                                               |
//! |---------|-----------------------------------------------------|
//! | 0       | `sigmoid(-sd / 0.25)`                               |
//! | 1       | `sd` clipped to ±2 m                                |
//! | 2, 3    | `cos phi`, `sin phi` of the nearest box within 2 m  |
//! | 4..     | fixed random mixtures of channels 0..3              |
//!
//! With `symmetric_rendering`, channels 2 and 3 hold `cos 2phi`, `sin 2phi`.
//! Gaussian feature noise is added to every channel.

mod format;

use std::borrow::Cow;

use rand::Rng;

use crate::error::{Error, Result};
use crate::evalkit::GroundTruth;
use crate::featuregrid::FeatureGrid;
use crate::geometry::{bev_iou, Box3};
use crate::nce::{SceneSource, TrainExample};
use crate::refine::Detection;
use crate::rng::{self, StdRng};
use crate::scalar::Real;

pub use format::{
    read_dataset, read_manifest, read_scene, scene_file_name, write_dataset, write_manifest, write_scene, ManifestEntry, SceneFile,
    MANIFEST_NAME, SCENE_MAGIC, SCENE_VERSION,
};

/// Maximum pairwise BEV IoU between ground truths of one scene.
pub const MAX_PAIR_IOU: f64 = 0.05;
/// Occupancy sigmoid softness (m).
pub const SOFTNESS: f64 = 0.25;
/// Signed-distance clip and heading-channel range (m).
pub const SD_CLIP: f64 = 2.0;

/// Angles are snapped to this step before rendering so that headings that
/// differ by a full (or, when symmetric, half) turn render identically.
const ANGLE_QUANTUM: f64 = 1.0 / (1u64 << 30) as f64;

const MIX_STREAM: u64 = 0x4D49_58;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Grid cells along world x.
    pub width: usize,
    /// Grid cells along world y.
    pub length: usize,
    pub channels: usize,
    pub res: f64,
    /// World point at the center of the grid.
    pub center: [f64; 2],
    pub cars_min: usize,
    pub cars_max: usize,
    /// Box centers keep at least this distance to the grid border (m).
    pub margin: f64,
    pub h_range: [f64; 2],
    pub w_range: [f64; 2],
    pub l_range: [f64; 2],
    /// Std of `c_z` around `h/2`.
    pub cz_jitter: f64,
    /// Detection perturbation stds over `(c_x, c_y, c_z, h, w, l, phi)`.
    pub det_sigma: [f64; 7],
    pub feature_noise: f64,
    pub symmetric_rendering: bool,
    /// Placement attempts per box before giving up.
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 128,
            length: 128,
            channels: 16,
            res: 0.25,
            center: [0.0, 0.0],
            cars_min: 1,
            cars_max: 6,
            margin: 2.0,
            h_range: [1.4, 1.8],
            w_range: [1.5, 1.9],
            l_range: [3.4, 4.6],
            cz_jitter: 0.02,
            det_sigma: [0.25, 0.25, 0.1, 0.08, 0.08, 0.15, 0.1],
            feature_noise: 0.05,
            symmetric_rendering: false,
            max_retries: 200,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels < 4 {
            return bad(format!("synthetic grids need at least 4 channels, got {}", self.channels));
        }
        if self.width < 2 || self.length < 2 || !(self.res > 0.0) {
            return bad("grid must be at least 2x2 with positive resolution".into());
        }
        if self.cars_min > self.cars_max {
            return bad(format!("cars_min {} exceeds cars_max {}", self.cars_min, self.cars_max));
        }
        for (name, r) in [("h", self.h_range), ("w", self.w_range), ("l", self.l_range)] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return bad(format!("{name} range must satisfy 0 < lo <= hi, got {r:?}"));
            }
        }
        if !self.det_sigma.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            return bad("perturbation stds must be >= 0".into());
        }
        if !(self.feature_noise >= 0.0) || !(self.cz_jitter >= 0.0) || !(self.margin >= 0.0) {
            return bad("noise stds and margin must be >= 0".into());
        }
        Ok(())
    }

    /// World center of cell `(0, 0)`.
    pub fn origin(&self) -> [f64; 2] {
        [
            self.center[0] - 0.5 * self.width as f64 * self.res + 0.5 * self.res,
            self.center[1] - 0.5 * self.length as f64 * self.res + 0.5 * self.res,
        ]
    }

    /// Region where box centers may be placed, `[[x_lo, x_hi], [y_lo, y_hi]]`.
    pub fn placement_region(&self) -> [[f64; 2]; 2] {
        let hx = 0.5 * self.width as f64 * self.res - self.margin;
        let hy = 0.5 * self.length as f64 * self.res - self.margin;
        [[self.center[0] - hx, self.center[0] + hx], [self.center[1] - hy, self.center[1] + hy]]
    }

    /// Mixing weights for channels `4..C`, each a row over channels 0..3.
    pub fn mixing_weights(&self) -> Vec<[f64; 4]> {
        let mut r = rng::seeded(self.seed, MIX_STREAM);
        (4..self.channels)
            .map(|_| std::array::from_fn(|_| rng::normal::<f64, _>(&mut r) * 0.5))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub grid: FeatureGrid<f64>,
    pub gts: Vec<GroundTruth>,
    pub initial_dets: Vec<Detection<f64>>,
}

impl Scene {
    pub fn gt_boxes(&self) -> Vec<Box3<f64>> {
        self.gts.iter().map(|g| g.bbox).collect()
    }

    /// Training view with the grid cast to `T`.
    pub fn to_example<T: Real>(&self) -> TrainExample<T> {
        TrainExample {
            id: self.id,
            grid: self.grid.cast(),
            targets: self.gts.iter().map(|g| g.bbox.cast()).collect(),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// Samples `n` non-overlapping boxes.
pub fn sample_boxes<R: Rng + ?Sized>(cfg: &SynthConfig, n: usize, rng: &mut R) -> Result<Vec<Box3<f64>>> {
    let region = cfg.placement_region();
    if n > 0 && (region[0][0] > region[0][1] || region[1][0] > region[1][1]) {
        return Err(Error::Generation("world extent is smaller than twice the margin".into()));
    }
    let mut boxes: Vec<Box3<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut placed = false;
        for _ in 0..cfg.max_retries.max(1) {
            let h = uniform(rng, cfg.h_range);
            let w = uniform(rng, cfg.w_range);
            let l = uniform(rng, cfg.l_range);
            let cx = uniform(rng, region[0]);
            let cy = uniform(rng, region[1]);
            let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let cz = h / 2.0 + cfg.cz_jitter * rng::normal::<f64, _>(rng);
            let b = Box3 { cx, cy, cz, h, w, l, phi };
            let bev = b.to_bev();
            if boxes.iter().all(|o| bev_iou(&o.to_bev(), &bev) < MAX_PAIR_IOU) {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place box {} of {n} after {} attempts",
                k + 1,
                cfg.max_retries
            )));
        }
    }
    Ok(boxes)
}

/// Heading used by the renderer: snapped and reduced modulo the period.
fn render_angle(phi: f64, symmetric: bool) -> f64 {
    let period = if symmetric { std::f64::consts::PI } else { std::f64::consts::TAU };
    let r = phi.rem_euclid(period);
    let q = (r / ANGLE_QUANTUM).round() * ANGLE_QUANTUM;
    if q >= period {
        0.0
    } else {
        q
    }
}

struct RenderBox {
    c: [f64; 2],
    cos: f64,
    sin: f64,
    half_l: f64,
    half_w: f64,
    ch2: f64,
    ch3: f64,
}

impl RenderBox {
    fn new(b: &Box3<f64>, symmetric: bool) -> Self {
        let a = render_angle(b.phi, symmetric);
        let (sin, cos) = a.sin_cos();
        let (ch3, ch2) = if symmetric { (2.0 * a).sin_cos() } else { (sin, cos) };
        Self { c: [b.cx, b.cy], cos, sin, half_l: 0.5 * b.l, half_w: 0.5 * b.w, ch2, ch3 }
    }

    /// Signed distance from `p` to the footprint, negative inside.
    fn signed_distance(&self, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.c[0];
        let dy = p[1] - self.c[1];
        let a = (self.cos * dx + self.sin * dy).abs() - self.half_l;
        let b = (-self.sin * dx + self.cos * dy).abs() - self.half_w;
        let outside = a.max(0.0).hypot(b.max(0.0));
        outside + a.max(b).min(0.0)
    }
}

/// Noise-free channels 0..3 at one world point.
fn base_channels(boxes: &[RenderBox], p: [f64; 2]) -> [f64; 4] {
    let mut best: Option<(f64, &RenderBox)> = None;
    for b in boxes {
        let d = b.signed_distance(p);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, b));
        }
    }
    match best {
        None => [1.0 / (1.0 + (SD_CLIP / SOFTNESS).exp()), SD_CLIP, 0.0, 0.0],
        Some((sd, b)) => {
            let occ = 1.0 / (1.0 + (sd / SOFTNESS).exp());
            let (c2, c3) = if sd <= SD_CLIP { (b.ch2, b.ch3) } else { (0.0, 0.0) };
            [occ, sd.clamp(-SD_CLIP, SD_CLIP), c2, c3]
        }
    }
}

/// Renders the feature grid for `boxes`; `rng` drives the feature noise only.
pub fn render_features<R: Rng + ?Sized>(cfg: &SynthConfig, boxes: &[Box3<f64>], rng: &mut R) -> Result<FeatureGrid<f64>> {
    cfg.validate()?;
    let rb: Vec<RenderBox> = boxes.iter().map(|b| RenderBox::new(b, cfg.symmetric_rendering)).collect();
    let mix = cfg.mixing_weights();
    let origin = cfg.origin();
    let c = cfg.channels;
    let mut data = Vec::with_capacity(cfg.width * cfg.length * c);
    for i in 0..cfg.width {
        for j in 0..cfg.length {
            let p = [origin[0] + i as f64 * cfg.res, origin[1] + j as f64 * cfg.res];
            let base = base_channels(&rb, p);
            data.extend_from_slice(&base);
            for w in &mix {
                data.push(w.iter().zip(&base).map(|(a, b)| a * b).sum());
            }
        }
    }
    if cfg.feature_noise > 0.0 {
        for v in &mut data {
            *v += cfg.feature_noise * rng::normal::<f64, _>(rng);
        }
    }
    FeatureGrid::new(cfg.width, cfg.length, c, data, origin, cfg.res)
}

/// Monotone decreasing map from perturbation magnitude to a score in (0, 1).
pub fn perturbation_score(delta: &[f64; 7], sigma: &[f64; 7]) -> f64 {
    let (mut acc, mut n) = (0.0, 0usize);
    for (d, s) in delta.iter().zip(sigma) {
        if *s > 0.0 {
            acc += (d / s).powi(2);
            n += 1;
        }
    }
    let m2 = if n == 0 { 0.0 } else { acc / n as f64 };
    0.01 + 0.98 * (-0.5 * m2).exp()
}

/// One perturbed detection per ground truth.
pub fn perturb_detections<R: Rng + ?Sized>(cfg: &SynthConfig, gts: &[Box3<f64>], rng: &mut R) -> Vec<Detection<f64>> {
    gts.iter()
        .map(|g| loop {
            let delta: [f64; 7] = std::array::from_fn(|d| cfg.det_sigma[d] * rng::normal::<f64, _>(rng));
            let mut a = g.to_array();
            for (v, d) in a.iter_mut().zip(&delta) {
                *v += d;
            }
            let b = Box3::from_array(a);
            if b.h > 0.0 && b.w > 0.0 && b.l > 0.0 {
                break Detection { bbox: b, score: perturbation_score(&delta, &cfg.det_sigma) };
            }
        })
        .collect()
}

/// Generates one scene. Draw order: car count, boxes, feature noise, detections.
pub fn gen_scene<R: Rng + ?Sized>(cfg: &SynthConfig, id: u64, rng: &mut R) -> Result<Scene> {
    cfg.validate()?;
    let n = rng.random_range(cfg.cars_min..=cfg.cars_max);
    let boxes = sample_boxes(cfg, n, rng)?;
    let grid = render_features(cfg, &boxes, rng)?;
    let initial_dets = perturb_detections(cfg, &boxes, rng);
    Ok(Scene { id, grid, gts: boxes.into_iter().map(GroundTruth::new).collect(), initial_dets })
}

/// The RNG that generates scene `id` under `cfg.seed`.
pub fn scene_rng(cfg: &SynthConfig, id: u64) -> StdRng {
    rng::seeded(cfg.seed, id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(Error::Format(format!("unknown split {s:?}"))),
        }
    }
}

/// Default validation count for `n` scenes: the last `n / 5`.
pub fn default_val_count(n: u64) -> u64 {
    n / 5
}

/// Split of scene ids `0..n` where the last `n_val` are validation.
pub fn split_of(id: u64, n: u64, n_val: u64) -> Split {
    if id >= n.saturating_sub(n_val) {
        Split::Val
    } else {
        Split::Train
    }
}

/// Lazily generated dataset: scene `id` is regenerated from its own seed
/// stream on every access, so memory stays at one scene at a time.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub cfg: SynthConfig,
    pub n_scenes: u64,
    pub n_val: u64,
}

impl SynthDataset {
    /// `n_scenes` scenes with the default split.
    pub fn new(cfg: SynthConfig, n_scenes: u64) -> Result<Self> {
        Self::with_split(cfg, n_scenes, default_val_count(n_scenes))
    }

    pub fn with_split(cfg: SynthConfig, n_scenes: u64, n_val: u64) -> Result<Self> {
        cfg.validate()?;
        if n_scenes == 0 {
            return Err(Error::Config("empty dataset requested".into()));
        }
        if n_val > n_scenes {
            return Err(Error::Config(format!("{n_val} validation scenes requested out of {n_scenes}")));
        }
        Ok(Self { cfg, n_scenes, n_val })
    }

    pub fn split(&self, id: u64) -> Split {
        split_of(id, self.n_scenes, self.n_val)
    }

    pub fn scene(&self, id: u64) -> Result<Scene> {
        if id >= self.n_scenes {
            return Err(Error::Input(format!("scene {id} out of range (n = {})", self.n_scenes)));
        }
        gen_scene(&self.cfg, id, &mut scene_rng(&self.cfg, id))
    }

    pub fn ids(&self, split: Split) -> Vec<u64> {
        (0..self.n_scenes).filter(|&id| self.split(id) == split).collect()
    }

    /// Training view over the ids of `split`.
    pub fn view(&self, split: Split) -> SceneSubset<'_> {
        SceneSubset { data: self, ids: self.ids(split) }
    }
}

pub struct SceneSubset<'a> {
    data: &'a SynthDataset,
    pub ids: Vec<u64>,
}

impl<T: Real> SceneSource<T> for SceneSubset<'_> {
    fn len(&self) -> usize {
        self.ids.len()
    }

    fn example(&self, index: usize) -> Result<Cow<'_, TrainExample<T>>> {
        let id = *self.ids.get(index).ok_or_else(|| Error::Input(format!("scene index {index} out of range")))?;
        Ok(Cow::Owned(self.data.scene(id)?.to_example()))
    }
}

impl<T: Real> SceneSource<T> for [Scene] {
    fn len(&self) -> usize {
        <[Scene]>::len(self)
    }

    fn example(&self, index: usize) -> Result<Cow<'_, TrainExample<T>>> {
        let s = self.get(index).ok_or_else(|| Error::Input(format!("scene index {index} out of range")))?;
        Ok(Cow::Owned(s.to_example()))
    }
}

/// Generates `n` scenes eagerly with ids `0..n` and their splits.
pub fn gen_dataset(cfg: &SynthConfig, n_scenes: u64) -> Result<Vec<(Scene, Split)>> {
    let ds = SynthDataset::new(cfg.clone(), n_scenes)?;
    (0..n_scenes).map(|id| Ok((ds.scene(id)?, ds.split(id)))).collect()
}

/// Mean BEV IoU of each scene's initial detection against its ground truth.
pub fn mean_initial_iou(scenes: &[Scene]) -> f64 {
    let (mut acc, mut n) = (0.0, 0usize);
    for s in scenes {
        for (g, d) in s.gts.iter().zip(&s.initial_dets) {
            acc += bev_iou(&g.bbox.to_bev(), &d.bbox.to_bev());
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}
