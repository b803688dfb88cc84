//! Energy-based regression for oriented 3D bounding boxes.
//!
//! A box `y = (c_x, c_y, c_z, h, w, l, phi)` is scored by a small network
//! `f(x, y)` that pools a bird's-eye-view feature map inside the rotated box
//! footprint. The network is trained with noise contrastive estimation and
//! used at test time to refine detections by guarded gradient ascent.
//!
//! Numeric modules are generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the double-precision instantiation used by evaluation, file
//! formats, and the synthetic harness.

pub mod energynet;
pub mod error;
pub mod evalkit;
pub mod featuregrid;
pub mod geometry;
pub mod kittiio;
pub mod nce;
pub mod pooling;
pub mod refine;
pub mod scalar;
pub mod synthscene;

mod csv;
pub mod rng;

pub use error::{Error, Result};
pub use scalar::Real;

pub use energynet::{EnergyEval, EnergyNet, NetDims};
pub use evalkit::{ApResult, Difficulty, EvalMode, GroundTruth};
pub use featuregrid::FeatureGrid;
pub use geometry::{bev_iou, iou_3d, Box3, BoxBev, ConvexPolygon};
pub use nce::{NoiseModel, TrainConfig};
pub use pooling::PoolConfig;
pub use refine::{Detection, RefineConfig};
pub use synthscene::{Scene, SynthConfig};

/// 7-dof box in double precision.
pub type Box3D = geometry::Box3<f64>;
/// 5-dof bird's-eye-view box in double precision.
pub type BoxBEV = geometry::BoxBev<f64>;
pub type Grid = featuregrid::FeatureGrid<f64>;
pub type Net = energynet::EnergyNet<f64>;
pub type Noise = nce::NoiseModel<f64>;
pub type Det = refine::Detection<f64>;

/// Crate version recorded in output headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
