//! Geometry and algorithms for sphere-aware, route-controlled panoramic video
//! models.
//!
//! - [`sphere`]: ERP pixel <-> unit sphere, great-circle and rotation-compensated distances
//! - [`plucker`]: per-pixel Plücker embeddings of camera routes
//! - [`mask`]: sparse sphere-aware attention masks
//! - [`route`]: navmesh route sampling over synthetic walkable scenes
//! - [`panodit`]: a small three-branch attention block with a hand-written backward pass
//! - [`metrics`]: rotation/translation error, PSNR and SSIM
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below name the double-precision instantiations used throughout the
//! tools and tests.

mod binio;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod panodit;
pub mod plucker;
pub mod route;
pub mod scalar;
pub mod sphere;

pub use error::{Error, Result};
pub use mask::{BiasMode, SphereMask, TokenGrid};
pub use metrics::{ImageFrame, PixelRange, PoseSequence};
pub use panodit::{BlockConfig, BlockWeights, Matrix};
pub use plucker::{CameraPose, PinholeIntrinsics, PluckerField, RayModel};
pub use route::{ExplorationRoute, NavMesh, Polyline, WalkableScene};
pub use scalar::Scalar;
pub use sphere::{ErpGrid, EulerAngles, Rotation3, SphericalPoint};

pub type SphericalPointF64 = SphericalPoint<f64>;
pub type SphericalPointF32 = SphericalPoint<f32>;
pub type EulerAnglesF64 = EulerAngles<f64>;
pub type Rotation3F64 = Rotation3<f64>;
pub type CameraPoseF64 = CameraPose<f64>;
pub type PinholeIntrinsicsF64 = PinholeIntrinsics<f64>;
pub type PluckerFieldF64 = PluckerField<f64>;
pub type PluckerFieldF32 = PluckerField<f32>;
pub type MatrixF64 = Matrix<f64>;
pub type BlockWeightsF64 = BlockWeights<f64>;
pub type PoseSequenceF64 = PoseSequence<f64>;
pub type ImageFrameF64 = ImageFrame<f64>;
pub type ImageFrameF32 = ImageFrame<f32>;
