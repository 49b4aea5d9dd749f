//! lesionforge: procedural 3D brain-lesion synthesis and seamless
//! composition for segmentation data augmentation.
//!
//! The crate covers the full augmentation path without any neural
//! component: procedural lesion masks (ellipsoid unions, elastic warps,
//! Perlin boundary roughening), host-intensity texture harvesting,
//! Soft Poisson Blending in 3D, anatomically constrained placement,
//! PCA-constrained latent sampling over externally supplied embedding
//! matrices, and the prototype-consistency losses used to align real
//! and synthetic lesion features during downstream training.

// indexed loops are the house style for voxel kernels
#![allow(clippy::needless_range_loop)]

pub mod edt;
pub mod error;
pub mod io;
pub mod latent;
pub mod linalg;
pub mod mask;
pub mod noise;
pub mod pipeline;
pub mod placement;
pub mod proto;
pub mod rng;
pub mod slices;
pub mod spb;
pub mod texture;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{LabelMap3, Patch, Volume3};
