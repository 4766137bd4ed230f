//! Desk-scale monocular 3D-human Gaussian reconstruction.
//!
//! The crate is organized around a small reverse-mode autodiff tensor engine
//! ([`tensor`]), a deterministic software rasterizer for ground-truth renders
//! ([`raster`]), a differentiable Gaussian splatting renderer ([`splat`]), a
//! simplified skinned humanoid body model ([`body`]), an encoder/decoder
//! reconstruction network with cross-view attention ([`net`]), losses and
//! evaluation metrics ([`losses`], [`metrics`]), and the training pipeline
//! that ties the stages together ([`pipeline`]).
//!
//! Core numerics are generic over the scalar type (`f32`/`f64`) via
//! [`scalar::Real`]; training runs in `f32`, gradient-check oracles in `f64`.

pub mod camera;
pub mod gaussian;
pub mod img;
pub mod mesh;
pub mod raster;
pub mod scalar;
pub mod splat;
pub mod tensor;

pub use scalar::Real;

/// Scalar type used by the training pipeline.
pub type Scalar = f32;
/// Tensor instantiation used by the training pipeline.
pub type Tensor32 = tensor::Tensor<f32>;
/// Tensor instantiation used by gradient-check oracles.
pub type Tensor64 = tensor::Tensor<f64>;
