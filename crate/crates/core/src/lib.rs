#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

//! Dense 3D body reconstruction toolkit built around UV position maps.

pub mod binio;
pub mod body_model;
pub mod camera_align;
pub mod cli;
pub mod error;
pub mod fitting;
pub mod metrics;
pub mod objective;
pub mod rotation;
pub mod uv;

pub use error::{Error, Result};
