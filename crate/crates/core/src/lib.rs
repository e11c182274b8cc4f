#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod density;
pub mod error;
pub mod gas;
pub mod geometry;
pub mod manifest;
pub mod mc;
pub mod quadrature;
pub mod special;
pub mod verify;

pub use error::{Error, Result};
