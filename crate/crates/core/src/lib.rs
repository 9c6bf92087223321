//! Diffusion-based test-time adaptation for 3D point clouds.

pub mod adapt;
pub mod cli;
pub mod corpus;
pub mod corruptions;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod models;
pub mod recipe;
pub mod schedule;
pub mod seeding;
mod svg;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
