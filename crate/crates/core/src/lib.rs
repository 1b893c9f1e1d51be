//! Shared types and scoring math for a three-expert on-road anomaly detector.
//!
//! Bounding boxes live in normalized image coordinates (fractions of the
//! image width and height). Frames are indexed from 0.

pub mod error;
pub mod eval;
pub mod filter;
pub mod fusion;
pub mod geometry;
pub mod scene;
pub mod simgen;
pub mod trackio;
pub mod video;

pub use error::{Error, Result};
pub use geometry::{apply_transform, distance_score, infer_transform, BBox, TransformParams};
pub use video::{Involvement, ScoreSeries, Track, VideoRecord};
