//! Core engine for turning one demonstrated GUI task into a runnable script.
//!
//! The pipeline runs demonstration log → action segmentation → target
//! detector training (with teacher follow-up questions) → script → execution
//! against an [`runtime::ExecutionBackend`].

pub mod action;
pub mod detection;
pub mod fixtures;
pub mod forest;
pub mod geometry;
pub mod log;
pub mod recognition;
pub mod render;
pub mod runtime;
pub mod script;
pub mod teaching;
pub mod video;

pub use action::BasicAction;
pub use geometry::{Point, Rect};
