//! Runtime for sketch-annotated chart reasoning.
//!
//! A model reasons about a chart in text and interleaves small drawing
//! programs. [`dsl`] parses those programs, [`canvas`] keeps the marks across
//! turns, [`render`] draws them over the chart, and [`pipeline`] runs the
//! draw-feedback loop against a [`model`]. [`mcts`] searches over such
//! dialogues and mines preference samples, [`synthesis`] builds supervised
//! records, and [`harness`] evaluates datasets.

pub mod api;
pub mod canvas;
pub mod dataset;
pub mod dsl;
pub mod harness;
pub mod judge;
pub mod mcts;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod synthesis;

pub use canvas::{Canvas, Entity, Geometry, Pt, RenderError};
pub use dsl::{canonicalize, extract_blocks, parse_script, Color, Command, CoordMode, ParseDiagnostic, Script};
pub use render::{rasterize, BaseImage, RenderConfig};
