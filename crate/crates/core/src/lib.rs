//! Constructive-primitive procedural content generation for a tile platformer.
//!
//! Segments are sampled, filtered by hard playability rules, scored by a
//! learned quality model and assembled into levels. A tabular Q-learning
//! policy adapts served difficulty to a simulated player.

pub mod active;
pub mod clustering;
pub mod content;
pub mod cp;
pub mod dataset;
pub mod dda;
pub mod level;
pub mod quality;
pub mod rng;
pub mod rules;
pub mod sampler;

pub use content::{ContentFeatures, SegmentGrid, Tile};
pub use cp::{CpEntry, CpSet};
pub use dataset::{Dataset, Label, SegmentRecord};
pub use level::Level;
pub use quality::QualityModel;
