//! File formats: binary PPM images, checkpoints, key=value run
//! configurations, compressed measurement files and CSV results.

pub mod checkpoint;
pub mod config;
pub mod measurements;
pub mod ppm;
pub mod results;
