//! Toolchain for the TinyissimoYOLO family of grid object detectors on
//! microcontroller-class hardware.
//!
//! - [`model`]: parameterized network graphs, parameter/MAC/memory accounting
//! - [`quant`]: min-max calibration and integerization with dyadic requantization
//! - [`exec`]: bit-exact integer inference
//! - [`container`], [`image`]: weight/activation files and PGM/PPM inputs
//! - [`head`]: grid decoding, NMS and PascalVOC-style mAP
//! - [`tiler`]: L1/L2/L3 tiling plans and a simulated tiled executor
//! - [`perf`]: cycle, latency, power and energy models, Pareto fronts and
//!   comparison against reference measurements
//! - [`cli`]: the `ty` command-line front end

pub mod cli;
pub mod container;
pub mod exec;
pub mod head;
pub mod image;
pub mod model;
pub mod perf;
pub mod quant;
pub mod tensor;
pub mod tiler;
