//! Soft decision trees on analog content-addressable memory.
//!
//! Trees are trained with CART, softened into path-probability models whose
//! node functions follow the sigmoid match behavior of a two-transistor analog
//! CAM cell, compiled into threshold-voltage arrays, and evaluated under device
//! threshold variation. A transistor-level match-line simulator serves as the
//! reference for the behavior model.

pub mod arch;
pub mod cammap;
pub mod camsim;
pub mod circuit;
pub mod data;
pub mod hardtree;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod robust;
pub mod softtree;
