//! Label-map conditioned image synthesis for aerial crop tiles.
//!
//! The crate covers the full loop used to augment a detection dataset with
//! synthetic imagery: rasterizing box annotations into binary label maps,
//! training image-to-image GANs (a coarse-to-fine generator and a
//! spatially-adaptive one) on tile/label-map pairs, sampling new label maps
//! from the empirical box distribution, rendering synthetic tiles from them,
//! and scoring detector output with mAP and counting-error metrics.
//!
//! Every module is usable on its own; `pipeline` wires them into the
//! `panicle-synth` command-line tool. Start with the `examples/` directory
//! for runnable walkthroughs of each capability.

pub mod data;
pub mod eval;
pub mod gen;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod toydata;
pub mod trainer;
