//! Multi-agent chest X-ray diagnostic orchestration.
//!
//! The crate wires specialized CXR classifiers and report generators behind a
//! small JSON-RPC tool protocol, interprets their Grad-CAM heatmaps against a
//! lung segmentation, cross-validates the collected evidence, and produces a
//! fourteen-label diagnosis either through a remote reasoning model or a
//! deterministic fusion fallback. A reward module scores think-then-answer
//! transcripts for trainer integration.

pub mod agents;
pub mod anatomy;
pub mod mcp;
pub mod pathology;
pub mod pipeline;
pub mod raster;
pub mod reasoning;
pub mod reward;

pub use pathology::Pathology;
