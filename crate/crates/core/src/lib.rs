//! Crowd segmentation toolkit: mask rasters and codecs, thresholded majority-vote
//! fusion, overlap metrics with confidence intervals, campaign ingest, toy and
//! remote image synthesis, and dataset manifest assembly.

pub mod brush;
pub mod dataset;
pub mod demo;
pub mod fusion;
pub mod ingest;
pub mod mask;
pub mod metrics;
pub mod raster;
pub mod synth;

pub use mask::{BinaryPlane, BoundingBoxPct, ClassPalette, LabelMap, PaletteEntry, PixelRect, RleMask};
pub use raster::GrayImage;
