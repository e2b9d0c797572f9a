//! Core pipeline for giving static manga characters new facial expressions.
//!
//! The work happens in three stages:
//!
//! 1. **Preparation** ([`prepare`], [`geometry`]): faces are framed either
//!    from 106 detected landmarks or by hand, producing a [`CropSpec`] that
//!    records exactly where the 512x512 canonical crop came from.
//! 2. **Expression mapping** ([`session`], [`reenact`]): a driving
//!    performance is reenacted frame by frame onto the crop; the artist
//!    scrubs the results, adjusts the eye/lip sliders and commits one
//!    keyframe.
//! 3. **Composition** ([`compose`]): committed faces are resized back and
//!    pasted at their recorded coordinates, with a seam report for the
//!    artist's own touch-up.
//!
//! [`store`] persists all of it as a manifest plus content-addressed PNGs.

pub mod compose;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod media;
pub mod prepare;
pub mod raster;
pub mod reenact;
pub mod session;
pub mod store;
mod subprocess;
pub mod workers;

pub use compose::{ComposeOptions, ComposedPanel, SeamReport, compose, seam_metrics};
pub use error::{Error, Result};
pub use geometry::{
    BBox, CANONICAL_SIZE, CropSpec, LandmarkSet, Point2D, RegionSource, clamp_square, extract_crop,
    make_crop_spec, squarify_pad, tight_bbox,
};
pub use media::{Decimation, FfmpegDecoder, MediaDecoder, ingest_performance};
pub use prepare::{
    DetectedFace, DetectorAdapter, ExternalDetector, MockDetector, PrepSettings, PreparedRegion,
    RegionWarning, detect_faces, manual_frame, prepare_regions,
};
pub use raster::{Channels, RasterImage};
pub use reenact::{
    EngineDescriptor, EngineRegistry, ExternalEngine, IdentityEngine, MotionMode, ReenactedFrame,
    ReenactmentEngine, RetargetParams, StampEngine, reenact,
};
pub use session::{
    DrivingPerformance, MappedFace, MappingSession, Provenance, SessionSnapshot, SessionState, SharedSession,
};
pub use store::Project;
