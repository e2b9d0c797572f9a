//! Pasting committed faces back onto their panel and measuring the seams.
//!
//! The default is a hard paste: each face is resized back to its recorded
//! side and written at its recorded origin. Seams are reported, not fixed;
//! an optional linear feather is the only blending offered.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CropSpec;
use crate::raster::{Channels, RasterImage, quantize, resize};
use crate::session::{MappedFace, Provenance};

pub const DEFAULT_SEAM_MARGIN: u32 = 4;

/// Mean absolute difference per channel over a set of pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub pixels: usize,
    pub mean_abs_diff: Vec<f64>,
}

impl BandStats {
    pub fn max_channel(&self) -> f64 {
        self.mean_abs_diff.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_clean(&self) -> bool {
        self.mean_abs_diff.iter().all(|&d| d == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSides {
    pub top: BandStats,
    pub bottom: BandStats,
    pub left: BandStats,
    pub right: BandStats,
    pub all: BandStats,
}

/// Seam statistics for one pasted square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceSeam {
    pub crop_spec: CropSpec,
    /// The outermost one-pixel ring inside the pasted square.
    pub inner: BandSides,
    /// The `margin`-pixel ring just outside the square, clipped to the panel.
    pub outer: BandSides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeamReport {
    pub margin: u32,
    pub faces: Vec<FaceSeam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapWarning {
    /// Position of the face painted first.
    pub earlier: usize,
    /// Position of the face painted over it.
    pub later: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PastedFace {
    pub crop_spec: CropSpec,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedPanel {
    pub image: RasterImage,
    pub pasted: Vec<PastedFace>,
    pub seams: SeamReport,
    pub overlaps: Vec<OverlapWarning>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposeOptions {
    pub feather_width: u32,
    pub seam_margin: u32,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        Self { feather_width: 0, seam_margin: DEFAULT_SEAM_MARGIN }
    }
}

/// Weight of the face at distance `depth` from the nearest square edge.
pub fn feather_weight(depth: u32, feather_width: u32) -> f64 {
    if feather_width == 0 { 1.0 } else { (depth as f64 / feather_width as f64).min(1.0) }
}

fn squares_overlap(a: &CropSpec, b: &CropSpec) -> bool {
    let (ax, ay, bx, by) = (a.x(), a.y(), b.x(), b.y());
    ax < bx + b.side && bx < ax + a.side && ay < by + b.side && by < ay + a.side
}

/// Pastes `faces` in order (later over earlier) onto a copy of `panel`.
pub fn compose(
    panel: &RasterImage,
    panel_id: &str,
    faces: &[MappedFace],
    options: ComposeOptions,
) -> Result<ComposedPanel> {
    for face in faces {
        if face.crop_spec.panel_id != panel_id {
            return Err(Error::MismatchedPanel {
                face: face.crop_spec.panel_id.clone(),
                panel: panel_id.to_owned(),
            });
        }
        face.crop_spec.check_inside(panel.width(), panel.height())?;
    }
    let mut overlaps = Vec::new();
    for (j, later) in faces.iter().enumerate() {
        for (i, earlier) in faces[..j].iter().enumerate() {
            if squares_overlap(&earlier.crop_spec, &later.crop_spec) {
                tracing::warn!(earlier = i, later = j, "pasted faces overlap");
                overlaps.push(OverlapWarning { earlier: i, later: j });
            }
        }
    }

    let mut out = panel.clone();
    let gray = panel.channels() == Channels::Gray;
    for face in faces {
        let spec = &face.crop_spec;
        let side = spec.side;
        let patch = resize(&face.image, side, side)?;
        for dy in 0..side {
            for dx in 0..side {
                let depth = dx.min(dy).min(side - 1 - dx).min(side - 1 - dy);
                let w = feather_weight(depth, options.feather_width);
                let src = patch.pixel(dx, dy);
                let dst = out.pixel_mut(spec.x() + dx, spec.y() + dy);
                let src = if gray { &src[..1] } else { src };
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = if w >= 1.0 { s } else { quantize(w * s as f64 + (1.0 - w) * *d as f64) };
                }
            }
        }
    }

    let seams = seam_metrics(panel, &out, faces, options.seam_margin);
    Ok(ComposedPanel {
        image: out,
        pasted: faces
            .iter()
            .map(|f| PastedFace { crop_spec: f.crop_spec.clone(), provenance: f.provenance.clone() })
            .collect(),
        seams,
        overlaps,
    })
}

type Rect = (i64, i64, i64, i64); // x0, y0, x1, y1 (exclusive)

fn band_stats(original: &RasterImage, composed: &RasterImage, rects: &[Rect]) -> BandStats {
    let c = original.channels().count().min(composed.channels().count());
    let w = original.width().min(composed.width()) as i64;
    let h = original.height().min(composed.height()) as i64;
    let mut seen = std::collections::HashSet::new();
    let mut sums = vec![0u64; c];
    for &(x0, y0, x1, y1) in rects {
        for y in y0.max(0)..y1.min(h) {
            for x in x0.max(0)..x1.min(w) {
                if !seen.insert((x, y)) {
                    continue;
                }
                let a = original.pixel(x as u32, y as u32);
                let b = composed.pixel(x as u32, y as u32);
                for ch in 0..c {
                    sums[ch] += a[ch].abs_diff(b[ch]) as u64;
                }
            }
        }
    }
    let pixels = seen.len();
    let mean_abs_diff =
        sums.iter().map(|&s| if pixels == 0 { 0.0 } else { s as f64 / pixels as f64 }).collect();
    BandStats { pixels, mean_abs_diff }
}

fn band_sides(original: &RasterImage, composed: &RasterImage, sides: [Rect; 4]) -> BandSides {
    let stat = |r: &[Rect]| band_stats(original, composed, r);
    BandSides {
        top: stat(&sides[..1]),
        bottom: stat(&sides[1..2]),
        left: stat(&sides[2..3]),
        right: stat(&sides[3..]),
        all: stat(&sides),
    }
}

/// Per-face difference between the original and composed panel along the
/// inner edge ring and the surrounding `margin` ring of each pasted square.
pub fn seam_metrics(
    original: &RasterImage,
    composed: &RasterImage,
    faces: &[MappedFace],
    margin: u32,
) -> SeamReport {
    let m = margin as i64;
    let faces = faces
        .iter()
        .map(|face| {
            let spec = &face.crop_spec;
            let (x0, y0, s) = (spec.x() as i64, spec.y() as i64, spec.side as i64);
            let (x1, y1) = (x0 + s, y0 + s);
            let inner =
                [(x0, y0, x1, y0 + 1), (x0, y1 - 1, x1, y1), (x0, y0, x0 + 1, y1), (x1 - 1, y0, x1, y1)];
            let outer = [
                (x0 - m, y0 - m, x1 + m, y0),
                (x0 - m, y1, x1 + m, y1 + m),
                (x0 - m, y0, x0, y1),
                (x1, y0, x1 + m, y1),
            ];
            FaceSeam {
                crop_spec: spec.clone(),
                inner: band_sides(original, composed, inner),
                outer: band_sides(original, composed, outer),
            }
        })
        .collect();
    SeamReport { margin, faces }
}
