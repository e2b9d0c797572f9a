//! Square face regions built from landmarks, and the canonical crop
//! bookkeeping that lets a reenacted face be pasted back exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{RasterImage, resize_region};

/// Number of points produced by the landmark model.
pub const LANDMARK_COUNT: usize = 106;
/// Side of the square crop every reenactment engine consumes and produces.
pub const CANONICAL_SIZE: u32 = 512;
pub const DEFAULT_PAD_FRAC: f64 = 0.30;
pub const DEFAULT_MIN_SIDE: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// The 106 landmark points of one face, in panel pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet(Vec<Point2D>);

impl LandmarkSet {
    pub fn new(points: Vec<Point2D>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::InvalidLandmarks(format!(
                "expected {LANDMARK_COUNT} points, got {}",
                points.len()
            )));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidLandmarks(format!("point {i} is not finite")));
        }
        Ok(Self(points))
    }

    pub fn from_pairs(pairs: &[[f64; 2]]) -> Result<Self> {
        Self::new(pairs.iter().map(|&[x, y]| Point2D::new(x, y)).collect())
    }

    /// Parses the fixture format: a JSON array of `[x, y]` pairs.
    pub fn from_json(text: &str) -> Result<Self> {
        let pairs: Vec<[f64; 2]> = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        Self::from_pairs(&pairs)
    }

    pub fn to_pairs(&self) -> Vec<[f64; 2]> {
        self.0.iter().map(|p| [p.x, p.y]).collect()
    }

    pub fn points(&self) -> &[Point2D] {
        &self.0
    }

    /// Translates and scales every point about the origin.
    pub fn transformed(&self, scale: f64, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|p| Point2D::new(p.x * scale + dx, p.y * scale + dy)).collect())
    }
}

impl Serialize for LandmarkSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_pairs().serialize(s)
    }
}

impl<'de> Deserialize<'de> for LandmarkSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Self::from_pairs(&pairs).map_err(serde::de::Error::custom)
    }
}

/// Axis-aligned box. Before clamping it may be fractional and may extend
/// past the panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub origin_x: f64,
    pub origin_y: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn new(origin_x: f64, origin_y: f64, width: f64, height: f64) -> Self {
        Self { origin_x, origin_y, width, height }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.origin_x + self.width / 2.0, self.origin_y + self.height / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.origin_x + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.origin_y + self.height
    }

    pub fn contains(&self, p: Point2D) -> bool {
        p.x >= self.origin_x && p.x <= self.right() && p.y >= self.origin_y && p.y <= self.bottom()
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn is_integral(&self) -> bool {
        [self.origin_x, self.origin_y, self.width, self.height].iter().all(|v| v.fract() == 0.0)
    }

    pub fn fits_within(&self, panel_width: u32, panel_height: u32) -> bool {
        self.origin_x >= 0.0
            && self.origin_y >= 0.0
            && self.right() <= panel_width as f64
            && self.bottom() <= panel_height as f64
    }
}

impl std::fmt::Display for BBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}x{})", self.origin_x, self.origin_y, self.width, self.height)
    }
}

/// How a region was framed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionSource {
    Auto,
    Manual,
}

/// A square panel region and its mapping onto the canonical crop.
///
/// This is the only record needed to go from panel to crop and back, so it
/// is validated on construction and never mutated afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub panel_id: String,
    pub square: BBox,
    pub side: u32,
    pub canonical_size: u32,
    pub scale: f64,
    pub source: RegionSource,
}

impl CropSpec {
    pub fn x(&self) -> u32 {
        self.square.origin_x as u32
    }

    pub fn y(&self) -> u32 {
        self.square.origin_y as u32
    }

    /// `scale` as an exact ratio `(canonical_size, side)`.
    pub fn scale_ratio(&self) -> (u32, u32) {
        (self.canonical_size, self.side)
    }

    /// Re-checks the invariants a deserialized spec must satisfy.
    pub fn validate(&self, min_side: u32) -> Result<()> {
        let sq = &self.square;
        if !sq.is_square() || !sq.is_integral() || sq.origin_x < 0.0 || sq.origin_y < 0.0 {
            return Err(Error::Malformed(format!("crop square {sq} is not an integral square")));
        }
        if sq.width != self.side as f64 || self.canonical_size != CANONICAL_SIZE {
            return Err(Error::Malformed("crop spec side/canonical size mismatch".into()));
        }
        if self.side < min_side {
            return Err(Error::SideTooSmall { side: self.side, min_side });
        }
        if self.scale != CANONICAL_SIZE as f64 / self.side as f64 {
            return Err(Error::Malformed(format!("crop scale {} != 512/{}", self.scale, self.side)));
        }
        Ok(())
    }

    pub fn check_inside(&self, panel_width: u32, panel_height: u32) -> Result<()> {
        if self.square.fits_within(panel_width, panel_height) {
            Ok(())
        } else {
            Err(Error::SpecOutOfBounds {
                square: self.square.to_string(),
                width: panel_width,
                height: panel_height,
            })
        }
    }
}

/// Min/max hull of the landmark points.
pub fn tight_bbox(landmarks: &LandmarkSet) -> Result<BBox> {
    let pts = landmarks.points();
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in pts {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let bbox = BBox::new(x0, y0, x1 - x0, y1 - y0);
    if bbox.width == 0.0 || bbox.height == 0.0 {
        return Err(Error::DegenerateLandmarks);
    }
    Ok(bbox)
}

/// Concentric square around `bbox` with side
/// `round(max(w, h) * (1 + 2 * pad_frac))`, never smaller than the box.
pub fn squarify_pad(bbox: BBox, pad_frac: f64) -> Result<BBox> {
    if !(0.0..=1.0).contains(&pad_frac) {
        return Err(Error::InvalidArgument(format!("pad_frac {pad_frac} outside [0, 1]")));
    }
    if !(bbox.width > 0.0 && bbox.height > 0.0) {
        return Err(Error::DegenerateLandmarks);
    }
    let extent = bbox.width.max(bbox.height);
    let side = (extent * (1.0 + 2.0 * pad_frac)).round().max(extent.ceil());
    let (cx, cy) = bbox.center();
    Ok(BBox::new(cx - side / 2.0, cy - side / 2.0, side, side))
}

/// Fits a square inside the panel: the side shrinks to the panel's shorter
/// dimension, then the square moves the minimal distance needed. Result is
/// integral.
pub fn clamp_square(square: BBox, panel_width: u32, panel_height: u32, min_side: u32) -> Result<BBox> {
    if !square.is_square() {
        return Err(Error::InvalidArgument(format!("{square} is not square")));
    }
    if panel_width.min(panel_height) < min_side {
        return Err(Error::PanelTooSmall { width: panel_width, height: panel_height, min_side });
    }
    let side = square.width.round().max(0.0).min(panel_width.min(panel_height) as f64);
    let x = square.origin_x.round().clamp(0.0, panel_width as f64 - side);
    let y = square.origin_y.round().clamp(0.0, panel_height as f64 - side);
    Ok(BBox::new(x, y, side, side))
}

pub fn make_crop_spec(panel_id: &str, square: BBox, source: RegionSource, min_side: u32) -> Result<CropSpec> {
    if !square.is_square() || !square.is_integral() || square.origin_x < 0.0 || square.origin_y < 0.0 {
        return Err(Error::InvalidArgument(format!("{square} is not a clamped integral square")));
    }
    let side = square.width as u32;
    if side < min_side {
        return Err(Error::SideTooSmall { side, min_side });
    }
    Ok(CropSpec {
        panel_id: panel_id.to_owned(),
        square,
        side,
        canonical_size: CANONICAL_SIZE,
        scale: CANONICAL_SIZE as f64 / side as f64,
        source,
    })
}

/// Resamples the spec's square to the 512x512 three-channel canonical crop.
pub fn extract_crop(panel: &RasterImage, spec: &CropSpec) -> Result<RasterImage> {
    spec.check_inside(panel.width(), panel.height())?;
    let crop =
        resize_region(panel, spec.x(), spec.y(), spec.side, spec.side, CANONICAL_SIZE, CANONICAL_SIZE)?;
    Ok(crop.to_rgb())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Channels;

    fn landmarks_with_hull(x0: f64, y0: f64, x1: f64, y1: f64) -> LandmarkSet {
        let mut pts = vec![Point2D::new(x0, y0), Point2D::new(x1, y1)];
        for i in 0..104 {
            let t = (i as f64 + 1.0) / 106.0;
            pts.push(Point2D::new(x0 + (x1 - x0) * t, y1 - (y1 - y0) * t * t));
        }
        LandmarkSet::new(pts).unwrap()
    }

    #[test]
    fn tight_bbox_is_the_hull() {
        let lm = landmarks_with_hull(0.0, 0.0, 10.0, 20.0);
        assert_eq!(tight_bbox(&lm).unwrap(), BBox::new(0.0, 0.0, 10.0, 20.0));
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let lm = LandmarkSet::new(vec![Point2D::new(5.0, 5.0); 106]).unwrap();
        assert!(matches!(tight_bbox(&lm), Err(Error::DegenerateLandmarks)));
    }

    #[test]
    fn landmark_count_is_enforced() {
        assert!(LandmarkSet::new(vec![Point2D::new(1.0, 1.0); 68]).is_err());
        let mut pts = vec![Point2D::new(1.0, 1.0); 106];
        pts[7].x = f64::NAN;
        assert!(LandmarkSet::new(pts).is_err());
    }

    #[test]
    fn squarify_examples() {
        let sq = squarify_pad(BBox::new(0.0, 0.0, 10.0, 20.0), 0.0).unwrap();
        assert_eq!(sq, BBox::new(-5.0, 0.0, 20.0, 20.0));
        let sq = squarify_pad(BBox::new(100.0, 100.0, 100.0, 100.0), 0.25).unwrap();
        assert_eq!(sq, BBox::new(75.0, 75.0, 150.0, 150.0));
        assert!(squarify_pad(BBox::new(0.0, 0.0, 1.0, 1.0), 1.5).is_err());
    }

    #[test]
    fn squarify_never_cuts_the_hull() {
        // round(10.4) would be 10
        let sq = squarify_pad(BBox::new(0.0, 0.0, 10.4, 3.0), 0.0).unwrap();
        assert_eq!(sq.width, 11.0);
    }

    #[test]
    fn clamp_examples() {
        let c = clamp_square(BBox::new(-5.0, 0.0, 20.0, 20.0), 100, 100, 32).unwrap();
        assert_eq!(c, BBox::new(0.0, 0.0, 20.0, 20.0));
        let c = clamp_square(BBox::new(10.0, 10.0, 200.0, 200.0), 120, 150, 32).unwrap();
        assert_eq!(c, BBox::new(0.0, 10.0, 120.0, 120.0));
        assert!(matches!(
            clamp_square(BBox::new(0.0, 0.0, 20.0, 20.0), 31, 500, 32),
            Err(Error::PanelTooSmall { .. })
        ));
    }

    #[test]
    fn crop_spec_scales() {
        for (side, scale) in [(256, 2.0), (512, 1.0), (200, 2.56)] {
            let s = side as f64;
            let spec = make_crop_spec("p", BBox::new(0.0, 0.0, s, s), RegionSource::Auto, 32).unwrap();
            assert_eq!(spec.scale, scale);
            assert_eq!(spec.scale_ratio(), (512, side));
            spec.validate(32).unwrap();
        }
        assert!(matches!(
            make_crop_spec("p", BBox::new(0.0, 0.0, 31.0, 31.0), RegionSource::Auto, 32),
            Err(Error::SideTooSmall { side: 31, min_side: 32 })
        ));
    }

    #[test]
    fn extract_rejects_stale_spec() {
        let panel = RasterImage::filled(100, 100, Channels::Gray, 0).unwrap();
        let spec = make_crop_spec("p", BBox::new(60.0, 0.0, 64.0, 64.0), RegionSource::Manual, 32).unwrap();
        assert_eq!(extract_crop(&panel, &spec).unwrap_err().code(), "SpecOutOfBounds");
    }

    #[test]
    fn extract_constant_region() {
        let panel = RasterImage::filled(300, 300, Channels::Rgb, 137).unwrap();
        let spec = make_crop_spec("p", BBox::new(10.0, 20.0, 256.0, 256.0), RegionSource::Auto, 32).unwrap();
        let crop = extract_crop(&panel, &spec).unwrap();
        assert_eq!((crop.width(), crop.height(), crop.channels()), (512, 512, Channels::Rgb));
        assert!(crop.data().iter().all(|&v| v == 137));
    }

    #[test]
    fn extract_512_gray_is_a_copy() {
        let panel =
            RasterImage::from_fn(600, 530, Channels::Gray, |x, y, _| ((x * 7) ^ (y * 13)) as u8).unwrap();
        let spec = make_crop_spec("p", BBox::new(40.0, 9.0, 512.0, 512.0), RegionSource::Auto, 32).unwrap();
        let crop = extract_crop(&panel, &spec).unwrap();
        for y in 0..512 {
            for x in 0..512 {
                let v = panel.pixel(x + 40, y + 9)[0];
                assert_eq!(crop.pixel(x, y), &[v, v, v]);
            }
        }
    }
}
