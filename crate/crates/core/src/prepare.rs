//! Face preparation: landmark-based auto-detection through a pluggable
//! detector, and manual framing. Both produce the same [`PreparedRegion`].

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    BBox, CropSpec, DEFAULT_MIN_SIDE, DEFAULT_PAD_FRAC, LANDMARK_COUNT, LandmarkSet, RegionSource,
    clamp_square, make_crop_spec, squarify_pad, tight_bbox,
};
use crate::raster::RasterImage;
use crate::subprocess::{ExchangeError, exchange, program_exists};
use crate::workers::bounded_map;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedFace {
    pub landmarks: LandmarkSet,
    pub confidence: f64,
    pub yaw_degrees: Option<f64>,
    /// Detector-native box. Informational only, never used for cropping.
    pub bbox_hint: Option<BBox>,
}

/// One face as reported on the detector wire, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFace {
    pub landmarks: Vec<[f64; 2]>,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum FacesDocument {
    Wrapped { faces: Vec<RawFace> },
    Bare(Vec<RawFace>),
}

/// Parses a detector response document: `{"faces": [...]}` or a bare array.
pub fn parse_faces_document(text: &str) -> Result<Vec<RawFace>> {
    match serde_json::from_str::<FacesDocument>(text) {
        Ok(FacesDocument::Wrapped { faces }) | Ok(FacesDocument::Bare(faces)) => Ok(faces),
        Err(e) => Err(Error::AdapterProtocolError(format!("unparseable detector output: {e}"))),
    }
}

pub fn faces_document(faces: &[RawFace]) -> String {
    serde_json::json!({ "faces": faces }).to_string()
}

/// A face-analysis backend. Implementations must be deterministic for a
/// fixed model version and input.
pub trait DetectorAdapter: Send + Sync {
    fn name(&self) -> &str;

    fn max_concurrency(&self) -> usize {
        1
    }

    fn detect_raw(&self, panel: &RasterImage) -> Result<Vec<RawFace>>;
}

/// Replays a fixed list of faces for every panel.
#[derive(Debug, Clone, Default)]
pub struct MockDetector {
    faces: Vec<RawFace>,
}

impl MockDetector {
    pub fn new(faces: Vec<RawFace>) -> Self {
        Self { faces }
    }

    /// Reads a detector response document from disk.
    pub fn from_fixture(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::AdapterUnavailable(format!("{}: {e}", path.display())))?;
        Ok(Self::new(parse_faces_document(&text)?))
    }
}

impl DetectorAdapter for MockDetector {
    fn name(&self) -> &str {
        "mock"
    }

    fn max_concurrency(&self) -> usize {
        crate::workers::default_parallelism()
    }

    fn detect_raw(&self, _panel: &RasterImage) -> Result<Vec<RawFace>> {
        Ok(self.faces.clone())
    }
}

/// Out-of-process detector: panel PNG on stdin, faces document on stdout.
#[derive(Debug, Clone)]
pub struct ExternalDetector {
    program: PathBuf,
    args: Vec<String>,
    timeout: Duration,
}

impl ExternalDetector {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self { program: program.into(), args, timeout: Duration::from_secs(60) }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl DetectorAdapter for ExternalDetector {
    fn name(&self) -> &str {
        "external"
    }

    fn detect_raw(&self, panel: &RasterImage) -> Result<Vec<RawFace>> {
        let program = self.program.to_string_lossy();
        if !program_exists(&program) {
            return Err(Error::AdapterUnavailable(format!("{program} not found")));
        }
        let out = exchange(&program, &self.args, panel.encode_png(), self.timeout).map_err(|e| match e {
            ExchangeError::Spawn(_) | ExchangeError::Timeout(_) => Error::AdapterUnavailable(e.to_string()),
            _ => Error::AdapterProtocolError(e.to_string()),
        })?;
        let text = String::from_utf8(out)
            .map_err(|_| Error::AdapterProtocolError("detector output is not UTF-8".into()))?;
        parse_faces_document(&text)
    }
}

/// Validated faces plus diagnostics for anything dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detection {
    pub faces: Vec<DetectedFace>,
    pub diagnostics: Vec<String>,
}

fn validate_face(i: usize, raw: RawFace) -> Result<std::result::Result<DetectedFace, String>> {
    if !(0.0..=1.0).contains(&raw.confidence) {
        return Err(Error::AdapterProtocolError(format!(
            "face {i}: confidence {} outside [0, 1]",
            raw.confidence
        )));
    }
    if let Some(yaw) = raw.yaw
        && !(-180.0..=180.0).contains(&yaw)
    {
        return Err(Error::AdapterProtocolError(format!("face {i}: yaw {yaw} outside [-180, 180]")));
    }
    if raw.landmarks.len() != LANDMARK_COUNT {
        return Ok(Err(format!(
            "face {i} dropped: {} landmarks, expected {LANDMARK_COUNT}",
            raw.landmarks.len()
        )));
    }
    match LandmarkSet::from_pairs(&raw.landmarks) {
        Ok(landmarks) => Ok(Ok(DetectedFace {
            landmarks,
            confidence: raw.confidence,
            yaw_degrees: raw.yaw,
            bbox_hint: raw.bbox,
        })),
        Err(e) => Ok(Err(format!("face {i} dropped: {e}"))),
    }
}

/// Runs the detector and keeps only faces with exactly 106 finite landmarks.
pub fn detect_faces(panel: &RasterImage, adapter: &dyn DetectorAdapter) -> Result<Detection> {
    let raw = adapter.detect_raw(panel)?;
    let mut detection = Detection::default();
    for (i, face) in raw.into_iter().enumerate() {
        match validate_face(i, face)? {
            Ok(face) => detection.faces.push(face),
            Err(msg) => {
                tracing::warn!(detector = adapter.name(), "{msg}");
                detection.diagnostics.push(msg);
            }
        }
    }
    Ok(detection)
}

/// Detects faces on several panels, at most `adapter.max_concurrency()` at a time.
pub fn detect_faces_batch(panels: &[RasterImage], adapter: &dyn DetectorAdapter) -> Vec<Result<Detection>> {
    bounded_map(panels, adapter.max_concurrency(), |p| detect_faces(p, adapter))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionWarning {
    SmallFace,
    ExtremePose,
    LowConfidence,
}

/// Padding, minimum size and warning thresholds for preparation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepSettings {
    pub pad_frac: f64,
    pub min_side: u32,
    /// Pre-clamp sides below this get [`RegionWarning::SmallFace`].
    pub small_face_side: u32,
    /// `|yaw|` above this gets [`RegionWarning::ExtremePose`].
    pub extreme_yaw_degrees: f64,
    /// Confidence below this gets [`RegionWarning::LowConfidence`].
    pub low_confidence: f64,
}

impl Default for PrepSettings {
    fn default() -> Self {
        Self {
            pad_frac: DEFAULT_PAD_FRAC,
            min_side: DEFAULT_MIN_SIDE,
            small_face_side: 64,
            extreme_yaw_degrees: 45.0,
            low_confidence: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedRegion {
    pub crop_spec: CropSpec,
    pub origin: RegionSource,
    pub warnings: Vec<RegionWarning>,
    pub face_index: u32,
}

/// A detected face that could not become a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparationFailure {
    /// Position of the face in the detector output.
    pub detection_index: usize,
    /// Padded square before clamping, when one could be built.
    pub square: Option<BBox>,
    pub code: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Preparation {
    pub regions: Vec<PreparedRegion>,
    pub failures: Vec<PreparationFailure>,
}

/// Turns validated faces into ordered regions. Faces too small after
/// clamping are reported as failures rather than dropped.
pub fn prepare_regions(
    faces: &[DetectedFace],
    panel_id: &str,
    panel_width: u32,
    panel_height: u32,
    settings: &PrepSettings,
) -> Preparation {
    let mut prep = Preparation::default();
    let mut ready = Vec::new();
    for (i, face) in faces.iter().enumerate() {
        let fail = |square, e: Error| PreparationFailure {
            detection_index: i,
            square,
            code: e.code().to_owned(),
            reason: e.to_string(),
        };
        let padded = match tight_bbox(&face.landmarks).and_then(|b| squarify_pad(b, settings.pad_frac)) {
            Ok(p) => p,
            Err(e) => {
                prep.failures.push(fail(None, e));
                continue;
            }
        };
        let spec = clamp_square(padded, panel_width, panel_height, settings.min_side)
            .and_then(|sq| make_crop_spec(panel_id, sq, RegionSource::Auto, settings.min_side));
        let spec = match spec {
            Ok(s) => s,
            Err(e) => {
                prep.failures.push(fail(Some(padded), e));
                continue;
            }
        };
        let mut warnings = Vec::new();
        if padded.width < settings.small_face_side as f64 {
            warnings.push(RegionWarning::SmallFace);
        }
        if face.yaw_degrees.is_some_and(|y| y.abs() > settings.extreme_yaw_degrees) {
            warnings.push(RegionWarning::ExtremePose);
        }
        if face.confidence < settings.low_confidence {
            warnings.push(RegionWarning::LowConfidence);
        }
        ready.push((spec, warnings));
    }
    ready.sort_by(|(a, _), (b, _)| {
        b.side
            .cmp(&a.side)
            .then(a.square.origin_x.total_cmp(&b.square.origin_x))
            .then(a.square.origin_y.total_cmp(&b.square.origin_y))
    });
    prep.regions = ready
        .into_iter()
        .enumerate()
        .map(|(i, (crop_spec, warnings))| PreparedRegion {
            crop_spec,
            origin: RegionSource::Auto,
            warnings,
            face_index: i as u32,
        })
        .collect();
    prep
}

/// Turns an artist-drawn rectangle into a region: squared about its center,
/// clamped into the panel, otherwise identical to an auto region.
pub fn manual_frame(
    panel_id: &str,
    panel_width: u32,
    panel_height: u32,
    rect: BBox,
    face_index: u32,
    settings: &PrepSettings,
) -> Result<PreparedRegion> {
    if !(rect.width > 0.0 && rect.height > 0.0) || !rect.origin_x.is_finite() || !rect.origin_y.is_finite() {
        return Err(Error::InvalidArgument(format!("frame {rect} has no positive extent")));
    }
    let square = squarify_pad(rect, 0.0)?;
    let clamped = clamp_square(square, panel_width, panel_height, settings.min_side)?;
    let crop_spec = make_crop_spec(panel_id, clamped, RegionSource::Manual, settings.min_side)?;
    let warnings = if square.width < settings.small_face_side as f64 {
        vec![RegionWarning::SmallFace]
    } else {
        Vec::new()
    };
    Ok(PreparedRegion { crop_spec, origin: RegionSource::Manual, warnings, face_index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Channels;

    /// 106 points spread over the box `(x, y, w, h)`, corners included.
    pub(crate) fn face_in(x: f64, y: f64, w: f64, h: f64) -> Vec<[f64; 2]> {
        let mut pts = vec![[x, y], [x + w, y + h]];
        for i in 0..104 {
            let t = i as f64 / 103.0;
            pts.push([x + w * t, y + h * (0.5 + 0.4 * (t * 6.0).sin())]);
        }
        pts
    }

    fn raw(x: f64, y: f64, side: f64) -> RawFace {
        RawFace { landmarks: face_in(x, y, side, side), confidence: 0.9, yaw: None, bbox: None }
    }

    fn detected(raw_faces: Vec<RawFace>) -> Vec<DetectedFace> {
        let panel = RasterImage::filled(8, 8, Channels::Gray, 255).unwrap();
        detect_faces(&panel, &MockDetector::new(raw_faces)).unwrap().faces
    }

    #[test]
    fn empty_detector_yields_nothing() {
        let panel = RasterImage::filled(64, 64, Channels::Gray, 255).unwrap();
        let d = detect_faces(&panel, &MockDetector::default()).unwrap();
        assert!(d.faces.is_empty() && d.diagnostics.is_empty());
    }

    #[test]
    fn wrong_landmark_count_is_dropped_with_diagnostic() {
        let mut bad = raw(0.0, 0.0, 50.0);
        bad.landmarks.truncate(68);
        let panel = RasterImage::filled(64, 64, Channels::Gray, 255).unwrap();
        let d = detect_faces(&panel, &MockDetector::new(vec![bad])).unwrap();
        assert!(d.faces.is_empty());
        assert_eq!(d.diagnostics.len(), 1);
        assert!(d.diagnostics[0].contains("68"));
    }

    #[test]
    fn out_of_range_confidence_is_a_protocol_error() {
        let mut bad = raw(0.0, 0.0, 50.0);
        bad.confidence = 1.5;
        let panel = RasterImage::filled(64, 64, Channels::Gray, 255).unwrap();
        let err = detect_faces(&panel, &MockDetector::new(vec![bad])).unwrap_err();
        assert_eq!(err.code(), "AdapterProtocolError");
    }

    #[test]
    fn faces_document_parses_both_shapes() {
        let faces = vec![raw(1.0, 2.0, 40.0)];
        let doc = faces_document(&faces);
        assert_eq!(parse_faces_document(&doc).unwrap(), faces);
        let bare = serde_json::to_string(&faces).unwrap();
        assert_eq!(parse_faces_document(&bare).unwrap(), faces);
        assert!(parse_faces_document("{\"faces\": 3}").is_err());
    }

    #[test]
    fn regions_order_by_side_then_position() {
        let faces = detected(vec![raw(400.0, 50.0, 100.0 / 1.6), raw(10.0, 10.0, 300.0 / 1.6)]);
        let prep = prepare_regions(&faces, "p", 1000, 1000, &PrepSettings::default());
        let sides: Vec<u32> = prep.regions.iter().map(|r| r.crop_spec.side).collect();
        assert_eq!(sides, vec![300, 100]);
        assert_eq!(prep.regions[0].face_index, 0);
        assert_eq!(prep.regions[1].face_index, 1);

        let faces = detected(vec![raw(300.0, 105.0, 50.0), raw(100.0, 159.0, 50.0), raw(100.0, 102.0, 50.0)]);
        let prep = prepare_regions(&faces, "p", 1000, 1000, &PrepSettings::default());
        let origins: Vec<(f64, f64)> =
            prep.regions.iter().map(|r| (r.crop_spec.square.origin_x, r.crop_spec.square.origin_y)).collect();
        assert_eq!(origins, vec![(85.0, 87.0), (85.0, 144.0), (285.0, 90.0)]);
    }

    #[test]
    fn yaw_beyond_45_degrees_warns() {
        let mut face = raw(100.0, 100.0, 200.0);
        face.yaw = Some(60.0);
        let prep = prepare_regions(&detected(vec![face]), "p", 1000, 1000, &PrepSettings::default());
        assert_eq!(prep.regions[0].warnings, vec![RegionWarning::ExtremePose]);
    }

    #[test]
    fn low_confidence_and_small_face_warn() {
        let mut face = raw(100.0, 100.0, 30.0);
        face.confidence = 0.3;
        let prep = prepare_regions(&detected(vec![face]), "p", 1000, 1000, &PrepSettings::default());
        // side round(30 * 1.6) = 48 survives min_side but is below 64
        assert_eq!(prep.regions[0].crop_spec.side, 48);
        assert_eq!(prep.regions[0].warnings, vec![RegionWarning::SmallFace, RegionWarning::LowConfidence]);
    }

    #[test]
    fn tiny_face_is_reported_not_dropped() {
        let prep = prepare_regions(
            &detected(vec![raw(500.0, 500.0, 8.0), raw(10.0, 10.0, 100.0)]),
            "p",
            1000,
            1000,
            &PrepSettings::default(),
        );
        assert_eq!(prep.regions.len(), 1);
        assert_eq!(prep.failures.len(), 1);
        let failure = &prep.failures[0];
        assert_eq!(failure.detection_index, 0);
        assert_eq!(failure.code, "SideTooSmall");
        assert_eq!(failure.square.unwrap().width, 13.0);
    }

    #[test]
    fn manual_examples() {
        let s = PrepSettings::default();
        let r = manual_frame("p", 500, 500, BBox::new(10.0, 10.0, 100.0, 100.0), 0, &s).unwrap();
        assert_eq!(r.crop_spec.square, BBox::new(10.0, 10.0, 100.0, 100.0));
        assert_eq!(r.crop_spec.scale, 5.12);
        assert_eq!(r.crop_spec.source, RegionSource::Manual);
        assert!(r.warnings.is_empty());

        let r = manual_frame("p", 500, 500, BBox::new(0.0, 0.0, 100.0, 80.0), 0, &s).unwrap();
        assert_eq!(r.crop_spec.square, BBox::new(0.0, 0.0, 100.0, 100.0));

        let err = manual_frame("p", 500, 500, BBox::new(0.0, 0.0, 10.0, 10.0), 0, &s).unwrap_err();
        assert_eq!(err.code(), "SideTooSmall");

        let err = manual_frame("p", 500, 500, BBox::new(0.0, 0.0, 0.0, 10.0), 0, &s).unwrap_err();
        assert_eq!(err.code(), "InvalidArgument");
    }

    #[test]
    fn batch_detection_matches_single() {
        let panels: Vec<_> =
            (1..5).map(|i| RasterImage::filled(i * 10, 10, Channels::Gray, 0).unwrap()).collect();
        let det = MockDetector::new(vec![raw(0.0, 0.0, 40.0)]);
        let out = detect_faces_batch(&panels, &det);
        assert_eq!(out.len(), 4);
        for (p, r) in panels.iter().zip(out) {
            assert_eq!(r.unwrap(), detect_faces(p, &det).unwrap());
        }
    }

    #[test]
    fn external_detector_speaks_the_wire_contract() {
        let dir = tempfile::tempdir().unwrap();
        let doc = dir.path().join("faces.json");
        std::fs::write(&doc, faces_document(&[raw(5.0, 5.0, 60.0)])).unwrap();
        // reads (and discards) the PNG, replies with the fixture document
        let det =
            ExternalDetector::new("sh", vec!["-c".into(), format!("cat > /dev/null; cat {}", doc.display())]);
        let panel = RasterImage::filled(80, 80, Channels::Rgb, 3).unwrap();
        let d = detect_faces(&panel, &det).unwrap();
        assert_eq!(d.faces.len(), 1);

        let missing = ExternalDetector::new("/nonexistent/detector", vec![]);
        assert_eq!(detect_faces(&panel, &missing).unwrap_err().code(), "AdapterUnavailable");

        let garbage = ExternalDetector::new("sh", vec!["-c".into(), "cat >/dev/null; echo nope".into()]);
        assert_eq!(detect_faces(&panel, &garbage).unwrap_err().code(), "AdapterProtocolError");
    }
}
