//! Expression-mapping engine contract, the two deterministic built-in
//! engines, and the adapter for an external reenactment process.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use base64::engine::general_purpose::STANDARD as B64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CANONICAL_SIZE;
use crate::raster::{Channels, RasterImage, quantize};
use crate::subprocess::{exchange, program_exists};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionMode {
    #[default]
    Relative,
    Absolute,
}

impl MotionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MotionMode::Relative => "relative",
            MotionMode::Absolute => "absolute",
        }
    }
}

impl std::str::FromStr for MotionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" => Ok(MotionMode::Relative),
            "absolute" => Ok(MotionMode::Absolute),
            other => Err(Error::InvalidArgument(format!("unknown motion mode `{other}`"))),
        }
    }
}

/// Eye and lip retargeting sliders, normalized to `[0, 1]`.
/// `None` leaves the engine's own default in place.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RetargetParams {
    #[serde(rename = "eye")]
    pub eye_openness: Option<f64>,
    #[serde(rename = "lip")]
    pub lip_openness: Option<f64>,
}

impl RetargetParams {
    pub fn new(eye_openness: Option<f64>, lip_openness: Option<f64>) -> Self {
        Self { eye_openness, lip_openness }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eye", self.eye_openness), ("lip", self.lip_openness)] {
            if let Some(value) = v
                && !(0.0..=1.0).contains(&value)
            {
                return Err(Error::ParamOutOfRange { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineDescriptor {
    pub name: String,
    pub deterministic: bool,
    pub max_concurrency: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReenactedFrame {
    pub image: Arc<RasterImage>,
    pub frame_index: usize,
    pub params_used: RetargetParams,
    pub mode_used: MotionMode,
}

/// A reenactment backend mapping a canonical source crop and one driving
/// frame to a canonical result.
pub trait ReenactmentEngine: Send + Sync {
    fn descriptor(&self) -> EngineDescriptor;

    fn render(
        &self,
        source: &RasterImage,
        driving: &RasterImage,
        frame_index: usize,
        mode: MotionMode,
        params: RetargetParams,
    ) -> Result<RasterImage>;

    /// Whether the engine can currently be called.
    fn probe(&self) -> Result<()> {
        Ok(())
    }
}

fn is_canonical(img: &RasterImage) -> bool {
    img.width() == CANONICAL_SIZE && img.height() == CANONICAL_SIZE && img.channels() == Channels::Rgb
}

fn describe(img: &RasterImage) -> String {
    format!("{}x{}x{}", img.width(), img.height(), img.channels().count())
}

/// Validates inputs, runs the engine and checks the result is canonical.
pub fn reenact(
    engine: &dyn ReenactmentEngine,
    source: &RasterImage,
    driving: &RasterImage,
    frame_index: usize,
    mode: MotionMode,
    params: RetargetParams,
) -> Result<ReenactedFrame> {
    if !is_canonical(source) {
        return Err(Error::InvalidSource(describe(source)));
    }
    params.validate()?;
    let image = engine.render(source, driving, frame_index, mode, params)?;
    if !is_canonical(&image) {
        return Err(Error::EngineFailure(format!(
            "{} returned {}",
            engine.descriptor().name,
            describe(&image)
        )));
    }
    Ok(ReenactedFrame { image: Arc::new(image), frame_index, params_used: params, mode_used: mode })
}

/// Returns the source unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEngine;

impl ReenactmentEngine for IdentityEngine {
    fn descriptor(&self) -> EngineDescriptor {
        EngineDescriptor {
            name: "identity".into(),
            deterministic: true,
            max_concurrency: crate::workers::default_parallelism(),
        }
    }

    fn render(
        &self,
        source: &RasterImage,
        _driving: &RasterImage,
        _frame_index: usize,
        _mode: MotionMode,
        _params: RetargetParams,
    ) -> Result<RasterImage> {
        Ok(source.clone())
    }
}

/// Side of the square block the stamp engine writes at the crop origin.
pub const STAMP_SIZE: u32 = 16;
/// Channel value the stamp uses for a parameter left at the engine default.
pub const STAMP_DEFAULT_LEVEL: u8 = 128;

/// Copies the source and paints the top-left 16x16 block with
/// `(frame_index mod 256, eye level, lip level)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StampEngine;

impl StampEngine {
    pub fn level(v: Option<f64>) -> u8 {
        v.map_or(STAMP_DEFAULT_LEVEL, |v| quantize(v * 255.0))
    }

    /// The RGB value the stamp block takes for these inputs.
    pub fn stamp_value(frame_index: usize, params: RetargetParams) -> [u8; 3] {
        [(frame_index % 256) as u8, Self::level(params.eye_openness), Self::level(params.lip_openness)]
    }
}

impl ReenactmentEngine for StampEngine {
    fn descriptor(&self) -> EngineDescriptor {
        EngineDescriptor {
            name: "stamp".into(),
            deterministic: true,
            max_concurrency: crate::workers::default_parallelism(),
        }
    }

    fn render(
        &self,
        source: &RasterImage,
        _driving: &RasterImage,
        frame_index: usize,
        _mode: MotionMode,
        params: RetargetParams,
    ) -> Result<RasterImage> {
        let mut out = source.clone();
        let value = Self::stamp_value(frame_index, params);
        for y in 0..STAMP_SIZE.min(out.height()) {
            for x in 0..STAMP_SIZE.min(out.width()) {
                out.pixel_mut(x, y).copy_from_slice(&value);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Serialize)]
struct ExternalRequest<'a> {
    source: String,
    driving: String,
    mode: &'a str,
    eye: Option<f64>,
    lip: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ExternalResponse {
    Image { image: String },
    Error { error: String },
}

/// Encodes one request document for the external engine wire contract.
pub fn external_request(
    source: &RasterImage,
    driving: &RasterImage,
    mode: MotionMode,
    params: RetargetParams,
) -> String {
    serde_json::to_string(&ExternalRequest {
        source: B64.encode(source.encode_png()),
        driving: B64.encode(driving.encode_png()),
        mode: mode.as_str(),
        eye: params.eye_openness,
        lip: params.lip_openness,
    })
    .expect("request serializes")
}

/// Decodes an external engine response document into the result image.
pub fn parse_external_response(text: &str) -> Result<RasterImage> {
    let resp: ExternalResponse = serde_json::from_str(text)
        .map_err(|e| Error::EngineFailure(format!("malformed engine response: {e}")))?;
    match resp {
        ExternalResponse::Error { error } => Err(Error::EngineFailure(error)),
        ExternalResponse::Image { image } => {
            let bytes = B64
                .decode(image.trim())
                .map_err(|e| Error::EngineFailure(format!("bad base64 image: {e}")))?;
            RasterImage::decode_png(&bytes)
                .map_err(|e| Error::EngineFailure(format!("bad engine image: {e}")))
        }
    }
}

/// A reenactment process reached over a stdin/stdout pipe, one request per
/// invocation.
#[derive(Debug, Clone)]
pub struct ExternalEngine {
    label: String,
    program: PathBuf,
    args: Vec<String>,
    timeout: Duration,
    retries: u32,
}

impl ExternalEngine {
    pub fn new(label: impl Into<String>, program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            label: label.into(),
            program: program.into(),
            args,
            timeout: Duration::from_secs(60),
            retries: 1,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Parses `label=command arg...`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let (label, cmd) = spec
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("external engine `{spec}` needs label=command")))?;
        let mut parts = cmd.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::InvalidArgument(format!("external engine `{label}` has no command")))?;
        Ok(Self::new(label.trim(), program, parts.map(str::to_owned).collect()))
    }

    pub fn name(&self) -> String {
        format!("external:{}", self.label)
    }
}

impl ReenactmentEngine for ExternalEngine {
    fn descriptor(&self) -> EngineDescriptor {
        EngineDescriptor { name: self.name(), deterministic: false, max_concurrency: 1 }
    }

    fn render(
        &self,
        source: &RasterImage,
        driving: &RasterImage,
        _frame_index: usize,
        mode: MotionMode,
        params: RetargetParams,
    ) -> Result<RasterImage> {
        self.probe()?;
        let request = external_request(source, driving, mode, params).into_bytes();
        let program = self.program.to_string_lossy();
        let mut last = None;
        for attempt in 0..=self.retries {
            match exchange(&program, &self.args, request.clone(), self.timeout) {
                Ok(out) => {
                    let text = String::from_utf8_lossy(&out);
                    return parse_external_response(&text);
                }
                Err(e) => {
                    tracing::warn!(engine = %self.name(), attempt, "engine call failed: {e}");
                    last = Some(e);
                }
            }
        }
        Err(Error::EngineFailure(format!(
            "{}: {}",
            self.name(),
            last.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    fn probe(&self) -> Result<()> {
        if program_exists(&self.program.to_string_lossy()) {
            Ok(())
        } else {
            Err(Error::EngineFailure(format!("{}: {} not found", self.name(), self.program.display())))
        }
    }
}

/// Engines available to sessions, by name.
#[derive(Clone)]
pub struct EngineRegistry {
    engines: BTreeMap<String, Arc<dyn ReenactmentEngine>>,
}

impl Default for EngineRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for EngineRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.engines.keys()).finish()
    }
}

/// Result of [`EngineRegistry::list_engines`].
#[derive(Debug, Clone, PartialEq)]
pub struct EngineListing {
    pub engines: Vec<EngineDescriptor>,
    pub diagnostics: Vec<String>,
}

impl EngineRegistry {
    /// Registry holding the identity and stamp engines.
    pub fn new() -> Self {
        let mut reg = Self { engines: BTreeMap::new() };
        reg.register(Arc::new(IdentityEngine));
        reg.register(Arc::new(StampEngine));
        reg
    }

    pub fn register(&mut self, engine: Arc<dyn ReenactmentEngine>) {
        self.engines.insert(engine.descriptor().name, engine);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ReenactmentEngine>> {
        self.engines.get(name).cloned().ok_or_else(|| Error::EngineUnknown(name.to_owned()))
    }

    /// Built-ins plus every configured engine that currently answers a probe.
    pub fn list_engines(&self) -> EngineListing {
        let mut listing = EngineListing { engines: Vec::new(), diagnostics: Vec::new() };
        for engine in self.engines.values() {
            let desc = engine.descriptor();
            match engine.probe() {
                Ok(()) => listing.engines.push(desc),
                Err(e) => listing.diagnostics.push(format!("{} unreachable: {e}", desc.name)),
            }
        }
        listing
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn source() -> RasterImage {
        RasterImage::from_fn(512, 512, Channels::Rgb, |x, y, c| ((x + 2 * y + 50 * c as u32) % 251) as u8)
            .unwrap()
    }

    fn driving() -> RasterImage {
        RasterImage::filled(64, 48, Channels::Rgb, 10).unwrap()
    }

    #[test]
    fn identity_returns_source() {
        let src = source();
        let out =
            reenact(&IdentityEngine, &src, &driving(), 7, MotionMode::Absolute, RetargetParams::default())
                .unwrap();
        assert_eq!(*out.image, src);
        assert_eq!(out.frame_index, 7);
        assert_eq!(out.mode_used, MotionMode::Absolute);
    }

    #[test]
    fn stamp_block_encodes_inputs() {
        let src = source();
        let params = RetargetParams::new(Some(0.5), Some(1.0));
        let out = reenact(&StampEngine, &src, &driving(), 3, MotionMode::Relative, params).unwrap();
        for y in 0..512 {
            for x in 0..512 {
                if x < 16 && y < 16 {
                    assert_eq!(out.image.pixel(x, y), &[3, 128, 255]);
                } else {
                    assert_eq!(out.image.pixel(x, y), src.pixel(x, y));
                }
            }
        }
        let out = reenact(&StampEngine, &src, &driving(), 300, MotionMode::Relative, params).unwrap();
        assert_eq!(out.image.pixel(0, 0)[0], 44);
    }

    #[test]
    fn stamp_defaults_and_channel_independence() {
        let src = source();
        let a =
            StampEngine.render(&src, &driving(), 1, MotionMode::Relative, RetargetParams::default()).unwrap();
        assert_eq!(a.pixel(5, 5), &[1, 128, 128]);
        let b = StampEngine
            .render(&src, &driving(), 1, MotionMode::Relative, RetargetParams::new(Some(0.25), None))
            .unwrap();
        assert_eq!(b.pixel(5, 5), &[1, 64, 128]);
        let diff: Vec<usize> = a
            .data()
            .iter()
            .zip(b.data())
            .enumerate()
            .filter(|(_, (p, q))| p != q)
            .map(|(i, _)| i % 3)
            .collect();
        assert!(!diff.is_empty() && diff.iter().all(|&c| c == 1));
    }

    #[test]
    fn rejects_non_canonical_source_and_bad_params() {
        let small = RasterImage::filled(256, 256, Channels::Rgb, 0).unwrap();
        let err =
            reenact(&IdentityEngine, &small, &driving(), 0, MotionMode::Relative, RetargetParams::default())
                .unwrap_err();
        assert_eq!(err.code(), "InvalidSource");
        let gray = RasterImage::filled(512, 512, Channels::Gray, 0).unwrap();
        assert!(
            reenact(&IdentityEngine, &gray, &driving(), 0, MotionMode::Relative, RetargetParams::default())
                .is_err()
        );
        let err = reenact(
            &StampEngine,
            &source(),
            &driving(),
            0,
            MotionMode::Relative,
            RetargetParams::new(Some(1.5), None),
        )
        .unwrap_err();
        assert_eq!(err.code(), "ParamOutOfRange");
    }

    #[test]
    fn builtins_are_deterministic() {
        let src = source();
        let params = RetargetParams::new(Some(0.3), Some(0.9));
        for engine in [&IdentityEngine as &dyn ReenactmentEngine, &StampEngine] {
            assert!(engine.descriptor().deterministic);
            let first = reenact(engine, &src, &driving(), 9, MotionMode::Relative, params).unwrap();
            for _ in 0..100 {
                let again = reenact(engine, &src, &driving(), 9, MotionMode::Relative, params).unwrap();
                assert_eq!(again.image, first.image);
            }
        }
    }

    #[test]
    fn listing_reports_unreachable_externals() {
        let mut reg = EngineRegistry::new();
        let names = |l: &EngineListing| l.engines.iter().map(|d| d.name.clone()).collect::<Vec<_>>();
        assert_eq!(names(&reg.list_engines()), vec!["identity", "stamp"]);

        reg.register(Arc::new(ExternalEngine::new("lp", "/nonexistent/liveportrait", vec![])));
        let listing = reg.list_engines();
        assert_eq!(names(&listing), vec!["identity", "stamp"]);
        assert_eq!(listing.diagnostics.len(), 1);
        assert!(listing.diagnostics[0].contains("external:lp"));

        reg.register(Arc::new(ExternalEngine::new("echo", "sh", vec![])));
        assert_eq!(names(&reg.list_engines()), vec!["external:echo", "identity", "stamp"]);
        assert_eq!(reg.get("nope").err().unwrap().code(), "EngineUnknown");
    }

    #[test]
    fn external_engine_round_trips_the_wire_contract() {
        // replies with the request's source image
        let script = r#"sed -n 's/.*"source":"\([^"]*\)".*/{"image":"\1"}/p'"#;
        let engine = ExternalEngine::new("echo", "sh", vec!["-c".into(), script.into()]);
        let src = source();
        let out =
            reenact(&engine, &src, &driving(), 0, MotionMode::Absolute, RetargetParams::default()).unwrap();
        assert_eq!(*out.image, src);
        assert!(!engine.descriptor().deterministic);
        assert_eq!(engine.descriptor().max_concurrency, 1);
    }

    #[test]
    fn external_engine_errors_are_engine_failures() {
        let src = source();
        let replies_error = ExternalEngine::new(
            "e",
            "sh",
            vec!["-c".into(), r#"cat >/dev/null; echo '{"error":"gpu oom"}'"#.into()],
        );
        let err =
            reenact(&replies_error, &src, &driving(), 0, MotionMode::Relative, RetargetParams::default())
                .unwrap_err();
        assert_eq!(err.code(), "EngineFailure");
        assert!(err.to_string().contains("gpu oom"));
        assert!(err.retryable());

        let slow =
            ExternalEngine::new("slow", "sleep", vec!["5".into()]).with_timeout(Duration::from_millis(100));
        let started = std::time::Instant::now();
        let err =
            reenact(&slow, &src, &driving(), 0, MotionMode::Relative, RetargetParams::default()).unwrap_err();
        assert_eq!(err.code(), "EngineFailure");
        // one retry: two timeouts
        assert!(started.elapsed() >= Duration::from_millis(200));
    }

    #[test]
    fn request_document_carries_mode_and_params() {
        let src = source();
        let doc =
            external_request(&src, &driving(), MotionMode::Absolute, RetargetParams::new(Some(0.5), None));
        let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
        assert_eq!(v["mode"], "absolute");
        assert_eq!(v["eye"], 0.5);
        assert!(v["lip"].is_null());
        let png = B64.decode(v["source"].as_str().unwrap()).unwrap();
        assert_eq!(RasterImage::decode_png(&png).unwrap(), src);
    }

    #[test]
    fn external_spec_parsing() {
        let e = ExternalEngine::from_spec("lp=python3 run.py --fp16").unwrap();
        assert_eq!(e.name(), "external:lp");
        assert_eq!(e.args, vec!["run.py", "--fp16"]);
        assert!(ExternalEngine::from_spec("nolabel").is_err());
    }
}
