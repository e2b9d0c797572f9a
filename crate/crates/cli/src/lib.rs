//! The `mangaface` command line: every input and output is a file.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |---|---|
//! | 0 | success |
//! | 2 | usage or invalid argument |
//! | 3 | unreadable media or empty performance |
//! | 4 | geometry (region too small, out of bounds, mismatched panel) |
//! | 5 | detector or engine failure |
//! | 6 | session (bad keyframe, out-of-range slider) |
//! | 7 | I/O, missing file or corrupt project |
//! | 8 | round trip produced different pixels |

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mangaface_core::compose::SeamReport;
use mangaface_core::geometry::BBox;
use mangaface_core::prepare::{PreparationFailure, detect_faces};
use mangaface_core::{
    ComposeOptions, CropSpec, Decimation, EngineRegistry, Error, FfmpegDecoder, IdentityEngine, MappedFace,
    MappingSession, MotionMode, PrepSettings, PreparedRegion, Provenance, RasterImage, RetargetParams,
    compose, ingest_performance, manual_frame, prepare_regions,
};
use mangaface_service::config::{parse_detector, parse_engine, registry_with};
use serde::{Deserialize, Serialize};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MEDIA: i32 = 3;
pub const EXIT_GEOMETRY: i32 = 4;
pub const EXIT_ADAPTER: i32 = 5;
pub const EXIT_SESSION: i32 = 6;
pub const EXIT_IO: i32 = 7;
pub const EXIT_MISMATCH: i32 = 8;

/// Side every round-trip region is forced to, so no resampling happens.
const ROUNDTRIP_SIDE: u32 = 512;

#[derive(Debug, Parser)]
#[command(name = "mangaface", version, about = "Give static manga faces new expressions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect faces and write the prepared regions.
    Detect(DetectArgs),
    /// Reenact one region and write the committed crop plus its spec.
    Map(MapArgs),
    /// Paste mapped crops back onto the panel.
    Compose(ComposeArgs),
    /// Frame, identity-map and compose at side 512; fail unless the panel is unchanged.
    Roundtrip(RoundtripArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub panel: PathBuf,
    /// mock:FACES.json or external:COMMAND
    #[arg(long)]
    pub detector: String,
    #[arg(long)]
    pub pad: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub panel: PathBuf,
    /// Index into the regions document (`--regions`) or a fresh detection (`--detector`).
    #[arg(long, conflicts_with = "rect")]
    pub region: Option<usize>,
    /// Regions document written by `detect`.
    #[arg(long, requires = "region")]
    pub regions: Option<PathBuf>,
    #[arg(long, requires = "region", conflicts_with = "regions")]
    pub detector: Option<String>,
    /// Manual frame as x,y,w,h.
    #[arg(long, value_parser = parse_rect)]
    pub rect: Option<BBox>,
    #[arg(long)]
    pub pad: Option<f64>,
    /// Directory of PNG frames (or a video file when ffmpeg is installed).
    #[arg(long)]
    pub frames_dir: PathBuf,
    /// identity, stamp or external:LABEL=COMMAND
    #[arg(long, default_value = "identity")]
    pub engine: String,
    #[arg(long, default_value = "relative")]
    pub mode: MotionMode,
    #[arg(long)]
    pub eye: Option<f64>,
    #[arg(long)]
    pub lip: Option<f64>,
    #[arg(long)]
    pub keyframe: usize,
    /// Crop PNG; the spec document is written next to it as .json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub panel: PathBuf,
    /// Spec document written by `map`; repeat for several faces, pasted in order.
    #[arg(long = "mapped", required = true)]
    pub mapped: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub feather: u32,
    /// Write the seam report here (`-` for stdout).
    #[arg(long)]
    pub seam_report: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    #[arg(long)]
    pub panel: PathBuf,
    /// Frame the first detected face instead of the panel's top-left corner.
    #[arg(long)]
    pub detector: Option<String>,
    /// Frame centered on this rectangle instead.
    #[arg(long, value_parser = parse_rect, conflicts_with = "detector")]
    pub rect: Option<BBox>,
    /// Optionally keep the recomposed panel.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "MANGAFACE_BIND", default_value = "127.0.0.1:8731")]
    pub bind: String,
    #[arg(long, env = "MANGAFACE_PROJECT_DIR")]
    pub project_dir: Option<PathBuf>,
    /// External engines, external:LABEL=COMMAND; repeatable.
    #[arg(long = "engine")]
    pub engines: Vec<String>,
    /// Detectors, mock:PATH or external:COMMAND; repeatable.
    #[arg(long = "detector")]
    pub detectors: Vec<String>,
}

fn parse_rect(s: &str) -> Result<BBox, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, w, h] => Ok(BBox::new(x, y, w, h)),
        _ => Err(format!("expected x,y,w,h, got {} values", v.len())),
    }
}

/// A failed command: the exit code and the line printed to stderr.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: format!("error[{}]: {e}", e.code()) }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::UnreadableMedia(_)
        | Error::ZeroFrames(_)
        | Error::InvalidRaster(_)
        | Error::EmptyPerformance => EXIT_MEDIA,
        Error::DegenerateLandmarks
        | Error::InvalidLandmarks(_)
        | Error::PanelTooSmall { .. }
        | Error::SideTooSmall { .. }
        | Error::SpecOutOfBounds { .. }
        | Error::MismatchedPanel { .. } => EXIT_GEOMETRY,
        Error::AdapterUnavailable(_)
        | Error::AdapterProtocolError(_)
        | Error::EngineFailure(_)
        | Error::EngineUnknown(_)
        | Error::InvalidSource(_) => EXIT_ADAPTER,
        Error::InvalidIndex { .. }
        | Error::FrameNotGenerated(_)
        | Error::ParamOutOfRange { .. }
        | Error::NothingSelected
        | Error::StaleSelection(_)
        | Error::SessionCommitted
        | Error::InvalidState { .. } => EXIT_SESSION,
        Error::NotFound(_)
        | Error::MissingManifest(_)
        | Error::IntegrityError { .. }
        | Error::VersionUnsupported(_)
        | Error::Malformed(_)
        | Error::IoFailure { .. } => EXIT_IO,
    }
}

/// Written by `detect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsDocument {
    pub panel_id: String,
    pub width: u32,
    pub height: u32,
    pub regions: Vec<PreparedRegion>,
    pub failures: Vec<PreparationFailure>,
    pub diagnostics: Vec<String>,
}

/// Written by `map` next to the crop PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedDocument {
    pub crop_spec: CropSpec,
    pub provenance: Provenance,
    /// Crop PNG, relative to this document.
    pub image: PathBuf,
}

/// Panels are identified by file stem, so a spec only composes onto the
/// panel it was framed on.
pub fn panel_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "panel".into())
}

fn read(path: &Path) -> Result<Vec<u8>, Error> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_panel(path: &Path) -> Result<RasterImage, Error> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::UnreadableMedia(format!("{}: {e}", path.display())))?;
    RasterImage::decode_png(&bytes).map_err(|e| match e {
        Error::UnreadableMedia(m) => Error::UnreadableMedia(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = read(path)?;
    serde_json::from_slice(&text).map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("documents serialize");
    text.push('\n');
    write(path, text.as_bytes())
}

fn settings_with_pad(pad: Option<f64>) -> PrepSettings {
    let mut s = PrepSettings::default();
    if let Some(p) = pad {
        s.pad_frac = p;
    }
    s
}

fn detect_document(panel_path: &Path, detector: &str, pad: Option<f64>) -> Result<RegionsDocument, Error> {
    let panel = read_panel(panel_path)?;
    let adapter = parse_detector(detector)?;
    let detection = detect_faces(&panel, adapter.as_ref())?;
    let id = panel_id(panel_path);
    let prep = prepare_regions(&detection.faces, &id, panel.width(), panel.height(), &settings_with_pad(pad));
    Ok(RegionsDocument {
        panel_id: id,
        width: panel.width(),
        height: panel.height(),
        regions: prep.regions,
        failures: prep.failures,
        diagnostics: detection.diagnostics,
    })
}

pub fn cmd_detect(args: &DetectArgs) -> Result<RegionsDocument, Error> {
    let doc = detect_document(&args.panel, &args.detector, args.pad)?;
    write_json(&args.out, &doc)?;
    Ok(doc)
}

fn pick_region(doc: RegionsDocument, index: usize) -> Result<PreparedRegion, Error> {
    let len = doc.regions.len();
    doc.regions
        .into_iter()
        .nth(index)
        .ok_or_else(|| Error::InvalidArgument(format!("region {index} requested, {len} available")))
}

pub fn cmd_map(args: &MapArgs) -> Result<MappedDocument, Error> {
    let panel = read_panel(&args.panel)?;
    let id = panel_id(&args.panel);
    let settings = settings_with_pad(args.pad);
    let region = match (args.rect, args.region) {
        (Some(rect), None) => manual_frame(&id, panel.width(), panel.height(), rect, 0, &settings)?,
        (None, Some(index)) => {
            let doc = match (&args.regions, &args.detector) {
                (Some(path), _) => read_json::<RegionsDocument>(path)?,
                (None, Some(det)) => detect_document(&args.panel, det, args.pad)?,
                (None, None) => {
                    return Err(Error::InvalidArgument("--region needs --regions or --detector".into()));
                }
            };
            if doc.panel_id != id {
                return Err(Error::MismatchedPanel { face: doc.panel_id, panel: id });
            }
            pick_region(doc, index)?
        }
        _ => return Err(Error::InvalidArgument("give exactly one of --rect or --region".into())),
    };
    let registry = EngineRegistry::new();
    let engine = parse_engine(&args.engine, &registry)?;
    let decoder = FfmpegDecoder::default();
    let performance = ingest_performance(&args.frames_dir, Decimation::Auto, Some(&decoder))?;
    let mut session = MappingSession::create(
        format!("cli-{id}"),
        &region,
        &panel,
        Arc::new(performance),
        engine,
        args.mode,
    )?;
    let params = RetargetParams::new(args.eye, args.lip);
    params.validate()?;
    let report = session.generate(&[args.keyframe])?;
    if let Some((_, err)) = report.failed.first() {
        return Err(Error::EngineFailure(err.clone()));
    }
    session.select_keyframe(args.keyframe)?;
    session.set_params(params, None)?;
    let face = session.commit()?;

    write(&args.out, &face.image.encode_png())?;
    let doc = MappedDocument {
        crop_spec: face.crop_spec,
        provenance: face.provenance,
        image: PathBuf::from(args.out.file_name().expect("output has a file name")),
    };
    write_json(&args.out.with_extension("json"), &doc)?;
    Ok(doc)
}

fn load_mapped(path: &Path) -> Result<MappedFace, Error> {
    let doc: MappedDocument = read_json(path)?;
    let image_path = path.parent().unwrap_or(Path::new(".")).join(&doc.image);
    let image = RasterImage::decode_png(&read(&image_path)?)?;
    Ok(MappedFace { crop_spec: doc.crop_spec, image: Arc::new(image), provenance: doc.provenance })
}

pub fn cmd_compose(args: &ComposeArgs) -> Result<SeamReport, Error> {
    let panel = read_panel(&args.panel)?;
    let faces = args.mapped.iter().map(|p| load_mapped(p)).collect::<Result<Vec<_>, _>>()?;
    let options = ComposeOptions { feather_width: args.feather, ..Default::default() };
    let composed = compose(&panel, &panel_id(&args.panel), &faces, options)?;
    for w in &composed.overlaps {
        eprintln!("warning: face {} overlaps face {} and is painted over it", w.later, w.earlier);
    }
    write(&args.out, &composed.image.encode_png())?;
    if let Some(path) = &args.seam_report {
        let text = serde_json::to_string_pretty(&composed.seams).expect("report serializes");
        if path.as_os_str() == "-" {
            println!("{text}");
        } else {
            write(path, format!("{text}\n").as_bytes())?;
        }
    }
    Ok(composed.seams)
}

/// Outcome of a round trip that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundtripReport {
    pub square: BBox,
    pub pixels_equal: bool,
    /// Whether the recomposed PNG equals the input file byte for byte.
    pub bytes_equal: bool,
}

/// A side-512 square centered on `rect`, clamped into the panel.
fn forced_square(rect: BBox, pw: u32, ph: u32) -> Result<BBox, Error> {
    let fits = pw.min(ph);
    if fits < ROUNDTRIP_SIDE {
        return Err(Error::SideTooSmall { side: fits, min_side: ROUNDTRIP_SIDE });
    }
    let side = ROUNDTRIP_SIDE as f64;
    let (cx, cy) = rect.center();
    let square = BBox::new((cx - side / 2.0).round(), (cy - side / 2.0).round(), side, side);
    mangaface_core::clamp_square(square, pw, ph, ROUNDTRIP_SIDE)
}

pub fn cmd_roundtrip(args: &RoundtripArgs) -> Result<RoundtripReport, Error> {
    let input = read(&args.panel)?;
    let panel = RasterImage::decode_png(&input)?;
    let id = panel_id(&args.panel);
    let (pw, ph) = (panel.width(), panel.height());
    let target = match (&args.detector, args.rect) {
        (Some(det), _) => {
            let doc = detect_document(&args.panel, det, None)?;
            pick_region(doc, 0)?.crop_spec.square
        }
        (None, Some(rect)) => rect,
        (None, None) => BBox::new(0.0, 0.0, ROUNDTRIP_SIDE as f64, ROUNDTRIP_SIDE as f64),
    };
    let square = forced_square(target, pw, ph)?;
    let region = manual_frame(&id, pw, ph, square, 0, &PrepSettings::default())?;
    let mut session = MappingSession::create(
        "roundtrip",
        &region,
        &panel,
        Arc::new(mangaface_core::DrivingPerformance::new(vec![panel.sub_image(0, 0, 1, 1)?], None, "still")?),
        Arc::new(IdentityEngine),
        MotionMode::Relative,
    )?;
    session.generate(&[0])?;
    session.select_keyframe(0)?;
    let face = session.commit()?;
    let composed = compose(&panel, &id, &[face], ComposeOptions::default())?;
    let encoded = composed.image.encode_png();
    if let Some(out) = &args.out {
        write(out, &encoded)?;
    }
    Ok(RoundtripReport { square, pixels_equal: composed.image == panel, bytes_equal: encoded == input })
}

pub fn cmd_serve(args: &ServeArgs) -> Result<(), Error> {
    let config = mangaface_service::ServiceConfig {
        project_dir: args.project_dir.clone(),
        settings: PrepSettings::default(),
        engines: registry_with(&args.engines)?,
        detectors: args.detectors.iter().map(|d| parse_detector(d)).collect::<Result<_, _>>()?,
    };
    if let Some(dir) = &args.project_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let service = Arc::new(mangaface_service::Service::open(config)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    runtime
        .block_on(mangaface_service::http::serve(service, &args.bind))
        .map_err(|e| Error::io(&args.bind, e))
}

/// Runs a parsed command and returns the process exit code. Status lines
/// go to stderr so stdout carries only requested documents.
pub fn run(cli: Cli) -> i32 {
    let outcome: Result<(), Failure> = match &cli.command {
        Command::Detect(a) => cmd_detect(a)
            .map(|doc| {
                eprintln!("{} regions, {} failures", doc.regions.len(), doc.failures.len());
            })
            .map_err(Failure::from),
        Command::Map(a) => cmd_map(a)
            .map(|doc| {
                eprintln!(
                    "frame {} of {} -> {}",
                    doc.provenance.frame_index,
                    doc.provenance.engine,
                    a.out.display()
                );
            })
            .map_err(Failure::from),
        Command::Compose(a) => {
            cmd_compose(a).map(|_| eprintln!("wrote {}", a.out.display())).map_err(Failure::from)
        }
        Command::Roundtrip(a) => match cmd_roundtrip(a) {
            Ok(r) if r.pixels_equal => {
                eprintln!(
                    "ok: {} unchanged{}",
                    r.square,
                    if r.bytes_equal { ", bytes identical" } else { "" }
                );
                Ok(())
            }
            Ok(r) => Err(Failure {
                code: EXIT_MISMATCH,
                message: format!("error: round trip through {} changed pixels", r.square),
            }),
            Err(e) => Err(e.into()),
        },
        Command::Serve(a) => cmd_serve(a).map_err(Failure::from),
    };
    match outcome {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{}", f.message);
            f.code
        }
    }
}
