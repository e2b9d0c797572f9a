//! Loading driving performances from PNG frame directories or video files.

use std::path::{Path, PathBuf};
use std::process::Command;

use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::session::DrivingPerformance;

/// Frames longer than this are decimated by [`Decimation::Auto`].
pub const AUTO_DECIMATION_THRESHOLD: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Decimation {
    /// Keep every second frame of performances longer than 300 frames.
    #[default]
    Auto,
    /// Keep frames `0, k, 2k, ...`.
    Every(usize),
}

impl Decimation {
    fn step(self, len: usize) -> Result<usize> {
        match self {
            Decimation::Auto => Ok(if len > AUTO_DECIMATION_THRESHOLD { 2 } else { 1 }),
            Decimation::Every(0) => Err(Error::InvalidArgument("decimation step must be >= 1".into())),
            Decimation::Every(k) => Ok(k),
        }
    }
}

/// Decodes a video container into frames.
pub trait MediaDecoder: Send + Sync {
    /// Frames in presentation order plus the frame rate, when known.
    fn decode(&self, path: &Path) -> Result<(Vec<RasterImage>, Option<f64>)>;
}

/// Shells out to `ffmpeg`/`ffprobe` to split a video into PNG frames.
#[derive(Debug, Clone)]
pub struct FfmpegDecoder {
    ffmpeg: PathBuf,
    ffprobe: PathBuf,
}

impl Default for FfmpegDecoder {
    fn default() -> Self {
        Self { ffmpeg: "ffmpeg".into(), ffprobe: "ffprobe".into() }
    }
}

impl FfmpegDecoder {
    fn probe_fps(&self, path: &Path) -> Option<f64> {
        let out = Command::new(&self.ffprobe)
            .args(["-v", "error", "-select_streams", "v:0", "-show_entries", "stream=r_frame_rate"])
            .args(["-of", "default=noprint_wrappers=1:nokey=1"])
            .arg(path)
            .output()
            .ok()?;
        let text = String::from_utf8_lossy(&out.stdout);
        let (num, den) = text.trim().split_once('/')?;
        let (num, den): (f64, f64) = (num.parse().ok()?, den.parse().ok()?);
        (den > 0.0).then(|| num / den)
    }
}

impl MediaDecoder for FfmpegDecoder {
    fn decode(&self, path: &Path) -> Result<(Vec<RasterImage>, Option<f64>)> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let status = Command::new(&self.ffmpeg)
            .args(["-v", "error", "-i"])
            .arg(path)
            .arg(dir.path().join("%06d.png"))
            .status()
            .map_err(|e| Error::UnreadableMedia(format!("ffmpeg unavailable: {e}")))?;
        if !status.success() {
            return Err(Error::UnreadableMedia(format!("ffmpeg could not decode {}", path.display())));
        }
        let frames = read_png_dir(dir.path())?;
        Ok((frames, self.probe_fps(path)))
    }
}

/// PNG files in `dir`, sorted by file name, decoded.
fn read_png_dir(dir: &Path) -> Result<Vec<RasterImage>> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| Error::UnreadableMedia(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let bytes =
                std::fs::read(p).map_err(|e| Error::UnreadableMedia(format!("{}: {e}", p.display())))?;
            RasterImage::decode_png(&bytes)
                .map_err(|e| Error::UnreadableMedia(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Loads a performance from a directory of PNG frames or, through
/// `decoder`, from a video file, then keeps every k-th frame.
pub fn ingest_performance(
    input: &Path,
    decimation: Decimation,
    decoder: Option<&dyn MediaDecoder>,
) -> Result<DrivingPerformance> {
    let (frames, fps) = if input.is_dir() {
        (read_png_dir(input)?, None)
    } else if input.is_file() {
        match decoder {
            Some(d) => d.decode(input)?,
            None => {
                return Err(Error::UnreadableMedia(format!(
                    "{}: no media decoder configured",
                    input.display()
                )));
            }
        }
    } else {
        return Err(Error::UnreadableMedia(format!("{} does not exist", input.display())));
    };
    if frames.is_empty() {
        return Err(Error::ZeroFrames(input.display().to_string()));
    }
    let step = decimation.step(frames.len())?;
    let kept: Vec<RasterImage> = frames.into_iter().step_by(step).collect();
    DrivingPerformance::new(kept, fps.map(|f| f / step as f64), input.display().to_string())
}
