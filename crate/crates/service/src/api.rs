//! The service operations, independent of any transport.
//!
//! One [`Service`] owns one project. Mutations of the project are serialized
//! by its lock and followed by a save when a project directory is
//! configured; each mapping session has its own writer lock, so uploads,
//! polls and frame reads on other sessions proceed in parallel.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use base64::Engine as _;
use base64::engine::general_purpose::STANDARD as BASE64;
use mangaface_core::compose::OverlapWarning;
use mangaface_core::geometry::BBox;
use mangaface_core::prepare::{Preparation, detect_faces};
use mangaface_core::reenact::EngineListing;
use mangaface_core::session::ProgressHandle;
use mangaface_core::store::{MappedRecord, PanelRecord};
use mangaface_core::{
    ComposeOptions, Decimation, DetectorAdapter, DrivingPerformance, EngineRegistry, Error, MappingSession,
    MotionMode, PrepSettings, PreparedRegion, Project, RasterImage, Result, RetargetParams, SeamReport,
    SessionSnapshot, SharedSession, compose, ingest_performance, manual_frame, prepare_regions,
};
use serde::{Deserialize, Serialize};

use crate::config;

/// Error body returned to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub retryable: bool,
}

impl From<&Error> for ApiError {
    fn from(e: &Error) -> Self {
        Self { code: e.code().to_owned(), message: e.to_string(), retryable: e.retryable() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelCreated {
    pub panel_id: String,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AutoDetectRequest {
    /// Adapter name; defaults to the only configured detector.
    #[serde(default)]
    pub detector: Option<String>,
    #[serde(default)]
    pub pad_frac: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoDetectResponse {
    pub regions: Vec<PreparedRegion>,
    pub failures: Vec<mangaface_core::prepare::PreparationFailure>,
    /// Faces the detector reported but that failed validation.
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManualRegionRequest {
    pub rect: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateMappingRequest {
    pub panel_id: String,
    pub face_index: u32,
    /// Uploaded driving frames, base64-encoded PNG.
    #[serde(default)]
    pub frames: Option<Vec<String>>,
    /// Alternatively, a directory of PNG frames readable by the service.
    #[serde(default)]
    pub frames_dir: Option<PathBuf>,
    pub engine: String,
    #[serde(default)]
    pub mode: MotionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingCreated {
    pub session_id: String,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesRequested {
    /// Frames handed to background workers by this request.
    pub scheduled: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SetParamsRequest {
    #[serde(default)]
    pub eye: Option<f64>,
    #[serde(default)]
    pub lip: Option<f64>,
    #[serde(default)]
    pub mode: Option<MotionMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeRequest {
    pub mapped_ids: Vec<String>,
    #[serde(default)]
    pub feather_width: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposeResponse {
    pub composition_id: String,
    /// Content hash of the composed PNG.
    pub asset: String,
    pub seams: SeamReport,
    pub overlaps: Vec<OverlapWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnginesResponse {
    pub engines: Vec<mangaface_core::EngineDescriptor>,
    pub diagnostics: Vec<String>,
}

impl From<EngineListing> for EnginesResponse {
    fn from(l: EngineListing) -> Self {
        Self { engines: l.engines, diagnostics: l.diagnostics }
    }
}

/// Startup configuration.
#[derive(Default)]
pub struct ServiceConfig {
    pub project_dir: Option<PathBuf>,
    pub settings: PrepSettings,
    pub engines: EngineRegistry,
    pub detectors: Vec<Arc<dyn DetectorAdapter>>,
}

impl ServiceConfig {
    /// Builds a configuration from `--engine` and `--detector` style specs.
    pub fn from_specs(
        project_dir: Option<PathBuf>,
        engines: &[String],
        detectors: &[String],
    ) -> Result<Self> {
        Ok(Self {
            project_dir,
            settings: PrepSettings::default(),
            engines: config::registry_with(engines)?,
            detectors: detectors.iter().map(|d| config::parse_detector(d)).collect::<Result<_>>()?,
        })
    }
}

struct SessionEntry {
    shared: SharedSession,
    batches: Mutex<Vec<ProgressHandle>>,
}

pub struct Service {
    project: Mutex<Project>,
    project_dir: Option<PathBuf>,
    engines: EngineRegistry,
    detectors: BTreeMap<String, Arc<dyn DetectorAdapter>>,
    sessions: Mutex<HashMap<String, Arc<SessionEntry>>>,
    next_session: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl Service {
    /// Opens the project in `config.project_dir` if it has a manifest,
    /// otherwise starts an empty one there.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        let project = match &config.project_dir {
            Some(dir) if dir.join(mangaface_core::store::MANIFEST_FILE).exists() => Project::load(dir)?,
            Some(dir) => {
                let id = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "project".into());
                Project::new(id, config.settings)
            }
            None => Project::new("project", config.settings),
        };
        let detectors = config.detectors.into_iter().map(|d| (d.name().to_owned(), d)).collect();
        Ok(Self {
            project: Mutex::new(project),
            project_dir: config.project_dir,
            engines: config.engines,
            detectors,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(0),
        })
    }

    pub fn project_dir(&self) -> Option<&Path> {
        self.project_dir.as_deref()
    }

    /// A copy of the current project state.
    pub fn project(&self) -> Project {
        lock(&self.project).clone()
    }

    fn persist(&self, project: &Project) -> Result<()> {
        if let Some(dir) = &self.project_dir {
            project.save(dir)?;
        }
        Ok(())
    }

    /// Applies `f` to the project and saves it; nothing is saved on error.
    fn mutate<T>(&self, f: impl FnOnce(&mut Project) -> Result<T>) -> Result<T> {
        let mut project = lock(&self.project);
        let mut draft = project.clone();
        let out = f(&mut draft)?;
        self.persist(&draft)?;
        *project = draft;
        Ok(out)
    }

    fn session(&self, session_id: &str) -> Result<Arc<SessionEntry>> {
        lock(&self.sessions)
            .get(session_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session {session_id}")))
    }

    pub fn create_panel(&self, png: Vec<u8>) -> Result<PanelCreated> {
        let record = self.mutate(|p| p.add_panel(png))?;
        Ok(PanelCreated {
            panel_id: record.panel_id,
            width: record.width,
            height: record.height,
            channels: record.channels,
        })
    }

    pub fn get_panel(&self, panel_id: &str) -> Result<PanelRecord> {
        lock(&self.project).panel(panel_id).cloned()
    }

    pub fn list_regions(&self, panel_id: &str) -> Result<Vec<PreparedRegion>> {
        let project = lock(&self.project);
        project.panel(panel_id)?;
        Ok(project.panel_regions(panel_id).into_iter().cloned().collect())
    }

    fn detector(&self, name: Option<&str>) -> Result<Arc<dyn DetectorAdapter>> {
        match name {
            Some(n) => self
                .detectors
                .get(n)
                .cloned()
                .ok_or_else(|| Error::AdapterUnavailable(format!("detector {n} is not configured"))),
            None if self.detectors.len() == 1 => {
                Ok(self.detectors.values().next().cloned().expect("one detector"))
            }
            None if self.detectors.is_empty() => {
                Err(Error::AdapterUnavailable("no detector configured".into()))
            }
            None => Err(Error::InvalidArgument(format!(
                "several detectors configured ({}); name one",
                self.detectors.keys().cloned().collect::<Vec<_>>().join(", ")
            ))),
        }
    }

    /// Detects and prepares faces, replacing the panel's earlier auto regions.
    pub fn auto_detect(&self, panel_id: &str, req: &AutoDetectRequest) -> Result<AutoDetectResponse> {
        let (image, mut settings) = {
            let project = lock(&self.project);
            (project.panel_image(panel_id)?, project.settings)
        };
        if let Some(pad) = req.pad_frac {
            settings.pad_frac = pad;
        }
        let detector = self.detector(req.detector.as_deref())?;
        let detection = detect_faces(&image, detector.as_ref())?;
        let Preparation { regions, failures } =
            prepare_regions(&detection.faces, panel_id, image.width(), image.height(), &settings);
        let regions = self.mutate(|p| p.replace_auto_regions(panel_id, regions))?;
        Ok(AutoDetectResponse { regions, failures, diagnostics: detection.diagnostics })
    }

    pub fn manual_region(&self, panel_id: &str, req: &ManualRegionRequest) -> Result<PreparedRegion> {
        self.mutate(|p| {
            let panel = p.panel(panel_id)?.clone();
            let index = p.next_face_index(panel_id);
            let region = manual_frame(panel_id, panel.width, panel.height, req.rect, index, &p.settings)?;
            p.add_region(panel_id, region.clone())?;
            Ok(region)
        })
    }

    pub fn list_engines(&self) -> EnginesResponse {
        self.engines.list_engines().into()
    }

    pub fn create_mapping(&self, req: &CreateMappingRequest) -> Result<MappingCreated> {
        let engine = config::parse_engine(&req.engine, &self.engines)?;
        let (region, panel) = {
            let project = lock(&self.project);
            (project.region(&req.panel_id, req.face_index)?.clone(), project.panel_image(&req.panel_id)?)
        };
        let performance = match (&req.frames, &req.frames_dir) {
            (Some(frames), None) => {
                let images = frames
                    .iter()
                    .enumerate()
                    .map(|(i, b64)| {
                        let bytes = BASE64
                            .decode(b64)
                            .map_err(|e| Error::UnreadableMedia(format!("frame {i}: {e}")))?;
                        RasterImage::decode_png(&bytes)
                    })
                    .collect::<Result<Vec<_>>>()?;
                DrivingPerformance::new(images, None, "upload")?
            }
            (None, Some(dir)) => ingest_performance(dir, Decimation::Auto, None)?,
            _ => return Err(Error::InvalidArgument("give exactly one of frames or frames_dir".into())),
        };
        let session_id = format!("session-{}", self.next_session.fetch_add(1, Ordering::Relaxed));
        let session =
            MappingSession::create(&session_id, &region, &panel, Arc::new(performance), engine, req.mode)?;
        let frame_count = session.frame_count();
        let entry = SessionEntry { shared: SharedSession::new(session), batches: Mutex::new(Vec::new()) };
        lock(&self.sessions).insert(session_id.clone(), Arc::new(entry));
        Ok(MappingCreated { session_id, frame_count })
    }

    /// Starts background rendering; poll [`get_status`](Self::get_status).
    pub fn request_frames(&self, session_id: &str, indices: &[usize]) -> Result<FramesRequested> {
        let entry = self.session(session_id)?;
        let handle = entry.shared.spawn_generate(indices)?;
        let scheduled = handle.total();
        let mut batches = lock(&entry.batches);
        batches.retain(|b| !b.is_finished());
        batches.push(handle);
        Ok(FramesRequested { scheduled })
    }

    /// Blocks until every batch requested so far has finished.
    pub fn wait_idle(&self, session_id: &str) -> Result<SessionSnapshot> {
        let entry = self.session(session_id)?;
        let batches: Vec<ProgressHandle> = lock(&entry.batches).drain(..).collect();
        for b in batches {
            b.wait();
        }
        Ok(entry.shared.snapshot())
    }

    pub fn get_status(&self, session_id: &str) -> Result<SessionSnapshot> {
        Ok(self.session(session_id)?.shared.snapshot())
    }

    /// PNG of a current-parameter frame, optionally downscaled so its side
    /// is at most `max_side` (for timeline thumbnails).
    pub fn get_frame(&self, session_id: &str, index: usize, max_side: Option<u32>) -> Result<Vec<u8>> {
        let entry = self.session(session_id)?;
        let image = entry.shared.lock().frame(index)?.image.clone();
        match max_side {
            Some(0) => Err(Error::InvalidArgument("size must be positive".into())),
            Some(s) if s < image.width() => Ok(mangaface_core::raster::resize(&image, s, s)?.encode_png()),
            _ => Ok(image.encode_png()),
        }
    }

    pub fn set_session_params(&self, session_id: &str, req: &SetParamsRequest) -> Result<SessionSnapshot> {
        let entry = self.session(session_id)?;
        let mut session = entry.shared.lock();
        session.set_params(RetargetParams::new(req.eye, req.lip), req.mode)?;
        Ok(session.snapshot())
    }

    pub fn select_keyframe(&self, session_id: &str, index: usize) -> Result<SessionSnapshot> {
        let entry = self.session(session_id)?;
        let mut session = entry.shared.lock();
        session.select_keyframe(index)?;
        Ok(session.snapshot())
    }

    /// Commits the selected keyframe and stores it as a mapped face.
    pub fn commit_session(&self, session_id: &str) -> Result<MappedRecord> {
        let entry = self.session(session_id)?;
        let mut session = entry.shared.lock();
        // validate against a copy first so a failed save leaves the session open
        let face = session.clone().commit()?;
        let record = self.mutate(|p| p.add_mapped(&face))?;
        session.commit()?;
        Ok(record)
    }

    pub fn compose_panel(&self, panel_id: &str, req: &ComposeRequest) -> Result<ComposeResponse> {
        let (panel, faces) = {
            let project = lock(&self.project);
            let faces =
                req.mapped_ids.iter().map(|id| project.mapped_face(id)).collect::<Result<Vec<_>>>()?;
            (project.panel_image(panel_id)?, faces)
        };
        let options = ComposeOptions { feather_width: req.feather_width, ..Default::default() };
        let composed = compose(&panel, panel_id, &faces, options)?;
        if !composed.overlaps.is_empty() {
            tracing::warn!(panel_id, overlaps = composed.overlaps.len(), "overlapping faces");
        }
        let record = self
            .mutate(|p| p.add_composition(panel_id, &composed, req.feather_width, req.mapped_ids.clone()))?;
        Ok(ComposeResponse {
            composition_id: record.composition_id,
            asset: record.asset,
            seams: record.seams,
            overlaps: record.overlaps,
        })
    }

    /// PNG bytes of a panel, composition or mapped face, by id.
    pub fn export(&self, id: &str) -> Result<Vec<u8>> {
        let project = lock(&self.project);
        let asset = if let Ok(p) = project.panel(id) {
            p.asset.clone()
        } else if let Ok(c) = project.composition(id) {
            c.asset.clone()
        } else if let Some(m) = project.mapped().iter().find(|m| m.mapped_id == id) {
            m.asset.clone()
        } else {
            return Err(Error::NotFound(id.to_owned()));
        };
        Ok(project.asset(&asset)?.to_vec())
    }
}
