//! Expression-mapping sessions: attach a driving performance to a prepared
//! region, render frames progressively, scrub, tune the retargeting
//! sliders, and commit one keyframe as a [`MappedFace`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CropSpec, extract_crop};
use crate::prepare::PreparedRegion;
use crate::raster::RasterImage;
use crate::reenact::{MotionMode, ReenactedFrame, ReenactmentEngine, RetargetParams, reenact};
use crate::workers::bounded_map;

/// The artist's recorded performance, one image per timeline position.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingPerformance {
    frames: Vec<Arc<RasterImage>>,
    fps_hint: Option<f64>,
    source_label: String,
}

impl DrivingPerformance {
    pub fn new(
        frames: Vec<RasterImage>,
        fps_hint: Option<f64>,
        source_label: impl Into<String>,
    ) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::EmptyPerformance);
        };
        let dims = (first.width(), first.height(), first.channels());
        if let Some(i) = frames.iter().position(|f| (f.width(), f.height(), f.channels()) != dims) {
            return Err(Error::UnreadableMedia(format!(
                "frame {i} is {}x{}, expected {}x{}",
                frames[i].width(),
                frames[i].height(),
                dims.0,
                dims.1
            )));
        }
        Ok(Self {
            frames: frames.into_iter().map(Arc::new).collect(),
            fps_hint,
            source_label: source_label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, index: usize) -> Option<&RasterImage> {
        self.frames.get(index).map(|f| f.as_ref())
    }

    pub fn fps_hint(&self) -> Option<f64> {
        self.fps_hint
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionState {
    Created,
    Generating,
    Browsable,
    Committed,
}

impl SessionState {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Created => "created",
            SessionState::Generating => "generating",
            SessionState::Browsable => "browsable",
            SessionState::Committed => "committed",
        }
    }
}

/// What a frame was rendered with. A cached frame is served only while its
/// key matches the session's current key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderKey {
    pub mode: MotionMode,
    pub params: RetargetParams,
}

#[derive(Debug, Clone)]
enum FrameSlot {
    Ready(ReenactedFrame),
    Failed { key: RenderKey, error: String },
}

impl FrameSlot {
    fn key(&self) -> RenderKey {
        match self {
            FrameSlot::Ready(f) => RenderKey { mode: f.mode_used, params: f.params_used },
            FrameSlot::Failed { key, .. } => *key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub engine: String,
    pub frame_index: usize,
    pub mode: MotionMode,
    pub params: RetargetParams,
}

/// A committed face ready for composition.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedFace {
    pub crop_spec: CropSpec,
    pub image: Arc<RasterImage>,
    pub provenance: Provenance,
}

/// Outcome of one [`MappingSession::generate`] call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationReport {
    pub rendered: Vec<usize>,
    pub cached: Vec<usize>,
    pub failed: Vec<(usize, String)>,
}

/// Read-only view of a session for pollers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub state: SessionState,
    pub frame_count: usize,
    pub available_indices: Vec<usize>,
    pub pending_indices: Vec<usize>,
    pub failed: BTreeMap<usize, String>,
    pub selected_index: Option<usize>,
    pub mode: MotionMode,
    pub params: RetargetParams,
}

/// A single frame render, detached from the session so it can run without
/// holding any lock.
pub struct RenderJob {
    pub index: usize,
    pub key: RenderKey,
    engine: Arc<dyn ReenactmentEngine>,
    source: Arc<RasterImage>,
    driving: Arc<RasterImage>,
}

impl RenderJob {
    pub fn run(&self) -> Result<ReenactedFrame> {
        reenact(self.engine.as_ref(), &self.source, &self.driving, self.index, self.key.mode, self.key.params)
    }
}

pub struct MappingSession {
    id: String,
    crop_spec: CropSpec,
    source_crop: Arc<RasterImage>,
    performance: Arc<DrivingPerformance>,
    engine: Arc<dyn ReenactmentEngine>,
    mode: MotionMode,
    params: RetargetParams,
    results: BTreeMap<usize, FrameSlot>,
    in_flight: BTreeMap<usize, RenderKey>,
    selected: Option<usize>,
    committed: bool,
    engine_calls: u64,
}

impl std::fmt::Debug for MappingSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MappingSession")
            .field("id", &self.id)
            .field("state", &self.state())
            .field("frames", &self.performance.len())
            .field("selected", &self.selected)
            .finish_non_exhaustive()
    }
}

impl Clone for MappingSession {
    fn clone(&self) -> Self {
        Self {
            id: self.id.clone(),
            crop_spec: self.crop_spec.clone(),
            source_crop: self.source_crop.clone(),
            performance: self.performance.clone(),
            engine: self.engine.clone(),
            mode: self.mode,
            params: self.params,
            results: self.results.clone(),
            in_flight: self.in_flight.clone(),
            selected: self.selected,
            committed: self.committed,
            engine_calls: self.engine_calls,
        }
    }
}

impl MappingSession {
    pub fn create(
        id: impl Into<String>,
        region: &PreparedRegion,
        panel: &RasterImage,
        performance: Arc<DrivingPerformance>,
        engine: Arc<dyn ReenactmentEngine>,
        mode: MotionMode,
    ) -> Result<Self> {
        if performance.is_empty() {
            return Err(Error::EmptyPerformance);
        }
        let source_crop = Arc::new(extract_crop(panel, &region.crop_spec)?);
        Ok(Self {
            id: id.into(),
            crop_spec: region.crop_spec.clone(),
            source_crop,
            performance,
            engine,
            mode,
            params: RetargetParams::default(),
            results: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            selected: None,
            committed: false,
            engine_calls: 0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn crop_spec(&self) -> &CropSpec {
        &self.crop_spec
    }

    pub fn source_crop(&self) -> &RasterImage {
        &self.source_crop
    }

    pub fn frame_count(&self) -> usize {
        self.performance.len()
    }

    pub fn engine_name(&self) -> String {
        self.engine.descriptor().name
    }

    pub fn mode(&self) -> MotionMode {
        self.mode
    }

    pub fn params(&self) -> RetargetParams {
        self.params
    }

    pub fn selected_index(&self) -> Option<usize> {
        self.selected
    }

    /// Engine invocations issued so far.
    pub fn engine_calls(&self) -> u64 {
        self.engine_calls
    }

    pub fn current_key(&self) -> RenderKey {
        RenderKey { mode: self.mode, params: self.params }
    }

    pub fn state(&self) -> SessionState {
        if self.committed {
            SessionState::Committed
        } else if !self.in_flight.is_empty() {
            SessionState::Generating
        } else if !self.results.is_empty() {
            SessionState::Browsable
        } else {
            SessionState::Created
        }
    }

    fn ensure_mutable(&self) -> Result<()> {
        if self.committed { Err(Error::SessionCommitted) } else { Ok(()) }
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index < self.performance.len() {
            Ok(())
        } else {
            Err(Error::InvalidIndex { index, len: self.performance.len() })
        }
    }

    fn is_fresh(&self, index: usize) -> bool {
        matches!(self.results.get(&index), Some(FrameSlot::Ready(f))
            if RenderKey { mode: f.mode_used, params: f.params_used } == self.current_key())
    }

    /// True when a frame exists but was rendered with other parameters.
    pub fn is_stale(&self, index: usize) -> bool {
        self.results.get(&index).is_some_and(|s| s.key() != self.current_key())
    }

    /// Indices whose current-parameter render is available.
    pub fn available_indices(&self) -> Vec<usize> {
        self.results.keys().copied().filter(|&i| self.is_fresh(i)).collect()
    }

    /// The current-parameter render of `index`. Stale renders are never served.
    pub fn frame(&self, index: usize) -> Result<&ReenactedFrame> {
        self.check_index(index)?;
        match self.results.get(&index) {
            Some(FrameSlot::Ready(f)) if self.is_fresh(index) => Ok(f),
            _ => Err(Error::FrameNotGenerated(index)),
        }
    }

    /// Like [`frame`](Self::frame), but re-renders a missing or stale frame first.
    pub fn frame_or_regenerate(&mut self, index: usize) -> Result<&ReenactedFrame> {
        self.check_index(index)?;
        if !self.is_fresh(index) {
            self.ensure_mutable()?;
            let report = self.generate(&[index])?;
            if let Some((_, err)) = report.failed.first() {
                return Err(Error::EngineFailure(err.clone()));
            }
        }
        self.frame(index)
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            session_id: self.id.clone(),
            state: self.state(),
            frame_count: self.performance.len(),
            available_indices: self.available_indices(),
            pending_indices: self.in_flight.keys().copied().collect(),
            failed: self
                .results
                .iter()
                .filter_map(|(&i, s)| match s {
                    FrameSlot::Failed { key, error } if *key == self.current_key() => {
                        Some((i, error.clone()))
                    }
                    _ => None,
                })
                .collect(),
            selected_index: self.selected,
            mode: self.mode,
            params: self.params,
        }
    }

    /// Validates `indices` and reserves every frame that needs rendering
    /// under the current key. Already-current and already-pending frames
    /// are skipped.
    pub fn plan(&mut self, indices: &[usize]) -> Result<(Vec<RenderJob>, Vec<usize>)> {
        self.ensure_mutable()?;
        for &i in indices {
            self.check_index(i)?;
        }
        let key = self.current_key();
        let wanted: BTreeSet<usize> = indices.iter().copied().collect();
        let mut jobs = Vec::new();
        let mut cached = Vec::new();
        for i in wanted {
            if self.is_fresh(i) || self.in_flight.get(&i) == Some(&key) {
                cached.push(i);
                continue;
            }
            self.in_flight.insert(i, key);
            self.engine_calls += 1;
            jobs.push(RenderJob {
                index: i,
                key,
                engine: self.engine.clone(),
                source: self.source_crop.clone(),
                driving: self.performance.frames[i].clone(),
            });
        }
        Ok((jobs, cached))
    }

    /// Stores the outcome of a planned job. Results for an outdated key are
    /// kept only if the frame has nothing better; after commit they are dropped.
    pub fn complete(&mut self, index: usize, key: RenderKey, outcome: Result<ReenactedFrame>) {
        if self.in_flight.get(&index) == Some(&key) {
            self.in_flight.remove(&index);
        }
        if self.committed {
            return;
        }
        let keep = key == self.current_key()
            || match self.results.get(&index) {
                None => true,
                Some(existing) => existing.key() != self.current_key() && outcome.is_ok(),
            };
        if !keep {
            return;
        }
        let slot = match outcome {
            Ok(frame) => FrameSlot::Ready(frame),
            Err(e) => {
                tracing::warn!(session = %self.id, index, "frame failed: {e}");
                FrameSlot::Failed { key, error: e.to_string() }
            }
        };
        self.results.insert(index, slot);
    }

    /// Renders the requested frames with the current mode and parameters,
    /// at most `max_concurrency` at a time. A failed frame is recorded on
    /// that frame and does not abort the batch.
    pub fn generate(&mut self, indices: &[usize]) -> Result<GenerationReport> {
        let (jobs, cached) = self.plan(indices)?;
        let limit = self.engine.descriptor().max_concurrency;
        let outcomes = bounded_map(&jobs, limit, RenderJob::run);
        let mut report = GenerationReport { cached, ..Default::default() };
        for (job, outcome) in jobs.iter().zip(outcomes) {
            match &outcome {
                Ok(_) => report.rendered.push(job.index),
                Err(e) => report.failed.push((job.index, e.to_string())),
            }
            self.complete(job.index, job.key, outcome);
        }
        Ok(report)
    }

    pub fn select_keyframe(&mut self, index: usize) -> Result<()> {
        self.ensure_mutable()?;
        self.check_index(index)?;
        match self.results.get(&index) {
            Some(FrameSlot::Ready(_)) => {}
            _ => return Err(Error::FrameNotGenerated(index)),
        }
        if !self.is_fresh(index) {
            let report = self.generate(&[index])?;
            if let Some((_, err)) = report.failed.first() {
                return Err(Error::EngineFailure(err.clone()));
            }
        }
        self.selected = Some(index);
        Ok(())
    }

    /// Updates the sliders (and optionally the motion mode). Every cached
    /// frame rendered with other values becomes stale; the selected frame is
    /// re-rendered immediately. Returns whether anything changed.
    pub fn set_params(&mut self, params: RetargetParams, mode: Option<MotionMode>) -> Result<bool> {
        self.ensure_mutable()?;
        params.validate()?;
        if self.results.is_empty() {
            return Err(Error::InvalidState { op: "set_params", state: self.state().as_str() });
        }
        let key = RenderKey { mode: mode.unwrap_or(self.mode), params };
        if key == self.current_key() {
            return Ok(false);
        }
        self.mode = key.mode;
        self.params = key.params;
        if let Some(sel) = self.selected {
            // a failure is recorded on the frame; commit then reports StaleSelection
            self.generate(&[sel])?;
        }
        Ok(true)
    }

    pub fn commit(&mut self) -> Result<MappedFace> {
        self.ensure_mutable()?;
        let index = self.selected.ok_or(Error::NothingSelected)?;
        let frame = match self.results.get(&index) {
            Some(FrameSlot::Ready(f)) if self.is_fresh(index) => f.clone(),
            _ => return Err(Error::StaleSelection(index)),
        };
        self.committed = true;
        self.in_flight.clear();
        Ok(MappedFace {
            crop_spec: self.crop_spec.clone(),
            image: frame.image,
            provenance: Provenance {
                engine: self.engine.descriptor().name,
                frame_index: index,
                mode: frame.mode_used,
                params: frame.params_used,
            },
        })
    }
}

/// A session shared between one serialized writer and any number of
/// pollers, with background generation.
#[derive(Clone)]
pub struct SharedSession {
    inner: Arc<Mutex<MappingSession>>,
}

/// Tracks one background generation batch.
pub struct ProgressHandle {
    total: usize,
    done: Arc<AtomicUsize>,
    worker: Option<JoinHandle<()>>,
}

impl ProgressHandle {
    pub fn total(&self) -> usize {
        self.total
    }

    pub fn completed(&self) -> usize {
        self.done.load(Ordering::Acquire)
    }

    pub fn is_finished(&self) -> bool {
        self.worker.as_ref().is_none_or(|w| w.is_finished())
    }

    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl SharedSession {
    pub fn new(session: MappingSession) -> Self {
        Self { inner: Arc::new(Mutex::new(session)) }
    }

    /// Exclusive access for mutating operations.
    pub fn lock(&self) -> MutexGuard<'_, MappingSession> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        self.lock().snapshot()
    }

    /// Reserves the requested frames and renders them on background
    /// workers; each result becomes visible as soon as it completes.
    pub fn spawn_generate(&self, indices: &[usize]) -> Result<ProgressHandle> {
        let (jobs, limit) = {
            let mut s = self.lock();
            let (jobs, _) = s.plan(indices)?;
            (jobs, s.engine.descriptor().max_concurrency)
        };
        let total = jobs.len();
        let done = Arc::new(AtomicUsize::new(0));
        if jobs.is_empty() {
            return Ok(ProgressHandle { total, done, worker: None });
        }
        let session = self.inner.clone();
        let counter = done.clone();
        let worker = std::thread::spawn(move || {
            bounded_map(&jobs, limit, |job| {
                let outcome = job.run();
                session.lock().unwrap_or_else(|p| p.into_inner()).complete(job.index, job.key, outcome);
                counter.fetch_add(1, Ordering::Release);
            });
        });
        Ok(ProgressHandle { total, done, worker: Some(worker) })
    }
}
