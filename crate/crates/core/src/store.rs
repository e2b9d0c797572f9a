//! On-disk projects: a `manifest.json` plus content-addressed PNG assets.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/assets/<sha256>.png
//! ```
//!
//! The manifest is written last, via rename, so a reader never observes a
//! manifest pointing at assets that are not yet on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compose::{ComposedPanel, OverlapWarning, SeamReport};
use crate::error::{Error, Result};
use crate::geometry::CropSpec;
use crate::prepare::{PrepSettings, PreparedRegion};
use crate::raster::RasterImage;
use crate::session::{MappedFace, Provenance};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ASSET_DIR: &str = "assets";

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub panel_id: String,
    pub asset: String,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub panel_id: String,
    pub region: PreparedRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappedRecord {
    pub mapped_id: String,
    pub crop_spec: CropSpec,
    pub provenance: Provenance,
    pub asset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRecord {
    pub composition_id: String,
    pub panel_id: String,
    pub asset: String,
    pub feather_width: u32,
    pub mapped_ids: Vec<String>,
    pub seams: SeamReport,
    pub overlaps: Vec<OverlapWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AssetEntry {
    id: String,
    path: String,
    size: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    project_id: String,
    settings: PrepSettings,
    panels: Vec<PanelRecord>,
    regions: Vec<RegionRecord>,
    mapped: Vec<MappedRecord>,
    compositions: Vec<CompositionRecord>,
    assets: Vec<AssetEntry>,
}

/// Everything a multi-panel working session produces, with its PNG assets
/// held in memory keyed by content hash.
#[derive(Debug, Clone, PartialEq)]
pub struct Project {
    pub project_id: String,
    pub settings: PrepSettings,
    panels: Vec<PanelRecord>,
    regions: Vec<RegionRecord>,
    mapped: Vec<MappedRecord>,
    compositions: Vec<CompositionRecord>,
    assets: BTreeMap<String, Arc<Vec<u8>>>,
}

impl Project {
    pub fn new(project_id: impl Into<String>, settings: PrepSettings) -> Self {
        Self {
            project_id: project_id.into(),
            settings,
            panels: Vec::new(),
            regions: Vec::new(),
            mapped: Vec::new(),
            compositions: Vec::new(),
            assets: BTreeMap::new(),
        }
    }

    pub fn panels(&self) -> &[PanelRecord] {
        &self.panels
    }

    pub fn regions(&self) -> &[RegionRecord] {
        &self.regions
    }

    pub fn mapped(&self) -> &[MappedRecord] {
        &self.mapped
    }

    pub fn compositions(&self) -> &[CompositionRecord] {
        &self.compositions
    }

    fn put_asset(&mut self, bytes: Vec<u8>) -> String {
        let id = content_hash(&bytes);
        self.assets.entry(id.clone()).or_insert_with(|| Arc::new(bytes));
        id
    }

    pub fn asset(&self, id: &str) -> Result<Arc<Vec<u8>>> {
        self.assets.get(id).cloned().ok_or_else(|| Error::NotFound(format!("asset {id}")))
    }

    /// Stores an uploaded panel verbatim; its bytes are what export returns.
    pub fn add_panel(&mut self, png: Vec<u8>) -> Result<PanelRecord> {
        let image = RasterImage::decode_png(&png)?;
        let record = PanelRecord {
            panel_id: format!("panel-{}", self.panels.len()),
            asset: self.put_asset(png),
            width: image.width(),
            height: image.height(),
            channels: image.channels().count() as u8,
        };
        self.panels.push(record.clone());
        Ok(record)
    }

    pub fn panel(&self, panel_id: &str) -> Result<&PanelRecord> {
        self.panels
            .iter()
            .find(|p| p.panel_id == panel_id)
            .ok_or_else(|| Error::NotFound(format!("panel {panel_id}")))
    }

    pub fn panel_image(&self, panel_id: &str) -> Result<RasterImage> {
        let record = self.panel(panel_id)?;
        RasterImage::decode_png(&self.asset(&record.asset)?)
    }

    pub fn panel_regions(&self, panel_id: &str) -> Vec<&PreparedRegion> {
        self.regions.iter().filter(|r| r.panel_id == panel_id).map(|r| &r.region).collect()
    }

    pub fn region(&self, panel_id: &str, face_index: u32) -> Result<&PreparedRegion> {
        self.regions
            .iter()
            .find(|r| r.panel_id == panel_id && r.region.face_index == face_index)
            .map(|r| &r.region)
            .ok_or_else(|| Error::NotFound(format!("region {panel_id}/{face_index}")))
    }

    /// First face index not used by any region of the panel.
    pub fn next_face_index(&self, panel_id: &str) -> u32 {
        self.panel_regions(panel_id).iter().map(|r| r.face_index + 1).max().unwrap_or(0)
    }

    /// Replaces the panel's auto-detected regions. Manual regions are kept;
    /// new regions are numbered after them, preserving their order.
    pub fn replace_auto_regions(
        &mut self,
        panel_id: &str,
        regions: Vec<PreparedRegion>,
    ) -> Result<Vec<PreparedRegion>> {
        self.panel(panel_id)?;
        self.regions
            .retain(|r| r.panel_id != panel_id || r.region.origin == crate::geometry::RegionSource::Manual);
        let base = self.next_face_index(panel_id);
        let stored: Vec<PreparedRegion> = regions
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r.face_index = base + i as u32;
                r
            })
            .collect();
        self.regions
            .extend(stored.iter().map(|r| RegionRecord { panel_id: panel_id.to_owned(), region: r.clone() }));
        Ok(stored)
    }

    pub fn add_region(&mut self, panel_id: &str, region: PreparedRegion) -> Result<()> {
        self.panel(panel_id)?;
        if self.region(panel_id, region.face_index).is_ok() {
            return Err(Error::InvalidArgument(format!(
                "region {panel_id}/{} already exists",
                region.face_index
            )));
        }
        self.regions.push(RegionRecord { panel_id: panel_id.to_owned(), region });
        Ok(())
    }

    pub fn add_mapped(&mut self, face: &MappedFace) -> Result<MappedRecord> {
        self.panel(&face.crop_spec.panel_id)?;
        let record = MappedRecord {
            mapped_id: format!("mapped-{}", self.mapped.len()),
            crop_spec: face.crop_spec.clone(),
            provenance: face.provenance.clone(),
            asset: self.put_asset(face.image.encode_png()),
        };
        self.mapped.push(record.clone());
        Ok(record)
    }

    pub fn mapped_face(&self, mapped_id: &str) -> Result<MappedFace> {
        let record = self
            .mapped
            .iter()
            .find(|m| m.mapped_id == mapped_id)
            .ok_or_else(|| Error::NotFound(format!("mapped face {mapped_id}")))?;
        Ok(MappedFace {
            crop_spec: record.crop_spec.clone(),
            image: Arc::new(RasterImage::decode_png(&self.asset(&record.asset)?)?),
            provenance: record.provenance.clone(),
        })
    }

    pub fn add_composition(
        &mut self,
        panel_id: &str,
        composed: &ComposedPanel,
        feather_width: u32,
        mapped_ids: Vec<String>,
    ) -> Result<CompositionRecord> {
        self.panel(panel_id)?;
        let record = CompositionRecord {
            composition_id: format!("composition-{}", self.compositions.len()),
            panel_id: panel_id.to_owned(),
            asset: self.put_asset(composed.image.encode_png()),
            feather_width,
            mapped_ids,
            seams: composed.seams.clone(),
            overlaps: composed.overlaps.clone(),
        };
        self.compositions.push(record.clone());
        Ok(record)
    }

    pub fn composition(&self, composition_id: &str) -> Result<&CompositionRecord> {
        self.compositions
            .iter()
            .find(|c| c.composition_id == composition_id)
            .ok_or_else(|| Error::NotFound(format!("composition {composition_id}")))
    }

    fn manifest(&self) -> Manifest {
        Manifest {
            schema_version: SCHEMA_VERSION,
            project_id: self.project_id.clone(),
            settings: self.settings,
            panels: self.panels.clone(),
            regions: self.regions.clone(),
            mapped: self.mapped.clone(),
            compositions: self.compositions.clone(),
            assets: self
                .assets
                .iter()
                .map(|(id, bytes)| AssetEntry {
                    id: id.clone(),
                    path: asset_path(id),
                    size: bytes.len() as u64,
                })
                .collect(),
        }
    }

    /// Writes the assets, then the manifest. Re-saving an unchanged project
    /// produces identical bytes.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let assets = dir.join(ASSET_DIR);
        std::fs::create_dir_all(&assets).map_err(|e| Error::io(&assets, e))?;
        for (id, bytes) in &self.assets {
            let path = dir.join(asset_path(id));
            let unchanged = std::fs::read(&path).is_ok_and(|existing| existing == **bytes);
            if !unchanged {
                write_atomic(&path, bytes)?;
            }
        }
        let mut text = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        text.push('\n');
        let manifest = dir.join(MANIFEST_FILE);
        write_atomic(&manifest, text.as_bytes())?;
        Ok(manifest)
    }

    /// Reads a saved project and verifies every asset against its hash.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = match std::fs::read_to_string(&manifest_path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingManifest(dir.to_path_buf()));
            }
            Err(e) => return Err(Error::io(&manifest_path, e)),
        };
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Malformed(format!("manifest: {e}")))?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Malformed("manifest has no schema_version".into()))?;
        if version != SCHEMA_VERSION as u64 {
            return Err(Error::VersionUnsupported(version.min(u32::MAX as u64) as u32));
        }
        let manifest: Manifest =
            serde_json::from_value(value).map_err(|e| Error::Malformed(format!("manifest: {e}")))?;

        let mut assets = BTreeMap::new();
        for entry in &manifest.assets {
            if entry.path != asset_path(&entry.id) {
                return Err(Error::IntegrityError {
                    asset: entry.id.clone(),
                    reason: format!("unexpected path {}", entry.path),
                });
            }
            let path = dir.join(&entry.path);
            let bytes = std::fs::read(&path).map_err(|e| Error::IntegrityError {
                asset: entry.path.clone(),
                reason: format!("unreadable: {e}"),
            })?;
            let actual = content_hash(&bytes);
            if actual != entry.id || bytes.len() as u64 != entry.size {
                return Err(Error::IntegrityError {
                    asset: entry.path.clone(),
                    reason: format!("content hash {actual}"),
                });
            }
            assets.insert(entry.id.clone(), Arc::new(bytes));
        }

        let project = Project {
            project_id: manifest.project_id,
            settings: manifest.settings,
            panels: manifest.panels,
            regions: manifest.regions,
            mapped: manifest.mapped,
            compositions: manifest.compositions,
            assets,
        };
        project.check_references()?;
        Ok(project)
    }

    fn check_references(&self) -> Result<()> {
        let referenced = self
            .panels
            .iter()
            .map(|p| &p.asset)
            .chain(self.mapped.iter().map(|m| &m.asset))
            .chain(self.compositions.iter().map(|c| &c.asset));
        for id in referenced {
            if !self.assets.contains_key(id) {
                return Err(Error::IntegrityError {
                    asset: asset_path(id),
                    reason: "not listed in manifest".into(),
                });
            }
        }
        let mut keys = std::collections::BTreeSet::new();
        for r in &self.regions {
            if !keys.insert((r.panel_id.as_str(), r.region.face_index)) {
                return Err(Error::Malformed(format!(
                    "duplicate region {}/{}",
                    r.panel_id, r.region.face_index
                )));
            }
            r.region.crop_spec.validate(self.settings.min_side)?;
        }
        for m in &self.mapped {
            m.crop_spec.validate(self.settings.min_side)?;
        }
        Ok(())
    }
}

fn asset_path(id: &str) -> String {
    format!("{ASSET_DIR}/{id}.png")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Channels;

    fn png(w: u32, h: u32, v: u8) -> Vec<u8> {
        RasterImage::filled(w, h, Channels::Rgb, v).unwrap().encode_png()
    }

    #[test]
    fn empty_project_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = Project::new("empty", PrepSettings::default());
        p.save(dir.path()).unwrap();
        assert_eq!(Project::load(dir.path()).unwrap(), p);
    }

    #[test]
    fn panel_bytes_are_kept_verbatim() {
        let mut p = Project::new("p", PrepSettings::default());
        let bytes = png(9, 4, 3);
        let rec = p.add_panel(bytes.clone()).unwrap();
        assert_eq!((rec.width, rec.height, rec.channels), (9, 4, 3));
        assert_eq!(*p.asset(&rec.asset).unwrap(), bytes);
        assert_eq!(p.add_panel(bytes[..20].to_vec()).unwrap_err().code(), "UnreadableMedia");
    }

    #[test]
    fn missing_manifest_and_future_version() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(Project::load(dir.path()).unwrap_err().code(), "MissingManifest");
        std::fs::write(dir.path().join(MANIFEST_FILE), r#"{"schema_version": 2}"#).unwrap();
        assert!(matches!(Project::load(dir.path()), Err(Error::VersionUnsupported(2))));
    }

    #[test]
    fn absent_asset_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::new("p", PrepSettings::default());
        let rec = p.add_panel(png(4, 4, 1)).unwrap();
        p.save(dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(asset_path(&rec.asset))).unwrap();
        let err = Project::load(dir.path()).unwrap_err();
        assert_eq!(err.code(), "IntegrityError");
        assert!(err.to_string().contains(&rec.asset));
    }

    #[test]
    fn auto_regions_are_numbered_after_manual_ones() {
        use crate::geometry::{BBox, RegionSource, make_crop_spec};
        let mut p = Project::new("p", PrepSettings::default());
        let id = p.add_panel(png(400, 400, 0)).unwrap().panel_id;
        let region = |source, face_index| PreparedRegion {
            crop_spec: make_crop_spec(&id, BBox::new(0.0, 0.0, 64.0, 64.0), source, 32).unwrap(),
            origin: source,
            warnings: vec![],
            face_index,
        };
        let stored = p
            .replace_auto_regions(&id, vec![region(RegionSource::Auto, 0), region(RegionSource::Auto, 1)])
            .unwrap();
        assert_eq!(stored.iter().map(|r| r.face_index).collect::<Vec<_>>(), vec![0, 1]);
        p.add_region(&id, region(RegionSource::Manual, p.next_face_index(&id))).unwrap();
        assert!(p.add_region(&id, region(RegionSource::Manual, 2)).is_err());
        let stored = p.replace_auto_regions(&id, vec![region(RegionSource::Auto, 0)]).unwrap();
        assert_eq!(stored[0].face_index, 3);
        assert_eq!(p.panel_regions(&id).len(), 2);
        assert_eq!(p.replace_auto_regions("nope", vec![]).unwrap_err().code(), "NotFound");
    }
}
