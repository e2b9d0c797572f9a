use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mangaface_cli::{MappedDocument, RegionsDocument};
use mangaface_core::fixtures;
use mangaface_core::geometry::BBox;
use mangaface_core::prepare::{RawFace, faces_document};
use mangaface_core::{CANONICAL_SIZE, RasterImage, extract_crop};

fn mangaface(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mangaface")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn panel(&self, name: &str, i: usize) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, fixtures::panel(i).encode_png()).unwrap();
        p
    }

    fn faces(&self, name: &str, boxes: &[BBox]) -> PathBuf {
        let faces: Vec<RawFace> = boxes
            .iter()
            .map(|b| RawFace {
                landmarks: fixtures::face_landmarks(*b, 2).to_pairs(),
                confidence: 0.95,
                yaw: Some(0.0),
                bbox: None,
            })
            .collect();
        let p = self.path(name);
        std::fs::write(&p, faces_document(&faces)).unwrap();
        p
    }

    fn frames(&self, n: usize) -> PathBuf {
        let dir = self.path("frames");
        std::fs::create_dir_all(&dir).unwrap();
        let perf = fixtures::performance(n);
        for i in 0..n {
            std::fs::write(dir.join(format!("{i:04}.png")), perf.frame(i).unwrap().encode_png()).unwrap();
        }
        dir
    }
}

#[test]
fn detect_writes_regions() {
    let ws = Workspace::new();
    let panel = ws.panel("p.png", 3);
    let faces =
        ws.faces("faces.json", &[BBox::new(40.0, 40.0, 120.0, 140.0), BBox::new(400.0, 200.0, 200.0, 210.0)]);
    let out = ws.path("regions.json");
    let o = mangaface(&[
        "detect",
        "--panel",
        s(&panel),
        "--detector",
        &format!("mock:{}", s(&faces)),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: RegionsDocument = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(doc.regions.len(), 2);
    assert_eq!(doc.panel_id, "p");

    let none = ws.faces("none.json", &[]);
    let o = mangaface(&[
        "detect",
        "--panel",
        s(&panel),
        "--detector",
        &format!("mock:{}", s(&none)),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success());
    let doc: RegionsDocument = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert!(doc.regions.is_empty());

    let junk = ws.path("junk.png");
    std::fs::write(&junk, b"not a png").unwrap();
    let o = mangaface(&[
        "detect",
        "--panel",
        s(&junk),
        "--detector",
        &format!("mock:{}", s(&none)),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("UnreadableMedia"));
}

#[test]
fn map_stamp_and_identity() {
    let ws = Workspace::new();
    let panel = ws.panel("p.png", 1);
    let frames = ws.frames(6);
    let out = ws.path("crop.png");
    let o = mangaface(&[
        "map",
        "--panel",
        s(&panel),
        "--rect",
        "30,40,256,256",
        "--frames-dir",
        s(&frames),
        "--engine",
        "stamp",
        "--keyframe",
        "3",
        "--eye",
        "0.2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let crop = RasterImage::decode_png(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(crop.pixel(0, 0), &[3, 51, 128]);
    let doc: MappedDocument =
        serde_json::from_slice(&std::fs::read(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(doc.provenance.frame_index, 3);
    assert_eq!(doc.crop_spec.side, 256);

    let o = mangaface(&[
        "map",
        "--panel",
        s(&panel),
        "--rect",
        "30,40,256,256",
        "--frames-dir",
        s(&frames),
        "--keyframe",
        "6",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(6), "{}", stderr(&o));

    let o = mangaface(&[
        "map",
        "--panel",
        s(&panel),
        "--rect",
        "30,40,256,256",
        "--frames-dir",
        s(&frames),
        "--engine",
        "identity",
        "--keyframe",
        "0",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success());
    let crop = RasterImage::decode_png(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(crop.width(), CANONICAL_SIZE);
    let expected = extract_crop(&fixtures::panel(1), &doc.crop_spec).unwrap();
    assert_eq!(crop, expected);

    let o = mangaface(&[
        "map",
        "--panel",
        s(&panel),
        "--rect",
        "0,0,64,64",
        "--frames-dir",
        s(&frames),
        "--engine",
        "warp",
        "--keyframe",
        "0",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn map_by_region_index() {
    let ws = Workspace::new();
    let panel = ws.panel("p.png", 3);
    let faces =
        ws.faces("faces.json", &[BBox::new(40.0, 40.0, 120.0, 140.0), BBox::new(400.0, 200.0, 200.0, 210.0)]);
    let regions = ws.path("regions.json");
    let det = format!("mock:{}", s(&faces));
    assert!(
        mangaface(&["detect", "--panel", s(&panel), "--detector", &det, "--out", s(&regions)])
            .status
            .success()
    );
    let frames = ws.frames(2);
    let out = ws.path("crop.png");
    let o = mangaface(&[
        "map",
        "--panel",
        s(&panel),
        "--regions",
        s(&regions),
        "--region",
        "1",
        "--frames-dir",
        s(&frames),
        "--keyframe",
        "1",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: MappedDocument =
        serde_json::from_slice(&std::fs::read(out.with_extension("json")).unwrap()).unwrap();
    let listed: RegionsDocument = serde_json::from_slice(&std::fs::read(&regions).unwrap()).unwrap();
    assert_eq!(doc.crop_spec, listed.regions[1].crop_spec);

    let o = mangaface(&[
        "map",
        "--panel",
        s(&panel),
        "--detector",
        &det,
        "--region",
        "5",
        "--frames-dir",
        s(&frames),
        "--keyframe",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compose_identity_512_reproduces_panel_bytes() {
    let ws = Workspace::new();
    let panel = ws.panel("p.png", 4);
    let frames = ws.frames(1);
    let crop = ws.path("crop.png");
    let o = mangaface(&[
        "map",
        "--panel",
        s(&panel),
        "--rect",
        "10,100,512,512",
        "--frames-dir",
        s(&frames),
        "--keyframe",
        "0",
        "--out",
        s(&crop),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = ws.path("out.png");
    let o = mangaface(&[
        "compose",
        "--panel",
        s(&panel),
        "--mapped",
        s(&crop.with_extension("json")),
        "--seam-report",
        "-",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&panel).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["faces"][0]["inner"]["all"]["mean_abs_diff"], serde_json::json!([0.0]));

    // a spec framed on another panel is refused
    let other = ws.panel("other.png", 4);
    let o = mangaface(&[
        "compose",
        "--panel",
        s(&other),
        "--mapped",
        s(&crop.with_extension("json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("MismatchedPanel"));
}

#[test]
fn roundtrip_exit_codes() {
    let ws = Workspace::new();
    for i in [0, 7] {
        let panel = ws.panel(&format!("p{i}.png"), i);
        let o = mangaface(&["roundtrip", "--panel", s(&panel)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let panel = ws.panel("face.png", 8);
    let faces = ws.faces("faces.json", &[BBox::new(300.0, 100.0, 150.0, 180.0)]);
    let o = mangaface(&["roundtrip", "--panel", s(&panel), "--detector", &format!("mock:{}", s(&faces))]);
    assert!(o.status.success(), "{}", stderr(&o));

    let tiny = ws.path("tiny.png");
    std::fs::write(
        &tiny,
        RasterImage::filled(100, 600, mangaface_core::Channels::Gray, 9).unwrap().encode_png(),
    )
    .unwrap();
    let o = mangaface(&["roundtrip", "--panel", s(&tiny)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("SideTooSmall"));

    let corrupt = ws.path("corrupt.png");
    let bytes = std::fs::read(&panel).unwrap();
    std::fs::write(&corrupt, &bytes[..bytes.len() / 3]).unwrap();
    assert_eq!(mangaface(&["roundtrip", "--panel", s(&corrupt)]).status.code(), Some(3));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(mangaface(&["map", "--panel", "x.png"]).status.code(), Some(2));
    assert_eq!(mangaface(&["roundtrip", "--panel", "x.png", "--rect", "1,2,3"]).status.code(), Some(2));
    assert_eq!(mangaface(&["frobnicate"]).status.code(), Some(2));
}
