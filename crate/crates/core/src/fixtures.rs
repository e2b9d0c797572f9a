//! Deterministic synthetic data: drawn-looking panels, face-shaped landmark
//! sets and driving performances. Used by tests, benchmarks and demos where
//! no real model output is available.

use std::f64::consts::TAU;

use crate::geometry::{BBox, LANDMARK_COUNT, LandmarkSet, Point2D};
use crate::raster::{Channels, RasterImage};
use crate::session::DrivingPerformance;

/// Number of panels produced by [`panel`].
pub const PANEL_COUNT: usize = 10;

const PANEL_SIZES: [(u32, u32); PANEL_COUNT] = [
    (640, 560),
    (700, 900),
    (512, 512),
    (800, 600),
    (530, 760),
    (900, 540),
    (600, 600),
    (768, 1024),
    (1000, 700),
    (560, 640),
];

/// Small deterministic generator (splitmix64) so fixtures do not depend on
/// any RNG crate's stream stability.
#[derive(Debug, Clone)]
pub struct SplitMix(u64);

impl SplitMix {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}

/// Panel `i` (mod 10): even indices are grayscale, odd are color. Content is
/// soft shading with rounded shapes, the kind of tone work found in a
/// screentoned draft.
pub fn panel(i: usize) -> RasterImage {
    let (w, h) = PANEL_SIZES[i % PANEL_COUNT];
    let channels = if i.is_multiple_of(2) { Channels::Gray } else { Channels::Rgb };
    let mut rng = SplitMix::new(0xC0FFEE + i as u64);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.range(0.0, w as f64),
                rng.range(0.0, h as f64),
                rng.range(40.0, 160.0),
                rng.range(-90.0, 90.0),
            )
        })
        .collect();
    let phase = rng.range(0.0, TAU);
    let tint = [rng.range(0.8, 1.0), rng.range(0.7, 1.0), rng.range(0.6, 1.0)];
    RasterImage::from_fn(w, h, channels, |x, y, c| {
        let (fx, fy) = (x as f64, y as f64);
        let mut v = 150.0 + 50.0 * (fx / w as f64) - 30.0 * (fy / h as f64);
        v += 12.0 * ((fx / 37.0 + phase).sin() * (fy / 53.0).cos());
        for &(bx, by, r, amp) in &blobs {
            let d2 = ((fx - bx).powi(2) + (fy - by).powi(2)) / (r * r);
            v += amp * (-d2).exp();
        }
        let v = if channels == Channels::Rgb { v * tint[c] + 8.0 * c as f64 } else { v };
        v.round().clamp(0.0, 255.0) as u8
    })
    .expect("fixture dimensions are valid")
}

/// 106 face-shaped points filling the box `(x, y, w, h)` exactly: a 33-point
/// jaw contour, two 9-point brows, a 15-point nose, two 10-point eyes and a
/// 20-point mouth. `seed` jitters the interior points.
pub fn face_landmarks(bbox: BBox, seed: u64) -> LandmarkSet {
    let mut rng = SplitMix::new(seed);
    let (x, y, w, h) = (bbox.origin_x, bbox.origin_y, bbox.width, bbox.height);
    let at = |u: f64, v: f64| Point2D::new(x + u * w, y + v * h);
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    // jaw: left temple, down around the chin, right temple; extremes land on the box
    for k in 0..33 {
        let t = k as f64 / 32.0;
        let a = std::f64::consts::PI * t;
        pts.push(at(0.5 - 0.5 * a.cos(), 0.35 + 0.65 * a.sin()));
    }
    let mut jitter = |u: f64, v: f64| {
        let du = rng.range(-0.01, 0.01);
        let dv = rng.range(-0.01, 0.01);
        at((u + du).clamp(0.02, 0.98), (v + dv).clamp(0.02, 0.98))
    };
    for side in [0.0, 0.5] {
        for k in 0..9 {
            let t = k as f64 / 8.0;
            pts.push(jitter(0.1 + side + 0.3 * t, 0.12 - 0.1 * (std::f64::consts::PI * t).sin()));
        }
    }
    for k in 0..15 {
        let t = k as f64 / 14.0;
        pts.push(jitter(0.45 + 0.1 * (t * TAU).cos() * t, 0.3 + 0.35 * t));
    }
    for cx in [0.28, 0.72] {
        for k in 0..10 {
            let a = TAU * k as f64 / 10.0;
            pts.push(jitter(cx + 0.1 * a.cos(), 0.3 + 0.04 * a.sin()));
        }
    }
    for k in 0..20 {
        let a = TAU * k as f64 / 20.0;
        let r = if k % 2 == 0 { 1.0 } else { 0.6 };
        pts.push(jitter(0.5 + 0.18 * r * a.cos(), 0.78 + 0.06 * r * a.sin()));
    }
    // the top of the box: brow peaks do not reach it, so pin one brow point
    pts[33 + 4] = at(0.25, 0.0);
    LandmarkSet::new(pts).expect("106 finite points")
}

/// A driving performance of `n` frames, each a distinct flat-shaded image.
pub fn performance(n: usize) -> DrivingPerformance {
    let frames = (0..n)
        .map(|i| {
            RasterImage::from_fn(96, 72, Channels::Rgb, |x, y, c| {
                ((x + y + 17 * i as u32 + 60 * c as u32) % 256) as u8
            })
            .expect("valid frame")
        })
        .collect();
    DrivingPerformance::new(frames, Some(30.0), format!("synthetic-{n}")).expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tight_bbox;

    #[test]
    fn landmarks_fill_their_box() {
        let b = BBox::new(100.0, 50.0, 180.0, 220.0);
        let lm = face_landmarks(b, 3);
        assert_eq!(lm.points().len(), 106);
        let hull = tight_bbox(&lm).unwrap();
        assert!((hull.origin_x - b.origin_x).abs() < 1e-9);
        assert!((hull.origin_y - b.origin_y).abs() < 1e-9);
        assert!((hull.right() - b.right()).abs() < 1e-9);
        assert!((hull.bottom() - b.bottom()).abs() < 1e-9);
    }

    #[test]
    fn panels_are_deterministic_and_mixed() {
        assert_eq!(panel(3), panel(3));
        assert_eq!(panel(0).channels(), Channels::Gray);
        assert_eq!(panel(1).channels(), Channels::Rgb);
        for i in 0..PANEL_COUNT {
            let p = panel(i);
            assert!(p.width() >= 512 && p.height() >= 512);
        }
    }
}
