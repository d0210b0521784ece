//! Fan-beam acquisition geometry and image grid.
//!
//! Conventions used throughout the crate:
//!
//! + the source starts on the +x axis at view 1 and rotates counterclockwise;
//! + the detector is flat, perpendicular to the central ray, and centred on it
//!   (for even counts the central ray falls between detectors n/2 and n/2+1);
//! + pixel (row 1, col 1) is the top-left pixel, +y points up, and the grid is
//!   centred on the rotation centre.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanBeamGeometry {
    pub source_to_detector_mm: f64,
    pub source_to_center_mm: f64,
    /// Q, detector cells per view. Also B in the cell-matrix view.
    pub n_detectors: usize,
    pub detector_pitch_mm: f64,
    /// P, acquisition angles. Also L in the cell-matrix view.
    pub n_views: usize,
    pub angular_step_deg: f64,
    /// C = A, rows of the reconstructed image.
    pub image_rows: usize,
    /// T = K, columns of the reconstructed image.
    pub image_cols: usize,
    pub pixel_size_mm: f64,
}

impl Default for FanBeamGeometry {
    fn default() -> Self {
        Self {
            source_to_detector_mm: 1500.0,
            source_to_center_mm: 1000.0,
            n_detectors: 128,
            detector_pitch_mm: 1.6,
            n_views: 90,
            angular_step_deg: 4.0,
            image_rows: 64,
            image_cols: 64,
            pixel_size_mm: 1.0,
        }
    }
}

/// A violated geometry invariant, identified by a short name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation(pub &'static str);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0)
    }
}

impl FanBeamGeometry {
    /// The reduced geometry used for CPU-sized experiments: 32x32 grid,
    /// 45 views covering the full circle, 64 detectors.
    pub fn desk() -> Self {
        Self {
            n_detectors: 64,
            n_views: 45,
            angular_step_deg: 8.0,
            image_rows: 32,
            image_cols: 32,
            ..Self::default()
        }
    }

    pub fn sinogram_len(&self) -> usize {
        self.n_views * self.n_detectors
    }

    pub fn image_len(&self) -> usize {
        self.image_rows * self.image_cols
    }

    /// Every violated invariant; an empty list means the geometry is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut check = |ok: bool, name: &'static str| {
            if !ok {
                out.push(Violation(name));
            }
        };
        check(self.source_to_center_mm > 0.0, "sod > 0");
        check(
            self.source_to_detector_mm > self.source_to_center_mm,
            "sdd > sod",
        );
        check(self.n_detectors >= 1, "n_detectors ≥ 1");
        check(self.n_views >= 1, "n_views ≥ 1");
        check(self.image_rows >= 1, "image_rows ≥ 1");
        check(self.image_cols >= 1, "image_cols ≥ 1");
        check(
            self.n_views as f64 * self.angular_step_deg <= 360.0,
            "n_views × angular_step_deg ≤ 360",
        );
        check(self.angular_step_deg >= 0.0, "angular_step_deg ≥ 0");
        check(self.detector_pitch_mm > 0.0, "detector_pitch_mm > 0");
        check(self.pixel_size_mm > 0.0, "pixel_size_mm > 0");
        out
    }

    /// Like [`validate`](Self::validate) but as a `Result`.
    pub fn check(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            let names: Vec<String> = v.iter().map(|v| v.to_string()).collect();
            Err(Error::Config(format!(
                "geometry violates: {}",
                names.join(", ")
            )))
        }
    }

    /// Angle of 1-based view `l`, in degrees.
    pub fn view_angle_deg(&self, l: usize) -> Result<f64> {
        if l == 0 || l > self.n_views {
            return Err(Error::index("view", l, self.n_views));
        }
        Ok((l - 1) as f64 * self.angular_step_deg)
    }

    /// Signed lateral offset of the centre of 1-based detector `b` from the
    /// central ray, in mm on the detector line.
    pub fn detector_center_offset_mm(&self, b: usize) -> Result<f64> {
        if b == 0 || b > self.n_detectors {
            return Err(Error::index("detector", b, self.n_detectors));
        }
        Ok(((b as f64 - 0.5) - self.n_detectors as f64 / 2.0) * self.detector_pitch_mm)
    }

    /// Physical centre `(x, y)` of 1-based pixel (`row`, `col`).
    pub fn pixel_center_mm(&self, row: usize, col: usize) -> (f64, f64) {
        let x = ((col as f64 - 0.5) - self.image_cols as f64 / 2.0) * self.pixel_size_mm;
        let y = (self.image_rows as f64 / 2.0 - (row as f64 - 0.5)) * self.pixel_size_mm;
        (x, y)
    }

    /// Continuous 1-based detector coordinate where the ray from the source
    /// at `angle_rad` through `(x, y)` meets the detector line. Detector `b`
    /// is centred at coordinate `b`. `None` if the point is not between the
    /// source and the detector.
    pub fn project_point(&self, angle_rad: f64, x: f64, y: f64) -> Option<f64> {
        let (sin, cos) = angle_rad.sin_cos();
        // Distance from the source along the central ray, and lateral offset.
        let depth = self.source_to_center_mm - (x * cos + y * sin);
        if depth <= 0.0 || depth >= self.source_to_detector_mm {
            return None;
        }
        let lateral = -x * sin + y * cos;
        let u = lateral * self.source_to_detector_mm / depth;
        Some(u / self.detector_pitch_mm + self.n_detectors as f64 / 2.0 + 0.5)
    }
}
