//! Pixel-driven fan-beam system matrix and its forward/back projection pair.
//!
//! Each pixel centre is projected from the source onto the detector line and
//! its unit weight is split between the two nearest detector cells by linear
//! interpolation. Forward projection applies the matrix, back projection its
//! exact transpose. Neither ramp filtering nor fan-beam weighting is applied.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::index::{image_unflat, sino_flat};

const SPARSE_MAGIC: &[u8; 6] = b"FCBPSM";
const SPARSE_VERSION: u32 = 1;

/// Sparse fan-beam operator, rows indexed by sinogram sample and columns by
/// image pixel, stored row-major (CSR).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrix {
    geom: FanBeamGeometry,
    /// `row_offsets[r]..row_offsets[r + 1]` spans row `r` (0-based).
    row_offsets: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
}

/// Detector contributions of one point at one view: at most two
/// `(0-based detector, weight)` pairs with weights summing to one.
fn splat(geom: &FanBeamGeometry, angle_rad: f64, x: f64, y: f64) -> [Option<(usize, f64)>; 2] {
    let q = geom.n_detectors;
    let Some(pos) = geom.project_point(angle_rad, x, y) else {
        return [None, None];
    };
    if !(pos >= 1.0 && pos <= q as f64) {
        return [None, None];
    }
    let lower = pos.floor();
    let frac = pos - lower;
    let lower = lower as usize;
    let first = (frac < 1.0).then_some((lower - 1, 1.0 - frac));
    let second = (frac > 0.0 && lower < q).then_some((lower, frac));
    [first, second]
}

impl SystemMatrix {
    pub fn build(geom: &FanBeamGeometry) -> Result<Self> {
        geom.check()?;
        let q = geom.n_detectors;
        let (rows, cols) = (geom.image_rows, geom.image_cols);

        let per_view: Vec<Vec<Vec<(u32, f64)>>> = (1..=geom.n_views)
            .into_par_iter()
            .map(|l| {
                let angle = geom.view_angle_deg(l).expect("view in range").to_radians();
                let mut dets: Vec<Vec<(u32, f64)>> = vec![Vec::new(); q];
                for a in 1..=rows {
                    for k in 1..=cols {
                        let (x, y) = geom.pixel_center_mm(a, k);
                        let j = ((a - 1) * cols + (k - 1)) as u32;
                        for (det, w) in splat(geom, angle, x, y).into_iter().flatten() {
                            if w > 0.0 {
                                dets[det].push((j, w));
                            }
                        }
                    }
                }
                dets
            })
            .collect();

        let mut row_offsets = Vec::with_capacity(geom.sinogram_len() + 1);
        let mut cols_out = Vec::new();
        let mut weights = Vec::new();
        row_offsets.push(0);
        for view in per_view {
            for det in view {
                for (j, w) in det {
                    cols_out.push(j);
                    weights.push(w);
                }
                row_offsets.push(cols_out.len());
            }
        }
        Ok(Self {
            geom: *geom,
            row_offsets,
            cols: cols_out,
            weights,
        })
    }

    pub fn geometry(&self) -> &FanBeamGeometry {
        &self.geom
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    /// Nonzeros of 0-based row `r` as `(0-based column, weight)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.weights[span])
            .map(|(&c, &w)| (c as usize, w))
    }

    /// All nonzeros as 1-based `(sinogram flat, image flat, weight)` triplets,
    /// in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.geom.sinogram_len())
            .flat_map(move |r| self.row(r).map(move |(c, w)| (r + 1, c + 1, w)))
    }

    /// Entry at 1-based `(i, j)`; zero when structurally absent.
    pub fn get(&self, i: usize, j: usize) -> Result<f64> {
        if i == 0 || i > self.geom.sinogram_len() {
            return Err(Error::index("sinogram", i, self.geom.sinogram_len()));
        }
        if j == 0 || j > self.geom.image_len() {
            return Err(Error::index("image", j, self.geom.image_len()));
        }
        let span = self.row_offsets[i - 1]..self.row_offsets[i];
        let cols = &self.cols[span.clone()];
        Ok(match cols.binary_search(&((j - 1) as u32)) {
            Ok(pos) => self.weights[span.start + pos],
            Err(_) => 0.0,
        })
    }

    pub fn forward_project(&self, image: &[f64]) -> Result<Vec<f64>> {
        if image.len() != self.geom.image_len() {
            return Err(Error::shape("image", self.geom.image_len(), image.len()));
        }
        Ok((0..self.geom.sinogram_len())
            .map(|r| self.row(r).map(|(c, w)| w * image[c]).sum())
            .collect())
    }

    /// Unfiltered back projection: the transpose of [`forward_project`](Self::forward_project).
    pub fn back_project(&self, sinogram: &[f64]) -> Result<Vec<f64>> {
        if sinogram.len() != self.geom.sinogram_len() {
            return Err(Error::shape(
                "sinogram",
                self.geom.sinogram_len(),
                sinogram.len(),
            ));
        }
        let mut out = vec![0.0; self.geom.image_len()];
        for (r, &s) in sinogram.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for (c, w) in self.row(r) {
                out[c] += w * s;
            }
        }
        Ok(out)
    }

    /// Row `sino_flat(l, b)` reshaped to an image-sized map (row-major,
    /// `image_rows x image_cols`).
    pub fn analytic_weight_map(&self, l: usize, b: usize) -> Result<Vec<f64>> {
        let i = sino_flat(l, b, &self.geom)?;
        Ok(self.analytic_weight_map_row(i - 1))
    }

    /// Dense image-shaped copy of sinogram row `r` (0-based).
    pub fn analytic_weight_map_row(&self, r: usize) -> Vec<f64> {
        let mut map = vec![0.0; self.geom.image_len()];
        for (c, w) in self.row(r) {
            map[c] = w;
        }
        map
    }

    /// Dense copy laid out like the FC weights: `W[i][j]` at
    /// `(i - 1) * image_len + (j - 1)`.
    pub fn to_dense<T: crate::Real>(&self) -> Vec<T> {
        let n_out = self.geom.image_len();
        let mut dense = vec![T::zero(); self.geom.sinogram_len() * n_out];
        for r in 0..self.geom.sinogram_len() {
            for (c, w) in self.row(r) {
                dense[r * n_out + c] = T::from_f64_lossy(w);
            }
        }
        dense
    }

    /// Writes the `FCBPSM` triplet export (1-based indices, f32 weights).
    pub fn write_sparse(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(18 + 12 * self.nnz());
        buf.extend_from_slice(SPARSE_MAGIC);
        buf.extend_from_slice(&SPARSE_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.nnz() as u64).to_le_bytes());
        for (i, j, w) in self.entries() {
            buf.extend_from_slice(&(i as u32).to_le_bytes());
            buf.extend_from_slice(&(j as u32).to_le_bytes());
            buf.extend_from_slice(&(w as f32).to_le_bytes());
        }
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Reads an `FCBPSM` export back as 1-based `(i, j, w)` triplets.
pub fn read_sparse(path: &Path) -> Result<Vec<(u32, u32, f32)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 18 || &bytes[..6] != SPARSE_MAGIC {
        return Err(Error::format(path, "missing FCBPSM magic"));
    }
    let version = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    if version != SPARSE_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    let body = &bytes[18..];
    if count.checked_mul(12) != Some(body.len()) {
        return Err(Error::format(
            path,
            format!("expected {count} triplets, found {} bytes", body.len()),
        ));
    }
    Ok(body
        .chunks_exact(12)
        .map(|c| {
            (
                u32::from_le_bytes(c[0..4].try_into().unwrap()),
                u32::from_le_bytes(c[4..8].try_into().unwrap()),
                f32::from_le_bytes(c[8..12].try_into().unwrap()),
            )
        })
        .collect())
}

/// 1-based image rows/cols where `map` is nonzero.
pub fn support(map: &[f64], geom: &FanBeamGeometry) -> Vec<(usize, usize)> {
    map.iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(j, _)| {
            let m = image_unflat(j + 1, geom).expect("map sized to the grid");
            (m.c, m.t)
        })
        .collect()
}
