//! Synthetic phantoms and the `FCBP` dataset file.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::projector::SystemMatrix;

const DATASET_MAGIC: &[u8; 4] = b"FCBP";
const DATASET_VERSION: u32 = 1;

/// Row-major single-channel image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl Image {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// An ellipse in normalised coordinates: the image spans `[-1, 1]` on both
/// axes with +y up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub x0: f64,
    pub y0: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub angle_deg: f64,
    pub intensity: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_x).powi(2) + (v / self.semi_y).powi(2) <= 1.0
    }
}

/// Sums the ellipses at every pixel centre and clips to `[0, 1]`.
pub fn rasterize(ellipses: &[Ellipse], rows: usize, cols: usize) -> Image {
    let mut img = Image::zeros(rows, cols);
    for r in 0..rows {
        let y = (rows as f64 - (2 * r + 1) as f64) / rows as f64;
        for c in 0..cols {
            let x = ((2 * c + 1) as f64 - cols as f64) / cols as f64;
            let v: f64 = ellipses
                .iter()
                .filter(|e| e.contains(x, y))
                .map(|e| e.intensity)
                .sum();
            img.values[r * cols + c] = v.clamp(0.0, 1.0) as f32;
        }
    }
    img
}

pub const MIN_ELLIPSES: usize = 2;
pub const MAX_ELLIPSES: usize = 8;

/// Draws `count` random ellipses: centres inside the inscribed circle,
/// semi-axes 8%–45% of the image width, any rotation, intensities in
/// `[0.1, 0.6]`.
pub fn random_ellipses(rng: &mut impl Rng, count: usize) -> Vec<Ellipse> {
    (0..count)
        .map(|_| {
            // Uniform over the unit disk.
            let radius = rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            // Width is 2 in normalised units.
            Ellipse {
                x0: radius * theta.cos(),
                y0: radius * theta.sin(),
                semi_x: rng.gen_range(0.16..=0.90),
                semi_y: rng.gen_range(0.16..=0.90),
                angle_deg: rng.gen_range(0.0..180.0),
                intensity: rng.gen_range(0.1..=0.6),
            }
        })
        .collect()
}

/// Random ellipse phantom, a pure function of `seed` and the grid size.
pub fn random_ellipse_phantom(seed: u64, geom: &FanBeamGeometry) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(MIN_ELLIPSES..=MAX_ELLIPSES);
    random_ellipse_phantom_with_count(&mut rng, geom, count)
}

/// Like [`random_ellipse_phantom`] with the ellipse count fixed by the caller.
pub fn random_ellipse_phantom_with_count(
    rng: &mut impl Rng,
    geom: &FanBeamGeometry,
    count: usize,
) -> Image {
    let ellipses = random_ellipses(rng, count);
    rasterize(&ellipses, geom.image_rows, geom.image_cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SheppLoganVariant {
    /// The original ten ellipses.
    Standard,
    /// Only the ellipses that are mirror-symmetric about the vertical axis.
    Symmetric,
}

/// `(x0, y0, a, b, angle_deg, intensity)` of the original Shepp–Logan head.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (0.0, 0.0, 0.69, 0.92, 0.0, 2.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.98),
    (0.22, 0.0, 0.11, 0.31, -18.0, -0.02),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -0.02),
    (0.0, 0.35, 0.21, 0.25, 0.0, 0.01),
    (0.0, 0.1, 0.046, 0.046, 0.0, 0.01),
    (0.0, -0.1, 0.046, 0.046, 0.0, 0.01),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 0.01),
    (0.0, -0.606, 0.023, 0.023, 0.0, 0.01),
    (0.06, -0.605, 0.023, 0.046, 0.0, 0.01),
];

/// Shepp–Logan head phantom rescaled to `[0, 1]` (divided by the skull
/// intensity; the background stays 0).
pub fn shepp_logan(geom: &FanBeamGeometry) -> Image {
    shepp_logan_variant(geom, SheppLoganVariant::Standard)
}

pub fn shepp_logan_variant(geom: &FanBeamGeometry, variant: SheppLoganVariant) -> Image {
    let ellipses: Vec<Ellipse> = SHEPP_LOGAN
        .iter()
        .filter(|e| variant == SheppLoganVariant::Standard || e.0 == 0.0)
        .map(|&(x0, y0, a, b, angle_deg, intensity)| Ellipse {
            x0,
            y0,
            semi_x: a,
            semi_y: b,
            angle_deg,
            intensity: intensity / 2.0,
        })
        .collect();
    rasterize(&ellipses, geom.image_rows, geom.image_cols)
}

/// Images and their noise-free sinograms for one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub geometry: FanBeamGeometry,
    pub images: Vec<Image>,
    /// One `n_views x n_detectors` row-major sinogram per image.
    pub sinograms: Vec<Vec<f32>>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Keeps the first `n` items.
    pub fn truncated(&self, n: usize) -> Dataset {
        Dataset {
            geometry: self.geometry,
            images: self.images[..n.min(self.len())].to_vec(),
            sinograms: self.sinograms[..n.min(self.len())].to_vec(),
            seed: self.seed,
        }
    }
}

/// Per-image seeds for a dataset, drawn from the dataset seed.
fn image_seeds(n: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen()).collect()
}

pub fn build_dataset(
    n_images: usize,
    seed: u64,
    geom: &FanBeamGeometry,
    sm: &SystemMatrix,
) -> Result<Dataset> {
    if n_images == 0 {
        return Err(Error::Argument("dataset needs at least one image".into()));
    }
    let images: Vec<Image> = image_seeds(n_images, seed)
        .into_par_iter()
        .map(|s| random_ellipse_phantom(s, geom))
        .collect();
    dataset_from_images(images, seed, geom, sm)
}

/// Projects caller-supplied images.
pub fn dataset_from_images(
    images: Vec<Image>,
    seed: u64,
    geom: &FanBeamGeometry,
    sm: &SystemMatrix,
) -> Result<Dataset> {
    if sm.geometry() != geom {
        return Err(Error::Config(
            "system matrix was built for a different geometry".into(),
        ));
    }
    let sinograms = images
        .par_iter()
        .map(|img| project_image(sm, img))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        geometry: *geom,
        images,
        sinograms,
        seed,
    })
}

/// Noise-free sinogram of `img`, stored in single precision.
pub fn project_image(sm: &SystemMatrix, img: &Image) -> Result<Vec<f32>> {
    let g = sm.geometry();
    if img.rows != g.image_rows || img.cols != g.image_cols {
        return Err(Error::shape(
            "image",
            format!("{}x{}", g.image_rows, g.image_cols),
            format!("{}x{}", img.rows, img.cols),
        ));
    }
    Ok(sm
        .forward_project(&img.to_f64())?
        .into_iter()
        .map(|v| v as f32)
        .collect())
}

fn geometry_block(g: &FanBeamGeometry, out: &mut Vec<u8>) {
    out.extend_from_slice(&g.source_to_detector_mm.to_le_bytes());
    out.extend_from_slice(&g.source_to_center_mm.to_le_bytes());
    out.extend_from_slice(&(g.n_detectors as u64).to_le_bytes());
    out.extend_from_slice(&g.detector_pitch_mm.to_le_bytes());
    out.extend_from_slice(&(g.n_views as u64).to_le_bytes());
    out.extend_from_slice(&g.angular_step_deg.to_le_bytes());
    out.extend_from_slice(&(g.image_rows as u64).to_le_bytes());
    out.extend_from_slice(&(g.image_cols as u64).to_le_bytes());
    out.extend_from_slice(&g.pixel_size_mm.to_le_bytes());
}

/// Little-endian cursor that reports truncation as a format error.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path,
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.path,
                format!("truncated while reading {what} at byte {}", self.pos),
            )),
        }
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }
}

fn read_count(r: &mut Reader<'_>, what: &str) -> Result<usize> {
    let v = r.u64(what)?;
    usize::try_from(v).map_err(|_| Error::format(r.path, format!("{what} {v} too large")))
}

/// Serialises a dataset into `FCBP` bytes.
pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let g = &ds.geometry;
    let item = 4 * (g.image_len() + g.sinogram_len());
    let mut out = Vec::with_capacity(96 + item * ds.len());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    geometry_block(g, &mut out);
    out.extend_from_slice(&ds.seed.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for (img, sino) in ds.images.iter().zip(&ds.sinograms) {
        for v in img.values.iter().chain(sino) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    if ds.images.len() != ds.sinograms.len() {
        return Err(Error::Argument(
            "images and sinograms differ in count".into(),
        ));
    }
    fs::write(path, encode_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, path)
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let mut r = Reader::new(bytes, path);
    let magic = r.take(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {magic:?}, expected \"FCBP\""),
        ));
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let geometry = FanBeamGeometry {
        source_to_detector_mm: r.f64("geometry")?,
        source_to_center_mm: r.f64("geometry")?,
        n_detectors: read_count(&mut r, "geometry")?,
        detector_pitch_mm: r.f64("geometry")?,
        n_views: read_count(&mut r, "geometry")?,
        angular_step_deg: r.f64("geometry")?,
        image_rows: read_count(&mut r, "geometry")?,
        image_cols: read_count(&mut r, "geometry")?,
        pixel_size_mm: r.f64("geometry")?,
    };
    if let Err(e) = geometry.check() {
        return Err(Error::format(path, e.to_string()));
    }
    let seed = r.u64("seed")?;
    let count = read_count(&mut r, "image count")?;
    let (n_img, n_sino) = (geometry.image_len(), geometry.sinogram_len());
    let expected = count
        .checked_mul(4 * (n_img + n_sino))
        .and_then(|b| b.checked_add(r.position()));
    if expected != Some(bytes.len()) {
        return Err(Error::format(
            path,
            format!(
                "length mismatch: {count} items need {} bytes, file has {}",
                expected.map_or("overflowing".to_string(), |b| b.to_string()),
                bytes.len()
            ),
        ));
    }
    let mut images = Vec::with_capacity(count);
    let mut sinograms = Vec::with_capacity(count);
    for n in 0..count {
        let values = r.f32s(n_img, &format!("image {n}"))?;
        images.push(Image {
            rows: geometry.image_rows,
            cols: geometry.image_cols,
            values,
        });
        sinograms.push(r.f32s(n_sino, &format!("sinogram {n}"))?);
    }
    debug_assert!(r.is_empty());
    Ok(Dataset {
        geometry,
        images,
        sinograms,
        seed,
    })
}
