//! Weight-map extraction and comparison.
//!
//! A weight map fixes one sinogram sample `(l, b)` and shows how strongly it
//! feeds every image pixel. For the trained network it is a slice of the FC
//! weights; for the analytic operator it is a row of the system matrix.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::index::{cell_to_weight, sino_flat, CellIndex};
use crate::linalg::Real;
use crate::nn::{Architecture, NetworkParams};
use crate::projector::SystemMatrix;

/// Dense FC weights `W[i][j]`, sinogram sample `i` to image pixel `j`, with
/// the cell-matrix view on top.
#[derive(Debug, Clone, PartialEq)]
pub struct FcWeightMatrix<T> {
    geom: FanBeamGeometry,
    data: Vec<T>,
}

impl<T: Real> FcWeightMatrix<T> {
    pub fn new(geom: FanBeamGeometry, data: Vec<T>) -> Result<Self> {
        let n = geom.sinogram_len() * geom.image_len();
        if data.len() != n {
            return Err(Error::shape("FC weights", n, data.len()));
        }
        Ok(Self { geom, data })
    }

    pub fn from_params(params: &NetworkParams<T>, geom: &FanBeamGeometry) -> Result<Self> {
        let want = Architecture::for_geometry(geom, params.arch.hidden_channels);
        if params.arch != want {
            return Err(Error::shape(
                "network",
                format!(
                    "{} -> {}x{}",
                    want.input_len, want.image_rows, want.image_cols
                ),
                format!(
                    "{} -> {}x{}",
                    params.arch.input_len, params.arch.image_rows, params.arch.image_cols
                ),
            ));
        }
        Self::new(*geom, params.fc_weights.clone())
    }

    /// The analytic operator laid out as FC weights.
    pub fn from_system_matrix(sm: &SystemMatrix) -> Self {
        Self {
            geom: *sm.geometry(),
            data: sm.to_dense(),
        }
    }

    pub fn geometry(&self) -> &FanBeamGeometry {
        &self.geom
    }

    /// `W[i, j]` with 1-based indices.
    pub fn weight(&self, i: usize, j: usize) -> Result<T> {
        let (n_in, n_out) = (self.geom.sinogram_len(), self.geom.image_len());
        if i == 0 || i > n_in {
            return Err(Error::index("sinogram", i, n_in));
        }
        if j == 0 || j > n_out {
            return Err(Error::index("image", j, n_out));
        }
        Ok(self.data[(i - 1) * n_out + (j - 1)])
    }

    /// `H[k, l][a, b]`.
    pub fn cell(&self, cell: CellIndex) -> Result<T> {
        let (i, j) = cell_to_weight(cell, &self.geom)?;
        self.weight(i, j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapSource {
    Learned,
    Analytic,
}

/// Image-shaped weights of one `(view, detector)` pair, row-major
/// `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub source: MapSource,
    pub l: usize,
    pub b: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// `map[a, k] = H[k, l][a, b]`.
pub fn extract_fc_map<T: Real>(w: &FcWeightMatrix<T>, l: usize, b: usize) -> Result<WeightMap> {
    let g = &w.geom;
    let mut values = Vec::with_capacity(g.image_len());
    for a in 1..=g.image_rows {
        for k in 1..=g.image_cols {
            let v = w.cell(CellIndex { k, l, a, b })?;
            values.push(v.to_f64().expect("finite"));
        }
    }
    Ok(WeightMap {
        source: MapSource::Learned,
        l,
        b,
        rows: g.image_rows,
        cols: g.image_cols,
        values,
    })
}

pub fn analytic_map(sm: &SystemMatrix, l: usize, b: usize) -> Result<WeightMap> {
    let g = sm.geometry();
    Ok(WeightMap {
        source: MapSource::Analytic,
        l,
        b,
        rows: g.image_rows,
        cols: g.image_cols,
        values: sm.analytic_weight_map(l, b)?,
    })
}

/// Maps for every view at detector `b`.
pub fn fixed_detector_series<T: Real>(w: &FcWeightMatrix<T>, b: usize) -> Result<Vec<WeightMap>> {
    (1..=w.geom.n_views)
        .map(|l| extract_fc_map(w, l, b))
        .collect()
}

/// Maps for every detector at view `l`.
pub fn fixed_view_series<T: Real>(w: &FcWeightMatrix<T>, l: usize) -> Result<Vec<WeightMap>> {
    (1..=w.geom.n_detectors)
        .map(|b| extract_fc_map(w, l, b))
        .collect()
}

pub fn analytic_detector_series(sm: &SystemMatrix, b: usize) -> Result<Vec<WeightMap>> {
    (1..=sm.geometry().n_views)
        .map(|l| analytic_map(sm, l, b))
        .collect()
}

pub fn analytic_view_series(sm: &SystemMatrix, l: usize) -> Result<Vec<WeightMap>> {
    (1..=sm.geometry().n_detectors)
        .map(|b| analytic_map(sm, l, b))
        .collect()
}

/// Normalised cross-correlation of one learned/analytic pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapComparison {
    pub l: usize,
    pub b: usize,
    /// `None` when either map has zero variance.
    pub ncc: Option<f64>,
    pub abs_ncc: Option<f64>,
    #[serde(skip)]
    pub learned_l2: f64,
    #[serde(skip)]
    pub analytic_l2: f64,
    pub degenerate: bool,
}

/// Pearson correlation; `None` for zero-variance input.
pub fn ncc(u: &[f64], v: &[f64]) -> Option<f64> {
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let (mut cov, mut su, mut sv) = (0.0, 0.0, 0.0);
    for (&a, &b) in u.iter().zip(v) {
        cov += (a - mu) * (b - mv);
        su += (a - mu) * (a - mu);
        sv += (b - mv) * (b - mv);
    }
    if su <= 0.0 || sv <= 0.0 {
        return None;
    }
    Some((cov / (su * sv).sqrt()).clamp(-1.0, 1.0))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn compare(learned: &WeightMap, analytic: &WeightMap) -> Result<MapComparison> {
    if (learned.rows, learned.cols) != (analytic.rows, analytic.cols)
        || learned.values.len() != analytic.values.len()
    {
        return Err(Error::shape(
            "weight map",
            format!("{}x{}", analytic.rows, analytic.cols),
            format!("{}x{}", learned.rows, learned.cols),
        ));
    }
    let r = ncc(&learned.values, &analytic.values);
    Ok(MapComparison {
        l: learned.l,
        b: learned.b,
        ncc: r,
        abs_ncc: r.map(f64::abs),
        learned_l2: l2(&learned.values),
        analytic_l2: l2(&analytic.values),
        degenerate: r.is_none(),
    })
}

/// Aggregate over all `(view, detector)` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmergenceSummary {
    /// Mean `|ncc|` over pairs whose comparison is non-degenerate.
    pub mean_abs_ncc: f64,
    pub n_degenerate: usize,
    /// Mean `|ncc|` of each learned map against a randomly chosen analytic
    /// map of a different pair.
    pub baseline_mean_abs_ncc: f64,
    pub n_compared: usize,
}

/// Compares every learned map with its analytic counterpart, plus a
/// shuffled-pair baseline drawn with `seed`.
pub fn emergence_report<T: Real>(
    w: &FcWeightMatrix<T>,
    sm: &SystemMatrix,
    seed: u64,
) -> Result<(Vec<MapComparison>, EmergenceSummary)> {
    let g = *w.geometry();
    let pairs: Vec<(usize, usize)> = (1..=g.n_views)
        .flat_map(|l| (1..=g.n_detectors).map(move |b| (l, b)))
        .collect();
    emergence_report_for(w, sm, &pairs, seed)
}

/// Like [`emergence_report`], restricted to the given `(l, b)` pairs. The
/// baseline pairs each learned map with the analytic map of a different
/// cell drawn uniformly from every non-empty cell of the geometry.
pub fn emergence_report_for<T: Real>(
    w: &FcWeightMatrix<T>,
    sm: &SystemMatrix,
    pairs: &[(usize, usize)],
    seed: u64,
) -> Result<(Vec<MapComparison>, EmergenceSummary)> {
    let g = *w.geometry();
    if sm.geometry() != &g {
        return Err(Error::Config(
            "system matrix geometry differs from the weights".into(),
        ));
    }
    // Sinogram rows (0-based) whose analytic map is not all zero.
    let offsets = sm.row_offsets();
    let usable: Vec<usize> = (0..g.sinogram_len())
        .filter(|&r| offsets[r + 1] > offsets[r])
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(pairs.len());
    let (mut sum, mut count, mut degenerate) = (0.0, 0usize, 0usize);
    let (mut base_sum, mut base_count) = (0.0, 0usize);
    for &(l, b) in pairs {
        let learned = extract_fc_map(w, l, b)?;
        let cmp = compare(&learned, &analytic_map(sm, l, b)?)?;
        match cmp.abs_ncc {
            Some(a) => {
                sum += a;
                count += 1;
                let own = sino_flat(l, b, &g)? - 1;
                if usable.len() > 1 {
                    let other = loop {
                        let pick = usable[rng.gen_range(0..usable.len())];
                        if pick != own {
                            break pick;
                        }
                    };
                    let other = sm.analytic_weight_map_row(other);
                    if let Some(r) = ncc(&learned.values, &other) {
                        base_sum += r.abs();
                        base_count += 1;
                    }
                }
            }
            None => degenerate += 1,
        }
        rows.push(cmp);
    }
    let mean = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
    Ok((
        rows,
        EmergenceSummary {
            mean_abs_ncc: mean(sum, count),
            n_degenerate: degenerate,
            baseline_mean_abs_ncc: mean(base_sum, base_count),
            n_compared: count,
        },
    ))
}

/// Fraction of the learned map's strongest pixels that fall on (or next to)
/// the analytic map's support. The number of pixels inspected equals the
/// analytic support size.
pub fn strip_support_overlap(learned: &WeightMap, analytic: &WeightMap) -> f64 {
    let (rows, cols) = (analytic.rows, analytic.cols);
    let support: Vec<bool> = analytic.values.iter().map(|&v| v != 0.0).collect();
    let n = support.iter().filter(|&&s| s).count();
    if n == 0 {
        return 0.0;
    }
    let near = |j: usize| {
        let (r, c) = ((j / cols) as isize, (j % cols) as isize);
        (-1..=1).any(|dr| {
            (-1..=1).any(|dc| {
                let (rr, cc) = (r + dr, c + dc);
                rr >= 0
                    && cc >= 0
                    && (rr as usize) < rows
                    && (cc as usize) < cols
                    && support[rr as usize * cols + cc as usize]
            })
        })
    };
    let mean = learned.values.iter().sum::<f64>() / learned.values.len() as f64;
    let mut order: Vec<usize> = (0..learned.values.len()).collect();
    order.sort_by(|&x, &y| {
        let dx = (learned.values[x] - mean).abs();
        let dy = (learned.values[y] - mean).abs();
        dy.total_cmp(&dx)
    });
    order[..n].iter().filter(|&&j| near(j)).count() as f64 / n as f64
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub const SEPARATOR: u8 = 0;
pub const DEGENERATE_GRAY: u8 = 128;

/// Min-max window of one map to 8 bits; constant maps render mid-gray.
pub fn window_to_u8(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return vec![DEGENERATE_GRAY; values.len()];
    }
    let span = hi - lo;
    values
        .iter()
        .map(|&v| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Tiles `series` row-major into `grid_cols` columns, each map windowed
/// independently, with one-pixel separators.
pub fn render_montage(series: &[WeightMap], grid_cols: usize) -> Result<GrayImage> {
    let first = series
        .first()
        .ok_or_else(|| Error::Argument("montage needs at least one map".into()))?;
    if grid_cols == 0 {
        return Err(Error::Argument("montage needs at least one column".into()));
    }
    let (mh, mw) = (first.rows, first.cols);
    if let Some(bad) = series.iter().find(|m| (m.rows, m.cols) != (mh, mw)) {
        return Err(Error::shape(
            "montage tile",
            format!("{mh}x{mw}"),
            format!("{}x{}", bad.rows, bad.cols),
        ));
    }
    let cols = grid_cols.min(series.len());
    let rows = series.len().div_ceil(cols);
    let width = cols * mw + (cols - 1);
    let height = rows * mh + (rows - 1);
    let mut pixels = vec![SEPARATOR; width * height];
    for (n, map) in series.iter().enumerate() {
        let (ty, tx) = (n / cols, n % cols);
        let (oy, ox) = (ty * (mh + 1), tx * (mw + 1));
        let tile = window_to_u8(&map.values);
        for r in 0..mh {
            let dst = (oy + r) * width + ox;
            pixels[dst..dst + mw].copy_from_slice(&tile[r * mw..(r + 1) * mw]);
        }
    }
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

pub fn write_png(path: &Path, img: &GrayImage) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    };
    let mut writer = enc.write_header().map_err(to_io)?;
    writer.write_image_data(&img.pixels).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// A single image as an independently windowed raster.
pub fn render_image(values: &[f64], rows: usize, cols: usize) -> Result<GrayImage> {
    if values.len() != rows * cols {
        return Err(Error::shape("image", rows * cols, values.len()));
    }
    Ok(GrayImage {
        width: cols,
        height: rows,
        pixels: window_to_u8(values),
    })
}

/// Memory of one dense FC layer mapping a sinogram to a square image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryReport {
    pub n_weights: u64,
    pub bytes: u64,
    pub human_readable: String,
    /// Fits in the 11 GiB of a single consumer GPU.
    pub feasible: bool,
}

pub const GPU_MEMORY_BYTES: u64 = 11 << 30;

/// Value in the largest binary unit it reaches, e.g. `45 Mi`, `67.5 Gi`.
pub fn binary_units(n: u64) -> String {
    const UNITS: [&str; 5] = ["", "Ki", "Mi", "Gi", "Ti"];
    let mut unit = 0;
    let mut scaled = n as f64;
    while scaled >= 1024.0 && unit + 1 < UNITS.len() {
        scaled /= 1024.0;
        unit += 1;
    }
    let text = format!("{scaled:.2}");
    let text = text.trim_end_matches('0').trim_end_matches('.');
    if UNITS[unit].is_empty() {
        text.to_string()
    } else {
        format!("{text} {}", UNITS[unit])
    }
}

pub fn memory_report(
    image_side: u64,
    n_views: u64,
    n_detectors: u64,
    bytes_per_weight: u64,
) -> Result<MemoryReport> {
    for (name, v) in [
        ("image_side", image_side),
        ("n_views", n_views),
        ("n_detectors", n_detectors),
        ("bytes_per_weight", bytes_per_weight),
    ] {
        if v == 0 {
            return Err(Error::Argument(format!("{name} must be at least 1")));
        }
    }
    let overflow = || Error::Range("weight count overflows 64 bits".into());
    let n_weights = n_views
        .checked_mul(n_detectors)
        .and_then(|s| {
            image_side
                .checked_mul(image_side)
                .and_then(|p| s.checked_mul(p))
        })
        .ok_or_else(overflow)?;
    let bytes = n_weights
        .checked_mul(bytes_per_weight)
        .ok_or_else(overflow)?;
    let weights_h = binary_units(n_weights);
    let bytes_h = binary_units(bytes);
    Ok(MemoryReport {
        n_weights,
        bytes,
        human_readable: format!("{weights_h} weights, {bytes_h}B"),
        feasible: bytes <= GPU_MEMORY_BYTES,
    })
}
