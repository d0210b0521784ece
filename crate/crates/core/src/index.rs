//! Reshape algebra between 2-D sinogram/image coordinates, flat vectors, and
//! the cell-matrix view of the FC weight matrix.
//!
//! Every public index here is 1-based. Storage elsewhere is 0-based row-major;
//! subtract one at the call site.
//!
//! The cell view addresses FC weight `W[i, j]` (input `i` on the sinogram
//! side, output `j` on the image side) as `H[k, l][a, b]` with
//! `i = sino_flat(l, b)` and `j = image_flat(a, k)`, so that fixing `(l, b)`
//! yields one image-shaped weight map.

use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;

/// Sinogram sample `(p, q)` and its flat position `i = (p-1)·Q + q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SinoIndex {
    pub p: usize,
    pub q: usize,
    pub flat: usize,
}

/// Image pixel `(c, t)` and its flat position `j = (c-1)·T + t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageIndex {
    pub c: usize,
    pub t: usize,
    pub flat: usize,
}

/// Cell-matrix coordinate: `k` image column, `l` view, `a` image row,
/// `b` detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellIndex {
    pub k: usize,
    pub l: usize,
    pub a: usize,
    pub b: usize,
}

fn in_range(what: &'static str, v: usize, max: usize) -> Result<()> {
    if v == 0 || v > max {
        Err(Error::index(what, v, max))
    } else {
        Ok(())
    }
}

pub fn sino_flat(p: usize, q: usize, geom: &FanBeamGeometry) -> Result<usize> {
    in_range("view", p, geom.n_views)?;
    in_range("detector", q, geom.n_detectors)?;
    Ok((p - 1) * geom.n_detectors + q)
}

pub fn sino_unflat(i: usize, geom: &FanBeamGeometry) -> Result<SinoIndex> {
    in_range("sinogram", i, geom.sinogram_len())?;
    Ok(SinoIndex {
        p: (i - 1) / geom.n_detectors + 1,
        q: (i - 1) % geom.n_detectors + 1,
        flat: i,
    })
}

pub fn image_flat(c: usize, t: usize, geom: &FanBeamGeometry) -> Result<usize> {
    in_range("image row", c, geom.image_rows)?;
    in_range("image column", t, geom.image_cols)?;
    Ok((c - 1) * geom.image_cols + t)
}

pub fn image_unflat(j: usize, geom: &FanBeamGeometry) -> Result<ImageIndex> {
    in_range("image", j, geom.image_len())?;
    Ok(ImageIndex {
        c: (j - 1) / geom.image_cols + 1,
        t: (j - 1) % geom.image_cols + 1,
        flat: j,
    })
}

/// `(i, j)` of the FC weight addressed by `cell`.
pub fn cell_to_weight(cell: CellIndex, geom: &FanBeamGeometry) -> Result<(usize, usize)> {
    in_range("cell column k", cell.k, geom.image_cols)?;
    in_range("cell view l", cell.l, geom.n_views)?;
    in_range("cell row a", cell.a, geom.image_rows)?;
    in_range("cell detector b", cell.b, geom.n_detectors)?;
    Ok((
        sino_flat(cell.l, cell.b, geom)?,
        image_flat(cell.a, cell.k, geom)?,
    ))
}

pub fn weight_to_cell(i: usize, j: usize, geom: &FanBeamGeometry) -> Result<CellIndex> {
    let s = sino_unflat(i, geom)?;
    let m = image_unflat(j, geom)?;
    Ok(CellIndex {
        k: m.t,
        l: s.p,
        a: m.c,
        b: s.q,
    })
}
