//! `FCBPCK` checkpoint files: network parameters, Adam moments and the global
//! step as a sequence of named little-endian tensors.
//!
//! Layout: magic `FCBPCK`, version (u32), global step (u64), then tensors to
//! end of file, each as name length (u16), name bytes, ndim (u8), dims
//! (u32 each), dtype code (u8, 0 = f32, 1 = f64) and the payload.
//!
//! Tensor names: `geometry` (nine f64 values in field order), then
//! `param.<name>`, `adam_m.<name>` and `adam_v.<name>` for every network
//! tensor.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::linalg::Real;
use crate::nn::{Architecture, NetworkParams};
use crate::optim::AdamState;
use crate::phantom::Reader;

const MAGIC: &[u8; 6] = b"FCBPCK";
const VERSION: u32 = 1;
const GEOMETRY: &str = "geometry";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub geometry: FanBeamGeometry,
    pub params: NetworkParams<T>,
    /// Moments plus the global step counter.
    pub adam: AdamState<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn step(&self) -> u64 {
        self.adam.step
    }
}

fn geometry_values(g: &FanBeamGeometry) -> [f64; 9] {
    [
        g.source_to_detector_mm,
        g.source_to_center_mm,
        g.n_detectors as f64,
        g.detector_pitch_mm,
        g.n_views as f64,
        g.angular_step_deg,
        g.image_rows as f64,
        g.image_cols as f64,
        g.pixel_size_mm,
    ]
}

fn geometry_from_values(v: &[f64]) -> Option<FanBeamGeometry> {
    let count = |x: f64| (x >= 0.0 && x.fract() == 0.0).then_some(x as usize);
    Some(FanBeamGeometry {
        source_to_detector_mm: v[0],
        source_to_center_mm: v[1],
        n_detectors: count(v[2])?,
        detector_pitch_mm: v[3],
        n_views: count(v[4])?,
        angular_step_deg: v[5],
        image_rows: count(v[6])?,
        image_cols: count(v[7])?,
        pixel_size_mm: v[8],
    })
}

fn write_tensor<T: Real>(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[T]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(T::DTYPE);
    for &v in values {
        v.write_le(out);
    }
}

pub fn encode_checkpoint<T: Real>(ckpt: &Checkpoint<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(3 * ckpt.params.num_values() * T::BYTES + 1024);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&ckpt.adam.step.to_le_bytes());
    write_tensor(&mut out, GEOMETRY, &[9], &geometry_values(&ckpt.geometry));
    let layout = ckpt.params.layout();
    for (prefix, set) in [
        ("param", &ckpt.params),
        ("adam_m", &ckpt.adam.m),
        ("adam_v", &ckpt.adam.v),
    ] {
        for ((name, dims), values) in layout.iter().zip(set.tensors()) {
            write_tensor(&mut out, &format!("{prefix}.{name}"), dims, values);
        }
    }
    out
}

pub fn save_checkpoint<T: Real>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

struct RawTensor<'a> {
    name: String,
    dims: Vec<usize>,
    dtype: u8,
    payload: &'a [u8],
}

fn dtype_size(code: u8) -> Option<usize> {
    match code {
        0 => Some(4),
        1 => Some(8),
        _ => None,
    }
}

/// Reads one tensor; `check` sees the name and dims before the payload is
/// consumed so a corrupted header is reported against its own tensor.
fn read_raw<'a>(
    r: &mut Reader<'a>,
    path: &Path,
    check: &mut dyn FnMut(&str, &[usize]) -> Result<()>,
) -> Result<RawTensor<'a>> {
    let len = r.u16("tensor name length")? as usize;
    let name = String::from_utf8(r.take(len, "tensor name")?.to_vec())
        .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
    let ndim = r.u8(&format!("ndim of {name}"))? as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(r.u32(&format!("dims of {name}"))? as usize);
    }
    check(&name, &dims)?;
    let dtype = r.u8(&format!("dtype of {name}"))?;
    let size = dtype_size(dtype)
        .ok_or_else(|| Error::format(path, format!("tensor {name}: unknown dtype code {dtype}")))?;
    let bytes = dims
        .iter()
        .try_fold(size, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(path, format!("tensor {name}: dims overflow")))?;
    let payload = r.take(bytes, &format!("payload of tensor {name}"))?;
    Ok(RawTensor {
        name,
        dims,
        dtype,
        payload,
    })
}

fn decode_values<T: Real>(t: &RawTensor<'_>, path: &Path) -> Result<Vec<T>> {
    if t.dtype != T::DTYPE {
        return Err(Error::format(
            path,
            format!(
                "tensor {}: dtype code {}, expected {}",
                t.name,
                t.dtype,
                T::DTYPE
            ),
        ));
    }
    Ok(t.payload.chunks_exact(T::BYTES).map(T::read_le).collect())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    let mut r = Reader::new(bytes, path);
    if r.take(6, "magic")? != MAGIC {
        return Err(Error::format(path, "bad magic, expected \"FCBPCK\""));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let step = r.u64("global step")?;

    let g = read_raw(&mut r, path, &mut |name, dims| {
        if name != GEOMETRY || dims != [9] {
            return Err(Error::format(
                path,
                format!("first tensor must be geometry[9], found {name}{dims:?}"),
            ));
        }
        Ok(())
    })?;
    let gv: Vec<f64> = decode_values(&g, path)?;
    let geometry = geometry_from_values(&gv)
        .ok_or_else(|| Error::format(path, "tensor geometry: malformed"))?;
    if let Err(e) = geometry.check() {
        return Err(Error::format(path, format!("tensor geometry: {e}")));
    }

    // Everything but the hidden width follows from the geometry; the width
    // comes from the first conv kernel.
    let mut hidden: Option<usize> = None;
    let mut raw = Vec::new();
    while !r.is_empty() {
        let t = read_raw(&mut r, path, &mut |name, dims| {
            let local = name.split_once('.').map_or(name, |(_, rest)| rest);
            if hidden.is_none() && local == "conv1.kernel" && dims.len() == 4 {
                hidden = Some(dims[3]);
            }
            let arch = Architecture::for_geometry(&geometry, hidden.unwrap_or(0));
            let expected = arch
                .layout()
                .into_iter()
                .find(|(n, _)| n == local)
                .map(|(_, d)| d);
            match expected {
                Some(_) if hidden.is_none() && local.starts_with("conv") => Err(Error::format(
                    path,
                    format!("tensor {name}: precedes conv1.kernel"),
                )),
                Some(d) if d == dims => Ok(()),
                Some(d) => Err(Error::format(
                    path,
                    format!("tensor {name}: dims {dims:?}, expected {d:?}"),
                )),
                None => Err(Error::format(path, format!("unexpected tensor {name}"))),
            }
        })?;
        raw.push(t);
    }
    let find = |name: &str| -> Result<&RawTensor<'_>> {
        raw.iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))
    };
    let hidden = hidden
        .filter(|&h| h > 0)
        .ok_or_else(|| Error::format(path, "missing or empty tensor param.conv1.kernel"))?;
    let arch = Architecture::for_geometry(&geometry, hidden);
    let mut params = NetworkParams::<T>::zeros(arch);
    let mut adam = AdamState::<T>::new(arch);
    adam.step = step;
    let layout = params.layout();
    let expected = 3 * layout.len();
    if raw.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} tensors, found {}", raw.len()),
        ));
    }
    for (prefix, set) in [
        ("param", &mut params),
        ("adam_m", &mut adam.m),
        ("adam_v", &mut adam.v),
    ] {
        for ((name, dims), dst) in layout.iter().zip(set.tensors_mut()) {
            let full = format!("{prefix}.{name}");
            let t = find(&full)?;
            debug_assert_eq!(&t.dims, dims);
            dst.copy_from_slice(&decode_values::<T>(t, path)?);
        }
    }
    Ok(Checkpoint {
        geometry,
        params,
        adam,
    })
}
