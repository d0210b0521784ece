//! Checks shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use fcbp::index::{cell_to_weight, weight_to_cell, CellIndex};
use fcbp::nn::{network_backward, Architecture, FcInit, NetworkParams};
use fcbp::projector::SystemMatrix;
use fcbp::FanBeamGeometry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// 4x4 image, 2 views of 4 detectors, 2-channel hidden convolutions.
pub fn tiny_arch() -> Architecture {
    Architecture {
        input_len: 8,
        image_rows: 4,
        image_cols: 4,
        hidden_channels: 2,
    }
}

/// Relative error with a floor on the denominator so that gradients which
/// are zero up to rounding are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

pub struct GradCheck {
    pub n_params: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Central finite differences (step `h`) against the analytic gradient of
/// the mean-squared loss for every parameter of the tiny network.
pub fn gradient_check(seed: u64, batch: usize, h: f64) -> GradCheck {
    let arch = tiny_arch();
    let params = NetworkParams::<f64>::init_with(arch, seed, FcInit::Glorot).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let sinos: Vec<f64> = (0..batch * arch.input_len)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let targets: Vec<f64> = (0..batch * arch.output_len())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    // Random biases so their gradients are not trivially structured.
    let mut params = params;
    for layer in &mut params.conv {
        layer
            .bias
            .iter_mut()
            .for_each(|b| *b = rng.gen_range(-0.1..0.1));
    }
    params
        .fc_bias
        .iter_mut()
        .for_each(|b| *b = rng.gen_range(-0.1..0.1));

    let (_, grads) = network_backward(&params, &sinos, &targets).unwrap();
    let names: Vec<String> = params.layout().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

    let loss = |p: &NetworkParams<f64>| network_backward(p, &sinos, &targets).unwrap().0;
    let mut out = GradCheck {
        n_params: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for (t, name) in names.iter().enumerate() {
        for (k, &a) in analytic[t].iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut()[t][k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t][k] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            out.n_params += 1;
            if rel > out.max_rel_err {
                out.max_rel_err = rel;
                out.worst = format!("{name}[{k}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
    }
    out
}

/// Largest `|<Ax, y> - <x, A^T y>| / (|<Ax, y>| + |<x, A^T y>|)` over
/// `pairs` random image/sinogram pairs.
pub fn adjoint_defect(sm: &SystemMatrix, pairs: usize, seed: u64) -> f64 {
    let g = sm.geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..g.image_len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let y: Vec<f64> = (0..g.sinogram_len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let ax = sm.forward_project(&x).unwrap();
        let aty = sm.back_project(&y).unwrap();
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        let scale = lhs.abs() + rhs.abs();
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    worst
}

/// Round-trips every `(i, j)` of the FC weight domain through
/// `weight_to_cell` and `cell_to_weight`; returns `(checked, mismatches)`.
pub fn index_bijection(geom: &FanBeamGeometry) -> (u64, u64) {
    let (n_i, n_j) = (geom.sinogram_len(), geom.image_len());
    let mismatches: u64 = (1..=n_i)
        .into_par_iter()
        .map(|i| {
            let mut bad = 0u64;
            for j in 1..=n_j {
                let cell: CellIndex = weight_to_cell(i, j, geom).unwrap();
                let ok = cell.l >= 1
                    && cell.l <= geom.n_views
                    && cell.b >= 1
                    && cell.b <= geom.n_detectors
                    && cell.a >= 1
                    && cell.a <= geom.image_rows
                    && cell.k >= 1
                    && cell.k <= geom.image_cols
                    && cell_to_weight(cell, geom).unwrap() == (i, j);
                bad += u64::from(!ok);
            }
            bad
        })
        .sum();
    ((n_i * n_j) as u64, mismatches)
}
