//! The sinogram-to-image network: one fully connected layer followed by five
//! 3x3 "same" convolutions, tanh after every layer, with a squared loss and
//! hand-derived gradients.
//!
//! Layouts:
//!
//! + sinogram batch: `batch x input_len`, each row flattened view-major;
//! + FC weights: `input_len x output_len` row-major, `W[i][j]` connects
//!   sinogram sample `i` to image pixel `j`;
//! + activations: `H x W x C` (channels last);
//! + conv kernels: `3 x 3 x C_in x C_out`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FanBeamGeometry;
use crate::linalg::{gemm, Op, Real};

pub const CONV_LAYERS: usize = 5;
pub const KERNEL: usize = 3;
/// Filters per hidden convolution in the full-size network.
pub const DEFAULT_HIDDEN_CHANNELS: usize = 128;

/// Tensor sizes of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_len: usize,
    pub image_rows: usize,
    pub image_cols: usize,
    pub hidden_channels: usize,
}

impl Architecture {
    pub fn for_geometry(geom: &FanBeamGeometry, hidden_channels: usize) -> Self {
        Self {
            input_len: geom.sinogram_len(),
            image_rows: geom.image_rows,
            image_cols: geom.image_cols,
            hidden_channels,
        }
    }

    pub fn output_len(&self) -> usize {
        self.image_rows * self.image_cols
    }

    /// Channels entering each conv layer, then leaving the last one.
    pub fn channel_chain(&self) -> [usize; CONV_LAYERS + 1] {
        let h = self.hidden_channels;
        [1, h, h, h, h, 1]
    }

    pub fn fc_weight_count(&self) -> usize {
        self.input_len * self.output_len()
    }

    /// `(name, dims)` of every trainable tensor, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            (
                "fc.weight".to_string(),
                vec![self.input_len, self.output_len()],
            ),
            ("fc.bias".to_string(), vec![self.output_len()]),
        ];
        for (n, c) in self.channel_chain().windows(2).enumerate() {
            out.push((
                format!("conv{}.kernel", n + 1),
                vec![KERNEL, KERNEL, c[0], c[1]],
            ));
            out.push((format!("conv{}.bias", n + 1), vec![c[1]]));
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.output_len() == 0 || self.hidden_channels == 0 {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

/// How [`NetworkParams::init_with`] fills the FC weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcInit {
    Zero,
    Glorot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `3 x 3 x in_ch x out_ch`, row-major.
    pub kernels: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernels: vec![T::zero(); KERNEL * KERNEL * in_ch * out_ch],
            bias: vec![T::zero(); out_ch],
        }
    }

    fn patch_len(&self) -> usize {
        KERNEL * KERNEL * self.in_ch
    }
}

/// Every trainable tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub arch: Architecture,
    pub fc_weights: Vec<T>,
    pub fc_bias: Vec<T>,
    pub conv: Vec<ConvLayer<T>>,
}

/// Gradients mirror the parameter shapes exactly.
pub type Gradients<T> = NetworkParams<T>;

impl<T: Real> NetworkParams<T> {
    pub fn zeros(arch: Architecture) -> Self {
        let chain = arch.channel_chain();
        Self {
            arch,
            fc_weights: vec![T::zero(); arch.fc_weight_count()],
            fc_bias: vec![T::zero(); arch.output_len()],
            conv: chain
                .windows(2)
                .map(|c| ConvLayer::zeros(c[0], c[1]))
                .collect(),
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    /// Training initialisation: FC weights start at zero, convolution
    /// kernels are Glorot-uniform, biases are zero.
    ///
    /// Starting the FC layer at zero keeps the learned sinogram-to-image
    /// weights free of initial noise, so after training `W` holds only what
    /// gradient descent put there.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        Self::init_with(arch, seed, FcInit::Zero)
    }

    pub fn init_with(arch: Architecture, seed: u64, fc: FcInit) -> Result<Self> {
        arch.validate()?;
        let mut params = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |w: &mut [T], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w {
                *v = T::from_f64_lossy(rng.gen_range(-limit..limit));
            }
        };
        for layer in &mut params.conv {
            let area = KERNEL * KERNEL;
            fill(&mut layer.kernels, area * layer.in_ch, area * layer.out_ch);
        }
        if fc == FcInit::Glorot {
            fill(&mut params.fc_weights, arch.input_len, arch.output_len());
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch)
    }

    /// `(name, dims)` for every tensor, in a fixed order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.arch.layout()
    }

    /// Tensors in [`layout`](Self::layout) order.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = vec![&self.fc_weights, &self.fc_bias];
        for layer in &self.conv {
            out.push(&layer.kernels);
            out.push(&layer.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = vec![&mut self.fc_weights, &mut self.fc_bias];
        for layer in &mut self.conv {
            out.push(&mut layer.kernels);
            out.push(&mut layer.bias);
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    /// Element type conversion.
    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        let conv = |v: &[T]| -> Vec<U> {
            v.iter()
                .map(|x| U::from_f64_lossy(x.to_f64().expect("finite")))
                .collect()
        };
        NetworkParams {
            arch: self.arch,
            fc_weights: conv(&self.fc_weights),
            fc_bias: conv(&self.fc_bias),
            conv: self
                .conv
                .iter()
                .map(|l| ConvLayer {
                    in_ch: l.in_ch,
                    out_ch: l.out_ch,
                    kernels: conv(&l.kernels),
                    bias: conv(&l.bias),
                })
                .collect(),
        }
    }
}

fn batch_size(len: usize, per_item: usize, what: &str) -> Result<usize> {
    if per_item == 0 || len == 0 || !len.is_multiple_of(per_item) {
        return Err(Error::shape(
            what,
            format!("a positive multiple of {per_item}"),
            len,
        ));
    }
    Ok(len / per_item)
}

/// FC layer over a batch: `tanh(S·W + bias)`.
fn fc_forward_batch<T: Real>(params: &NetworkParams<T>, sinos: &[T], batch: usize) -> Vec<T> {
    let (n_in, n_out) = (params.arch.input_len, params.arch.output_len());
    let mut z = Vec::with_capacity(batch * n_out);
    for _ in 0..batch {
        z.extend_from_slice(&params.fc_bias);
    }
    gemm(
        batch,
        n_in,
        n_out,
        T::one(),
        sinos,
        Op::N,
        &params.fc_weights,
        Op::N,
        T::one(),
        &mut z,
    );
    z.iter_mut().for_each(|v| *v = v.tanh());
    z
}

/// FC activation for one flattened sinogram.
pub fn fc_forward<T: Real>(params: &NetworkParams<T>, sino: &[T]) -> Result<Vec<T>> {
    if sino.len() != params.arch.input_len {
        return Err(Error::shape("sinogram", params.arch.input_len, sino.len()));
    }
    Ok(fc_forward_batch(params, sino, 1))
}

/// Zero-padded 3x3 patches: `(h·w) x (9·ch)`, patch order `(ky, kx, c)`.
fn im2col<T: Real>(x: &[T], h: usize, w: usize, ch: usize) -> Vec<T> {
    let plen = KERNEL * KERNEL * ch;
    let mut out = vec![T::zero(); h * w * plen];
    for y in 0..h {
        for xx in 0..w {
            let row = &mut out[(y * w + xx) * plen..(y * w + xx + 1) * plen];
            for ky in 0..KERNEL {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * ch;
                    let dst = (ky * KERNEL + kx) * ch;
                    row[dst..dst + ch].copy_from_slice(&x[src..src + ch]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
fn col2im<T: Real>(cols: &[T], h: usize, w: usize, ch: usize) -> Vec<T> {
    let plen = KERNEL * KERNEL * ch;
    let mut out = vec![T::zero(); h * w * ch];
    for y in 0..h {
        for xx in 0..w {
            let row = &cols[(y * w + xx) * plen..(y * w + xx + 1) * plen];
            for ky in 0..KERNEL {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..KERNEL {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * ch;
                    let src = (ky * KERNEL + kx) * ch;
                    for c in 0..ch {
                        out[dst + c] += row[src + c];
                    }
                }
            }
        }
    }
    out
}

fn conv_apply<T: Real>(layer: &ConvLayer<T>, x: &[T], h: usize, w: usize) -> Vec<T> {
    let patches = im2col(x, h, w, layer.in_ch);
    let mut z = Vec::with_capacity(h * w * layer.out_ch);
    for _ in 0..h * w {
        z.extend_from_slice(&layer.bias);
    }
    gemm(
        h * w,
        layer.patch_len(),
        layer.out_ch,
        T::one(),
        &patches,
        Op::N,
        &layer.kernels,
        Op::N,
        T::one(),
        &mut z,
    );
    z.iter_mut().for_each(|v| *v = v.tanh());
    z
}

/// One convolution layer with tanh: `H x W x C_in` in, `H x W x C_out` out.
pub fn conv2d_forward<T: Real>(
    layer: &ConvLayer<T>,
    x: &[T],
    h: usize,
    w: usize,
) -> Result<Vec<T>> {
    if x.len() != h * w * layer.in_ch {
        return Err(Error::shape(
            "conv input",
            format!("{h}x{w}x{}", layer.in_ch),
            format!("{} values", x.len()),
        ));
    }
    Ok(conv_apply(layer, x, h, w))
}

/// Network output and the reshaped FC activation ("FC1 out") for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub output: Vec<T>,
    pub fc1_out: Vec<T>,
    pub batch: usize,
}

/// Runs the conv stack for one item and keeps every layer's activation.
fn conv_stack<T: Real>(params: &NetworkParams<T>, fc_out: &[T]) -> Vec<Vec<T>> {
    let (h, w) = (params.arch.image_rows, params.arch.image_cols);
    let mut acts = Vec::with_capacity(CONV_LAYERS + 1);
    acts.push(fc_out.to_vec());
    for layer in &params.conv {
        let next = conv_apply(layer, acts.last().expect("nonempty"), h, w);
        acts.push(next);
    }
    acts
}

pub fn network_forward<T: Real>(
    params: &NetworkParams<T>,
    sinos: &[T],
) -> Result<ForwardOutput<T>> {
    let batch = batch_size(sinos.len(), params.arch.input_len, "sinogram batch")?;
    let n_out = params.arch.output_len();
    let fc1_out = fc_forward_batch(params, sinos, batch);
    let outputs: Vec<Vec<T>> = fc1_out
        .par_chunks(n_out)
        .map(|v| conv_stack(params, v).pop().expect("nonempty"))
        .collect();
    Ok(ForwardOutput {
        output: outputs.concat(),
        fc1_out,
        batch,
    })
}

/// Mean squared error over every pixel of every batch item.
pub fn mse_loss<T: Real>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape("prediction", target.len(), pred.len()));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = (p - t).to_f64().expect("finite");
            d * d
        })
        .sum();
    Ok(T::from_f64_lossy(sum / pred.len() as f64))
}

/// Loss and exact gradients of [`mse_loss`] ∘ [`network_forward`].
pub fn network_backward<T: Real>(
    params: &NetworkParams<T>,
    sinos: &[T],
    targets: &[T],
) -> Result<(T, Gradients<T>)> {
    network_backward_scaled(params, sinos, targets, T::one())
}

/// As [`network_backward`] for the loss multiplied by `scale`.
pub fn network_backward_scaled<T: Real>(
    params: &NetworkParams<T>,
    sinos: &[T],
    targets: &[T],
    scale: T,
) -> Result<(T, Gradients<T>)> {
    let arch = params.arch;
    let (n_in, n_out) = (arch.input_len, arch.output_len());
    let batch = batch_size(sinos.len(), n_in, "sinogram batch")?;
    if targets.len() != batch * n_out {
        return Err(Error::shape("target batch", batch * n_out, targets.len()));
    }
    let (h, w) = (arch.image_rows, arch.image_cols);
    let fc1_out = fc_forward_batch(params, sinos, batch);
    let norm = T::from_f64_lossy(2.0 / (batch * n_out) as f64) * scale;

    // Per item: conv gradients and the gradient reaching the FC output.
    let per_item: Vec<(f64, Gradients<T>, Vec<T>)> = fc1_out
        .par_chunks(n_out)
        .zip(targets.par_chunks(n_out))
        .map(|(v, target)| {
            let acts = conv_stack(params, v);
            let pred = &acts[CONV_LAYERS];
            let mut sq = 0.0;
            let mut grad: Vec<T> = pred
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    let d = p - t;
                    sq += d.to_f64().expect("finite").powi(2);
                    norm * d
                })
                .collect();
            let mut g = Gradients::zeros(arch);
            for (n, layer) in params.conv.iter().enumerate().rev() {
                let y = &acts[n + 1];
                // Through tanh.
                for (gi, &yi) in grad.iter_mut().zip(y) {
                    *gi = *gi * (T::one() - yi * yi);
                }
                let patches = im2col(&acts[n], h, w, layer.in_ch);
                let gl = &mut g.conv[n];
                gemm(
                    layer.patch_len(),
                    h * w,
                    layer.out_ch,
                    T::one(),
                    &patches,
                    Op::T,
                    &grad,
                    Op::N,
                    T::zero(),
                    &mut gl.kernels,
                );
                for px in grad.chunks(layer.out_ch) {
                    for (b, &d) in gl.bias.iter_mut().zip(px) {
                        *b += d;
                    }
                }
                let mut dpatch = vec![T::zero(); h * w * layer.patch_len()];
                gemm(
                    h * w,
                    layer.out_ch,
                    layer.patch_len(),
                    T::one(),
                    &grad,
                    Op::N,
                    &layer.kernels,
                    Op::T,
                    T::zero(),
                    &mut dpatch,
                );
                grad = col2im(&dpatch, h, w, layer.in_ch);
            }
            // Through the FC tanh.
            for (gi, &vi) in grad.iter_mut().zip(v) {
                *gi = *gi * (T::one() - vi * vi);
            }
            (sq, g, grad)
        })
        .collect();

    // Fixed-order reduction keeps results independent of thread scheduling.
    let mut grads = Gradients::zeros(arch);
    let mut sq_total = 0.0;
    let mut fc_delta = Vec::with_capacity(batch * n_out);
    for (sq, g, delta) in per_item {
        sq_total += sq;
        for (dst, src) in grads.conv.iter_mut().zip(&g.conv) {
            for (d, &s) in dst.kernels.iter_mut().zip(&src.kernels) {
                *d += s;
            }
            for (d, &s) in dst.bias.iter_mut().zip(&src.bias) {
                *d += s;
            }
        }
        fc_delta.extend_from_slice(&delta);
    }
    gemm(
        n_in,
        batch,
        n_out,
        T::one(),
        sinos,
        Op::T,
        &fc_delta,
        Op::N,
        T::zero(),
        &mut grads.fc_weights,
    );
    for row in fc_delta.chunks(n_out) {
        for (b, &d) in grads.fc_bias.iter_mut().zip(row) {
            *b += d;
        }
    }
    let loss = T::from_f64_lossy(sq_total / (batch * n_out) as f64) * scale;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch() -> Architecture {
        Architecture {
            input_len: 8,
            image_rows: 4,
            image_cols: 4,
            hidden_channels: 2,
        }
    }

    fn random_batch(n: usize, len: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * len).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    #[test]
    fn zero_fc_gives_zero_activation() {
        let p = NetworkParams::<f64>::zeros(tiny_arch());
        let v = fc_forward(&p, &random_batch(1, 8, 1, 3.0)).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fc_bias_only() {
        let mut p = NetworkParams::<f64>::zeros(tiny_arch());
        p.fc_bias.iter_mut().for_each(|b| *b = 0.3);
        let v = fc_forward(&p, &[0.0; 8]).unwrap();
        assert!(v.iter().all(|&x| x == 0.3f64.tanh()));
        let p = NetworkParams::<f64>::init_with(tiny_arch(), 3, FcInit::Glorot).unwrap();
        let v = fc_forward(&p, &random_batch(1, 8, 2, 1e3)).unwrap();
        assert!(v.iter().all(|&x| x.abs() <= 1.0));
        assert!(fc_forward(&p, &[0.0; 7]).is_err());
    }

    #[test]
    fn identity_kernel_is_tanh() {
        let mut layer = ConvLayer::<f64>::zeros(1, 1);
        layer.kernels[4] = 1.0;
        let x: Vec<f64> = (0..12).map(|v| v as f64 * 0.05 - 0.3).collect();
        let y = conv2d_forward(&layer, &x, 3, 4).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert_eq!(a.tanh(), *b);
        }
        let zero = conv2d_forward(&ConvLayer::<f64>::zeros(1, 2), &x, 3, 4).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(conv2d_forward(&ConvLayer::<f64>::zeros(2, 2), &x, 3, 4).is_err());
    }

    #[test]
    fn corner_impulse_touches_only_the_corner_neighbourhood() {
        let mut layer = ConvLayer::<f64>::zeros(1, 1);
        layer.kernels.iter_mut().for_each(|k| *k = 1.0);
        let (h, w) = (5, 6);
        let mut x = vec![0.0; h * w];
        x[0] = 0.5;
        let y = conv2d_forward(&layer, &x, h, w).unwrap();
        for r in 0..h {
            for c in 0..w {
                let touched = r < 2 && c < 2;
                assert_eq!(y[r * w + c] != 0.0, touched, "({r},{c})");
            }
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let (h, w, ch) = (4, 5, 3);
        let x = random_batch(1, h * w * ch, 4, 1.0);
        let cols_y = random_batch(1, h * w * 9 * ch, 5, 1.0);
        let lhs: f64 = im2col(&x, h, w, ch)
            .iter()
            .zip(&cols_y)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .iter()
            .zip(&col2im(&cols_y, h, w, ch))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn forward_properties() {
        let arch = tiny_arch();
        let zero = NetworkParams::<f64>::zeros(arch);
        let s = random_batch(3, 8, 6, 2.0);
        let out = network_forward(&zero, &s).unwrap();
        assert!(out.output.iter().all(|&v| v == 0.0));
        assert_eq!(out.batch, 3);

        let p = NetworkParams::<f64>::init_with(arch, 9, FcInit::Glorot).unwrap();
        let one = random_batch(1, 8, 7, 2.0);
        let same = [one.clone(), one.clone(), one.clone()].concat();
        let out = network_forward(&p, &same).unwrap();
        let n = arch.output_len();
        assert_eq!(out.output[..n], out.output[n..2 * n]);
        assert_eq!(out.output[..n], out.output[2 * n..]);
        assert!(out.output.iter().all(|&v| v.abs() < 1.0));
        assert!(network_forward(&p, &[0.0; 9]).is_err());
    }

    #[test]
    fn loss_examples() {
        let t = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(mse_loss(&t, &t).unwrap(), 0.0);
        let shifted: Vec<f64> = t.iter().map(|v| v + 0.5).collect();
        assert!((mse_loss(&shifted, &t).unwrap() - 0.25).abs() < 1e-15);
        let p = [0.0, 1.0, 0.5, 0.25];
        let permuted_p = [0.5, 0.25, 0.0, 1.0];
        let permuted_t = [0.3, 0.4, 0.1, 0.2];
        assert_eq!(
            mse_loss(&p, &t).unwrap(),
            mse_loss(&permuted_p, &permuted_t).unwrap()
        );
        assert!(mse_loss(&p, &t[..3]).is_err());
    }

    #[test]
    fn gradients_vanish_at_exact_fit() {
        let arch = tiny_arch();
        let p = NetworkParams::<f64>::init_with(arch, 10, FcInit::Glorot).unwrap();
        let s = random_batch(2, 8, 11, 1.0);
        let target = network_forward(&p, &s).unwrap().output;
        let (loss, g) = network_backward(&p, &s, &target).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn loss_scale_scales_gradients() {
        let arch = tiny_arch();
        let p = NetworkParams::<f64>::init_with(arch, 12, FcInit::Glorot).unwrap();
        let s = random_batch(2, 8, 13, 1.0);
        let t = random_batch(2, 16, 14, 1.0);
        let (l1, g1) = network_backward(&p, &s, &t).unwrap();
        let (l2, g2) = network_backward_scaled(&p, &s, &t, 2.0).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-15);
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (&x, &y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() <= 1e-14 * x.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let arch = tiny_arch();
        let a = NetworkParams::<f32>::init(arch, 1).unwrap();
        assert_eq!(a, NetworkParams::<f32>::init(arch, 1).unwrap());
        assert!(a.fc_weights.iter().all(|&w| w == 0.0));
        assert!(a.conv.iter().all(|c| c.kernels.iter().any(|&k| k != 0.0)));
        let g = NetworkParams::<f32>::init_with(arch, 1, FcInit::Glorot).unwrap();
        let limit = (6.0f32 / 24.0).sqrt();
        assert!(g.fc_weights.iter().all(|w| w.abs() <= limit));
        assert!(g.fc_weights.iter().any(|&w| w != 0.0));
        assert!(a.fc_bias.iter().all(|&b| b == 0.0));
        assert_eq!(a.layout().len(), 2 + 2 * CONV_LAYERS);
        for ((_, dims), t) in a.layout().iter().zip(a.tensors()) {
            assert_eq!(dims.iter().product::<usize>(), t.len());
        }
    }

    #[test]
    fn full_scale_fc_size() {
        let arch = Architecture::for_geometry(&FanBeamGeometry::default(), DEFAULT_HIDDEN_CHANNELS);
        assert_eq!(arch.fc_weight_count(), 47_185_920);
        assert_eq!(arch.channel_chain(), [1, 128, 128, 128, 128, 1]);
    }
}
