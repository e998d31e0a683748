//! Layer primitives with exact analytic gradients.
//!
//! Activations are single samples laid out `[channels, height, width]`.
//! Convolution is an unpadded ("valid") cross-correlation.

use super::{NnError, Tensor};

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible bit for bit.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(
        [channels, height, width]: [usize; 3],
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self, NnError> {
        if kernel == 0 || stride == 0 || out_channels == 0 {
            return Err(NnError::InvalidSpec(format!(
                "convolution needs kernel, stride and out_channels >= 1 (got {kernel}, {stride}, {out_channels})"
            )));
        }
        if kernel > height || kernel > width {
            return Err(NnError::shape(
                "conv2d kernel",
                format!("kernel {kernel} fitting inside the input"),
                format!("input {height}x{width}"),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            out_channels,
            kernel,
            stride,
            out_height: (height - kernel) / stride + 1,
            out_width: (width - kernel) / stride + 1,
        })
    }

    /// Rows of the unfolded input: one per (channel, kernel row, kernel col).
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_positions(&self) -> usize {
        self.out_height * self.out_width
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.channels, self.kernel, self.kernel]
    }

    pub fn output_shape(&self) -> [usize; 3] {
        [self.out_channels, self.out_height, self.out_width]
    }

    pub fn im2col(&self, input: &[f64], col: &mut [f64]) {
        let positions = self.out_positions();
        let (k, s) = (self.kernel, self.stride);
        for c in 0..self.channels {
            let plane = &input[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut col[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_height {
                        let src = &plane[(oy * s + ki) * self.width + kj..];
                        let line = &mut dst[oy * self.out_width..(oy + 1) * self.out_width];
                        if s == 1 {
                            line.copy_from_slice(&src[..self.out_width]);
                        } else {
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = src[ox * s];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn col2im_add(&self, col: &[f64], d_input: &mut [f64]) {
        let positions = self.out_positions();
        let (k, s) = (self.kernel, self.stride);
        for c in 0..self.channels {
            let plane =
                &mut d_input[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &col[row * positions..(row + 1) * positions];
                    for oy in 0..self.out_height {
                        let base = (oy * s + ki) * self.width + kj;
                        let line = &src[oy * self.out_width..(oy + 1) * self.out_width];
                        for (ox, v) in line.iter().enumerate() {
                            plane[base + ox * s] += v;
                        }
                    }
                }
            }
        }
    }

    pub fn forward_from_col(&self, col: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
        let positions = self.out_positions();
        let patch = self.patch_len();
        for o in 0..self.out_channels {
            let dst = &mut out[o * positions..(o + 1) * positions];
            dst.iter_mut().for_each(|v| *v = bias[o]);
            for (r, &w) in weights[o * patch..(o + 1) * patch].iter().enumerate() {
                axpy(w, &col[r * positions..(r + 1) * positions], dst);
            }
        }
    }

    /// Accumulates weight and bias gradients; writes the unfolded input
    /// gradient into `d_col` when given.
    pub fn backward_from_col(
        &self,
        col: &[f64],
        weights: &[f64],
        d_out: &[f64],
        d_weights: &mut [f64],
        d_bias: &mut [f64],
        d_col: Option<&mut [f64]>,
    ) {
        let positions = self.out_positions();
        let patch = self.patch_len();
        for o in 0..self.out_channels {
            let g = &d_out[o * positions..(o + 1) * positions];
            d_bias[o] += g.iter().sum::<f64>();
            let dw = &mut d_weights[o * patch..(o + 1) * patch];
            for (r, slot) in dw.iter_mut().enumerate() {
                *slot += dot(g, &col[r * positions..(r + 1) * positions]);
            }
        }
        if let Some(d_col) = d_col {
            d_col.iter_mut().for_each(|v| *v = 0.0);
            for o in 0..self.out_channels {
                let g = &d_out[o * positions..(o + 1) * positions];
                for (r, &w) in weights[o * patch..(o + 1) * patch].iter().enumerate() {
                    axpy(w, g, &mut d_col[r * positions..(r + 1) * positions]);
                }
            }
        }
    }
}

fn conv_geometry(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize) -> Result<ConvGeometry, NnError> {
    input.expect_rank("conv2d input", 3)?;
    weights.expect_rank("conv2d weights", 4)?;
    let [c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let ws = weights.shape();
    if ws[1] != c {
        return Err(NnError::shape(
            "conv2d weights input channels",
            format!("{c}"),
            format!("{}", ws[1]),
        ));
    }
    if ws[2] != ws[3] {
        return Err(NnError::shape("conv2d kernel", "square kernel".into(), format!("{}x{}", ws[2], ws[3])));
    }
    bias.expect_shape("conv2d bias", &[ws[0]])?;
    ConvGeometry::new([c, h, w], ws[0], ws[2], stride)
}

pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor, NnError> {
    let g = conv_geometry(input, weights, bias, stride)?;
    let mut col = vec![0.0; g.patch_len() * g.out_positions()];
    g.im2col(input.data(), &mut col);
    let mut out = Tensor::zeros(&g.output_shape());
    g.forward_from_col(&col, weights.data(), bias.data(), out.data_mut());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradients {
    pub d_input: Tensor,
    pub d_weights: Tensor,
    pub d_bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    d_output: &Tensor,
) -> Result<ConvGradients, NnError> {
    let g = conv_geometry(input, weights, bias, stride)?;
    d_output.expect_shape("conv2d d_output", &g.output_shape())?;
    let mut col = vec![0.0; g.patch_len() * g.out_positions()];
    g.im2col(input.data(), &mut col);
    let mut d_weights = Tensor::zeros(weights.shape());
    let mut d_bias = Tensor::zeros(bias.shape());
    let mut d_col = vec![0.0; col.len()];
    g.backward_from_col(
        &col,
        weights.data(),
        d_output.data(),
        d_weights.data_mut(),
        d_bias.data_mut(),
        Some(&mut d_col),
    );
    let mut d_input = Tensor::zeros(input.shape());
    g.col2im_add(&d_col, d_input.data_mut());
    Ok(ConvGradients {
        d_input,
        d_weights,
        d_bias,
    })
}

pub(crate) fn pool_shape(shape: &[usize]) -> Result<[usize; 3], NnError> {
    if shape.len() != 3 {
        return Err(NnError::shape("maxpool input", "rank 3".into(), format!("{shape:?}")));
    }
    if shape[1] % 2 != 0 || shape[2] % 2 != 0 {
        return Err(NnError::OddPoolExtent {
            height: shape[1],
            width: shape[2],
        });
    }
    Ok([shape[0], shape[1] / 2, shape[2] / 2])
}

/// Writes window maxima into `out` and the flat input index of each maximum
/// into `argmax`. Ties go to the smallest index.
pub(crate) fn maxpool_into(input: &[f64], [c, h, w]: [usize; 3], out: &mut [f64], argmax: &mut [usize]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let top = ch * h * w + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out[o] = input[best];
                argmax[o] = best;
            }
        }
    }
}

pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, Vec<usize>), NnError> {
    let out_shape = pool_shape(input.shape())?;
    let mut out = Tensor::zeros(&out_shape);
    let mut argmax = vec![0; out.len()];
    let s = input.shape();
    maxpool_into(input.data(), [s[0], s[1], s[2]], out.data_mut(), &mut argmax);
    Ok((out, argmax))
}

pub fn maxpool2x2_backward(d_output: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor, NnError> {
    let out_shape = pool_shape(input_shape)?;
    d_output.expect_shape("maxpool d_output", &out_shape)?;
    if argmax.len() != d_output.len() {
        return Err(NnError::shape(
            "maxpool argmax",
            format!("{}", d_output.len()),
            format!("{}", argmax.len()),
        ));
    }
    let mut d_input = Tensor::zeros(input_shape);
    let dst = d_input.data_mut();
    for (&idx, &g) in argmax.iter().zip(d_output.data()) {
        dst[idx] += g;
    }
    Ok(d_input)
}

fn fc_check(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize), NnError> {
    weights.expect_rank("fc weights", 2)?;
    let (outs, ins) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != ins {
        return Err(NnError::shape("fc input", format!("{ins} features"), format!("{}", input.len())));
    }
    bias.expect_shape("fc bias", &[outs])?;
    Ok((outs, ins))
}

pub(crate) fn fc_into(input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let ins = input.len();
    for (o, y) in out.iter_mut().enumerate() {
        *y = bias[o] + dot(&weights[o * ins..(o + 1) * ins], input);
    }
}

pub(crate) fn fc_backward_into(
    input: &[f64],
    weights: &[f64],
    d_out: &[f64],
    d_weights: &mut [f64],
    d_bias: &mut [f64],
    d_input: Option<&mut [f64]>,
) {
    let ins = input.len();
    for (o, &g) in d_out.iter().enumerate() {
        d_bias[o] += g;
        axpy(g, input, &mut d_weights[o * ins..(o + 1) * ins]);
    }
    if let Some(d_input) = d_input {
        d_input.iter_mut().for_each(|v| *v = 0.0);
        for (o, &g) in d_out.iter().enumerate() {
            axpy(g, &weights[o * ins..(o + 1) * ins], d_input);
        }
    }
}

/// Affine map `weights · input + bias`; `weights` is `[outputs, inputs]` and
/// `input` is flattened.
pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (outs, _) = fc_check(input, weights, bias)?;
    let mut out = Tensor::zeros(&[outs]);
    fc_into(input.data(), weights.data(), bias.data(), out.data_mut());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcGradients {
    pub d_input: Tensor,
    pub d_weights: Tensor,
    pub d_bias: Tensor,
}

pub fn fc_backward(input: &Tensor, weights: &Tensor, bias: &Tensor, d_output: &Tensor) -> Result<FcGradients, NnError> {
    let (outs, _) = fc_check(input, weights, bias)?;
    d_output.expect_shape("fc d_output", &[outs])?;
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weights = Tensor::zeros(weights.shape());
    let mut d_bias = Tensor::zeros(bias.shape());
    fc_backward_into(
        input.data(),
        weights.data(),
        d_output.data(),
        d_weights.data_mut(),
        d_bias.data_mut(),
        Some(d_input.data_mut()),
    );
    Ok(FcGradients {
        d_input,
        d_weights,
        d_bias,
    })
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Passes the gradient where `x > 0`; the subgradient at exactly zero is 0.
pub fn relu_backward(x: &Tensor, d_output: &Tensor) -> Result<Tensor, NnError> {
    d_output.expect_shape("relu d_output", x.shape())?;
    let data = x
        .data()
        .iter()
        .zip(d_output.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data)
}
