//! 1-D temporal convolution over `T × channels` frame matrices.
//!
//! Weights are stored as `out_channels × (kernel · in_channels)`, tap-major,
//! so a layer is a dense map over an unfolded window of frames.

use super::ops::{affine_rows, affine_rows_backward};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dGeometry {
    pub kernel: usize,
    pub stride: usize,
    /// Zero frames prepended before the first input frame; the remainder of
    /// the window overhangs the end and is zero-filled there.
    pub pad_left: usize,
}

impl Conv1dGeometry {
    /// Output length, `ceil(T / stride)`.
    pub fn output_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.stride)
    }
}

/// Gathers the receptive field of every output frame into one row.
pub fn unfold(x: &Tensor, geom: Conv1dGeometry) -> Tensor {
    let (frames, channels) = (x.rows(), x.cols());
    let out_len = geom.output_len(frames);
    let width = geom.kernel * channels;
    let mut cols = vec![0.0; out_len * width];
    for t in 0..out_len {
        for j in 0..geom.kernel {
            let Some(p) = (t * geom.stride + j).checked_sub(geom.pad_left) else {
                continue;
            };
            if p >= frames {
                continue;
            }
            cols[t * width + j * channels..t * width + (j + 1) * channels]
                .copy_from_slice(x.row(p));
        }
    }
    Tensor::new(vec![out_len, width], cols).expect("unfold size")
}

/// Scatters window gradients back onto the input frames.
fn fold(grad_cols: &[f64], frames: usize, channels: usize, geom: Conv1dGeometry) -> Tensor {
    let out_len = geom.output_len(frames);
    let width = geom.kernel * channels;
    let mut gx = Tensor::zeros(&[frames, channels]);
    for t in 0..out_len {
        for j in 0..geom.kernel {
            let Some(p) = (t * geom.stride + j).checked_sub(geom.pad_left) else {
                continue;
            };
            if p >= frames {
                continue;
            }
            let src = &grad_cols[t * width + j * channels..t * width + (j + 1) * channels];
            for (d, s) in gx.row_mut(p).iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    gx
}

/// Returns the convolution output together with the unfolded input, which
/// the backward pass reuses.
pub fn conv1d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    geom: Conv1dGeometry,
) -> Result<(Tensor, Tensor)> {
    x.expect_rank(2, "conv input")?;
    weight.expect_rank(2, "conv weight")?;
    if x.rows() == 0 {
        return Err(Error::EmptySequence("convolution over zero frames".into()));
    }
    let width = geom.kernel * x.cols();
    if weight.cols() != width || bias.len() != weight.rows() || geom.stride == 0 {
        return Err(Error::InvalidShape(format!(
            "conv: input {:?}, weight {:?}, kernel {}",
            x.dims(),
            weight.dims(),
            geom.kernel
        )));
    }
    let cols = unfold(x, geom);
    let out_len = cols.rows();
    let n_out = weight.rows();
    let mut out = vec![0.0; out_len * n_out];
    affine_rows(
        cols.values(),
        out_len,
        width,
        weight.values(),
        Some(bias.values()),
        n_out,
        &mut out,
    );
    Ok((Tensor::new(vec![out_len, n_out], out)?, cols))
}

/// Accumulates weight and bias gradients and, when `need_input` is set,
/// returns the gradient with respect to the input frames.
pub fn conv1d_backward(
    cols: &Tensor,
    input_frames: usize,
    weight: &Tensor,
    geom: Conv1dGeometry,
    grad_out: &Tensor,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let width = cols.cols();
    let channels = width / geom.kernel;
    let n_out = weight.rows();
    let mut grad_cols = need_input.then(|| vec![0.0; cols.len()]);
    affine_rows_backward(
        cols.values(),
        cols.rows(),
        width,
        weight.values(),
        n_out,
        grad_out.values(),
        grad_cols.as_deref_mut(),
        grad_weight,
        grad_bias,
    );
    grad_cols.map(|g| fold(&g, input_frames, channels, geom))
}
