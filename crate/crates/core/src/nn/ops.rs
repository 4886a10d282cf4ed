//! Forward and backward kernels for the dense building blocks.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use super::Tensor;
use crate::error::{Error, Result};

/// Gradients of a dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check_linear(n_in: usize, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    weight.expect_rank(2, "linear weight")?;
    bias.expect_rank(1, "linear bias")?;
    let (n_out, w_in) = (weight.rows(), weight.cols());
    if w_in != n_in || bias.len() != n_out {
        return Err(Error::InvalidShape(format!(
            "linear: input {n_in}, weight {:?}, bias {:?}",
            weight.dims(),
            bias.dims()
        )));
    }
    Ok((n_out, n_in))
}

/// `out[j] = Σ_i weight[j,i]·x[i] + bias[j]`.
pub fn linear_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    x.expect_rank(1, "linear input")?;
    let (n_out, n_in) = check_linear(x.len(), weight, bias)?;
    let mut out = bias.values().to_vec();
    affine_rows(x.values(), 1, n_in, weight.values(), None, n_out, &mut out);
    Ok(Tensor::vector(out))
}

pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    x.expect_rank(1, "linear input")?;
    weight.expect_rank(2, "linear weight")?;
    let (n_out, n_in) = (weight.rows(), weight.cols());
    if x.len() != n_in || grad_out.len() != n_out {
        return Err(Error::InvalidShape("linear backward".into()));
    }
    let mut gx = vec![0.0; n_in];
    let mut gw = vec![0.0; n_out * n_in];
    let mut gb = vec![0.0; n_out];
    affine_rows_backward(
        x.values(),
        1,
        n_in,
        weight.values(),
        n_out,
        grad_out.values(),
        Some(&mut gx),
        &mut gw,
        &mut gb,
    );
    Ok(LinearGrads {
        input: Tensor::vector(gx),
        weight: Tensor::new(vec![n_out, n_in], gw)?,
        bias: Tensor::vector(gb),
    })
}

/// Applies a shared dense map to every row of a `T × n_in` matrix.
pub fn linear_rows(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    x.expect_rank(2, "linear_rows input")?;
    let (n_out, n_in) = check_linear(x.cols(), weight, bias)?;
    let rows = x.rows();
    let mut out = vec![0.0; rows * n_out];
    affine_rows(
        x.values(),
        rows,
        n_in,
        weight.values(),
        Some(bias.values()),
        n_out,
        &mut out,
    );
    Tensor::new(vec![rows, n_out], out)
}

/// `out[r, :] (+)= W · x[r, :] (+ b)` over `rows` rows; accumulates into `out`.
pub(crate) fn affine_rows(
    x: &[f64],
    rows: usize,
    n_in: usize,
    w: &[f64],
    bias: Option<&[f64]>,
    n_out: usize,
    out: &mut [f64],
) {
    for r in 0..rows {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let or = &mut out[r * n_out..(r + 1) * n_out];
        for (j, o) in or.iter_mut().enumerate() {
            let wj = &w[j * n_in..(j + 1) * n_in];
            let dot: f64 = wj.iter().zip(xr).map(|(a, b)| a * b).sum();
            *o += dot + bias.map_or(0.0, |b| b[j]);
        }
    }
}

/// Accumulates the gradients of [`affine_rows`] given `grad_out` (`rows × n_out`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn affine_rows_backward(
    x: &[f64],
    rows: usize,
    n_in: usize,
    w: &[f64],
    n_out: usize,
    grad_out: &[f64],
    mut grad_x: Option<&mut [f64]>,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) {
    for r in 0..rows {
        let xr = &x[r * n_in..(r + 1) * n_in];
        let gr = &grad_out[r * n_out..(r + 1) * n_out];
        for (j, &g) in gr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad_b[j] += g;
            let gwj = &mut grad_w[j * n_in..(j + 1) * n_in];
            for (gw, &xv) in gwj.iter_mut().zip(xr) {
                *gw += g * xv;
            }
            if let Some(gx) = grad_x.as_deref_mut() {
                let wj = &w[j * n_in..(j + 1) * n_in];
                let gxr = &mut gx[r * n_in..(r + 1) * n_in];
                for (d, &wv) in gxr.iter_mut().zip(wj) {
                    *d += g * wv;
                }
            }
        }
    }
}

/// Exact GELU, `0.5·x·(1 + erf(x/√2))`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// `Φ(x) + x·φ(x)`.
pub fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

/// Chain rule through GELU given the pre-activation.
pub fn gelu_backward(pre: &Tensor, grad_out: &Tensor) -> Tensor {
    let values = pre
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&x, &g)| g * gelu_derivative(x))
        .collect();
    Tensor::new(pre.dims().to_vec(), values).expect("same dims as pre-activation")
}

/// Numerically stable `log Σ exp(x)`; `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn softmax_slice(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_softmax_slice(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|&x| x - lse).collect()
}

/// Softmax over the last axis (each row for a matrix).
pub fn softmax(logits: &Tensor) -> Tensor {
    map_rows(logits, softmax_slice)
}

pub fn log_softmax(logits: &Tensor) -> Tensor {
    map_rows(logits, log_softmax_slice)
}

/// Backward of a row-wise softmax given its output `probs`.
pub fn softmax_backward(probs: &Tensor, grad_out: &Tensor) -> Tensor {
    let width = *probs.dims().last().expect("non-empty dims");
    let mut out = vec![0.0; probs.len()];
    for ((p, g), o) in probs
        .values()
        .chunks(width)
        .zip(grad_out.values().chunks(width))
        .zip(out.chunks_mut(width))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((o, &pv), &gv) in o.iter_mut().zip(p).zip(g) {
            *o = pv * (gv - dot);
        }
    }
    Tensor::new(probs.dims().to_vec(), out).expect("same dims as probs")
}

fn map_rows(t: &Tensor, f: impl Fn(&[f64]) -> Vec<f64>) -> Tensor {
    let width = *t.dims().last().expect("non-empty dims");
    let values = t.values().chunks(width).flat_map(f).collect();
    Tensor::new(t.dims().to_vec(), values).expect("row map preserves size")
}

/// Max over time of a `T × d` matrix with the winning frame per column.
/// Ties go to the earliest frame.
pub fn maxpool_time(h: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    h.expect_rank(2, "maxpool input")?;
    let (frames, width) = (h.rows(), h.cols());
    if frames == 0 {
        return Err(Error::EmptySequence("maxpool over zero frames".into()));
    }
    let mut out = h.row(0).to_vec();
    let mut argmax = vec![0usize; width];
    for t in 1..frames {
        for (j, &v) in h.row(t).iter().enumerate() {
            if v > out[j] {
                out[j] = v;
                argmax[j] = t;
            }
        }
    }
    Ok((Tensor::vector(out), argmax))
}

/// Routes the pooled gradient back to the winning frames.
pub fn maxpool_backward(frames: usize, argmax: &[usize], grad_out: &Tensor) -> Tensor {
    let width = argmax.len();
    let mut g = Tensor::zeros(&[frames, width]);
    for (j, (&t, &gv)) in argmax.iter().zip(grad_out.values()).enumerate() {
        g.values_mut()[t * width + j] += gv;
    }
    g
}

/// Cross entropy loss and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let k = logits.len();
    if label >= k {
        return Err(Error::InvalidLabel { label, classes: k });
    }
    let lse = logsumexp(logits.values());
    let loss = lse - logits.values()[label];
    let mut grad: Vec<f64> = logits.values().iter().map(|&x| (x - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, Tensor::vector(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn linear_identity_and_hand_case() {
        let out = linear_forward(
            &Tensor::vector(vec![1.0, 0.0]),
            &Tensor::identity(2),
            &Tensor::vector(vec![0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(out.values(), &[1.0, 0.0]);

        let w = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let out = linear_forward(&Tensor::vector(vec![2.0, 3.0]), &w, &Tensor::vector(vec![0.5]))
            .unwrap();
        assert_eq!(out.values(), &[5.5]);
    }

    #[test]
    fn linear_rejects_bad_shapes() {
        let w = Tensor::zeros(&[3, 2]);
        let err = linear_forward(&Tensor::vector(vec![1.0; 3]), &w, &Tensor::vector(vec![0.0; 3]));
        assert!(matches!(err, Err(Error::InvalidShape(_))));
        let err = linear_forward(&Tensor::vector(vec![1.0; 2]), &w, &Tensor::vector(vec![0.0; 2]));
        assert!(matches!(err, Err(Error::InvalidShape(_))));
    }

    #[test]
    fn linear_matches_triple_loop_oracle() {
        let w: Vec<f64> = (0..12).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.7).collect();
        let x = vec![0.3, -1.2, 2.5];
        let b = vec![0.1, -0.2, 0.3, 0.4];
        let weight = Tensor::new(vec![4, 3], w.clone()).unwrap();
        let out = linear_forward(&Tensor::vector(x.clone()), &weight, &Tensor::vector(b.clone()))
            .unwrap();
        for j in 0..4 {
            let mut acc = b[j];
            for i in 0..3 {
                acc += w[j * 3 + i] * x[i];
            }
            assert!(close(out.values()[j], acc, 1e-12));
        }
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!(close(gelu_scalar(10.0), 10.0, 1e-6));
        // 0.5·(1 + erf(1/√2)) = Φ(1) = 0.8413447460685429
        assert!(close(gelu_scalar(1.0), 0.841345, 1e-5));
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -1.0, -0.2, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let numeric = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!(close(gelu_derivative(x), numeric, 1e-8), "x = {x}");
        }
    }

    #[test]
    fn softmax_cases() {
        let p = softmax_slice(&[0.0; 4]);
        assert!(p.iter().all(|&v| close(v, 0.25, 1e-15)));
        let p = softmax_slice(&[1.0, 2.0]);
        // e/(e+e²) = 1/(1+e)
        assert!(close(p[0], 0.268941, 1e-6));
        assert!(close(p[1], 0.731059, 1e-6));
        for c in [-300.0, -1.0, 0.0, 17.0, 900.0] {
            let a = softmax_slice(&[c + 5.0, c]);
            let b = softmax_slice(&[5.0, 0.0]);
            assert!(close(a[0], b[0], 1e-12) && close(a[1], b[1], 1e-12));
        }
    }

    #[test]
    fn maxpool_cases() {
        let h = Tensor::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]).unwrap();
        let (out, arg) = maxpool_time(&h).unwrap();
        assert_eq!(out.values(), &[3.0, 5.0]);
        assert_eq!(arg, vec![1, 0]);

        let h = Tensor::from_rows(&[vec![7.0, -1.0]]).unwrap();
        let (out, arg) = maxpool_time(&h).unwrap();
        assert_eq!(out.values(), &[7.0, -1.0]);
        assert_eq!(arg, vec![0, 0]);

        let h = Tensor::from_rows(&[vec![2.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(maxpool_time(&h).unwrap().1, vec![0, 0]);
    }

    #[test]
    fn maxpool_gradient_hits_one_frame_per_column() {
        let g = maxpool_backward(3, &[2, 0, 2], &Tensor::vector(vec![1.0, -2.0, 0.5]));
        assert_eq!(g.values(), &[0.0, -2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.5]);
    }

    #[test]
    fn cross_entropy_cases() {
        let (l, _) = cross_entropy(&Tensor::vector(vec![0.0; 4]), 2).unwrap();
        assert!(close(l, 4f64.ln(), 1e-12));
        let (l, _) = cross_entropy(&Tensor::vector(vec![100.0, 0.0]), 0).unwrap();
        assert!(close(l, 0.0, 1e-9));
        // log(e + e² + e³) − 2
        let (l, g) = cross_entropy(&Tensor::vector(vec![1.0, 2.0, 3.0]), 1).unwrap();
        assert!(close(l, 1.407606, 1e-5));
        assert!(close(g.values().iter().sum::<f64>(), 0.0, 1e-12));
        assert!(matches!(
            cross_entropy(&Tensor::vector(vec![0.0; 3]), 3),
            Err(Error::InvalidLabel { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn log_add_handles_neg_infinity() {
        assert_eq!(log_add(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_eq!(log_add(f64::NEG_INFINITY, -2.0), -2.0);
        assert!(close(log_add(0.0, 0.0), 2f64.ln(), 1e-15));
    }
}
