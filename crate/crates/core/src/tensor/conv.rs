//! 2D cross-correlation (stride 1, 3×3 or 1×1 kernels) via im2col + GEMM.

use super::gemm::dgemm;
use super::{Graph, Padding, Result, Rule, Tensor, TensorError, TensorId};

/// Output spatial size and pad amount for a kernel/padding combination.
fn conv_geometry(h: usize, w: usize, k: usize, padding: Padding) -> (usize, usize, usize) {
    match padding {
        Padding::Same => (h, w, k / 2),
        Padding::None => (h - (k - 1), w - (k - 1), 0),
    }
}

/// Lay the input patches out as a (in_c*k*k) × (out_h*out_w) column matrix.
fn im2col(
    input: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    cols: &mut [f64],
) {
    debug_assert_eq!(cols.len(), in_c * k * k * out_h * out_w);
    let plane = h * w;
    let out_plane = out_h * out_w;
    for ci in 0..in_c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * out_plane;
                for oy in 0..out_h {
                    let iy = (oy + ky) as isize - pad as isize;
                    let dst = &mut cols[row + oy * out_w..row + (oy + 1) * out_w];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    // Valid ox range: 0 <= ox + kx - pad < w.
                    let lo = pad.saturating_sub(kx);
                    let hi = (w + pad - kx).min(out_w);
                    dst[..lo.min(out_w)].fill(0.0);
                    if hi > lo {
                        let src_base = ci * plane + iy as usize * w;
                        let src_lo = lo + kx - pad;
                        dst[lo..hi].copy_from_slice(&input[src_base + src_lo..src_base + src_lo + (hi - lo)]);
                    }
                    if hi < out_w {
                        dst[hi.max(lo)..].fill(0.0);
                    }
                }
            }
        }
    }
}

/// Scatter-add the column matrix back onto an input-shaped gradient buffer.
fn col2im(
    cols: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    grad_input: &mut [f64],
) {
    let plane = h * w;
    let out_plane = out_h * out_w;
    for ci in 0..in_c {
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ci * k + ky) * k + kx) * out_plane;
                for oy in 0..out_h {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let lo = pad.saturating_sub(kx);
                    let hi = (w + pad - kx).min(out_w);
                    if hi <= lo {
                        continue;
                    }
                    let src = &cols[row + oy * out_w + lo..row + oy * out_w + hi];
                    let dst_base = ci * plane + iy as usize * w + (lo + kx - pad);
                    let dst = &mut grad_input[dst_base..dst_base + (hi - lo)];
                    for (d, s) in dst.iter_mut().zip(src.iter()) {
                        *d += s;
                    }
                }
            }
        }
    }
}

impl Graph {
    /// 2D cross-correlation with per-output-channel bias.
    ///
    /// `input` is NCHW, `weights` is (out_c, in_c, k, k) with k ∈ {1, 3},
    /// `bias` has length out_c.
    pub fn conv2d(
        &mut self,
        input: TensorId,
        weights: TensorId,
        bias: TensorId,
        padding: Padding,
    ) -> Result<TensorId> {
        let x = self.value(input);
        let w_t = self.value(weights);
        let b_t = self.value(bias);
        let (n, in_c, h, w) = x.dims4()?;
        if w_t.shape().len() != 4 {
            return Err(TensorError::shape(
                "conv2d",
                format!("weights must be rank 4, got {:?}", w_t.shape()),
            ));
        }
        let (out_c, w_in_c, kh, kw) = (
            w_t.shape()[0],
            w_t.shape()[1],
            w_t.shape()[2],
            w_t.shape()[3],
        );
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(TensorError::invalid(
                "conv2d",
                format!("kernel must be 1x1 or 3x3, got {kh}x{kw}"),
            ));
        }
        if w_in_c != in_c {
            return Err(TensorError::shape(
                "conv2d",
                format!("input has {in_c} channels but weights expect {w_in_c}"),
            ));
        }
        if b_t.shape() != [out_c] {
            return Err(TensorError::shape(
                "conv2d",
                format!("bias shape {:?}, expected [{out_c}]", b_t.shape()),
            ));
        }
        if matches!(padding, Padding::None) && (h < kh || w < kw) {
            return Err(TensorError::shape(
                "conv2d",
                format!("input {h}x{w} smaller than {kh}x{kw} kernel without padding"),
            ));
        }
        if !x.is_finite() || !w_t.is_finite() || !b_t.is_finite() {
            return Err(TensorError::NonFinite { op: "conv2d" });
        }

        let k = kh;
        let (out_h, out_w, pad) = conv_geometry(h, w, k, padding);
        let out_plane = out_h * out_w;
        let patch = in_c * k * k;
        let mut out = vec![0.0; n * out_c * out_plane];
        let mut cols = vec![0.0; patch * out_plane];
        let x_plane = in_c * h * w;
        for bi in 0..n {
            let x_b = &x.data()[bi * x_plane..(bi + 1) * x_plane];
            im2col(x_b, in_c, h, w, k, pad, out_h, out_w, &mut cols);
            let out_b = &mut out[bi * out_c * out_plane..(bi + 1) * out_c * out_plane];
            dgemm(
                out_c,
                patch,
                out_plane,
                1.0,
                w_t.data(),
                false,
                &cols,
                false,
                0.0,
                out_b,
            );
            for oc in 0..out_c {
                let bv = b_t.data()[oc];
                for v in &mut out_b[oc * out_plane..(oc + 1) * out_plane] {
                    *v += bv;
                }
            }
        }
        let tensor = Tensor::from_vec(&[n, out_c, out_h, out_w], out);
        Ok(self.push(
            tensor,
            Rule::Conv2d {
                input,
                weights,
                bias,
                padding,
            },
        ))
    }
}

pub(super) fn conv2d_backward(
    graph: &Graph,
    upstream: &[f64],
    input: TensorId,
    weights: TensorId,
    bias: TensorId,
    padding: Padding,
    contribs: &mut Vec<(TensorId, Vec<f64>)>,
) -> Result<()> {
    let x = graph.value(input);
    let w_t = graph.value(weights);
    let (n, in_c, h, w) = x.dims4()?;
    let out_c = w_t.shape()[0];
    let k = w_t.shape()[2];
    let (out_h, out_w, pad) = conv_geometry(h, w, k, padding);
    let out_plane = out_h * out_w;
    let patch = in_c * k * k;
    let x_plane = in_c * h * w;

    let want_input = graph.wants_grad(input);
    let want_weights = graph.wants_grad(weights);
    let want_bias = graph.wants_grad(bias);

    let mut grad_input = if want_input {
        Some(vec![0.0; x.len()])
    } else {
        None
    };
    let mut grad_weights = if want_weights {
        Some(vec![0.0; w_t.len()])
    } else {
        None
    };
    let mut grad_bias = if want_bias {
        Some(vec![0.0; out_c])
    } else {
        None
    };

    let mut cols = vec![0.0; patch * out_plane];
    let mut dcols = vec![0.0; patch * out_plane];
    for bi in 0..n {
        let dout_b = &upstream[bi * out_c * out_plane..(bi + 1) * out_c * out_plane];
        if want_weights {
            let x_b = &x.data()[bi * x_plane..(bi + 1) * x_plane];
            im2col(x_b, in_c, h, w, k, pad, out_h, out_w, &mut cols);
            // dW += dOut · colsᵀ, accumulated across the batch in index order.
            dgemm(
                out_c,
                out_plane,
                patch,
                1.0,
                dout_b,
                false,
                &cols,
                true,
                1.0,
                grad_weights.as_mut().unwrap(),
            );
        }
        if want_bias {
            let gb = grad_bias.as_mut().unwrap();
            for oc in 0..out_c {
                gb[oc] += dout_b[oc * out_plane..(oc + 1) * out_plane]
                    .iter()
                    .sum::<f64>();
            }
        }
        if want_input {
            // dcols = Wᵀ · dOut, then scatter back onto the input.
            dgemm(
                patch,
                out_c,
                out_plane,
                1.0,
                w_t.data(),
                true,
                dout_b,
                false,
                0.0,
                &mut dcols,
            );
            let gi = grad_input.as_mut().unwrap();
            col2im(
                &dcols,
                in_c,
                h,
                w,
                k,
                pad,
                out_h,
                out_w,
                &mut gi[bi * x_plane..(bi + 1) * x_plane],
            );
        }
    }
    if let Some(g) = grad_input {
        contribs.push((input, g));
    }
    if let Some(g) = grad_weights {
        contribs.push((weights, g));
    }
    if let Some(g) = grad_bias {
        contribs.push((bias, g));
    }
    Ok(())
}
