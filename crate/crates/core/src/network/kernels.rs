//! Stateless layer kernels operating on flat row-major buffers.
//!
//! Every kernel treats its leading dimension as an opaque batch, so time-major
//! activations `[T, N, ...]` are processed as `T * N` independent samples.

/// `c = a * b + beta * c` for strided row-major views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: every view addresses in-bounds elements of its slice for the given
    // dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let hw = oh * ow;
        for c in 0..self.cin {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            dst[oy * ow + ox] = if iy < 0
                                || ix < 0
                                || iy >= self.h as isize
                                || ix >= self.w as isize
                            {
                                0.0
                            } else {
                                x[(c * self.h + iy as usize) * self.w + ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let (oh, ow) = (self.out_h(), self.out_w());
        let hw = oh * ow;
        for c in 0..self.cin {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            gx[(c * self.h + iy as usize) * self.w + ix as usize] +=
                                src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let in_len = g.cin * g.h * g.w;
    let hw = g.out_h() * g.out_w();
    let out_len = g.cout * hw;
    let p = g.patch();
    let mut cols = vec![0.0; p * hw];
    let mut out = vec![0.0; batch * out_len];
    for b in 0..batch {
        g.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
        let y = &mut out[b * out_len..(b + 1) * out_len];
        for (co, chunk) in y.chunks_mut(hw).enumerate() {
            chunk.fill(bias[co]);
        }
        gemm(
            g.cout,
            p,
            hw,
            weight,
            (p as isize, 1),
            &cols,
            (hw as isize, 1),
            y,
            1.0,
        );
    }
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`; the input gradient is skipped
/// when `need_input` is false.
pub(crate) fn conv_backward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let in_len = g.cin * g.h * g.w;
    let hw = g.out_h() * g.out_w();
    let out_len = g.cout * hw;
    let p = g.patch();
    let mut cols = vec![0.0; p * hw];
    let mut dcols = vec![0.0; p * hw];
    let mut gw = vec![0.0; g.cout * p];
    let mut gb = vec![0.0; g.cout];
    let mut gx = need_input.then(|| vec![0.0; batch * in_len]);
    for b in 0..batch {
        let go = &grad_out[b * out_len..(b + 1) * out_len];
        for (co, chunk) in go.chunks(hw).enumerate() {
            gb[co] += chunk.iter().sum::<f64>();
        }
        g.im2col(&x[b * in_len..(b + 1) * in_len], &mut cols);
        // gw[cout, p] += go[cout, hw] * cols^T[hw, p]
        gemm(
            g.cout,
            hw,
            p,
            go,
            (hw as isize, 1),
            &cols,
            (1, hw as isize),
            &mut gw,
            1.0,
        );
        if let Some(gx) = gx.as_mut() {
            // dcols[p, hw] = w^T[p, cout] * go[cout, hw]
            gemm(
                p,
                g.cout,
                hw,
                weight,
                (1, p as isize),
                go,
                (hw as isize, 1),
                &mut dcols,
                0.0,
            );
            g.col2im(&dcols, &mut gx[b * in_len..(b + 1) * in_len]);
        }
    }
    (gx, gw, gb)
}

/// `y[B, out] = x[B, in] * w[out, in]^T + b`.
pub(crate) fn fc_forward(
    batch: usize,
    fin: usize,
    fout: usize,
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let mut y = Vec::with_capacity(batch * fout);
    for _ in 0..batch {
        y.extend_from_slice(bias);
    }
    gemm(
        batch,
        fin,
        fout,
        x,
        (fin as isize, 1),
        weight,
        (1, fin as isize),
        &mut y,
        1.0,
    );
    y
}

pub(crate) fn fc_backward(
    batch: usize,
    fin: usize,
    fout: usize,
    x: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; fout * fin];
    gemm(
        fout,
        batch,
        fin,
        grad_out,
        (1, fout as isize),
        x,
        (fin as isize, 1),
        &mut gw,
        0.0,
    );
    let mut gb = vec![0.0; fout];
    for row in grad_out.chunks(fout) {
        for (g, r) in gb.iter_mut().zip(row) {
            *g += r;
        }
    }
    let gx = need_input.then(|| {
        let mut gx = vec![0.0; batch * fin];
        gemm(
            batch,
            fout,
            fin,
            grad_out,
            (fout as isize, 1),
            weight,
            (fin as isize, 1),
            &mut gx,
            0.0,
        );
        gx
    });
    (gx, gw, gb)
}

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

pub(crate) struct BnTrace {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_stats: bool,
}

/// Batch normalisation over `[B, C, S]`; statistics are per channel over `B * S`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn bn_forward(
    batch: usize,
    channels: usize,
    spatial: usize,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &mut [f64],
    running_var: &mut [f64],
    batch_stats: bool,
) -> (Vec<f64>, BnTrace) {
    let count = (batch * spatial) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    if batch_stats {
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * spatial;
                mean[c] += x[off..off + spatial].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * spatial;
                var[c] += x[off..off + spatial]
                    .iter()
                    .map(|v| (v - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let unbias = if count > 1.0 {
            count / (count - 1.0)
        } else {
            1.0
        };
        for c in 0..channels {
            running_mean[c] = (1.0 - BN_MOMENTUM) * running_mean[c] + BN_MOMENTUM * mean[c];
            running_var[c] = (1.0 - BN_MOMENTUM) * running_var[c] + BN_MOMENTUM * var[c] * unbias;
        }
    } else {
        mean.copy_from_slice(running_mean);
        var.copy_from_slice(running_var);
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * spatial;
            for i in off..off + spatial {
                let h = (x[i] - mean[c]) * inv_std[c];
                xhat[i] = h;
                y[i] = gamma[c] * h + beta[c];
            }
        }
    }
    (
        y,
        BnTrace {
            xhat,
            inv_std,
            batch_stats,
        },
    )
}

pub(crate) fn bn_backward(
    batch: usize,
    channels: usize,
    spatial: usize,
    trace: &BnTrace,
    gamma: &[f64],
    grad_out: &[f64],
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut gg = vec![0.0; channels];
    let mut gbeta = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let off = (b * channels + c) * spatial;
            for i in off..off + spatial {
                gg[c] += grad_out[i] * trace.xhat[i];
                gbeta[c] += grad_out[i];
            }
        }
    }
    let gx = need_input.then(|| {
        let mut gx = vec![0.0; grad_out.len()];
        let count = (batch * spatial) as f64;
        for b in 0..batch {
            for c in 0..channels {
                let off = (b * channels + c) * spatial;
                for i in off..off + spatial {
                    gx[i] = if trace.batch_stats {
                        gamma[c] * trace.inv_std[c] / count
                            * (count * grad_out[i] - gbeta[c] - trace.xhat[i] * gg[c])
                    } else {
                        gamma[c] * trace.inv_std[c] * grad_out[i]
                    };
                }
            }
        }
        gx
    });
    (gx, gg, gbeta)
}

/// Non-overlapping max pooling over `[B, C, H, W]`; returns output and argmax indices.
pub(crate) fn maxpool_forward(
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    size: usize,
    x: &[f64],
) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / size, w / size);
    let mut y = vec![0.0; batch * channels * oh * ow];
    let mut arg = vec![0u32; y.len()];
    for bc in 0..batch * channels {
        let plane = &x[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (oy * size) * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let i = (oy * size + dy) * w + ox * size + dx;
                        if plane[i] > plane[best] {
                            best = i;
                        }
                    }
                }
                let o = (bc * oh + oy) * ow + ox;
                y[o] = plane[best];
                arg[o] = (bc * h * w + best) as u32;
            }
        }
    }
    (y, arg)
}

pub(crate) fn maxpool_backward(input_len: usize, argmax: &[u32], grad_out: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; input_len];
    for (&i, &g) in argmax.iter().zip(grad_out) {
        gx[i as usize] += g;
    }
    gx
}

/// Mean over consecutive groups of `group` features.
pub(crate) fn vote_forward(x: &[f64], group: usize) -> Vec<f64> {
    x.chunks(group)
        .map(|c| c.iter().sum::<f64>() / group as f64)
        .collect()
}

pub(crate) fn vote_backward(grad_out: &[f64], group: usize) -> Vec<f64> {
    grad_out
        .iter()
        .flat_map(|&g| std::iter::repeat_n(g / group as f64, group))
        .collect()
}

/// Mean over the leading (time) axis of a `[T, M]` block.
pub(crate) fn time_mean_forward(x: &[f64], steps: usize) -> Vec<f64> {
    let m = x.len() / steps;
    let mut y = vec![0.0; m];
    for chunk in x.chunks(m) {
        for (a, b) in y.iter_mut().zip(chunk) {
            *a += b;
        }
    }
    y.iter_mut().for_each(|v| *v /= steps as f64);
    y
}

pub(crate) fn time_mean_backward(grad_out: &[f64], steps: usize) -> Vec<f64> {
    let mut g = Vec::with_capacity(grad_out.len() * steps);
    for _ in 0..steps {
        g.extend(grad_out.iter().map(|v| v / steps as f64));
    }
    g
}
