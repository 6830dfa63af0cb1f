//! Dense kernels over channel-major planes (`[channel][y][x]`).
//!
//! Convolutions are lowered to matrix products (im2col); each forward kernel
//! has a matching backward that accumulates into the provided gradient
//! buffers.

/// `c (m x n) = beta * c + a (m x k) * b (k x n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    let span = |r: isize, cc: isize, rows: usize, cols: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) as usize * r as usize + (cols as isize - 1) as usize * cc as usize + 1
        }
    };
    assert!(a.len() >= span(rsa, csa, m, k));
    assert!(b.len() >= span(rsb, csb, k, n));
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the product touches.
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

/// Valid output range for a kernel tap at offset `d` over a length-`n` axis
/// with zero padding: positions `o` such that `0 <= o + d < n`.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi)
}

/// Calls `f(tap, y, x0, x1, src_offset)` for every row segment of every 3x3
/// tap: output cells `y*w + x0..y*w + x1` read input cells starting at
/// `src_offset`.
fn for_each_tap_row(h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    for ky in 0..3 {
        let dy = ky as isize - 1;
        let (y0, y1) = tap_range(dy, h);
        for kx in 0..3 {
            let dx = kx as isize - 1;
            let (x0, x1) = tap_range(dx, w);
            for y in y0..y1 {
                let src = ((y as isize + dy) * w as isize + x0 as isize + dx) as usize;
                f(ky * 3 + kx, y, x0, x1, src);
            }
        }
    }
}

/// `[c_in * 9][h * w]` patch matrix of a zero-padded 3x3 neighbourhood.
fn im2col(input: &[f64], c_in: usize, h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    let mut cols = vec![0.0; c_in * 9 * plane];
    for ci in 0..c_in {
        let inp = &input[ci * plane..(ci + 1) * plane];
        let block = &mut cols[ci * 9 * plane..(ci + 1) * 9 * plane];
        for_each_tap_row(h, w, |tap, y, x0, x1, src| {
            block[tap * plane + y * w + x0..tap * plane + y * w + x1].copy_from_slice(&inp[src..src + x1 - x0]);
        });
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back onto the input.
fn col2im_add(cols: &[f64], c_in: usize, h: usize, w: usize, d_input: &mut [f64]) {
    let plane = h * w;
    for ci in 0..c_in {
        let di = &mut d_input[ci * plane..(ci + 1) * plane];
        let block = &cols[ci * 9 * plane..(ci + 1) * 9 * plane];
        for_each_tap_row(h, w, |tap, y, x0, x1, src| {
            let g = &block[tap * plane + y * w + x0..tap * plane + y * w + x1];
            for (d, v) in di[src..src + x1 - x0].iter_mut().zip(g) {
                *d += v;
            }
        });
    }
}

fn fill_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (o, b) in out.chunks_exact_mut(plane).zip(bias) {
        o.fill(*b);
    }
}

fn add_row_sums(d_out: &[f64], plane: usize, d_bias: &mut [f64]) {
    for (g, db) in d_out.chunks_exact(plane).zip(d_bias.iter_mut()) {
        *db += g.iter().sum::<f64>();
    }
}

/// 3x3 convolution, stride 1, zero padding 1.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
) {
    let plane = h * w;
    debug_assert_eq!(input.len(), c_in * plane);
    debug_assert_eq!(out.len(), c_out * plane);
    let cols = im2col(input, c_in, h, w);
    let k = c_in * 9;
    fill_bias(out, bias, plane);
    gemm(c_out, k, plane, weight, (k as isize, 1), &cols, (plane as isize, 1), 1.0, out);
}

/// Backward of [`conv3x3_forward`]. Accumulates into `d_weight`, `d_bias`
/// and (when given) `d_input`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    d_input: Option<&mut [f64]>,
) {
    let plane = h * w;
    let k = c_in * 9;
    add_row_sums(d_out, plane, d_bias);
    let cols = im2col(input, c_in, h, w);
    // dW (c_out x k) += dOut (c_out x plane) * cols^T (plane x k)
    gemm(c_out, plane, k, d_out, (plane as isize, 1), &cols, (1, plane as isize), 1.0, d_weight);
    if let Some(di) = d_input {
        let mut d_cols = cols;
        // dCols (k x plane) = W^T (k x c_out) * dOut (c_out x plane)
        gemm(k, c_out, plane, weight, (1, k as isize), d_out, (plane as isize, 1), 0.0, &mut d_cols);
        col2im_add(&d_cols, c_in, h, w, di);
    }
}

/// 1x1 convolution (per-cell linear map).
pub fn conv1x1_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    c_in: usize,
    c_out: usize,
    plane: usize,
    out: &mut [f64],
) {
    fill_bias(out, bias, plane);
    gemm(c_out, c_in, plane, weight, (c_in as isize, 1), input, (plane as isize, 1), 1.0, out);
}

#[allow(clippy::too_many_arguments)]
pub fn conv1x1_backward(
    input: &[f64],
    weight: &[f64],
    d_out: &[f64],
    c_in: usize,
    c_out: usize,
    plane: usize,
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    d_input: &mut [f64],
) {
    add_row_sums(d_out, plane, d_bias);
    gemm(c_out, plane, c_in, d_out, (plane as isize, 1), input, (1, plane as isize), 1.0, d_weight);
    gemm(c_in, c_out, plane, weight, (1, c_in as isize), d_out, (plane as isize, 1), 1.0, d_input);
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero gradient entries where the (post-ReLU) activation is not positive.
pub fn relu_backward_inplace(activation: &[f64], grad: &mut [f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv3x3(input: &[f64], weight: &[f64], bias: &[f64], ci: usize, co: usize, h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; co * h * w];
        for o in 0..co {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = bias[o];
                    for i in 0..ci {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight[((o * ci + i) * 3 + ky as usize) * 3 + kx as usize]
                                    * input[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919 % 101) as f64 / 101.0 - 0.5) * scale).collect()
    }

    #[test]
    fn conv3x3_matches_naive() {
        let (ci, co, h, w) = (3, 2, 5, 4);
        let input = seq(ci * h * w, 2.0);
        let weight = seq(co * ci * 9, 1.0);
        let bias = vec![0.1, -0.2];
        let mut out = vec![0.0; co * h * w];
        conv3x3_forward(&input, &weight, &bias, ci, co, h, w, &mut out);
        let expected = naive_conv3x3(&input, &weight, &bias, ci, co, h, w);
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv3x3_backward_matches_finite_difference() {
        let (ci, co, h, w) = (2, 2, 4, 3);
        let input = seq(ci * h * w, 2.0);
        let weight = seq(co * ci * 9, 1.0);
        let bias = vec![0.3, 0.0];
        let upstream = seq(co * h * w, 1.5);
        let loss = |inp: &[f64], wt: &[f64]| {
            let mut out = vec![0.0; co * h * w];
            conv3x3_forward(inp, wt, &bias, ci, co, h, w, &mut out);
            out.iter().zip(&upstream).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut dw = vec![0.0; weight.len()];
        let mut db = vec![0.0; 2];
        let mut di = vec![0.0; input.len()];
        conv3x3_backward(&input, &weight, &upstream, ci, co, h, w, &mut dw, &mut db, Some(&mut di));
        let eps = 1e-6;
        for k in 0..weight.len() {
            let mut p = weight.clone();
            p[k] += eps;
            let mut m = weight.clone();
            m[k] -= eps;
            let fd = (loss(&input, &p) - loss(&input, &m)) / (2.0 * eps);
            assert!((fd - dw[k]).abs() < 1e-6, "w{k}: {fd} vs {}", dw[k]);
        }
        for k in 0..input.len() {
            let mut p = input.clone();
            p[k] += eps;
            let mut m = input.clone();
            m[k] -= eps;
            let fd = (loss(&p, &weight) - loss(&m, &weight)) / (2.0 * eps);
            assert!((fd - di[k]).abs() < 1e-6, "x{k}: {fd} vs {}", di[k]);
        }
        let total: f64 = upstream[..h * w].iter().sum();
        assert!((db[0] - total).abs() < 1e-12);
    }
}
