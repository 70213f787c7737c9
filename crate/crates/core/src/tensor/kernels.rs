//! Raw buffer kernels. Row-major everywhere; convolution buffers are NCHW.

/// `out[n,m] = a[n,k] · b[k,m]`
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        let ai = &a[i * k..(i + 1) * k];
        for (p, &aip) in ai.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let bp = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(bp) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `out[n,k] += g[n,m] · b[k,m]ᵀ`
pub fn matmul_grad_a(g: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let gi = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let bp = &b[p * m..(p + 1) * m];
            let mut s = 0.0;
            for (x, y) in gi.iter().zip(bp) {
                s += x * y;
            }
            out[i * k + p] += s;
        }
    }
}

/// `out[k,m] += a[n,k]ᵀ · g[n,m]`
pub fn matmul_grad_b(a: &[f64], g: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    for i in 0..n {
        let gi = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let row = &mut out[p * m..(p + 1) * m];
            for (o, &gv) in row.iter_mut().zip(gi) {
                *o += aip * gv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    /// Input coordinate for output index `o` and kernel offset `k`, or None in the padding.
    #[inline]
    fn src(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }
}

pub fn conv2d(x: &[f64], w: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let mut out = vec![0.0; g.batch * g.out_ch * oh * ow];
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let plane = &mut out[(b * g.out_ch + o) * oh * ow..(b * g.out_ch + o + 1) * oh * ow];
            plane.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..g.in_ch {
                let xin = &x[(b * g.in_ch + c) * g.in_h * g.in_w..(b * g.in_ch + c + 1) * g.in_h * g.in_w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((o * g.in_ch + c) * k + ky) * k + kx];
                        for oy in 0..oh {
                            let Some(iy) = g.src(oy, ky, g.in_h) else { continue };
                            for ox in 0..ow {
                                if let Some(ix) = g.src(ox, kx, g.in_w) {
                                    plane[oy * ow + ox] += wv * xin[iy * g.in_w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input, weight and bias gradients of [`conv2d`].
pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    mut gb: Option<&mut [f64]>,
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    for b in 0..g.batch {
        for o in 0..g.out_ch {
            let go = &grad_out[(b * g.out_ch + o) * oh * ow..(b * g.out_ch + o + 1) * oh * ow];
            if let Some(gb) = gb.as_deref_mut() {
                gb[o] += go.iter().sum::<f64>();
            }
            for c in 0..g.in_ch {
                let base = (b * g.in_ch + c) * g.in_h * g.in_w;
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((o * g.in_ch + c) * k + ky) * k + kx;
                        let wv = w[widx];
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let Some(iy) = g.src(oy, ky, g.in_h) else { continue };
                            for ox in 0..ow {
                                if let Some(ix) = g.src(ox, kx, g.in_w) {
                                    let gv = go[oy * ow + ox];
                                    let xi = base + iy * g.in_w + ix;
                                    acc += gv * x[xi];
                                    if let Some(gx) = gx.as_deref_mut() {
                                        gx[xi] += gv * wv;
                                    }
                                }
                            }
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits a shape around `axis` into `(outer, len, inner)`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Inclusive prefix sum along `axis` (forward when `reverse` is false).
pub fn cumsum(x: &[f64], shape: &[usize], axis: usize, reverse: bool) -> Vec<f64> {
    let (outer, len, inner) = axis_split(shape, axis);
    let mut out = x.to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |t: usize| (o * len + t) * inner + i;
            if reverse {
                for t in (0..len.saturating_sub(1)).rev() {
                    out[at(t)] += out[at(t + 1)];
                }
            } else {
                for t in 1..len {
                    out[at(t)] += out[at(t - 1)];
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] · [5; 6] = [17; 39]
        assert_eq!(matmul(&[1.0, 2.0, 3.0, 4.0], &[5.0, 6.0], 2, 2, 1), vec![17.0, 39.0]);
    }

    #[test]
    fn matmul_row_independent_of_batch() {
        let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).cos()).collect();
        let full = matmul(&a, &b, 3, 4, 2);
        for r in 0..3 {
            let single = matmul(&a[r * 4..(r + 1) * 4], &b, 1, 4, 2);
            assert_eq!(&full[r * 2..(r + 1) * 2], single.as_slice());
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let g = ConvGeom { batch: 1, in_ch: 1, in_h: 3, in_w: 4, out_ch: 1, kernel: 1, stride: 1, pad: 0 };
        assert_eq!(conv2d(&x, &[1.0], &[0.0], &g), x);
    }

    #[test]
    fn cumsum_forward_and_reverse() {
        let x = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        assert_eq!(cumsum(&x, &[2, 3], 1, false), vec![1.0, 3.0, 6.0, 10.0, 30.0, 60.0]);
        assert_eq!(cumsum(&x, &[2, 3], 1, true), vec![6.0, 5.0, 3.0, 60.0, 50.0, 30.0]);
        assert_eq!(cumsum(&x, &[2, 3], 0, false), vec![1.0, 2.0, 3.0, 11.0, 22.0, 33.0]);
    }
}
