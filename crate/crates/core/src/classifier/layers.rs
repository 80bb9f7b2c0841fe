//! Plain-loop kernels for the reference network. Activations are stored
//! channel-major: `[channel][row][col]`.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    /// Output columns `ox` whose tap `kx` lands inside the input row.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let ow = self.out_w();
        // ix = ox*stride + kx - pad ∈ [0, in_w)
        let lo = if kx >= self.pad { 0 } else { (self.pad - kx).div_ceil(self.stride) };
        let limit = (self.in_w + self.pad).saturating_sub(kx); // ox*stride < limit
        let hi = limit.div_ceil(self.stride).min(ow);
        (lo, hi.max(lo))
    }

    #[inline]
    fn iy(&self, oy: usize, ky: usize) -> Option<usize> {
        let v = oy * self.stride + ky;
        if v < self.pad || v - self.pad >= self.in_h {
            None
        } else {
            Some(v - self.pad)
        }
    }
}

pub fn conv2d_forward(s: &ConvShape, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (oh, ow) = (s.out_h(), s.out_w());
    let mut out = vec![0.0; s.out_channels * oh * ow];
    let k = s.kernel;
    for oc in 0..s.out_channels {
        let plane = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        plane.fill(bias[oc]);
        for ic in 0..s.in_channels {
            let src = &input[ic * s.in_h * s.in_w..(ic + 1) * s.in_h * s.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let w = weight[((oc * s.in_channels + ic) * k + ky) * k + kx];
                    let (lo, hi) = s.ox_range(kx);
                    for oy in 0..oh {
                        let Some(iy) = s.iy(oy, ky) else { continue };
                        let row = &src[iy * s.in_w..(iy + 1) * s.in_w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        if s.stride == 1 {
                            let off = kx as isize - s.pad as isize;
                            for ox in lo..hi {
                                dst[ox] += w * row[(ox as isize + off) as usize];
                            }
                        } else {
                            for ox in lo..hi {
                                dst[ox] += w * row[ox * s.stride + kx - s.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `need_input_grad` is set.
pub fn conv2d_backward(
    s: &ConvShape,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let (oh, ow) = (s.out_h(), s.out_w());
    let k = s.kernel;
    let mut grad_in = need_input_grad.then(|| vec![0.0; s.in_channels * s.in_h * s.in_w]);
    for oc in 0..s.out_channels {
        let g = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
        grad_bias[oc] += g.iter().sum::<f64>();
        for ic in 0..s.in_channels {
            let src = &input[ic * s.in_h * s.in_w..(ic + 1) * s.in_h * s.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((oc * s.in_channels + ic) * k + ky) * k + kx;
                    let w = weight[widx];
                    let (lo, hi) = s.ox_range(kx);
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let Some(iy) = s.iy(oy, ky) else { continue };
                        let row = &src[iy * s.in_w..(iy + 1) * s.in_w];
                        let grow = &g[oy * ow..(oy + 1) * ow];
                        for ox in lo..hi {
                            acc += grow[ox] * row[ox * s.stride + kx - s.pad];
                        }
                        if let Some(gi) = grad_in.as_mut() {
                            let base = ic * s.in_h * s.in_w + iy * s.in_w;
                            for ox in lo..hi {
                                gi[base + ox * s.stride + kx - s.pad] += w * grow[ox];
                            }
                        }
                    }
                    grad_weight[widx] += acc;
                }
            }
        }
    }
    grad_in
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` wherever the forward output was not positive.
pub fn relu_backward_inplace(output: &[f64], grad: &mut [f64]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 max pooling with stride 2; returns the pooled values and, per output,
/// the flat input index that won (first maximum on ties).
pub fn maxpool2_forward(input: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut arg = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(grad_out: &[f64], argmax: &[usize], input_len: usize) -> Vec<f64> {
    let mut grad = vec![0.0; input_len];
    for (&g, &i) in grad_out.iter().zip(argmax) {
        grad[i] += g;
    }
    grad
}

/// `y = W x + b` with `W` stored `[out][in]`.
pub fn linear_forward(weight: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + dot(&weight[o * n_in..(o + 1) * n_in], x))
        .collect()
}

pub fn linear_backward(
    weight: &[f64],
    x: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let n_in = x.len();
    let mut grad_in = need_input_grad.then(|| vec![0.0; n_in]);
    for (o, &g) in grad_out.iter().enumerate() {
        grad_bias[o] += g;
        if g == 0.0 {
            continue;
        }
        let gw = &mut grad_weight[o * n_in..(o + 1) * n_in];
        for (gwi, xi) in gw.iter_mut().zip(x) {
            *gwi += g * xi;
        }
        if let Some(gi) = grad_in.as_mut() {
            for (gii, wi) in gi.iter_mut().zip(&weight[o * n_in..(o + 1) * n_in]) {
                *gii += g * wi;
            }
        }
    }
    grad_in
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition: every output sums over the zero-padded window.
    fn conv_naive(s: &ConvShape, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let (oh, ow, k) = (s.out_h(), s.out_w(), s.kernel);
        let mut out = vec![0.0; s.out_channels * oh * ow];
        for oc in 0..s.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[oc];
                    for ic in 0..s.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                                let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                                if iy < 0 || ix < 0 || iy >= s.in_h as isize || ix >= s.in_w as isize {
                                    continue;
                                }
                                acc += weight[((oc * s.in_channels + ic) * k + ky) * k + kx]
                                    * input[(ic * s.in_h + iy as usize) * s.in_w + ix as usize];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed;
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_definition() {
        for s in [
            ConvShape { in_channels: 1, out_channels: 2, in_h: 17, in_w: 13, kernel: 7, stride: 4, pad: 3 },
            ConvShape { in_channels: 3, out_channels: 2, in_h: 8, in_w: 9, kernel: 5, stride: 1, pad: 2 },
            ConvShape { in_channels: 2, out_channels: 1, in_h: 6, in_w: 6, kernel: 3, stride: 2, pad: 0 },
        ] {
            let input = pseudo(s.in_channels * s.in_h * s.in_w, 1);
            let weight = pseudo(s.weight_len(), 2);
            let bias = pseudo(s.out_channels, 3);
            let fast = conv2d_forward(&s, &input, &weight, &bias);
            let slow = conv_naive(&s, &input, &weight, &bias);
            assert_eq!(fast.len(), slow.len());
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reference_shapes() {
        let c1 = ConvShape { in_channels: 1, out_channels: 8, in_h: 256, in_w: 256, kernel: 7, stride: 4, pad: 3 };
        assert_eq!((c1.out_h(), c1.out_w()), (64, 64));
        let c2 = ConvShape { in_channels: 8, out_channels: 16, in_h: 32, in_w: 32, kernel: 5, stride: 1, pad: 2 };
        assert_eq!((c2.out_h(), c2.out_w()), (32, 32));
    }

    #[test]
    fn maxpool_routes_gradient_to_winner() {
        let input = vec![1.0, 2.0, 3.0, 0.0, 5.0, 1.0, 1.0, 9.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let (out, arg) = maxpool2_forward(&input, 1, 4, 4);
        assert_eq!(out, vec![5.0, 9.0, 0.0, 0.0]);
        let g = maxpool2_backward(&[1.0, 2.0, 3.0, 4.0], &arg, 16);
        assert_eq!(g[4], 1.0);
        assert_eq!(g[7], 2.0);
        assert_eq!(g.iter().sum::<f64>(), 10.0);
    }
}
