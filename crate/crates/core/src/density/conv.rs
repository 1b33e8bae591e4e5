//! Masked 2-D convolutions for raster-order causal prediction. Masked taps
//! are never visited, so a pixel's output is bit-for-bit independent of
//! anything at or after it in raster order (depending on the mask kind).

use ndarray::Array3;

/// Which taps of a centered k x k kernel are visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Strictly before the center in raster order (first layer: the pixel
    /// itself must stay hidden).
    Strict,
    /// At or before the center (later layers: the center now carries only
    /// already-causal features).
    Center,
}

/// Tap offsets for a kernel of odd size under a mask, in row-major order.
pub fn taps(kernel: usize, kind: MaskKind) -> Vec<(i64, i64)> {
    assert!(kernel % 2 == 1, "kernel size must be odd");
    let r = (kernel / 2) as i64;
    let mut out = Vec::new();
    for di in -r..=r {
        for dj in -r..=r {
            let visible = match kind {
                MaskKind::Strict => di < 0 || (di == 0 && dj < 0),
                MaskKind::Center => di < 0 || (di == 0 && dj <= 0),
            };
            if visible {
                out.push((di, dj));
            }
        }
    }
    out
}

/// One masked convolution layer with zero padding.
#[derive(Debug, Clone)]
pub struct MaskedConv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub taps: Vec<(i64, i64)>,
    /// weights[oc][ic][tap]
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl MaskedConv {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, kind: MaskKind) -> Self {
        let taps = taps(kernel, kind);
        MaskedConv {
            in_channels,
            out_channels,
            weights: vec![0.0; out_channels * in_channels * taps.len()],
            bias: vec![0.0; out_channels],
            taps,
        }
    }

    #[inline]
    fn w_index(&self, oc: usize, ic: usize, tap: usize) -> usize {
        (oc * self.in_channels + ic) * self.taps.len() + tap
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// input (H, W, in_channels) -> output (H, W, out_channels).
    pub fn forward(&self, input: &Array3<f64>) -> Array3<f64> {
        let (h, w, _) = input.dim();
        let mut out = Array3::zeros((h, w, self.out_channels));
        for i in 0..h {
            for j in 0..w {
                for oc in 0..self.out_channels {
                    let mut acc = self.bias[oc];
                    for (t, &(di, dj)) in self.taps.iter().enumerate() {
                        let si = i as i64 + di;
                        let sj = j as i64 + dj;
                        if si < 0 || sj < 0 || si >= h as i64 || sj >= w as i64 {
                            continue;
                        }
                        for ic in 0..self.in_channels {
                            acc += self.weights[self.w_index(oc, ic, t)]
                                * input[(si as usize, sj as usize, ic)];
                        }
                    }
                    out[(i, j, oc)] = acc;
                }
            }
        }
        out
    }

    /// Backprop: given d(loss)/d(output), accumulate weight/bias gradients
    /// and return d(loss)/d(input).
    pub fn backward(
        &self,
        input: &Array3<f64>,
        grad_out: &Array3<f64>,
        grad_weights: &mut [f64],
        grad_bias: &mut [f64],
    ) -> Array3<f64> {
        let (h, w, _) = input.dim();
        let mut grad_in = Array3::zeros(input.dim());
        for i in 0..h {
            for j in 0..w {
                for oc in 0..self.out_channels {
                    let g = grad_out[(i, j, oc)];
                    if g == 0.0 {
                        continue;
                    }
                    grad_bias[oc] += g;
                    for (t, &(di, dj)) in self.taps.iter().enumerate() {
                        let si = i as i64 + di;
                        let sj = j as i64 + dj;
                        if si < 0 || sj < 0 || si >= h as i64 || sj >= w as i64 {
                            continue;
                        }
                        let (si, sj) = (si as usize, sj as usize);
                        for ic in 0..self.in_channels {
                            let wi = self.w_index(oc, ic, t);
                            grad_weights[wi] += g * input[(si, sj, ic)];
                            grad_in[(si, sj, ic)] += g * self.weights[wi];
                        }
                    }
                }
            }
        }
        grad_in
    }
}
