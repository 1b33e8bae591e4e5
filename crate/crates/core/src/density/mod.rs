//! Autoregressive pixel-density model: a small masked-convolution causal
//! network emitting a discretized logistic mixture per pixel and color
//! channel, fit on bona-fide frames only. Exposes per-pixel per-component
//! log-likelihoods and an aggregated frame log-likelihood; anything with
//! the same interface (e.g. a full-scale model) can stand in behind it.

pub mod conv;
pub mod io;
pub mod logistic;

use ndarray::{Array3, ArrayView3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng;
use conv::{MaskKind, MaskedConv};
use logistic::{log_sum_exp, softmax, Component};

pub const COLOR_CHANNELS: usize = 3;
/// Mixture parameters per color channel: K logits, K means, K log-scales.
const PARAM_GROUPS: usize = 3;

/// One RGB frame of 8-bit intensities, shape (H, W, 3).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub pixels: Array3<u8>,
}

impl Frame {
    pub fn new(pixels: Array3<u8>) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid("frame must be non-empty"));
        }
        if c != COLOR_CHANNELS {
            return Err(Error::invalid(format!(
                "frame must have {COLOR_CHANNELS} color channels, found {c}"
            )));
        }
        Ok(Frame { pixels })
    }

    pub fn constant(h: usize, w: usize, value: [u8; 3]) -> Self {
        let mut pixels = Array3::zeros((h, w, COLOR_CHANNELS));
        for i in 0..h {
            for j in 0..w {
                for c in 0..COLOR_CHANNELS {
                    pixels[(i, j, c)] = value[c];
                }
            }
        }
        Frame { pixels }
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    /// Pixels rescaled to [-1, 1] as network input.
    fn to_unit(&self) -> Array3<f64> {
        self.pixels.mapv(logistic::to_unit)
    }
}

/// Hyperparameters for density fitting.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DensityConfig {
    /// Logistic mixture components per color channel.
    pub k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Hidden channels of the causal network.
    pub hidden: usize,
    /// Odd kernel size of both masked convolutions.
    pub kernel: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            k: 2,
            epochs: 25,
            learning_rate: 5e-3,
            seed: 0,
            hidden: 16,
            kernel: 3,
        }
    }
}

/// Fitted causal pixel-density model. Immutable once fitted; likelihood
/// evaluation is a pure function and safe to call from many threads.
#[derive(Debug, Clone)]
pub struct DensityModel {
    pub height: usize,
    pub width: usize,
    pub k: usize,
    pub seed: u64,
    pub version: u32,
    conv1: MaskedConv,
    conv2: MaskedConv,
}

/// Per-pixel, per-component log-likelihood grid plus the aggregated frame
/// log-likelihood. Grid layout along the last axis: channel-major,
/// index = channel * K + component.
#[derive(Debug, Clone)]
pub struct PixelLogLikTensor {
    /// (H, W, 3K) per-component log bin probabilities (natural log, <= 0).
    pub grid: Array3<f64>,
    /// (H, W, 3K) mixture weights matching the grid layout.
    pub weights: Array3<f64>,
    /// Sum over pixels and channels of log of the weighted mixture.
    pub aggregate: f64,
}

impl PixelLogLikTensor {
    /// Recombine grid and weights into the aggregate; used to check
    /// consistency of the stored scalar.
    pub fn recompute_aggregate(&self) -> f64 {
        let (h, w, ck) = self.grid.dim();
        let k = ck / COLOR_CHANNELS;
        let mut total = 0.0;
        let mut terms = vec![0.0; k];
        for i in 0..h {
            for j in 0..w {
                for c in 0..COLOR_CHANNELS {
                    for kk in 0..k {
                        let idx = c * k + kk;
                        terms[kk] = self.weights[(i, j, idx)].ln() + self.grid[(i, j, idx)];
                    }
                    total += log_sum_exp(&terms);
                }
            }
        }
        total
    }
}

impl DensityModel {
    /// Untrained model: zero weights and biases, so every pixel/channel gets
    /// the same wide logistic mixture.
    pub fn untrained(height: usize, width: usize, config: &DensityConfig) -> Self {
        DensityModel {
            height,
            width,
            k: config.k,
            seed: config.seed,
            version: io::FORMAT_VERSION,
            conv1: MaskedConv::zeros(COLOR_CHANNELS, config.hidden, config.kernel, MaskKind::Strict),
            conv2: MaskedConv::zeros(
                config.hidden,
                PARAM_GROUPS * config.k * COLOR_CHANNELS,
                config.kernel,
                MaskKind::Center,
            ),
        }
    }

    fn init_weights(&mut self, rng_seed: u64) {
        let mut rng = rng::stream(rng_seed, "density-init");
        let normal = Normal::new(0.0, 0.05).unwrap();
        for w in self
            .conv1
            .weights
            .iter_mut()
            .chain(self.conv2.weights.iter_mut())
        {
            *w = normal.sample(&mut rng);
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }

    fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.height() != self.height || frame.width() != self.width {
            return Err(Error::invalid(format!(
                "frame size {}x{} does not match model {}x{}",
                frame.height(),
                frame.width(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    /// Raw mixture parameters for every pixel: (H, W, 9K) with groups
    /// [logits | means | log-scales], each group channel-major.
    fn forward_params(&self, input: &Array3<f64>) -> (Array3<f64>, Array3<f64>, Array3<f64>) {
        let z1 = self.conv1.forward(input);
        let a1 = z1.mapv(|v| v.max(0.0));
        let out = self.conv2.forward(&a1);
        (z1, a1, out)
    }

    #[inline]
    fn param_slices<'a>(
        out: &'a Array3<f64>,
        k: usize,
        i: usize,
        j: usize,
        c: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let base = c * k;
        let ck = COLOR_CHANNELS * k;
        let logits: Vec<f64> = (0..k).map(|kk| out[(i, j, base + kk)]).collect();
        let means: Vec<f64> = (0..k).map(|kk| out[(i, j, ck + base + kk)]).collect();
        let scales: Vec<f64> = (0..k).map(|kk| out[(i, j, 2 * ck + base + kk)]).collect();
        (logits, means, scales)
    }

    /// Per-pixel log-likelihood tensor and aggregated frame log-likelihood.
    pub fn per_pixel_loglik(&self, frame: &Frame) -> Result<PixelLogLikTensor> {
        self.check_frame(frame)?;
        let input = frame.to_unit();
        let (_, _, out) = self.forward_params(&input);
        let k = self.k;
        let mut grid = Array3::zeros((self.height, self.width, COLOR_CHANNELS * k));
        let mut weights = Array3::zeros((self.height, self.width, COLOR_CHANNELS * k));
        let mut aggregate = 0.0;
        let mut w = Vec::with_capacity(k);
        let mut terms = vec![0.0; k];
        for i in 0..self.height {
            for j in 0..self.width {
                for c in 0..COLOR_CHANNELS {
                    let (logits, means, scales) = Self::param_slices(&out, k, i, j, c);
                    softmax(&logits, &mut w);
                    let v = frame.pixels[(i, j, c)];
                    for kk in 0..k {
                        let comp = Component::new(means[kk], scales[kk]);
                        let lp = comp.log_prob(v);
                        grid[(i, j, c * k + kk)] = lp;
                        weights[(i, j, c * k + kk)] = w[kk];
                        terms[kk] = w[kk].ln() + lp;
                    }
                    aggregate += log_sum_exp(&terms);
                }
            }
        }
        Ok(PixelLogLikTensor {
            grid,
            weights,
            aggregate,
        })
    }

    /// Modeled probability of every intensity value at every pixel/channel,
    /// from a single forward pass. Outer index = (i * W + j) * 3 + c, inner
    /// vector has one probability per intensity 0..=255.
    pub fn value_distribution_grid(&self, frame: &Frame) -> Result<Vec<Vec<f64>>> {
        self.check_frame(frame)?;
        let input = frame.to_unit();
        let (_, _, out) = self.forward_params(&input);
        let mut dists = Vec::with_capacity(self.height * self.width * COLOR_CHANNELS);
        let mut w = Vec::with_capacity(self.k);
        for i in 0..self.height {
            for j in 0..self.width {
                for c in 0..COLOR_CHANNELS {
                    let (logits, means, scales) = Self::param_slices(&out, self.k, i, j, c);
                    softmax(&logits, &mut w);
                    let comps: Vec<Component> = (0..self.k)
                        .map(|kk| Component::new(means[kk], scales[kk]))
                        .collect();
                    let dist: Vec<f64> = (0..=255u8)
                        .map(|v| (0..self.k).map(|kk| w[kk] * comps[kk].prob(v)).sum())
                        .collect();
                    dists.push(dist);
                }
            }
        }
        Ok(dists)
    }

    /// Negative log-likelihood of one frame and its parameter gradients.
    fn nll_and_grads(&self, frame: &Frame, grads: &mut Gradients) -> f64 {
        let input = frame.to_unit();
        let (z1, a1, out) = self.forward_params(&input);
        let k = self.k;
        let ck = COLOR_CHANNELS * k;
        let mut grad_out = Array3::zeros(out.dim());
        let mut nll = 0.0;
        let mut w = Vec::with_capacity(k);
        for i in 0..self.height {
            for j in 0..self.width {
                for c in 0..COLOR_CHANNELS {
                    let (logits, means, scales) = Self::param_slices(&out, k, i, j, c);
                    softmax(&logits, &mut w);
                    let v = frame.pixels[(i, j, c)];
                    let comps: Vec<Component> = (0..k)
                        .map(|kk| Component::new(means[kk], scales[kk]))
                        .collect();
                    let probs: Vec<f64> = comps.iter().map(|comp| comp.prob(v)).collect();
                    let p: f64 = (0..k).map(|kk| w[kk] * probs[kk]).sum::<f64>().max(1e-30);
                    nll -= p.ln();
                    let base = c * k;
                    for kk in 0..k {
                        // d(-log p)/d logit_kk = w_kk (1 - P_kk / p)
                        grad_out[(i, j, base + kk)] = w[kk] * (1.0 - probs[kk] / p);
                        let (dp_dmean, dp_dscale) = comps[kk].prob_grad(v);
                        let coeff = -w[kk] / p;
                        grad_out[(i, j, ck + base + kk)] = coeff * dp_dmean;
                        grad_out[(i, j, 2 * ck + base + kk)] = if Component::clamped(scales[kk]) {
                            0.0
                        } else {
                            coeff * dp_dscale
                        };
                    }
                }
            }
        }
        let grad_a1 = self.conv2.backward(&a1, &grad_out, &mut grads.conv2_w, &mut grads.conv2_b);
        let mut grad_z1 = grad_a1;
        ndarray::Zip::from(&mut grad_z1).and(&z1).for_each(|g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        self.conv1
            .backward(&input, &grad_z1, &mut grads.conv1_w, &mut grads.conv1_b);
        nll
    }

    fn params_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.conv1.weights);
        p.extend_from_slice(&self.conv1.bias);
        p.extend_from_slice(&self.conv2.weights);
        p.extend_from_slice(&self.conv2.bias);
        p
    }

    fn set_params_flat(&mut self, p: &[f64]) {
        let mut off = 0;
        for dst in [
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
        ] {
            let len = dst.len();
            dst.copy_from_slice(&p[off..off + len]);
            off += len;
        }
        debug_assert_eq!(off, p.len());
    }
}

struct Gradients {
    conv1_w: Vec<f64>,
    conv1_b: Vec<f64>,
    conv2_w: Vec<f64>,
    conv2_b: Vec<f64>,
}

impl Gradients {
    fn zeros(model: &DensityModel) -> Self {
        Gradients {
            conv1_w: vec![0.0; model.conv1.weights.len()],
            conv1_b: vec![0.0; model.conv1.bias.len()],
            conv2_w: vec![0.0; model.conv2.weights.len()],
            conv2_b: vec![0.0; model.conv2.bias.len()],
        }
    }

    fn flat(&self) -> Vec<f64> {
        let mut g =
            Vec::with_capacity(self.conv1_w.len() + self.conv1_b.len() + self.conv2_w.len() + self.conv2_b.len());
        g.extend_from_slice(&self.conv1_w);
        g.extend_from_slice(&self.conv1_b);
        g.extend_from_slice(&self.conv2_w);
        g.extend_from_slice(&self.conv2_b);
        g
    }
}

fn check_same_dims(frames: &[&Frame]) -> Result<(usize, usize)> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("no training frames"))?;
    let dims = (first.height(), first.width());
    for f in frames {
        if (f.height(), f.width()) != dims {
            return Err(Error::invalid("inconsistent frame size"));
        }
    }
    Ok(dims)
}

/// Fit on a flat set of frames; each frame is treated as its own video.
pub fn fit_density(frames: &[Frame], config: &DensityConfig) -> Result<DensityModel> {
    let groups: Vec<Vec<&Frame>> = frames.iter().map(|f| vec![f]).collect();
    fit_density_grouped(&groups, config)
}

/// Fit with video structure: each inner slice is one video, and each epoch
/// consumes one randomly chosen frame per video.
pub fn fit_density_grouped(videos: &[Vec<&Frame>], config: &DensityConfig) -> Result<DensityModel> {
    let all: Vec<&Frame> = videos.iter().flatten().copied().collect();
    let (h, w) = check_same_dims(&all)?;
    if videos.iter().any(|v| v.is_empty()) {
        return Err(Error::invalid("no training frames"));
    }

    let mut model = DensityModel::untrained(h, w, config);
    model.init_weights(config.seed);

    let mut params = model.params_flat();
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut rng = rng::stream(config.seed, "density-fit");
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let norm = 1.0 / (h * w * COLOR_CHANNELS) as f64;

    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &vi in &order {
            let video = &videos[vi];
            let frame = video[rng.gen_range(0..video.len())];
            let mut grads = Gradients::zeros(&model);
            model.nll_and_grads(frame, &mut grads);
            let mut flat = grads.flat();
            for g in flat.iter_mut() {
                *g *= norm;
            }
            adam.update(&mut params, &flat);
            model.set_params_flat(&params);
        }
    }
    Ok(model)
}

/// Mean framewise aggregate log-likelihood of a video.
pub fn video_aggregate_loglik(model: &DensityModel, video: &[Frame]) -> Result<f64> {
    if video.is_empty() {
        return Err(Error::invalid("empty video"));
    }
    let mut total = 0.0;
    for frame in video {
        total += model.per_pixel_loglik(frame)?.aggregate;
    }
    Ok(total / video.len() as f64)
}

/// Mean aggregate log-likelihood over frames given precomputed tensors.
pub fn mean_aggregate(tensors: &[PixelLogLikTensor]) -> Result<f64> {
    if tensors.is_empty() {
        return Err(Error::invalid("empty video"));
    }
    Ok(tensors.iter().map(|t| t.aggregate).sum::<f64>() / tensors.len() as f64)
}

/// Convenience view of the grid for downstream shape checks.
pub fn grid_view(t: &PixelLogLikTensor) -> ArrayView3<'_, f64> {
    t.grid.view()
}

#[cfg(test)]
mod tests;
