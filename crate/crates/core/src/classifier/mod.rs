//! Discriminative detector: a fully-connected network embedding anomaly
//! features onto the unit hypersphere, trained with the categorical margin
//! maximization loss so the hardest attack species dominates each step.
//! Probes are scored by half their distance to the bona-fide centroid.

pub mod io;
pub mod loss;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::oneclass::DetectionScore;
use crate::optim::Adam;
use crate::rng;

pub use loss::{batch_centroids, cmarmax_loss, cmarmax_loss_grads, margin_ratio_term, BF_LABEL};

/// Training hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Exaggeration exponent; must be >= 1.
    pub exaggeration: f64,
    pub seed: u64,
    /// Width of the four hidden layers.
    pub hidden: usize,
    pub embed_dim: usize,
    pub dropout: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 100,
            exaggeration: 2.0,
            seed: 0,
            hidden: 64,
            embed_dim: 6,
            dropout: 0.5,
            weight_decay: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
struct Dense {
    in_dim: usize,
    out_dim: usize,
    /// Row-major out_dim x in_dim.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
    }
}

/// Fully-connected hypersphere embedding network:
/// input -> hidden x4 (ReLU, dropout in training) -> embed_dim -> L2 normalize.
#[derive(Debug, Clone)]
pub struct EmbeddingNetwork {
    pub layer_sizes: Vec<usize>,
    layers: Vec<Dense>,
    pub dropout: f64,
    pub weight_decay: f64,
}

/// Per-sample cache of one training-mode forward pass.
struct ForwardCache {
    /// activations entering each layer; index 0 is the input feature
    inputs: Vec<Vec<f64>>,
    /// pre-activation of each layer
    pre: Vec<Vec<f64>>,
    /// dropout multiplier per hidden layer (1/(1-p) kept, 0 dropped)
    masks: Vec<Vec<f64>>,
    /// pre-normalization output and its norm
    z_norm: f64,
    embedding: Vec<f64>,
}

impl EmbeddingNetwork {
    pub fn new(input_dim: usize, hidden: usize, embed_dim: usize, dropout: f64, weight_decay: f64) -> Self {
        let layer_sizes = vec![input_dim, hidden, hidden, hidden, hidden, embed_dim];
        let layers = layer_sizes
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        EmbeddingNetwork {
            layer_sizes,
            layers,
            dropout,
            weight_decay,
        }
    }

    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = rng::stream(seed, "clf-init");
        let bias_init = Normal::new(0.0, 0.05).unwrap();
        for layer in self.layers.iter_mut() {
            let std = (2.0 / layer.in_dim as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            for w in layer.weights.iter_mut() {
                *w = normal.sample(&mut rng);
            }
            // small random biases keep the pre-normalization output away
            // from zero even when a sample's hidden path goes fully dead
            for b in layer.bias.iter_mut() {
                *b = bias_init.sample(&mut rng);
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn embed_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, feature: &[f64]) -> Result<()> {
        if feature.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "feature length {} does not match network input {}",
                feature.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Deterministic inference embedding, always unit norm.
    pub fn embed(&self, feature: &[f64]) -> Result<Vec<f64>> {
        self.check_input(feature)?;
        Ok(self.forward_cached(feature, None).embedding)
    }

    /// Forward pass; with `dropout_rng` the hidden activations are dropped
    /// at the configured rate (training mode).
    fn forward_cached(&self, feature: &[f64], mut dropout_rng: Option<&mut ChaCha8Rng>) -> ForwardCache {
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers - 1);
        let mut x = feature.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            inputs.push(x.clone());
            let mut z = Vec::new();
            layer.forward(&x, &mut z);
            pre.push(z.clone());
            if li + 1 < n_layers {
                // hidden layer: ReLU then optional dropout
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
                let mask: Vec<f64> = if let Some(rng) = dropout_rng.as_deref_mut() {
                    let keep = 1.0 - self.dropout;
                    z.iter()
                        .map(|_| {
                            if rng.gen::<f64>() < self.dropout {
                                0.0
                            } else {
                                1.0 / keep
                            }
                        })
                        .collect()
                } else {
                    vec![1.0; z.len()]
                };
                for (v, m) in z.iter_mut().zip(&mask) {
                    *v *= m;
                }
                masks.push(mask);
                x = z;
            } else {
                x = z;
            }
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let embedding = if norm < 1e-12 {
            // degenerate output: deterministic fallback to the first axis
            let mut e = vec![0.0; x.len()];
            e[0] = 1.0;
            e
        } else {
            x.iter().map(|v| v / norm).collect()
        };
        ForwardCache {
            inputs,
            pre,
            masks,
            z_norm: norm,
            embedding,
        }
    }

    /// Backprop d(loss)/d(embedding) into parameter gradients.
    fn backward(
        &self,
        cache: &ForwardCache,
        grad_embedding: &[f64],
        grads: &mut [f64],
    ) {
        // through the L2 normalization: dz = (g - (g.e) e) / ||z||
        if cache.z_norm < 1e-12 {
            return;
        }
        let e = &cache.embedding;
        let dot: f64 = grad_embedding.iter().zip(e).map(|(a, b)| a * b).sum();
        let mut grad: Vec<f64> = grad_embedding
            .iter()
            .zip(e)
            .map(|(g, ei)| (g - dot * ei) / cache.z_norm)
            .collect();

        let mut offset = grads.len();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            offset -= layer.weights.len() + layer.bias.len();
            let (gw, gb) = grads[offset..offset + layer.weights.len() + layer.bias.len()]
                .split_at_mut(layer.weights.len());
            let input = &cache.inputs[li];
            let mut grad_in = vec![0.0; layer.in_dim];
            for o in 0..layer.out_dim {
                let g = grad[o];
                if g != 0.0 {
                    gb[o] += g;
                    let row = o * layer.in_dim;
                    for i in 0..layer.in_dim {
                        gw[row + i] += g * input[i];
                        grad_in[i] += g * layer.weights[row + i];
                    }
                }
            }
            if li > 0 {
                // through dropout and ReLU of the previous hidden layer
                let mask = &cache.masks[li - 1];
                let pre = &cache.pre[li - 1];
                for i in 0..grad_in.len() {
                    grad_in[i] *= mask[i];
                    if pre[i] <= 0.0 {
                        grad_in[i] = 0.0;
                    }
                }
            }
            grad = grad_in;
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            p.extend_from_slice(&layer.weights);
            p.extend_from_slice(&layer.bias);
        }
        p
    }

    pub fn set_params_flat(&mut self, p: &[f64]) {
        let mut off = 0;
        for layer in self.layers.iter_mut() {
            let wlen = layer.weights.len();
            layer.weights.copy_from_slice(&p[off..off + wlen]);
            off += wlen;
            let blen = layer.bias.len();
            layer.bias.copy_from_slice(&p[off..off + blen]);
            off += blen;
        }
        debug_assert_eq!(off, p.len());
    }

    /// Sum of squared weights (biases excluded) times the decay factor.
    fn decay_penalty(&self) -> f64 {
        let sq: f64 = self
            .layers
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
            .sum();
        self.weight_decay * sq
    }

    fn add_decay_grads(&self, grads: &mut [f64]) {
        let mut off = 0;
        for layer in &self.layers {
            for (g, w) in grads[off..off + layer.weights.len()].iter_mut().zip(&layer.weights) {
                *g += 2.0 * self.weight_decay * w;
            }
            off += layer.weights.len() + layer.bias.len();
        }
    }
}

/// Full objective (margin + center hinge + weight decay) on a batch, in
/// inference mode. This is the function the analytic gradients are checked
/// against.
pub fn objective_value(
    net: &EmbeddingNetwork,
    features: &[Vec<f64>],
    labels: &[usize],
    g: f64,
) -> Result<f64> {
    let embeddings: Vec<Vec<f64>> = features
        .iter()
        .map(|f| net.embed(f))
        .collect::<Result<_>>()?;
    let loss = cmarmax_loss(&embeddings, labels, g)?;
    Ok(loss.total + net.decay_penalty())
}

/// Analytic gradients of the full objective with respect to every network
/// parameter, flattened in parameter order.
pub fn objective_gradients(
    net: &EmbeddingNetwork,
    features: &[Vec<f64>],
    labels: &[usize],
    g: f64,
) -> Result<(f64, Vec<f64>)> {
    let caches: Vec<ForwardCache> = features
        .iter()
        .map(|f| {
            net.check_input(f)?;
            Ok(net.forward_cached(f, None))
        })
        .collect::<Result<_>>()?;
    let embeddings: Vec<Vec<f64>> = caches.iter().map(|c| c.embedding.clone()).collect();
    let (loss, emb_grads) = cmarmax_loss_grads(&embeddings, labels, g, true)?;
    let mut grads = vec![0.0; net.param_count()];
    for (cache, ge) in caches.iter().zip(&emb_grads) {
        net.backward(cache, ge, &mut grads);
    }
    net.add_decay_grads(&mut grads);
    Ok((loss.total + net.decay_penalty(), grads))
}

/// Mean of the validation bona-fide embeddings; deliberately not
/// renormalized, so its norm is at most 1.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BfReference {
    pub centroid: Vec<f64>,
}

impl BfReference {
    pub fn from_embeddings(embeddings: &[Vec<f64>]) -> Result<Self> {
        let first = embeddings
            .first()
            .ok_or_else(|| Error::invalid("no validation embeddings"))?;
        let mut centroid = vec![0.0; first.len()];
        for e in embeddings {
            for (c, v) in centroid.iter_mut().zip(e) {
                *c += v;
            }
        }
        for c in centroid.iter_mut() {
            *c /= embeddings.len() as f64;
        }
        Ok(BfReference { centroid })
    }
}

/// Attack probability of a probe: half its embedding's distance to the
/// bona-fide centroid.
pub fn score(net: &EmbeddingNetwork, reference: &BfReference, feature: &[f64]) -> Result<DetectionScore> {
    let e = net.embed(feature)?;
    let d = loss::euclidean(&e, &reference.centroid);
    DetectionScore::new((d / 2.0).clamp(0.0, 1.0))
}

/// Record of one training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Balanced batch sampler: half bona fide, half attacks split evenly
/// across species, sampled with repetition.
struct BalancedSampler {
    bf_pool: Vec<usize>,
    species_pools: Vec<Vec<usize>>,
    batch_size: usize,
}

impl BalancedSampler {
    fn new(labels: &[usize], batch_size: usize) -> Result<Self> {
        let bf_pool: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == BF_LABEL).then_some(i))
            .collect();
        let mut species: Vec<usize> = labels.iter().copied().filter(|&l| l != BF_LABEL).collect();
        species.sort_unstable();
        species.dedup();
        let species_pools: Vec<Vec<usize>> = species
            .iter()
            .map(|&s| {
                labels
                    .iter()
                    .enumerate()
                    .filter_map(|(i, &l)| (l == s).then_some(i))
                    .collect()
            })
            .collect();
        if bf_pool.is_empty() {
            return Err(Error::invalid("training set has no bona-fide samples"));
        }
        if species_pools.is_empty() {
            return Err(Error::invalid("training set has no attack species"));
        }
        if batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        Ok(BalancedSampler {
            bf_pool,
            species_pools,
            batch_size,
        })
    }

    /// One balanced batch of sample indices.
    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let half = self.batch_size / 2;
        let attack_total = self.batch_size - half;
        let s = self.species_pools.len();
        let mut batch = Vec::with_capacity(self.batch_size);
        for _ in 0..half.max(1) {
            batch.push(self.bf_pool[rng.gen_range(0..self.bf_pool.len())]);
        }
        // spread the attack half across species; earlier species absorb the
        // remainder so every batch has at least one attack
        let base = attack_total / s;
        let extra = attack_total % s;
        for (si, pool) in self.species_pools.iter().enumerate() {
            let quota = base + usize::from(si < extra);
            for _ in 0..quota.max(usize::from(s <= attack_total)) {
                batch.push(pool[rng.gen_range(0..pool.len())]);
            }
        }
        if batch.len() <= half {
            // batch too small to cover species; force one attack sample
            let pool = &self.species_pools[rng.gen_range(0..s)];
            batch.push(pool[rng.gen_range(0..pool.len())]);
        }
        batch
    }
}

/// Train the embedding network and derive the bona-fide reference from the
/// validation embeddings. Deterministic for a fixed config and seed.
pub fn train(
    features: &[Vec<f64>],
    labels: &[usize],
    validation_bf: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<(EmbeddingNetwork, BfReference, TrainReport)> {
    if features.len() != labels.len() {
        return Err(Error::invalid("features and labels must be aligned"));
    }
    if features.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if validation_bf.is_empty() {
        return Err(Error::invalid("no validation bona-fide features"));
    }
    if config.exaggeration < 1.0 {
        return Err(Error::invalid("exaggeration exponent must be >= 1"));
    }
    let input_dim = features[0].len();
    if features.iter().any(|f| f.len() != input_dim) {
        return Err(Error::invalid("feature lengths differ"));
    }

    let sampler = BalancedSampler::new(labels, config.batch_size)?;
    let mut net = EmbeddingNetwork::new(
        input_dim,
        config.hidden,
        config.embed_dim,
        config.dropout,
        config.weight_decay,
    );
    net.init_weights(config.seed);

    let mut params = net.params_flat();
    let mut adam = Adam::new(config.learning_rate, params.len());
    let mut rng = rng::stream(config.seed, "clf-train");
    let steps_per_epoch = (features.len() + config.batch_size - 1) / config.batch_size;
    let steps_per_epoch = steps_per_epoch.max(1);

    let mut loss_trace = Vec::with_capacity(config.epochs);
    for _epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for _step in 0..steps_per_epoch {
            let batch = sampler.sample(&mut rng);
            let caches: Vec<ForwardCache> = batch
                .iter()
                .map(|&i| net.forward_cached(&features[i], Some(&mut rng)))
                .collect();
            let embeddings: Vec<Vec<f64>> = caches.iter().map(|c| c.embedding.clone()).collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, emb_grads) =
                cmarmax_loss_grads(&embeddings, &batch_labels, config.exaggeration, true)?;
            let mut grads = vec![0.0; params.len()];
            for (cache, ge) in caches.iter().zip(&emb_grads) {
                net.backward(cache, ge, &mut grads);
            }
            net.add_decay_grads(&mut grads);
            adam.update(&mut params, &grads);
            net.set_params_flat(&params);
            epoch_loss += loss.total;
        }
        loss_trace.push(epoch_loss / steps_per_epoch as f64);
    }

    let val_embeddings: Vec<Vec<f64>> = validation_bf
        .iter()
        .map(|f| net.embed(f))
        .collect::<Result<_>>()?;
    let reference = BfReference::from_embeddings(&val_embeddings)?;
    Ok((net, reference, TrainReport { loss_trace }))
}

/// Shuffle helper shared by protocol code; seeded and deterministic.
pub fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

#[cfg(test)]
mod tests;
