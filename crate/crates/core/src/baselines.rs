//! Reference baseline and figure-data emitters used by the evaluation
//! harness: a mean-cross-entropy classifier sharing the embedding network's
//! architecture, optimizer and budget (only the loss differs), and
//! per-species mean log-likelihood maps for inspection.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::classifier::{TrainConfig, BF_LABEL};
use crate::error::{Error, Result};
use crate::oneclass::DetectionScore;
use crate::optim::Adam;
use crate::rng;

/// Same stack as the embedding network but with a single sigmoid output:
/// input -> hidden x4 (ReLU, dropout in training) -> 1.
#[derive(Debug, Clone)]
pub struct CeBaselineNetwork {
    pub layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    pub dropout: f64,
    pub weight_decay: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl CeBaselineNetwork {
    pub fn new(input_dim: usize, hidden: usize, dropout: f64, weight_decay: f64) -> Self {
        let layer_sizes = vec![input_dim, hidden, hidden, hidden, hidden, 1];
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_sizes.windows(2).map(|w| vec![0.0; w[1]]).collect();
        CeBaselineNetwork {
            layer_sizes,
            weights,
            biases,
            dropout,
            weight_decay,
        }
    }

    fn init(&mut self, seed: u64) {
        let mut rng = rng::stream(seed, "baseline-init");
        let bias_init = Normal::new(0.0, 0.05).unwrap();
        for li in 0..self.weights.len() {
            let fan_in = self.layer_sizes[li] as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
            for w in self.weights[li].iter_mut() {
                *w = normal.sample(&mut rng);
            }
            for b in self.biases[li].iter_mut() {
                *b = bias_init.sample(&mut rng);
            }
        }
    }

    /// Attack probability of one feature vector (inference mode).
    pub fn predict(&self, feature: &[f64]) -> Result<DetectionScore> {
        if feature.len() != self.layer_sizes[0] {
            return Err(Error::invalid("feature length does not match baseline input"));
        }
        let (z, _, _) = self.forward(feature, None);
        DetectionScore::new(sigmoid(z))
    }

    /// Returns (logit, per-layer inputs, per-layer dropout masks).
    #[allow(clippy::type_complexity)]
    fn forward(
        &self,
        feature: &[f64],
        mut dropout_rng: Option<&mut rand_chacha::ChaCha8Rng>,
    ) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n_layers = self.weights.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers - 1);
        let mut x = feature.to_vec();
        for li in 0..n_layers {
            inputs.push(x.clone());
            let (ind, outd) = (self.layer_sizes[li], self.layer_sizes[li + 1]);
            let mut z = vec![0.0; outd];
            for o in 0..outd {
                let mut acc = self.biases[li][o];
                for i in 0..ind {
                    acc += self.weights[li][o * ind + i] * x[i];
                }
                z[o] = acc;
            }
            if li + 1 < n_layers {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
                let mask: Vec<f64> = if let Some(rng) = dropout_rng.as_deref_mut() {
                    let keep = 1.0 - self.dropout;
                    z.iter()
                        .map(|_| if rng.gen::<f64>() < self.dropout { 0.0 } else { 1.0 / keep })
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
                return (z[0], inputs, masks);
            }
        }
        unreachable!("network has at least one layer");
    }

    /// Accumulate gradients of BCE(sigmoid(logit), target) for one sample.
    fn backward(
        &self,
        inputs: &[Vec<f64>],
        masks: &[Vec<f64>],
        logit: f64,
        target: f64,
        scale: f64,
        grads_w: &mut [Vec<f64>],
        grads_b: &mut [Vec<f64>],
    ) {
        // d BCE / d logit = sigmoid(logit) - target
        let mut grad = vec![(sigmoid(logit) - target) * scale];
        for li in (0..self.weights.len()).rev() {
            let (ind, outd) = (self.layer_sizes[li], self.layer_sizes[li + 1]);
            let input = &inputs[li];
            let mut grad_in = vec![0.0; ind];
            for o in 0..outd {
                let g = grad[o];
                if g != 0.0 {
                    grads_b[li][o] += g;
                    for i in 0..ind {
                        grads_w[li][o * ind + i] += g * input[i];
                        grad_in[i] += g * self.weights[li][o * ind + i];
                    }
                }
            }
            if li > 0 {
                for i in 0..ind {
                    grad_in[i] *= masks[li - 1][i];
                    if inputs[li][i] <= 0.0 {
                        grad_in[i] = 0.0;
                    }
                }
            }
            grad = grad_in;
        }
    }
}

/// Train the baseline with per-sample binary cross-entropy averaged over
/// each batch, identical sampler/optimizer/budget to the margin classifier.
pub fn train_baseline_ce(
    features: &[Vec<f64>],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(CeBaselineNetwork, Vec<f64>)> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::invalid("features and labels must be non-empty and aligned"));
    }
    let input_dim = features[0].len();
    let mut net = CeBaselineNetwork::new(input_dim, config.hidden, config.dropout, config.weight_decay);
    net.init(config.seed);

    let bf_pool: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l == BF_LABEL).then_some(i))
        .collect();
    let mut species: Vec<usize> = labels.iter().copied().filter(|&l| l != BF_LABEL).collect();
    species.sort_unstable();
    species.dedup();
    if bf_pool.is_empty() || species.is_empty() {
        return Err(Error::invalid("baseline needs bona-fide and attack samples"));
    }
    let pools: Vec<Vec<usize>> = species
        .iter()
        .map(|&s| {
            labels
                .iter()
                .enumerate()
                .filter_map(|(i, &l)| (l == s).then_some(i))
                .collect()
        })
        .collect();

    let mut rng = rng::stream(config.seed, "baseline-train");
    let steps_per_epoch = ((features.len() + config.batch_size - 1) / config.batch_size).max(1);
    let mut loss_trace = Vec::with_capacity(config.epochs);

    let mut adam_w: Vec<Adam> = net
        .weights
        .iter()
        .map(|w| Adam::new(config.learning_rate, w.len()))
        .collect();
    let mut adam_b: Vec<Adam> = net
        .biases
        .iter()
        .map(|b| Adam::new(config.learning_rate, b.len()))
        .collect();

    for _epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        for _step in 0..steps_per_epoch {
            // same balanced composition as the margin classifier's sampler
            let half = config.batch_size / 2;
            let mut batch: Vec<usize> = (0..half.max(1))
                .map(|_| bf_pool[rng.gen_range(0..bf_pool.len())])
                .collect();
            let attack_total = config.batch_size - half;
            let base = attack_total / pools.len();
            let extra = attack_total % pools.len();
            for (si, pool) in pools.iter().enumerate() {
                let quota = (base + usize::from(si < extra)).max(usize::from(pools.len() <= attack_total));
                for _ in 0..quota {
                    batch.push(pool[rng.gen_range(0..pool.len())]);
                }
            }

            let mut grads_w: Vec<Vec<f64>> = net.weights.iter().map(|w| vec![0.0; w.len()]).collect();
            let mut grads_b: Vec<Vec<f64>> = net.biases.iter().map(|b| vec![0.0; b.len()]).collect();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in &batch {
                let target = if labels[i] == BF_LABEL { 0.0 } else { 1.0 };
                let (logit, inputs, masks) = net.forward(&features[i], Some(&mut rng));
                let p = sigmoid(logit).clamp(1e-12, 1.0 - 1e-12);
                batch_loss -= (target * p.ln() + (1.0 - target) * (1.0 - p).ln()) * scale;
                net.backward(&inputs, &masks, logit, target, scale, &mut grads_w, &mut grads_b);
            }
            for li in 0..net.weights.len() {
                for (g, w) in grads_w[li].iter_mut().zip(&net.weights[li]) {
                    *g += 2.0 * config.weight_decay * w;
                }
                adam_w[li].update(&mut net.weights[li], &grads_w[li]);
                adam_b[li].update(&mut net.biases[li], &grads_b[li]);
            }
            epoch_loss += batch_loss;
        }
        loss_trace.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok((net, loss_trace))
}

/// Per-species mean of standardized temporal-average grids, collapsed over
/// the mixture channels into an H x W map for plotting.
pub fn species_mean_map(standardized_grids: &[Array3<f64>]) -> Result<Array2<f64>> {
    let first = standardized_grids
        .first()
        .ok_or_else(|| Error::invalid("no grids for species map"))?;
    let (h, w, ck) = first.dim();
    let mut map = Array2::<f64>::zeros((h, w));
    for grid in standardized_grids {
        if grid.dim() != (h, w, ck) {
            return Err(Error::invalid("grid shapes differ"));
        }
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for c in 0..ck {
                    acc += grid[(i, j, c)];
                }
                map[(i, j)] += acc / ck as f64;
            }
        }
    }
    map /= standardized_grids.len() as f64;
    Ok(map)
}

/// Serialize an H x W map as a TSV grid.
pub fn map_to_tsv(map: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in map.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join("\t"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Distribution;

    fn clusters(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = rng::stream(seed, "baseline-test");
        let normal = Normal::new(0.0, 0.2).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let center = if i < 15 { -1.0 } else { 1.0 };
            features.push(vec![
                center + normal.sample(&mut rng),
                center + normal.sample(&mut rng),
            ]);
            labels.push(usize::from(i >= 15));
        }
        (features, labels)
    }

    #[test]
    fn baseline_learns_separable_data() {
        let (features, labels) = clusters(3);
        let config = TrainConfig {
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: 16,
            hidden: 8,
            seed: 7,
            ..TrainConfig::default()
        };
        let (net, _) = train_baseline_ce(&features, &labels, &config).unwrap();
        // end-of-training loss in inference mode (dropout off)
        let mut bce = 0.0;
        for (f, &l) in features.iter().zip(&labels) {
            let p = net.predict(f).unwrap().value().clamp(1e-12, 1.0 - 1e-12);
            let target = if l == 0 { 0.0 } else { 1.0 };
            bce -= (target * p.ln() + (1.0 - target) * (1.0 - p).ln()) / features.len() as f64;
        }
        assert!(bce < 0.1, "final training loss {bce}");
        let bf: Vec<f64> = features[..15]
            .iter()
            .map(|f| net.predict(f).unwrap().value())
            .collect();
        let attack: Vec<f64> = features[15..]
            .iter()
            .map(|f| net.predict(f).unwrap().value())
            .collect();
        assert_eq!(crate::eval::eer(&bf, &attack).unwrap(), 0.0);
    }

    #[test]
    fn baseline_is_deterministic() {
        let (features, labels) = clusters(5);
        let config = TrainConfig {
            epochs: 10,
            batch_size: 8,
            hidden: 8,
            seed: 9,
            ..TrainConfig::default()
        };
        let (na, ta) = train_baseline_ce(&features, &labels, &config).unwrap();
        let (nb, tb) = train_baseline_ce(&features, &labels, &config).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(na.weights, nb.weights);
    }

    #[test]
    fn species_map_averages_channels_and_videos() {
        let mut a = Array3::zeros((2, 2, 3));
        let mut b = Array3::zeros((2, 2, 3));
        for c in 0..3 {
            a[(0, 0, c)] = 3.0;
            b[(0, 0, c)] = 1.0;
            a[(1, 1, c)] = -2.0;
            b[(1, 1, c)] = -4.0;
        }
        let map = species_mean_map(&[a, b]).unwrap();
        assert_eq!(map[(0, 0)], 2.0);
        assert_eq!(map[(1, 1)], -3.0);
        assert_eq!(map[(0, 1)], 0.0);

        let tsv = map_to_tsv(&map);
        assert_eq!(tsv.lines().count(), 2);
        assert!(tsv.starts_with("2\t0\n"));
    }

    #[test]
    fn empty_species_map_errors() {
        assert!(species_mean_map(&[]).is_err());
    }
}
