use super::*;
use rand::Rng;

fn gaussian_cluster(
    center: &[f64],
    spread: f64,
    n: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, spread).unwrap();
    (0..n)
        .map(|_| center.iter().map(|&c| c + normal.sample(rng)).collect())
        .collect()
}

#[test]
fn embeddings_are_unit_norm() {
    let mut net = EmbeddingNetwork::new(5, 8, 4, 0.5, 1e-6);
    net.init_weights(3);
    let mut rng = crate::rng::stream(3, "norm-test");
    for _ in 0..50 {
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let e = net.embed(&x).unwrap();
        let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zero_weight_network_embeds_output_bias() {
    let mut net = EmbeddingNetwork::new(3, 4, 2, 0.0, 0.0);
    let mut params = vec![0.0; net.param_count()];
    // the last two entries are the output layer bias
    let n = params.len();
    params[n - 2] = 0.6;
    params[n - 1] = -0.8;
    net.set_params_flat(&params);
    let e = net.embed(&[1.0, 2.0, 3.0]).unwrap();
    assert!((e[0] - 0.6).abs() < 1e-12);
    assert!((e[1] + 0.8).abs() < 1e-12);
}

#[test]
fn degenerate_zero_output_falls_back_to_first_axis() {
    let net = EmbeddingNetwork::new(3, 4, 2, 0.0, 0.0);
    // all parameters zero: pre-normalization output is exactly zero
    let e = net.embed(&[1.0, 1.0, 1.0]).unwrap();
    assert_eq!(e, vec![1.0, 0.0]);
}

#[test]
fn forward_matches_naive_matrix_multiply_oracle() {
    let mut net = EmbeddingNetwork::new(4, 5, 3, 0.0, 0.0);
    net.init_weights(17);
    let params = net.params_flat();
    let sizes = net.layer_sizes.clone();
    let x = vec![0.3, -1.2, 0.5, 2.0];

    // independent recomputation from the flat parameter layout
    let mut offset = 0;
    let mut h = x.clone();
    for li in 0..sizes.len() - 1 {
        let (ind, outd) = (sizes[li], sizes[li + 1]);
        let w = &params[offset..offset + ind * outd];
        offset += ind * outd;
        let b = &params[offset..offset + outd];
        offset += outd;
        let mut next = vec![0.0; outd];
        for (o, nv) in next.iter_mut().enumerate() {
            let mut acc = b[o];
            for i in 0..ind {
                acc += w[o * ind + i] * h[i];
            }
            *nv = acc;
        }
        if li + 2 < sizes.len() {
            for v in next.iter_mut() {
                *v = v.max(0.0);
            }
        }
        h = next;
    }
    let norm: f64 = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let oracle: Vec<f64> = h.iter().map(|v| v / norm).collect();

    let e = net.embed(&x).unwrap();
    for (a, b) in e.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6);
    }
}

fn fd_check(net: &EmbeddingNetwork, features: &[Vec<f64>], labels: &[usize], g: f64) {
    let (_, analytic) = objective_gradients(net, features, labels, g).unwrap();
    let params = net.params_flat();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for pi in 0..params.len() {
        let mut up = net.clone();
        let mut p = params.clone();
        p[pi] += eps;
        up.set_params_flat(&p);
        let mut down = net.clone();
        p[pi] = params[pi] - eps;
        down.set_params_flat(&p);
        let num = (objective_value(&up, features, labels, g).unwrap()
            - objective_value(&down, features, labels, g).unwrap())
            / (2.0 * eps);
        let a = analytic[pi];
        let denom = a.abs().max(num.abs());
        let err = if denom < 1e-4 {
            // both effectively zero: absolute comparison
            (a - num).abs() / 1e-4
        } else {
            (a - num).abs() / denom
        };
        worst = worst.max(err);
        assert!(
            err < 1e-4,
            "param {pi}: analytic {a} vs numeric {num} (rel {err:.2e})"
        );
    }
    assert!(worst < 1e-4);
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = crate::rng::stream(111, "gradcheck");
    for trial in 0..3 {
        let mut net = EmbeddingNetwork::new(4, 5, 3, 0.0, 1e-4);
        net.init_weights(100 + trial);
        // >= 3 members per class keeps max/min away from built-in ties
        let features: Vec<Vec<f64>> = (0..9)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let labels = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
        fd_check(&net, &features, &labels, 2.0);
    }
}

#[test]
fn gradients_vanish_at_exact_minimum() {
    // engineer a network output that puts every class exactly on its own
    // orthogonal center: zero weights, per-sample bias unreachable, so use
    // single-sample classes through the bias path
    let mut net = EmbeddingNetwork::new(2, 4, 3, 0.0, 0.0);
    let mut params = vec![0.0; net.param_count()];
    let n = params.len();
    params[n - 3] = 1.0; // output bias -> embedding (1, 0, 0) for любой input
    net.set_params_flat(&params);
    // all samples embed to (1,0,0): d_p = 0 for both classes, but the
    // centers coincide, so only the hinge is active -> test with weight
    // decay zero and verify the margin gradient part is finite
    let features = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
    let labels = vec![0, 1];
    let (value, grads) = objective_gradients(&net, &features, &labels, 2.0).unwrap();
    // margin is zero; hinge is at its maximum but d == 0 passes no gradient
    assert!((value - 0.1 * std::f64::consts::SQRT_2).abs() < 1e-12);
    assert!(grads.iter().all(|&v| v == 0.0));
}

#[test]
fn zero_loss_configuration_has_zero_gradients() {
    // two inputs mapped to orthogonal embeddings via a crafted linear layer
    let mut net = EmbeddingNetwork::new(2, 4, 2, 0.0, 0.0);
    net.init_weights(7);
    let features = vec![vec![5.0, 0.0], vec![0.0, 5.0]];
    let labels = vec![0, 1];
    // train briefly toward separation, then check the analytic gradient at a
    // synthetic perfect configuration instead: anchors at own centers and
    // centers >= sqrt(2) apart means loss 0 and zero gradients
    let embeddings = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let (loss, grads) = cmarmax_loss_grads(&embeddings, &labels, 2.0, true).unwrap();
    assert_eq!(loss.total, 0.0);
    assert!(grads.iter().flatten().all(|&v| v == 0.0));
    let _ = (net, features);
}

#[test]
fn weight_decay_gradient_is_linear_in_factor() {
    let mut rng = crate::rng::stream(131, "decay");
    let features: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let labels = vec![0, 0, 1, 1, 2, 2];
    let mut net0 = EmbeddingNetwork::new(3, 4, 2, 0.0, 0.0);
    net0.init_weights(9);
    let mut net1 = net0.clone();
    net1.weight_decay = 1e-3;
    let mut net2 = net0.clone();
    net2.weight_decay = 2e-3;

    let (_, g0) = objective_gradients(&net0, &features, &labels, 2.0).unwrap();
    let (_, g1) = objective_gradients(&net1, &features, &labels, 2.0).unwrap();
    let (_, g2) = objective_gradients(&net2, &features, &labels, 2.0).unwrap();
    for i in 0..g0.len() {
        let d1 = g1[i] - g0[i];
        let d2 = g2[i] - g1[i];
        assert!(
            (d1 - d2).abs() <= 1e-12 * (1.0 + d1.abs()),
            "decay increment not linear at {i}: {d1} vs {d2}"
        );
    }
}

#[test]
fn training_separates_linearly_separable_classes() {
    let mut rng = crate::rng::stream(137, "separable");
    let bf = gaussian_cluster(&[-1.0, -1.0, 0.0, 0.5], 0.15, 40, &mut rng);
    let attack = gaussian_cluster(&[1.0, 1.0, 0.3, -0.5], 0.15, 40, &mut rng);
    let mut features = bf.clone();
    features.extend(attack.clone());
    let mut labels = vec![0usize; 40];
    labels.extend(vec![1usize; 40]);

    let config = TrainConfig {
        epochs: 50,
        batch_size: 32,
        hidden: 16,
        embed_dim: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let (net, reference, _) = train(&features, &labels, &bf, &config).unwrap();

    let bf_scores: Vec<f64> = bf.iter().map(|f| score(&net, &reference, f).unwrap().value()).collect();
    let attack_scores: Vec<f64> = attack
        .iter()
        .map(|f| score(&net, &reference, f).unwrap().value())
        .collect();
    let eer = crate::eval::eer(&bf_scores, &attack_scores).unwrap();
    assert_eq!(eer, 0.0, "separable classes should reach zero EER");
}

#[test]
fn higher_exaggeration_focuses_on_the_hard_species() {
    // one species is separable only with effort; the exponent decides how
    // much of the gradient budget it receives, so paired runs should favor
    // g=2 on its worst-class geometry in the majority of seeds
    let mut rng = crate::rng::stream(139, "emphasis");
    let bf = gaussian_cluster(&[0.0, 0.0, 0.0], 0.2, 40, &mut rng);
    let easy1 = gaussian_cluster(&[2.0, 0.0, 0.0], 0.2, 20, &mut rng);
    let easy2 = gaussian_cluster(&[0.0, 2.0, 0.0], 0.2, 20, &mut rng);
    let hard = gaussian_cluster(&[0.8, 0.8, 0.3], 0.25, 20, &mut rng);

    let mut features = bf.clone();
    features.extend(easy1);
    features.extend(easy2);
    features.extend(hard);
    let mut labels = vec![0usize; 40];
    labels.extend(vec![1usize; 20]);
    labels.extend(vec![2usize; 20]);
    labels.extend(vec![3usize; 20]);

    let worst_ratio = |g: f64, seed: u64| -> f64 {
        let config = TrainConfig {
            epochs: 100,
            batch_size: 32,
            hidden: 16,
            embed_dim: 4,
            seed,
            exaggeration: g,
            ..TrainConfig::default()
        };
        let (net, _, _) = train(&features, &labels, &bf, &config).unwrap();
        let embeddings: Vec<Vec<f64>> = features.iter().map(|f| net.embed(f).unwrap()).collect();
        let loss = cmarmax_loss(&embeddings, &labels, 2.0).unwrap();
        loss.class_ratios
            .iter()
            .filter(|(label, _)| *label != BF_LABEL)
            .map(|&(_, r)| r)
            .fold(0.0, f64::max)
    };

    let mut wins = 0;
    for seed in [11, 12, 13] {
        if worst_ratio(2.0, seed) <= worst_ratio(1.0, seed) + 1e-9 {
            wins += 1;
        }
    }
    assert!(wins >= 2, "g=2 should win on most paired seeds, won {wins}/3");
}

#[test]
fn training_is_deterministic() {
    let mut rng = crate::rng::stream(149, "det-train");
    let bf = gaussian_cluster(&[0.0, 0.0], 0.3, 20, &mut rng);
    let attack = gaussian_cluster(&[1.5, 1.5], 0.3, 20, &mut rng);
    let mut features = bf.clone();
    features.extend(attack);
    let mut labels = vec![0usize; 20];
    labels.extend(vec![1usize; 20]);
    let config = TrainConfig {
        epochs: 10,
        batch_size: 16,
        hidden: 8,
        embed_dim: 3,
        seed: 21,
        ..TrainConfig::default()
    };
    let (na, ra, ta) = train(&features, &labels, &bf, &config).unwrap();
    let (nb, rb, tb) = train(&features, &labels, &bf, &config).unwrap();
    assert_eq!(ta.loss_trace, tb.loss_trace);
    assert_eq!(na.params_flat(), nb.params_flat());
    assert_eq!(ra.centroid, rb.centroid);
}

#[test]
fn embedding_norm_holds_after_training_steps() {
    let mut rng = crate::rng::stream(151, "norm-after");
    let bf = gaussian_cluster(&[0.0, 1.0], 0.4, 15, &mut rng);
    let attack = gaussian_cluster(&[1.0, 0.0], 0.4, 15, &mut rng);
    let mut features = bf.clone();
    features.extend(attack);
    let mut labels = vec![0usize; 15];
    labels.extend(vec![1usize; 15]);
    let config = TrainConfig {
        epochs: 5,
        batch_size: 8,
        hidden: 8,
        embed_dim: 3,
        seed: 23,
        ..TrainConfig::default()
    };
    let (net, _, _) = train(&features, &labels, &bf, &config).unwrap();
    for f in &features {
        let e = net.embed(f).unwrap();
        let norm: f64 = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}

#[test]
fn score_trivial_cases() {
    let mut net = EmbeddingNetwork::new(2, 4, 3, 0.0, 0.0);
    let mut params = vec![0.0; net.param_count()];
    let n = params.len();
    params[n - 3] = 1.0; // every input embeds to (1, 0, 0)
    net.set_params_flat(&params);

    // centroid on the sphere equal to the embedding: distance 0
    let same = BfReference {
        centroid: vec![1.0, 0.0, 0.0],
    };
    assert_eq!(score(&net, &same, &[0.3, 0.4]).unwrap().value(), 0.0);

    // antipodal unit centroid: distance 2, score 1
    let anti = BfReference {
        centroid: vec![-1.0, 0.0, 0.0],
    };
    assert_eq!(score(&net, &anti, &[0.3, 0.4]).unwrap().value(), 1.0);

    // random case: halved distance
    let r = BfReference {
        centroid: vec![0.2, -0.1, 0.4],
    };
    let e = vec![1.0, 0.0, 0.0];
    let d = loss::euclidean(&e, &r.centroid);
    assert!((score(&net, &r, &[9.9, -3.0]).unwrap().value() - d / 2.0).abs() < 1e-12);
}

#[test]
fn bf_reference_norm_is_at_most_one() {
    let embeddings = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
    let r = BfReference::from_embeddings(&embeddings).unwrap();
    let norm: f64 = r.centroid.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm <= 1.0 + 1e-9);
    assert!(BfReference::from_embeddings(&[]).is_err());
}

#[test]
fn sampler_always_mixes_classes() {
    let labels = vec![0, 0, 0, 1, 2, 2];
    let sampler = BalancedSampler::new(&labels, 8).unwrap();
    let mut rng = crate::rng::stream(157, "sampler");
    for _ in 0..50 {
        let batch = sampler.sample(&mut rng);
        let has_bf = batch.iter().any(|&i| labels[i] == 0);
        let has_attack = batch.iter().any(|&i| labels[i] != 0);
        assert!(has_bf && has_attack);
        // roughly half bona fide
        let bf_count = batch.iter().filter(|&&i| labels[i] == 0).count();
        assert!(bf_count * 2 >= batch.len() - 2);
    }
    assert!(BalancedSampler::new(&[0, 0], 8).is_err());
    assert!(BalancedSampler::new(&[1, 1], 8).is_err());
}

#[test]
fn save_load_roundtrip() {
    let mut net = EmbeddingNetwork::new(4, 8, 3, 0.5, 1e-6);
    net.init_weights(31);
    let reference = BfReference {
        centroid: vec![0.1, 0.2, -0.3],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clf.network");
    io::save(&net, &reference, &path).unwrap();
    let (loaded, ref2) = io::load(&path).unwrap();
    assert_eq!(loaded.layer_sizes, net.layer_sizes);
    for (a, b) in reference.centroid.iter().zip(&ref2.centroid) {
        assert!((a - b).abs() < 1e-6);
    }
    let x = vec![0.5, -0.5, 1.0, 0.0];
    let ea = net.embed(&x).unwrap();
    let eb = loaded.embed(&x).unwrap();
    for (a, b) in ea.iter().zip(&eb) {
        assert!((a - b).abs() < 1e-4);
    }
}
