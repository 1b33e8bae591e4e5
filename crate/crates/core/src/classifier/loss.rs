//! Categorical margin maximization loss. Each class contributes the ratio
//! of its worst positive distance to the sum of that and its best negative
//! distance, exponentiated to emphasize the hardest class; a hinge keeps
//! every attack-species center at least sqrt(2) from the bona-fide center.
//! Distances between two attack species never enter the loss.

use crate::error::{Error, Result};

/// Class label: 0 is bona fide, anything else is an attack species.
pub const BF_LABEL: usize = 0;

/// Weight of the center-separation hinge in the total loss.
pub const CENTER_LOSS_WEIGHT: f64 = 0.1;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Per-class margin term (d_p_max / (d_p_max + d_n_min))^g.
pub fn margin_ratio_term(max_dp: f64, min_dn: f64, g: f64) -> f64 {
    let denom = max_dp + min_dn;
    if denom == 0.0 {
        return 0.0;
    }
    (max_dp / denom).powf(g)
}

/// Per-class centers on the unit hypersphere.
#[derive(Debug, Clone)]
pub struct Centroids {
    /// Sorted distinct labels present in the batch.
    pub classes: Vec<usize>,
    /// Unit-norm center per class, aligned with `classes`.
    pub centers: Vec<Vec<f64>>,
    /// True where the class mean was zero and the first member's direction
    /// was used instead.
    pub degenerate: Vec<bool>,
    /// Member indices per class, aligned with `classes`.
    pub members: Vec<Vec<usize>>,
    /// Unnormalized mean norms, needed for gradient flow.
    mean_norms: Vec<f64>,
}

impl Centroids {
    pub fn class_index(&self, label: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == label)
    }
}

/// Mean of each class's embeddings renormalized to the sphere. A zero mean
/// (antipodal members) falls back to the first member's direction and is
/// flagged.
pub fn batch_centroids(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<Centroids> {
    if embeddings.is_empty() || embeddings.len() != labels.len() {
        return Err(Error::invalid("embeddings and labels must be non-empty and aligned"));
    }
    let dim = embeddings[0].len();
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();

    let mut centers = Vec::with_capacity(classes.len());
    let mut degenerate = Vec::with_capacity(classes.len());
    let mut members_per_class = Vec::with_capacity(classes.len());
    let mut mean_norms = Vec::with_capacity(classes.len());
    for &class in &classes {
        let members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == class).then_some(i))
            .collect();
        let mut mean = vec![0.0; dim];
        for &i in &members {
            for (m, v) in mean.iter_mut().zip(&embeddings[i]) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= members.len() as f64;
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            centers.push(embeddings[members[0]].clone());
            degenerate.push(true);
            mean_norms.push(0.0);
        } else {
            centers.push(mean.iter().map(|v| v / norm).collect());
            degenerate.push(false);
            mean_norms.push(norm);
        }
        members_per_class.push(members);
    }
    Ok(Centroids {
        classes,
        centers,
        degenerate,
        members: members_per_class,
        mean_norms,
    })
}

/// Value breakdown of one loss evaluation.
#[derive(Debug, Clone)]
pub struct LossBreakdown {
    pub total: f64,
    pub margin: f64,
    pub center: f64,
    /// (label, margin term) per present class.
    pub class_terms: Vec<(usize, f64)>,
    /// (label, un-exponentiated ratio) per present class.
    pub class_ratios: Vec<(usize, f64)>,
}

struct ClassGeometry {
    /// (anchor index, distance) attaining max d_p; ties keep the lowest index.
    max_dp: (usize, f64),
    /// (anchor index, negative-center class slot, distance) attaining min d_n.
    min_dn: (usize, usize, f64),
}

fn class_geometry(
    class_slot: usize,
    centroids: &Centroids,
    embeddings: &[Vec<f64>],
    bf_slot: usize,
) -> ClassGeometry {
    let members = &centroids.members[class_slot];
    let own_center = &centroids.centers[class_slot];
    let mut max_dp = (members[0], f64::NEG_INFINITY);
    for &a in members {
        let d = euclidean(&embeddings[a], own_center);
        if d > max_dp.1 {
            max_dp = (a, d);
        }
    }
    let is_bf = class_slot == bf_slot;
    let mut min_dn = (members[0], usize::MAX, f64::INFINITY);
    for &a in members {
        if is_bf {
            // bona-fide anchors measure against every attack-species center
            for (slot, center) in centroids.centers.iter().enumerate() {
                if slot == bf_slot {
                    continue;
                }
                let d = euclidean(&embeddings[a], center);
                if d < min_dn.2 {
                    min_dn = (a, slot, d);
                }
            }
        } else {
            let d = euclidean(&embeddings[a], &centroids.centers[bf_slot]);
            if d < min_dn.2 {
                min_dn = (a, bf_slot, d);
            }
        }
    }
    ClassGeometry { max_dp, min_dn }
}

/// Loss value for a batch of unit embeddings.
pub fn cmarmax_loss(embeddings: &[Vec<f64>], labels: &[usize], g: f64) -> Result<LossBreakdown> {
    let (value, _) = cmarmax_loss_grads(embeddings, labels, g, false)?;
    Ok(value)
}

/// Loss and its gradients with respect to every embedding. Max/min pick a
/// single attaining element (lowest index on ties); the hinge contributes
/// gradient only when strictly active; a zero distance or a degenerate
/// centroid passes no gradient.
pub fn cmarmax_loss_grads(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    g: f64,
    want_grads: bool,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    if g < 1.0 {
        return Err(Error::invalid("exaggeration exponent must be >= 1"));
    }
    let centroids = batch_centroids(embeddings, labels)?;
    let bf_slot = centroids
        .class_index(BF_LABEL)
        .ok_or_else(|| Error::invalid("batch has no bona-fide samples"))?;
    if centroids.classes.len() < 2 {
        return Err(Error::invalid("batch has no attack samples"));
    }

    let dim = embeddings[0].len();
    let n_classes = centroids.classes.len();
    let n_species = n_classes - 1;
    let mut grads = vec![vec![0.0; dim]; embeddings.len()];
    // gradient with respect to each centroid, backpropagated at the end
    let mut center_grads = vec![vec![0.0; dim]; n_classes];

    let mut margin = 0.0;
    let mut class_terms = Vec::with_capacity(n_classes);
    let mut class_ratios = Vec::with_capacity(n_classes);
    for slot in 0..n_classes {
        let geo = class_geometry(slot, &centroids, embeddings, bf_slot);
        let (a_star, max_dp) = geo.max_dp;
        let (a_neg, neg_slot, min_dn) = geo.min_dn;
        let term = margin_ratio_term(max_dp, min_dn, g);
        let denom = max_dp + min_dn;
        let ratio = if denom == 0.0 { 0.0 } else { max_dp / denom };
        class_terms.push((centroids.classes[slot], term));
        class_ratios.push((centroids.classes[slot], ratio));
        margin += term / n_classes as f64;

        if want_grads && denom > 0.0 {
            let dt_dratio = g * ratio.powf(g - 1.0);
            let scale = 1.0 / n_classes as f64;
            // dt/dM and dt/dm through ratio = M / (M + m)
            let dt_dmax = dt_dratio * min_dn / (denom * denom) * scale;
            let dt_dmin = -dt_dratio * max_dp / (denom * denom) * scale;
            accumulate_distance_grad(
                embeddings,
                &centroids,
                a_star,
                slot,
                dt_dmax,
                &mut grads,
                &mut center_grads,
            );
            accumulate_distance_grad(
                embeddings,
                &centroids,
                a_neg,
                neg_slot,
                dt_dmin,
                &mut grads,
                &mut center_grads,
            );
        }
    }

    let sqrt2 = std::f64::consts::SQRT_2;
    let mut center = 0.0;
    for slot in 0..n_classes {
        if slot == bf_slot {
            continue;
        }
        let d = euclidean(&centroids.centers[slot], &centroids.centers[bf_slot]);
        let hinge = (sqrt2 - d).max(0.0);
        center += hinge / n_species as f64;
        if want_grads && hinge > 0.0 && d > 0.0 {
            let coeff = -CENTER_LOSS_WEIGHT / n_species as f64;
            for k in 0..dim {
                let diff = (centroids.centers[slot][k] - centroids.centers[bf_slot][k]) / d;
                center_grads[slot][k] += coeff * diff;
                center_grads[bf_slot][k] -= coeff * diff;
            }
        }
    }

    if want_grads {
        backprop_centroids(&centroids, &center_grads, &mut grads);
    }

    let breakdown = LossBreakdown {
        total: margin + CENTER_LOSS_WEIGHT * center,
        margin,
        center,
        class_terms,
        class_ratios,
    };
    Ok((breakdown, grads))
}

/// d distance(e_anchor, C_slot) flows into the anchor embedding directly and
/// into the centroid accumulator.
fn accumulate_distance_grad(
    embeddings: &[Vec<f64>],
    centroids: &Centroids,
    anchor: usize,
    center_slot: usize,
    coeff: f64,
    grads: &mut [Vec<f64>],
    center_grads: &mut [Vec<f64>],
) {
    let center = &centroids.centers[center_slot];
    let e = &embeddings[anchor];
    let d = euclidean(e, center);
    if d == 0.0 {
        return;
    }
    for k in 0..e.len() {
        let diff = (e[k] - center[k]) / d;
        grads[anchor][k] += coeff * diff;
        center_grads[center_slot][k] -= coeff * diff;
    }
}

/// Push centroid gradients through mean + renormalization into the member
/// embeddings. Degenerate centroids pass nothing.
fn backprop_centroids(centroids: &Centroids, center_grads: &[Vec<f64>], grads: &mut [Vec<f64>]) {
    for slot in 0..centroids.classes.len() {
        if centroids.degenerate[slot] {
            continue;
        }
        let gc = &center_grads[slot];
        if gc.iter().all(|&v| v == 0.0) {
            continue;
        }
        let c = &centroids.centers[slot];
        let norm = centroids.mean_norms[slot];
        let dot: f64 = gc.iter().zip(c).map(|(a, b)| a * b).sum();
        let members = &centroids.members[slot];
        let inv = 1.0 / (members.len() as f64 * norm);
        for &mi in members {
            for k in 0..c.len() {
                grads[mi][k] += (gc[k] - dot * c[k]) * inv;
            }
        }
    }
}
