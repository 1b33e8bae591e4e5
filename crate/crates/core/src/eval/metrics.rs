//! Threshold-sweep detection metrics. Scores are attack-likeness: a probe
//! is called an attack when its score is at or above the threshold.
//!
//! APCER is the fraction of attack scores below the threshold (attacks let
//! through); BPCER is the fraction of bona-fide scores at or above it
//! (false alarms). Thresholds sweep the union of observed scores plus
//! infinite sentinels, which enumerates every achievable operating point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One operating point on the detection error trade-off curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

fn validate_sides(bf: &[f64], attack: &[f64]) -> Result<()> {
    if bf.is_empty() {
        return Err(Error::invalid("no bona-fide scores"));
    }
    if attack.is_empty() {
        return Err(Error::invalid("no attack scores"));
    }
    if bf.iter().chain(attack).any(|s| s.is_nan()) {
        return Err(Error::invalid("scores must not be NaN"));
    }
    Ok(())
}

/// Candidate thresholds: sorted distinct observed scores with -inf/+inf
/// sentinels.
fn candidate_thresholds(bf: &[f64], attack: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = Vec::with_capacity(bf.len() + attack.len() + 2);
    t.push(f64::NEG_INFINITY);
    t.extend_from_slice(bf);
    t.extend_from_slice(attack);
    t.push(f64::INFINITY);
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    t.dedup();
    t
}

fn rates_at(threshold: f64, bf: &[f64], attack: &[f64]) -> (f64, f64) {
    let missed = attack.iter().filter(|&&s| s < threshold).count();
    let false_alarm = bf.iter().filter(|&&s| s >= threshold).count();
    (
        missed as f64 / attack.len() as f64,
        false_alarm as f64 / bf.len() as f64,
    )
}

/// Equal error rate: midpoint (APCER+BPCER)/2 at the threshold minimizing
/// |APCER-BPCER|; ties resolve to the lower threshold.
pub fn eer(bf: &[f64], attack: &[f64]) -> Result<f64> {
    validate_sides(bf, attack)?;
    let mut best_gap = f64::INFINITY;
    let mut best_mid = 0.0;
    for t in candidate_thresholds(bf, attack) {
        let (apcer, bpcer) = rates_at(t, bf, attack);
        let gap = (apcer - bpcer).abs();
        if gap < best_gap {
            best_gap = gap;
            best_mid = (apcer + bpcer) / 2.0;
        }
    }
    Ok(best_mid)
}

/// Full DET curve, one point per distinct threshold, ordered by descending
/// threshold so APCER falls and BPCER rises along the curve.
pub fn det_curve(bf: &[f64], attack: &[f64]) -> Result<Vec<DetPoint>> {
    validate_sides(bf, attack)?;
    let mut points: Vec<DetPoint> = candidate_thresholds(bf, attack)
        .into_iter()
        .map(|t| {
            let (apcer, bpcer) = rates_at(t, bf, attack);
            DetPoint {
                threshold: t,
                apcer,
                bpcer,
            }
        })
        .collect();
    points.reverse();
    Ok(points)
}

/// ACER at a fixed APCER budget. The operating threshold is the one with
/// the smallest BPCER whose APCER stays within the target (the highest
/// feasible threshold). ACER uses the target as the APCER term, so
/// BPCER = 2*ACER - target holds identically.
pub fn acer_at_apcer(bf: &[f64], attack: &[f64], apcer_target: f64) -> Result<(f64, f64)> {
    validate_sides(bf, attack)?;
    if !(0.0..=1.0).contains(&apcer_target) {
        return Err(Error::invalid("APCER target must lie in [0, 1]"));
    }
    let mut chosen_bpcer = 1.0;
    for t in candidate_thresholds(bf, attack) {
        let (apcer, bpcer) = rates_at(t, bf, attack);
        if apcer <= apcer_target {
            // thresholds ascend, so the last feasible one wins
            chosen_bpcer = bpcer;
        }
    }
    let acer = (apcer_target + chosen_bpcer) / 2.0;
    Ok((acer, chosen_bpcer))
}

/// MPA summary: the worst (maximum) per-species EER.
pub fn mpa_eer(species_eers: &[f64]) -> Result<f64> {
    species_eers
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or_else(|| Error::invalid("no species EERs"))
}
