//! Rational-attacker model: payoffs for attacker and defender, selection of
//! the most powerful attack (MPA), the attack/abstain decision, and
//! category-weighted expected detector performance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Payoff parameters for one attacker/defender interaction.
///
/// `detection_rates[i]` is the detector's probability of catching species `i`;
/// `attack_costs[i]` is what mounting that species costs the attacker.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PayoffParams {
    /// Reward for a successful attack (r > 0).
    pub reward: f64,
    /// Cost of a failed attack for the attacker (c_f > 0).
    pub failure_cost: f64,
    /// Constant cost of running the detector (c_d).
    pub detection_cost: f64,
    /// Cost of a missed detection for the defender (c_m).
    pub miss_cost: f64,
    /// Per-species attack cost (c_i >= 0).
    pub attack_costs: Vec<f64>,
    /// Per-species detection rate (p_i in [0, 1]).
    pub detection_rates: Vec<f64>,
}

impl PayoffParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.reward > 0.0) {
            return Err(Error::invalid("reward must be > 0"));
        }
        if !(self.failure_cost > 0.0) {
            return Err(Error::invalid("failure cost must be > 0"));
        }
        if self.attack_costs.len() != self.detection_rates.len() {
            return Err(Error::invalid(
                "attack_costs and detection_rates must have equal length",
            ));
        }
        if self.attack_costs.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::invalid("attack costs must be >= 0"));
        }
        if self
            .detection_rates
            .iter()
            .any(|&p| !(0.0..=1.0).contains(&p))
        {
            return Err(Error::invalid("detection rates must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn species_count(&self) -> usize {
        self.detection_rates.len()
    }
}

/// One attacker category: its prior probability and the menu of species it
/// can afford, with the detector's performance on each menu entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackerCategory {
    pub probability: f64,
    /// Detector performance per species on this category's menu. The
    /// category contributes its worst-case (minimum) entry.
    pub menu_performance: Vec<f64>,
}

impl AttackerCategory {
    /// Worst-case detector performance over the category's menu.
    pub fn worst_case_performance(&self) -> Result<f64> {
        self.menu_performance
            .iter()
            .copied()
            .fold(None, |acc: Option<f64>, v| {
                Some(acc.map_or(v, |a| a.min(v)))
            })
            .ok_or_else(|| Error::invalid("attacker category has an empty menu"))
    }
}

/// Attacker payoff for species `i`: u_i = r(1 - p_i) - c_f * p_i - c_i.
///
/// This is the full form; the zero-cost shortcut (payoff ranking equals
/// ranking by -p_i) is a consequence, not a separate code path.
pub fn attacker_payoff(params: &PayoffParams, species: usize) -> f64 {
    let p = params.detection_rates[species];
    let c = params.attack_costs[species];
    params.reward * (1.0 - p) - params.failure_cost * p - c
}

/// Select the most powerful attack: the species with the highest attacker
/// payoff. Ties break toward the lowest index.
pub fn select_mpa(params: &PayoffParams) -> Result<(usize, f64)> {
    params.validate()?;
    if params.species_count() == 0 {
        return Err(Error::invalid("empty attack menu"));
    }
    let mut best = (0, attacker_payoff(params, 0));
    for i in 1..params.species_count() {
        let u = attacker_payoff(params, i);
        if u > best.1 {
            best = (i, u);
        }
    }
    Ok(best)
}

/// The attacker's move given the menu.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackDecision {
    /// Attack with the given species index.
    Attack(usize),
    /// Stay out; every payoff is at or below the abstention payoff of 0.
    Abstain,
}

/// Attack iff the best payoff strictly exceeds the abstention payoff (0).
pub fn attack_or_abstain(params: &PayoffParams) -> Result<AttackDecision> {
    let (idx, u_max) = select_mpa(params)?;
    if u_max > 0.0 {
        Ok(AttackDecision::Attack(idx))
    } else {
        Ok(AttackDecision::Abstain)
    }
}

/// Defender payoff for species `i`: v_i = -c_d - c_m(1 - p_i).
pub fn defender_payoff(params: &PayoffParams, detection_rate: f64) -> f64 {
    -params.detection_cost - params.miss_cost * (1.0 - detection_rate)
}

/// Probability-weighted expected performance over attacker categories; each
/// category contributes the worst-case performance over its menu.
pub fn expected_performance(categories: &[AttackerCategory]) -> Result<f64> {
    let total: f64 = categories.iter().map(|c| c.probability).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "category probabilities sum to {total}, expected 1"
        )));
    }
    let mut expected = 0.0;
    for cat in categories {
        expected += cat.probability * cat.worst_case_performance()?;
    }
    Ok(expected)
}
