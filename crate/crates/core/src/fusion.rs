//! Probabilistic-OR fusion of the discriminative and one-class attack
//! probabilities: an attack flagged by either detector stays flagged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The two input probabilities and their fused value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedScore {
    pub p_discriminative: f64,
    pub p_one_class: f64,
    pub p_fused: f64,
}

/// Fuse two attack probabilities: p = 1 - (1 - p_d)(1 - p_o).
pub fn fuse(p_discriminative: f64, p_one_class: f64) -> Result<FusedScore> {
    for (name, p) in [
        ("discriminative", p_discriminative),
        ("one-class", p_one_class),
    ] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(format!(
                "{name} probability {p} outside [0, 1]"
            )));
        }
    }
    Ok(FusedScore {
        p_discriminative,
        p_one_class,
        p_fused: 1.0 - (1.0 - p_discriminative) * (1.0 - p_one_class),
    })
}
