//! Discretized logistic mixtures over 8-bit intensity values.
//!
//! Intensities map to x = v/127.5 - 1 in [-1, 1]; each value owns a bin of
//! half-width 1/255, with open tails at 0 and 255 so the 256 bin
//! probabilities telescope to exactly 1.

/// Half-width of one intensity bin on the [-1, 1] scale.
pub const BIN_HALF_WIDTH: f64 = 1.0 / 255.0;

/// Clamp range for the log-scale parameter.
pub const LOG_SCALE_MIN: f64 = -7.0;
pub const LOG_SCALE_MAX: f64 = 5.0;

/// Below this bin probability the log switches to the midpoint pdf
/// approximation to avoid log(0) in far tails.
const PROB_FLOOR: f64 = 1e-12;

#[inline]
pub fn to_unit(v: u8) -> f64 {
    f64::from(v) / 127.5 - 1.0
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(z)), stable for large |z|.
#[inline]
fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

#[inline]
fn sigmoid_deriv(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 - s)
}

/// One logistic component with a clamped log-scale.
#[derive(Debug, Clone, Copy)]
pub struct Component {
    pub mean: f64,
    pub log_scale: f64,
}

impl Component {
    pub fn new(mean: f64, raw_log_scale: f64) -> Self {
        Component {
            mean,
            log_scale: raw_log_scale.clamp(LOG_SCALE_MIN, LOG_SCALE_MAX),
        }
    }

    /// Whether the raw log-scale was clamped (gradient must not flow then).
    pub fn clamped(raw_log_scale: f64) -> bool {
        !(LOG_SCALE_MIN..=LOG_SCALE_MAX).contains(&raw_log_scale)
    }

    #[inline]
    fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    /// Probability of the intensity bin for `v`. Sums to 1 over all 256
    /// values up to floating-point rounding.
    pub fn prob(&self, v: u8) -> f64 {
        let x = to_unit(v);
        let s = self.scale();
        let plus = (x + BIN_HALF_WIDTH - self.mean) / s;
        let minus = (x - BIN_HALF_WIDTH - self.mean) / s;
        if v == 0 {
            sigmoid(plus)
        } else if v == 255 {
            1.0 - sigmoid(minus)
        } else {
            sigmoid(plus) - sigmoid(minus)
        }
    }

    /// log prob(v), falling back to the midpoint-pdf approximation when the
    /// CDF difference underflows. Always <= 0.
    pub fn log_prob(&self, v: u8) -> f64 {
        let x = to_unit(v);
        let s = self.scale();
        let plus = (x + BIN_HALF_WIDTH - self.mean) / s;
        let minus = (x - BIN_HALF_WIDTH - self.mean) / s;
        let lp = if v == 0 {
            log_sigmoid(plus)
        } else if v == 255 {
            // log(1 - sigmoid(minus)) = log(sigmoid(-minus))
            log_sigmoid(-minus)
        } else {
            let delta = sigmoid(plus) - sigmoid(minus);
            if delta > PROB_FLOOR {
                delta.ln()
            } else {
                // pdf at bin midpoint times bin width
                let z = (x - self.mean) / s;
                let za = -z.abs();
                za - self.log_scale - 2.0 * za.exp().ln_1p() + (2.0 * BIN_HALF_WIDTH).ln()
            }
        };
        lp.min(0.0)
    }

    /// (dP/d mean, dP/d log_scale) for the bin of `v`.
    pub fn prob_grad(&self, v: u8) -> (f64, f64) {
        let x = to_unit(v);
        let s = self.scale();
        let plus = (x + BIN_HALF_WIDTH - self.mean) / s;
        let minus = (x - BIN_HALF_WIDTH - self.mean) / s;
        if v == 0 {
            (-sigmoid_deriv(plus) / s, -plus * sigmoid_deriv(plus))
        } else if v == 255 {
            (sigmoid_deriv(minus) / s, minus * sigmoid_deriv(minus))
        } else {
            (
                (sigmoid_deriv(minus) - sigmoid_deriv(plus)) / s,
                minus * sigmoid_deriv(minus) - plus * sigmoid_deriv(plus),
            )
        }
    }
}

/// Softmax over mixture logits.
pub fn softmax(logits: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &l in logits {
        let e = (l - max).exp();
        out.push(e);
        total += e;
    }
    for w in out.iter_mut() {
        *w /= total;
    }
}

/// log(sum_k exp(terms_k)), stable.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}
