use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Var};

/// Predictions are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the ranking loss; the cosine term gets `1 - alpha`.
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.5, epsilon: 1e-8 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// `-cos(u, v)` with the norm product floored at `epsilon`.
pub fn cosine_loss(tape: &mut Tape, u: Var, v: Var, epsilon: f64) -> Result<Var> {
    let c = tape.cosine(u, v, epsilon)?;
    tape.neg(c)
}

/// Binary cross-entropy of a `1 x 1` probability against a 0/1 label.
pub fn bce_loss(tape: &mut Tape, y: u8, y_hat: Var) -> Result<Var> {
    let p = tape.clamp(y_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let l = if y == 1 {
        tape.ln(p)?
    } else {
        let q = tape.neg(p)?;
        let q = tape.add_scalar(q, 1.0)?;
        tape.ln(q)?
    };
    tape.neg(l)
}

/// Plain-value form of [`bce_loss`].
pub fn bce(y: u8, y_hat: f64) -> f64 {
    let p = y_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `alpha * l_bce + (1 - alpha) * l_cos`.
pub fn combined_loss(tape: &mut Tape, weights: &LossWeights, l_bce: Var, l_cos: Var) -> Result<Var> {
    let a = tape.scale(l_bce, weights.alpha)?;
    let b = tape.scale(l_cos, 1.0 - weights.alpha)?;
    tape.add(a, b)
}
