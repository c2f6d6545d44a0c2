use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Support of a hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamBound {
    Positive,
    Interval(f64, f64),
}

impl ParamBound {
    pub fn contains(&self, v: f64, closed_lower: bool) -> bool {
        match *self {
            ParamBound::Positive => v > 0.0 && v.is_finite(),
            ParamBound::Interval(lo, hi) => (v > lo || (closed_lower && v == lo)) && v < hi,
        }
    }

    /// Map to the unconstrained scale (log or logit-affine).
    pub fn to_unconstrained(&self, v: f64) -> f64 {
        match *self {
            ParamBound::Positive => v.ln(),
            ParamBound::Interval(lo, hi) => {
                let s = (v - lo) / (hi - lo);
                (s / (1.0 - s)).ln()
            }
        }
    }

    pub fn from_unconstrained(&self, u: f64) -> f64 {
        match *self {
            ParamBound::Positive => u.exp(),
            ParamBound::Interval(lo, hi) => lo + (hi - lo) * sigmoid(u),
        }
    }

    /// `log |dv/du|` at unconstrained value `u`.
    pub fn log_jacobian(&self, u: f64) -> f64 {
        match *self {
            ParamBound::Positive => u,
            ParamBound::Interval(lo, hi) => {
                // log σ(u) + log(1 − σ(u)) computed without cancellation.
                (hi - lo).ln() - softplus(-u) - softplus(u)
            }
        }
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

/// Prior density for one hyperparameter, on its natural scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ThetaPrior {
    /// `log ϑ ~ N(mean, var)`.
    LogNormal { mean: f64, var: f64 },
    /// Uniform over the declared interval.
    Uniform,
}

impl ThetaPrior {
    pub fn default_for(bound: &ParamBound) -> ThetaPrior {
        match bound {
            ParamBound::Positive => ThetaPrior::LogNormal { mean: 0.0, var: 10.0 },
            ParamBound::Interval(..) => ThetaPrior::Uniform,
        }
    }

    pub fn check(&self, bound: &ParamBound) -> Result<()> {
        match (self, bound) {
            (ThetaPrior::LogNormal { var, .. }, ParamBound::Positive) if *var > 0.0 => Ok(()),
            (ThetaPrior::Uniform, ParamBound::Interval(..)) => Ok(()),
            _ => Err(Error::Argument(format!(
                "prior {self:?} is incompatible with hyperparameter support {bound:?}"
            ))),
        }
    }

    /// Log density up to a constant, on the natural scale.
    pub fn log_density(&self, v: f64) -> f64 {
        match *self {
            ThetaPrior::LogNormal { mean, var } => {
                let z = v.ln() - mean;
                -0.5 * z * z / var - v.ln()
            }
            ThetaPrior::Uniform => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_round_trip() {
        let bounds = [
            ParamBound::Positive,
            ParamBound::Interval(-0.25, 1.0),
            ParamBound::Interval(0.0, 1.0 - 1e-6),
        ];
        for b in bounds {
            for u in [-8.0, -1.0, 0.0, 0.3, 5.0] {
                let v = b.from_unconstrained(u);
                assert!((b.to_unconstrained(v) - u).abs() < 1e-8, "{b:?} {u}");
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let bounds = [ParamBound::Positive, ParamBound::Interval(-0.5, 1.0)];
        for b in bounds {
            for u in [-2.0, 0.0, 1.5] {
                let h = 1e-6;
                let fd = (b.from_unconstrained(u + h) - b.from_unconstrained(u - h)) / (2.0 * h);
                assert!((b.log_jacobian(u) - fd.ln()).abs() < 1e-6);
            }
        }
    }
}
