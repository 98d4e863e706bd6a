//! Plain forward functions shared by the tape and by callers that only need values.

use crate::error::{Error, Result};

use super::Tensor2D;

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Probability clamp applied inside the cross-entropy loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::LeakyRelu => leaky_relu(z),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the input `z` and output `y`.
    pub(crate) fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn leaky_relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

pub fn activation(x: &Tensor2D, kind: Activation) -> Tensor2D {
    x.map(|z| kind.apply(z))
}

/// Max-shifted softmax over every entry of `scores`.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyBag);
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Both `p` and `1 - p` are clamped to `[eps, 1 - eps]`, so a saturated
/// prediction costs exactly `-ln(eps)` on either side.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let q = (1.0 - p).clamp(BCE_EPS, 1.0 - BCE_EPS);
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(y * p.ln() + (1.0 - y) * q.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_fixed_points() {
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(leaky_relu(-1.0), -0.01);
        assert_eq!(leaky_relu(2.0), 2.0);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn softmax_closed_forms() {
        let u = softmax(&[4.2, 4.2, 4.2]).unwrap();
        for v in u {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax(&[0.0, 2f64.ln()]).unwrap();
        assert!((s[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((s[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(softmax(&[-12.0]).unwrap(), vec![1.0]);
        assert!(matches!(softmax(&[]), Err(Error::EmptyBag)));
    }

    #[test]
    fn softmax_survives_huge_scores() {
        let s = softmax(&[1000.0, 1000.0 + 2f64.ln()]).unwrap();
        assert!((s[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bce_closed_forms() {
        assert!((bce_loss(0.5, 1.0) - 2f64.ln()).abs() < 1e-12);
        assert!(bce_loss(1.0 - BCE_EPS, 1.0) < 2e-7);
        assert!((bce_loss(0.9, 0.0) - 10f64.ln()).abs() < 1e-12);
        assert!(bce_loss(0.0, 1.0).is_finite());
    }
}
