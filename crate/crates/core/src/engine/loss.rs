//! Margin ranking loss with the target fixed to +1 (first input should win).

use super::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginLossInputs<T> {
    /// Score of the original turn.
    pub x1: T,
    /// Score of the adversarial turn.
    pub x2: T,
    pub margin: T,
}

impl<T: Real> MarginLossInputs<T> {
    pub fn new(x1: T, x2: T) -> Self {
        MarginLossInputs {
            x1,
            x2,
            margin: T::from_f64_lossy(0.5),
        }
    }
}

/// `max(0, -(x1 - x2) + margin)`.
pub fn margin_ranking_loss<T: Real>(inp: MarginLossInputs<T>) -> T {
    (inp.margin - (inp.x1 - inp.x2)).max(T::zero())
}

/// `(∂/∂x1, ∂/∂x2)`. At the kink the zero subgradient is returned.
pub fn margin_ranking_loss_grad<T: Real>(inp: MarginLossInputs<T>) -> (T, T) {
    if inp.margin - (inp.x1 - inp.x2) > T::zero() {
        (-T::one(), T::one())
    } else {
        (T::zero(), T::zero())
    }
}

/// True when `x1 - x2` lies within `tol` of the margin, where the loss is not
/// differentiable.
pub fn margin_at_kink<T: Real>(inp: MarginLossInputs<T>, tol: T) -> bool {
    ((inp.x1 - inp.x2) - inp.margin).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_values() {
        assert_eq!(margin_ranking_loss(MarginLossInputs::new(1.0f64, 0.0)), 0.0);
        assert_eq!(margin_ranking_loss(MarginLossInputs::new(0.3f64, 0.3)), 0.5);
        let v = margin_ranking_loss(MarginLossInputs::new(0.2f64, 0.4));
        assert!((v - 0.7).abs() < 1e-15);
    }

    #[test]
    fn zero_iff_margin_met() {
        for &(a, b) in &[(0.5, 0.0), (2.0, 1.0), (0.49, 0.0), (-1.0, 3.0)] {
            let inp = MarginLossInputs::new(a, b);
            let l = margin_ranking_loss(inp);
            assert!(l >= 0.0);
            assert_eq!(l == 0.0, a - b >= 0.5);
        }
    }

    #[test]
    fn gradient_signs() {
        assert_eq!(margin_ranking_loss_grad(MarginLossInputs::new(0.0f64, 0.0)), (-1.0, 1.0));
        assert_eq!(margin_ranking_loss_grad(MarginLossInputs::new(2.0f64, 0.0)), (0.0, 0.0));
        assert!(margin_at_kink(MarginLossInputs::new(0.5f64, 0.0), 1e-9));
    }
}
