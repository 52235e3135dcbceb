//! Bias-corrected Adam.

use super::{EngineError, Real};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    /// One moment pair per parameter block of the given lengths.
    pub fn new(sizes: &[usize], config: AdamConfig) -> Self {
        AdamState {
            config,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }
}

pub fn adam_step<T: Real>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<(), EngineError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(EngineError::DimMismatch {
            what: "parameter blocks",
            expected: state.m.len(),
            got: params.len().min(grads.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(EngineError::DimMismatch {
                what: "parameter block",
                expected: m.len(),
                got: if p.len() != m.len() { p.len() } else { g.len() },
            });
        }
    }
    state.step += 1;
    let c = state.config;
    let b1 = T::from_f64_lossy(c.beta1);
    let b2 = T::from_f64_lossy(c.beta2);
    let eps = T::from_f64_lossy(c.eps);
    let t = state.step as i32;
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0f64, -2.0];
        let g = vec![0.0, 0.0];
        let mut s = AdamState::new(&[2], AdamConfig::default());
        adam_step(&mut [&mut p[..]], &[&g[..]], &mut s, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for &g in &[3.0f64, -0.02, 1e3] {
            let mut p = vec![0.0f64];
            let mut s = AdamState::new(&[1], AdamConfig::default());
            adam_step(&mut [&mut p[..]], &[&[g][..]], &mut s, 0.01).unwrap();
            // lr * g / (|g| + eps)
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15);
            assert!((p[0].abs() - 0.01).abs() < 1e-8);
        }
    }

    #[test]
    fn stays_finite_and_deterministic() {
        let run = || {
            let mut p = vec![0.5f32, 1.0];
            let mut s = AdamState::new(&[2], AdamConfig::default());
            for _ in 0..2 {
                adam_step(&mut [&mut p[..]], &[&[1.0, -1.0][..]], &mut s, 0.1).unwrap();
            }
            p
        };
        let a = run();
        assert!(a.iter().all(|x| x.is_finite()));
        assert_eq!(a, run());
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![0.0f64; 2];
        let mut s = AdamState::new(&[2], AdamConfig::default());
        assert!(adam_step(&mut [&mut p[..]], &[&[1.0][..]], &mut s, 0.1).is_err());
    }
}
