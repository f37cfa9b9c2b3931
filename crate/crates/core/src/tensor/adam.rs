//! Bias-corrected Adam over an ordered parameter list.

use crate::error::{Error, Result};

use super::Tensor;

/// First/second moment buffers plus the step counter, aligned index-by-index
/// with the parameter list they were created from.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// Zero moments at step 0.
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update. `params` and `grads` must be index-aligned with the
/// state; every gradient must be present and shape-matched.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam_step: {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "adam_step: param {i} has shape {} but grad has {}",
                p.shape(),
                g.shape()
            )));
        }
    }

    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let gd = g.data();
        p.update_in_place(|pd| {
            for i in 0..pd.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gd[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * gd[i] * gd[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![Tensor::new(
            Shape::new(1, 1, 2, 2),
            vec![0.5, -1.0, 2.0, 0.0],
        )
        .unwrap()];
        let before = params[0].data().to_vec();
        let grads = vec![Tensor::zeros(Shape::new(1, 1, 2, 2))];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 1e-3, BETA1, BETA2, EPS).unwrap();
        assert_eq!(params[0].data(), &before[..]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // Constant gradient 1 from zero state: both bias-corrected moments
        // normalize to 1, so the update magnitude is lr / (1 + eps).
        let lr = 2e-4;
        let mut params = vec![Tensor::scalar(0.0)];
        let grads = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, lr, BETA1, BETA2, EPS).unwrap();
        let moved = -params[0].item();
        assert!((moved - lr).abs() < lr * 1e-6, "moved {moved}");
    }

    #[test]
    fn three_steps_match_reference_implementation() {
        // Minimizing f(x) = x^2 / 2 from x = 1, gradient x.
        let lr = 0.1;
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(&params);

        // Independent scalar reference.
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3u32 {
            let g = params[0].item();
            adam_step(
                &mut params,
                &[Tensor::scalar(g)],
                &mut state,
                lr,
                BETA1,
                BETA2,
                EPS,
            )
            .unwrap();

            let gr = x;
            m = BETA1 * m + (1.0 - BETA1) * gr;
            v = BETA2 * v + (1.0 - BETA2) * gr * gr;
            let m_hat = m / (1.0 - BETA1.powi(t as i32));
            let v_hat = v / (1.0 - BETA2.powi(t as i32));
            x -= lr * m_hat / (v_hat.sqrt() + EPS);

            assert!(
                (params[0].item() - x).abs() < 1e-12,
                "step {t}: {} vs {x}",
                params[0].item()
            );
        }
        assert_eq!(state.step_count(), 3);
    }

    #[test]
    fn rejects_bad_learning_rate() {
        let mut params = vec![Tensor::scalar(0.0)];
        let grads = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &grads, &mut state, 0.0, BETA1, BETA2, EPS).unwrap_err();
        assert!(matches!(err, crate::error::Error::Config(_)));
    }
}
