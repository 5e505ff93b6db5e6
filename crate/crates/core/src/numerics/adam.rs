use super::network::{Gradients, Network};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

/// Adam moment accumulators, mirroring the parameter shapes.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>], learning_rate: f64) -> Self {
        AdamState {
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn for_network(network: &Network<T>, learning_rate: f64) -> Self {
        Self::new(network.params(), learning_rate)
    }
}

/// One bias-corrected Adam update. Parameters whose `trainable` flag is
/// false are left untouched along with their moments.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    trainable: Option<&[bool]>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return Err(Error::Shape(format!(
                "parameter {i}: {:?} vs gradient {:?} vs moment {:?}",
                p.shape(),
                g.shape(),
                state.first_moment[i].shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if trainable.is_some_and(|m| !m[i]) {
            continue;
        }
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gf = gv.as_f64();
            let mf = b1 * mv.as_f64() + (1.0 - b1) * gf;
            let vf = b2 * vv.as_f64() + (1.0 - b2) * gf * gf;
            *mv = T::of_f64(mf);
            *vv = T::of_f64(vf);
            let update = state.learning_rate * (mf / c1) / ((vf / c2).sqrt() + state.epsilon);
            *pv = T::of_f64(pv.as_f64() - update);
        }
    }
    Ok(())
}

impl<T: Real> Network<T> {
    /// Applies an Adam step to the trainable parameters.
    pub fn apply_adam(&mut self, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
        let mask: Vec<bool> = (0..self.params().len()).map(|i| self.is_param_trainable(i)).collect();
        adam_step(self.params_mut(), &grads.tensors, state, Some(&mask))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0f32, -2.0, 0.5]).unwrap()];
        let g = vec![Tensor::zeros(&[3])];
        let mut s = AdamState::new(&p, DEFAULT_LEARNING_RATE);
        adam_step(&mut p, &g, &mut s, None).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0, 0.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Hand-evaluated at 64-bit: m = 0.05, v = 0.00025, m_hat = 0.5,
        // v_hat = 0.25, update = 0.001 * 0.5 / (0.5 + 1e-8).
        let mut p = vec![Tensor::new(vec![1], vec![1.0f64]).unwrap()];
        let g = vec![Tensor::new(vec![1], vec![0.5f64]).unwrap()];
        let mut s = AdamState::new(&p, 0.001);
        adam_step(&mut p, &g, &mut s, None).unwrap();
        let expected = 1.0 - 0.001 * 0.5 / (0.5 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-15);
        assert!((p[0].data()[0] - 0.999).abs() < 1e-8);
    }

    #[test]
    fn masked_parameters_are_untouched_and_counter_advances() {
        let mut p = vec![Tensor::full(&[2], 1.0f32), Tensor::full(&[2], 1.0f32)];
        let g = vec![Tensor::full(&[2], 1.0f32), Tensor::full(&[2], 1.0f32)];
        let mut s = AdamState::new(&p, 0.01);
        for k in 1..=3 {
            adam_step(&mut p, &g, &mut s, Some(&[false, true])).unwrap();
            assert_eq!(s.step, k);
        }
        assert_eq!(p[0].data(), &[1.0, 1.0]);
        assert!(p[1].data()[0] < 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![Tensor::full(&[2], 1.0f32)];
        let g = vec![Tensor::full(&[3], 1.0f32)];
        let mut s = AdamState::new(&p, 0.01);
        assert!(adam_step(&mut p, &g, &mut s, None).is_err());
        assert_eq!(s.step, 0);
    }
}
