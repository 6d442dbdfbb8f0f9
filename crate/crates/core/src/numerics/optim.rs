use serde::{Deserialize, Serialize};

use super::{NumericError, Tensor};

/// Optimizer state for bias-corrected Adam.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Adam over a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    state: AdamState,
}

impl Adam {
    pub fn new(params: &[Tensor], learning_rate: f64) -> Self {
        Adam::with_betas(params, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &[Tensor], learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            state: AdamState {
                step_count: 0,
                first_moment: zeros.clone(),
                second_moment: zeros,
                learning_rate,
                beta1,
                beta2,
                epsilon,
            },
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), NumericError> {
        let st = &mut self.state;
        if params.len() != grads.len() || params.len() != st.first_moment.len() {
            return Err(NumericError::Shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                st.first_moment.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NumericError::Shape(format!(
                    "adam: param {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
        st.step_count += 1;
        let t = st.step_count as i32;
        let bc1 = 1.0 - st.beta1.powi(t);
        let bc2 = 1.0 - st.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(st.first_moment.iter_mut().zip(st.second_moment.iter_mut()))
        {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = st.beta1 * *mv + (1.0 - st.beta1) * gv;
                *vv = st.beta2 * *vv + (1.0 - st.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= st.learning_rate * m_hat / (v_hat.sqrt() + st.epsilon);
            }
        }
        Ok(())
    }
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::l2_norm_sq).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
