use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::network::{DenseNetwork, Gradients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// One bias-corrected Adam step over a flat parameter slice. `t` is the
/// 1-based step number.
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) {
    debug_assert!(t >= 1);
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// First and second moments for every parameter of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<(Array2<f64>, Array1<f64>)>,
    pub second_moment: Vec<(Array2<f64>, Array1<f64>)>,
}

impl AdamState {
    pub fn new(net: &DenseNetwork, config: AdamConfig) -> Self {
        let zeros: Vec<_> = net
            .layers()
            .iter()
            .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
            .collect();
        Self {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn update(&mut self, net: &mut DenseNetwork, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers().len() {
            return Err(Error::shape("gradient layer count mismatch"));
        }
        for (l, (gw, gb)) in net.layers().iter().zip(&grads.layers) {
            if gw.dim() != l.weights.dim() || gb.len() != l.bias.len() {
                return Err(Error::shape("gradient shape mismatch"));
            }
        }
        self.step_count += 1;
        let t = self.step_count;
        let cfg = self.config;
        let layers = net.layers_mut_for_update();
        for (k, layer) in layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[k];
            let (mw, mb) = &mut self.first_moment[k];
            let (vw, vb) = &mut self.second_moment[k];
            adam_step(
                layer.weights.as_slice_mut().expect("standard layout"),
                gw.as_standard_layout().as_slice().expect("standard layout"),
                mw.as_slice_mut().expect("standard layout"),
                vw.as_slice_mut().expect("standard layout"),
                t,
                &cfg,
            );
            adam_step(
                layer.bias.as_slice_mut().expect("contiguous"),
                gb.as_slice().expect("contiguous"),
                mb.as_slice_mut().expect("contiguous"),
                vb.as_slice_mut().expect("contiguous"),
                t,
                &cfg,
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_step_unit_gradient() {
        let cfg = AdamConfig::default();
        let (mut th, mut m, mut v) = ([0.0], [0.0], [0.0]);
        adam_step(&mut th, &[1.0], &mut m, &mut v, 1, &cfg);
        // m̂ = v̂ = 1 → Δθ = -lr / (1 + eps)
        assert!((th[0] - (-0.001 / (1.0 + 1e-7))).abs() < 1e-15);
        assert_eq!((th[0] * 1e7).trunc(), -9999.0);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let cfg = AdamConfig::default();
        let (mut th, mut m, mut v) = ([3.5, -2.0], [0.0; 2], [0.0; 2]);
        adam_step(&mut th, &[0.0, 0.0], &mut m, &mut v, 1, &cfg);
        assert_eq!(th, [3.5, -2.0]);
    }

    #[test]
    fn step_count_increments_once_per_update() {
        use crate::nn::{Activation, DenseNetwork};
        let mut net = DenseNetwork::new(&[2, 2], &[Activation::Linear], 0).unwrap();
        let mut st = AdamState::new(&net, AdamConfig::default());
        assert!(st.first_moment.iter().all(|(w, b)| w.iter().chain(b).all(|&x| x == 0.0)));
        let (_, cache) = net.forward(&[1.0, 1.0]).unwrap();
        let g = net.backward(&cache, ndarray::array![[1.0, 1.0]].view()).unwrap();
        st.update(&mut net, &g).unwrap();
        st.update(&mut net, &g).unwrap();
        assert_eq!(st.step_count, 2);
    }

    proptest! {
        // From fresh moments, or under a repeated gradient, |Δθ| ≤ lr.
        #[test]
        fn first_step_bounded(g in proptest::collection::vec(-1e6f64..1e6, 1..16)) {
            let cfg = AdamConfig::default();
            let mut th = vec![0.0; g.len()];
            let (mut m, mut v) = (vec![0.0; g.len()], vec![0.0; g.len()]);
            adam_step(&mut th, &g, &mut m, &mut v, 1, &cfg);
            prop_assert!(th.iter().all(|d| d.abs() <= cfg.learning_rate * (1.0 + 1e-9)));
        }

        #[test]
        fn repeated_gradient_bounded(g in -1e3f64..1e3, steps in 1u64..200) {
            let cfg = AdamConfig::default();
            let (mut m, mut v) = ([0.0], [0.0]);
            for t in 1..=steps {
                let mut th = [0.0];
                adam_step(&mut th, &[g], &mut m, &mut v, t, &cfg);
                prop_assert!(th[0].abs() <= cfg.learning_rate * (1.0 + 1e-9));
            }
        }

        // Arbitrary sequences: Cauchy-Schwarz on the two moment sums gives
        // |m̂/√v̂| ≤ (1-β1)/√(1-β2) · √(Σ γ^k) · √c2/c1 with γ = β1²/β2.
        #[test]
        fn arbitrary_sequence_bounded(gs in proptest::collection::vec(-1e3f64..1e3, 1..60)) {
            let cfg = AdamConfig::default();
            let gamma = cfg.beta1 * cfg.beta1 / cfg.beta2;
            let (mut m, mut v) = ([0.0], [0.0]);
            for (i, g) in gs.iter().enumerate() {
                let t = i as i32 + 1;
                let (c1, c2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
                let bound = cfg.learning_rate * (1.0 - cfg.beta1) / (1.0 - cfg.beta2).sqrt()
                    * ((1.0 - gamma.powi(t)) / (1.0 - gamma)).sqrt()
                    * c2.sqrt() / c1;
                let mut th = [0.0];
                adam_step(&mut th, &[*g], &mut m, &mut v, t as u64, &cfg);
                prop_assert!(th[0].abs() <= bound * (1.0 + 1e-9));
            }
        }
    }
}
