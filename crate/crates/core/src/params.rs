//! Named parameter tensors and the Adam optimizer.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.values.push(value.as_standard_layout().into_owned());
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Order-sensitive FNV-1a hash over every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, value) in self.names.iter().zip(&self.values) {
            for b in name.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
            }
            for x in value.iter() {
                for b in x.to_bits().to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ParamGrads {
    grads: Vec<Array2<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .values
                .iter()
                .map(|v| Array2::zeros(v.raw_dim()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.grads[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.grads {
            g.mapv_inplace(|x| x * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments and a per-tensor step counter, so that
/// tensors updated on different schedules keep exact corrections.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
    steps: Vec<u64>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Array2<f64>> = store
            .values
            .iter()
            .map(|v| Array2::zeros(v.raw_dim()))
            .collect();
        Self {
            config,
            first: zeros.clone(),
            second: zeros,
            steps: vec![0; store.len()],
        }
    }

    /// Update every parameter selected by `filter`.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &ParamGrads,
        mut filter: impl FnMut(ParamId) -> bool,
    ) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        for id in store.ids().collect::<Vec<_>>() {
            if !filter(id) {
                continue;
            }
            let i = id.0;
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let g = grads.grads[i].as_slice().expect("standard layout");
            let m = self.first[i].as_slice_mut().expect("standard layout");
            let v = self.second[i].as_slice_mut().expect("standard layout");
            let p = store.values[i].as_slice_mut().expect("standard layout");
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }

    pub fn steps(&self, id: ParamId) -> u64 {
        self.steps[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Textbook Adam on scalars, written independently of [`Adam`].
    fn reference_adam(theta: &mut [f64; 3], grad: impl Fn(&[f64; 3]) -> [f64; 3], steps: usize) {
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let mut m = [0.0; 3];
        let mut v = [0.0; 3];
        for t in 1..=steps {
            let g = grad(theta);
            for k in 0..3 {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mh = m[k] / (1.0 - b1.powi(t as i32));
                let vh = v[k] / (1.0 - b2.powi(t as i32));
                theta[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }

    #[test]
    fn matches_reference_on_toy_quadratic() {
        // f(θ) = (θ0 - 1)^2 + 3 (θ1 + 2)^2 + θ0 θ2 + θ2^4
        let grad = |t: &[f64; 3]| {
            [
                2.0 * (t[0] - 1.0) + t[2],
                6.0 * (t[1] + 2.0),
                t[0] + 4.0 * t[2].powi(3),
            ]
        };
        let start = [0.3, -0.7, 1.1];
        let mut expected = start;
        reference_adam(&mut expected, grad, 100);

        let mut store = ParamStore::new();
        let id = store.add("theta", array![[start[0], start[1], start[2]]]);
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.01,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..100 {
            let t = store.get(id);
            let g = grad(&[t[[0, 0]], t[[0, 1]], t[[0, 2]]]);
            let mut grads = ParamGrads::zeros_like(&store);
            grads.get_mut(id).assign(&array![[g[0], g[1], g[2]]]);
            adam.step(&mut store, &grads, |_| true);
        }
        for k in 0..3 {
            assert!((store.get(id)[[0, k]] - expected[k]).abs() < 1e-10);
        }
        assert_eq!(adam.steps(id), 100);
    }

    #[test]
    fn filter_leaves_other_tensors_untouched() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[1.0]]);
        let b = store.add("b", array![[1.0]]);
        let mut adam = Adam::new(AdamConfig::default(), &store);
        let mut grads = ParamGrads::zeros_like(&store);
        grads.get_mut(a).fill(1.0);
        grads.get_mut(b).fill(1.0);
        adam.step(&mut store, &grads, |id| id == a);
        assert!(store.get(a)[[0, 0]] < 1.0);
        assert_eq!(store.get(b)[[0, 0]], 1.0);
        assert_eq!(adam.steps(b), 0);
    }

    #[test]
    fn checksum_tracks_any_change() {
        let mut store = ParamStore::new();
        let a = store.add("a", array![[1.0, 2.0]]);
        let before = store.checksum();
        store.get_mut(a)[[0, 1]] = 2.0 + 1e-15;
        assert_ne!(before, store.checksum());
    }
}
