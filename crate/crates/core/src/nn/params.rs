use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::NnError;

/// Index of a parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Optimizer group. Trunk and actor parameters step with the actor rate,
/// critic heads with the critic rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Actor,
    Critic,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub group: Group,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// All learnable tensors of one network family, with gradient accumulators
/// and Adam state.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
    pub adam: AdamConfig,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            step: 0,
            adam: AdamConfig::default(),
        }
    }

    /// Registers a `rows x cols` tensor filled with `init`.
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, group: Group, init: Vec<f64>) -> ParamId {
        assert_eq!(init.len(), rows * cols, "initial value has wrong length");
        let n = init.len();
        self.params.push(Param {
            name: name.into(),
            rows,
            cols,
            group,
            value: init,
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        group: Group,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let init = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, rows, cols, group, init)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Clamps every gradient entry into `[lo, hi]`.
    pub fn gradient_clip(&mut self, lo: f64, hi: f64) {
        debug_assert!(lo < hi);
        for p in &mut self.params {
            for g in &mut p.grad {
                *g = g.clamp(lo, hi);
            }
        }
    }

    pub fn adam_step(&mut self, lr: f64) -> Result<(), NnError> {
        self.adam_step_with(|_| lr)
    }

    /// Bias-corrected Adam update with a per-group learning rate. Gradients
    /// are reset afterwards.
    pub fn adam_step_with(&mut self, lr_for: impl Fn(Group) -> f64) -> Result<(), NnError> {
        for p in &self.params {
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(NnError::NonFiniteGradient {
                    param: p.name.clone(),
                    index: i,
                });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for p in &mut self.params {
            let lr = lr_for(p.group);
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = beta1 * p.m[i] + (1.0 - beta1) * g;
                p.v[i] = beta2 * p.v[i] + (1.0 - beta2) * g * g;
                let m_hat = p.m[i] / c1;
                let v_hat = p.v[i] / c2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                p.grad[i] = 0.0;
            }
        }
        Ok(())
    }

    /// Copies parameter values from `other` (same layout).
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if other.params.len() != self.params.len() {
            return Err(NnError::Layout(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.rows != src.rows || dst.cols != src.cols {
                return Err(NnError::Layout(format!("shape mismatch for {}", dst.name)));
            }
            dst.value.copy_from_slice(&src.value);
        }
        Ok(())
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.iter().copied()).collect()
    }
}
