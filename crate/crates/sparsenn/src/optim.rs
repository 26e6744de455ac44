use pcvox_core::{Error, Result, Scalar};

use crate::params::ParamStore;

/// Adam with first and second moments kept in `f64`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` is indexed like the store; missing
    /// entries count as zero gradients. Buffers are never touched.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|(_, p)| vec![0.0; p.data.len()]).collect();
            self.v = self.m.clone();
        }
        for g in grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite gradient passed to Adam".into()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.buffer)).collect();
        for (id, buffer) in ids {
            if buffer {
                continue;
            }
            let i = id.0 as usize;
            let g = grads.get(i).and_then(|g| g.as_deref());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, p) in store.data_mut(id).iter_mut().enumerate() {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let update = self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                *p = T::of(p.f64() - update);
            }
        }
        Ok(())
    }
}

/// Learning rate multiplied by `factor` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
}

impl StepDecay {
    pub fn new(initial: f64) -> Self {
        Self { initial, factor: 0.5, every: 5 }
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        self.initial * self.factor.powi((epoch / self.every.max(1)) as i32)
    }
}
