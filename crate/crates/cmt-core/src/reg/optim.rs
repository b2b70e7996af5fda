//! First-order optimizer with per-parameter adaptive steps
//! (momentum + RMS scaling).

pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t);
        let b2t = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Adam over a [f64; 3] field buffer.
pub(crate) struct AdamVec3 {
    inner: Adam,
}

impl AdamVec3 {
    pub fn new(len: usize, lr: f64) -> Self {
        AdamVec3 {
            inner: Adam::new(len * 3, lr),
        }
    }

    pub fn step(&mut self, params: &mut [[f64; 3]], grads: &[[f64; 3]]) {
        debug_assert_eq!(params.len(), grads.len());
        self.inner.t += 1;
        let b1t = 1.0 - self.inner.beta1.powi(self.inner.t);
        let b2t = 1.0 - self.inner.beta2.powi(self.inner.t);
        for i in 0..params.len() {
            for d in 0..3 {
                let j = 3 * i + d;
                let g = grads[i][d];
                self.inner.m[j] = self.inner.beta1 * self.inner.m[j] + (1.0 - self.inner.beta1) * g;
                self.inner.v[j] =
                    self.inner.beta2 * self.inner.v[j] + (1.0 - self.inner.beta2) * g * g;
                let mhat = self.inner.m[j] / b1t;
                let vhat = self.inner.v[j] / b2t;
                params[i][d] -= self.inner.lr * mhat / (vhat.sqrt() + self.inner.eps);
            }
        }
    }
}

/// Early-stop / divergence bookkeeping shared by the optimization loops.
pub(crate) struct LoopGuard {
    best: f64,
    prev: f64,
    rising: usize,
    stalled: usize,
    rel_tol: f64,
    patience: usize,
}

pub(crate) enum LoopVerdict {
    Continue,
    Converged,
    Diverged,
}

impl LoopGuard {
    pub fn new(rel_tol: f64) -> Self {
        Self::with_patience(rel_tol, 15)
    }

    pub fn with_patience(rel_tol: f64, patience: usize) -> Self {
        LoopGuard {
            best: f64::INFINITY,
            prev: f64::INFINITY,
            rising: 0,
            stalled: 0,
            rel_tol,
            patience,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, loss: f64) -> LoopVerdict {
        if !loss.is_finite() {
            return LoopVerdict::Diverged;
        }
        if loss > self.prev {
            self.rising += 1;
        } else {
            self.rising = 0;
        }
        let improved = self.best - loss;
        if loss < self.best {
            self.best = loss;
        }
        if improved > self.rel_tol * self.best.abs().max(1e-12) {
            self.stalled = 0;
        } else {
            self.stalled += 1;
        }
        self.prev = loss;
        if self.rising >= 50 {
            return LoopVerdict::Diverged;
        }
        if self.stalled >= self.patience {
            return LoopVerdict::Converged;
        }
        LoopVerdict::Continue
    }
}
