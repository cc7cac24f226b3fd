use super::DdpmError;
use crate::param::Preconditioner;

/// Adam moments with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Rebuilds a state from stored moments; `v` must be non-negative.
    pub fn from_parts(m: Vec<f64>, v: Vec<f64>, step: u64) -> Result<Self, DdpmError> {
        if m.len() != v.len() {
            return Err(DdpmError::ParamCount { expected: m.len(), got: v.len() });
        }
        if let Some(i) = v.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(DdpmError::NonFiniteParam(i));
        }
        Ok(Self { m, v, step, ..Self::new(0) })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Folds a gradient into the moments without touching any parameters.
    pub fn observe(&mut self, g: &[f64]) -> Result<(), DdpmError> {
        if g.len() != self.dim() {
            return Err(DdpmError::ParamCount { expected: self.dim(), got: g.len() });
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        for ((m, v), &gi) in self.m.iter_mut().zip(self.v.iter_mut()).zip(g) {
            *m = b1 * *m + (1.0 - b1) * gi;
            *v = b2 * *v + (1.0 - b2) * gi * gi;
        }
        Ok(())
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], g: &[f64], lr: f64) -> Result<(), DdpmError> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(DdpmError::BadLr(lr));
        }
        if params.len() != self.dim() {
            return Err(DdpmError::ParamCount { expected: self.dim(), got: params.len() });
        }
        self.observe(g)?;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&self.m).zip(&self.v) {
            let m_hat = m / c1;
            let v_hat = v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Diagonal `1 / (√v̂ + eps)`.
    pub fn preconditioner(&self) -> Result<Preconditioner, DdpmError> {
        if self.step == 0 {
            return Err(DdpmError::NoSecondMoment);
        }
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let diag = self.v.iter().map(|v| 1.0 / ((v / c2).sqrt() + self.eps)).collect();
        Ok(Preconditioner::new(diag)?)
    }
}

/// Free-function form of [`AdamState::preconditioner`].
pub fn adam_preconditioner(st: &AdamState) -> Result<Preconditioner, DdpmError> {
    st.preconditioner()
}
