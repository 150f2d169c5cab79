use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Synaptic weight or bias.
    Weight,
    /// Firing threshold.
    Threshold,
    /// Membrane-loss weight; kept non-negative.
    Kappa,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub grad: Tensor,
    velocity: Tensor,
}

/// Every learnable tensor of a model, each registered once under a unique
/// name, with gradient accumulators and momentum buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamRegistry {
    params: Vec<Param>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, kind: ParamKind, value: Tensor) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::invalid(format!("parameter `{name}` registered twice")));
        }
        let zeros = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            kind,
            grad: zeros.clone(),
            velocity: zeros,
            value,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        p.value.ensure_same_shape(&value)?;
        p.value = value;
        Ok(())
    }

    /// Overwrites one element of a parameter.
    pub fn set_element(&mut self, id: ParamId, index: usize, value: f64) {
        let p = &mut self.params[id.0];
        let mut data = p.value.clone().into_data();
        data[index] = value;
        p.value = Tensor::new(p.value.shape(), data).expect("shape unchanged");
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        p.grad = p.grad.add(g)?;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite() && p.grad.is_finite())
    }
}

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v + g`, `p <- p - lr * v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {lr} must be positive")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid(format!("momentum {momentum} not in [0, 1)")));
        }
        Ok(Self { lr, momentum })
    }

    /// Applies accumulated gradients, then zeroes them. Kappa parameters are
    /// clamped at zero after the update.
    pub fn step(&self, registry: &mut ParamRegistry) -> Result<()> {
        let (lr, mu) = (self.lr, self.momentum);
        for p in &mut registry.params {
            p.velocity = p.velocity.zip_map(&p.grad, |v, g| mu * v + g)?;
            p.value = p.value.zip_map(&p.velocity, |x, v| x - lr * v)?;
            if p.kind == ParamKind::Kappa {
                p.value = p.value.map(|k| k.max(0.0));
            }
            p.grad = Tensor::zeros(p.value.shape());
        }
        Ok(())
    }
}
