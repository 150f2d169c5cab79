use super::registry::{ParamId, ParamRegistry};
use super::surrogate_grad;
use crate::error::{Error, Result};
use crate::neuron::heaviside;
use crate::numerics::{Axes, Reduction, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant { discrete: bool },
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    MatMul(Var, Var),
    Reshape(Var),
    AddBias(Var, Var),
    Sigmoid(Var),
    ShiftTime(Var),
    Heaviside { h: Var, v_th: Var, alpha: f64 },
    SliceTime(Var, usize),
    StackTime(Vec<Var>),
    Sum(Var),
    Mean(Var),
    MeanExcept(Var, usize),
    Dot(Var, Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Linear record of one forward computation. Nodes only reference earlier
/// nodes, so reverse insertion order is a reverse topological order.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient of a scalar with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

fn add_into(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            *acc = acc.add(&g).expect("gradient shape is fixed by the forward pass");
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape_check(&self, a: Var, b: Var) -> Result<()> {
        self.value(a).ensure_same_shape(self.value(b))
    }

    /// Input with no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant { discrete: false })
    }

    /// Gradient-free input produced by a discrete decision (Bernoulli draws).
    /// Included in [`Tape::discrete_signature`].
    pub fn discrete(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant { discrete: true })
    }

    pub fn param(&mut self, registry: &ParamRegistry, id: ParamId) -> Var {
        self.push(registry.value(id).clone(), Op::Param(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.shape_check(a, b)?;
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.shape_check(a, b)?;
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.shape_check(a, b)?;
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| 1.0 - x);
        self.push(v, Op::OneMinus(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Adds `bias[N]` along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = self.value(bias).len();
        let xs = self.value(x);
        if xs.shape().last() != Some(&n) || self.value(bias).shape().len() != 1 {
            return Err(Error::ShapeMismatch {
                left: xs.shape().to_vec(),
                right: self.value(bias).shape().to_vec(),
            });
        }
        let bd = self.value(bias).data();
        let xd = xs.data();
        let v = Tensor::from_fn(xs.shape(), |i| xd[i] + bd[i % n]);
        Ok(self.push(v, Op::AddBias(x, bias)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).sigmoid();
        self.push(v, Op::Sigmoid(a))
    }

    /// One-step delay along axis 0 with a zero first row.
    pub fn shift_time(&mut self, a: Var) -> Var {
        let v = self.value(a).shift_time();
        self.push(v, Op::ShiftTime(a))
    }

    /// Spike nonlinearity `[h >= v_th]` with a triangular surrogate of
    /// half-width `alpha` as its derivative. `v_th` must hold one value.
    pub fn heaviside(&mut self, h: Var, v_th: Var, alpha: f64) -> Result<Var> {
        if self.value(v_th).len() != 1 {
            return Err(Error::invalid("threshold node must hold a single value"));
        }
        let v = heaviside(self.value(h), self.value(v_th).item());
        Ok(self.push(v, Op::Heaviside { h, v_th, alpha }))
    }

    /// Row `t` of a rank-3 tensor, as `[B, N]`.
    pub fn slice_time(&mut self, a: Var, t: usize) -> Result<Var> {
        let (tl, b, n) = self.value(a).dims3()?;
        if t >= tl {
            return Err(Error::InvalidAxis {
                axis: t,
                shape: self.value(a).shape().to_vec(),
            });
        }
        let v = Tensor::new(&[b, n], self.value(a).time_row(t).to_vec())?;
        Ok(self.push(v, Op::SliceTime(a, t)))
    }

    /// Stacks same-shaped `[B, N]` rows into `[T, B, N]`.
    pub fn stack_time(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| Error::invalid("stack of zero rows"))?;
        let row_shape = self.value(*first).shape().to_vec();
        let mut data = Vec::new();
        for r in rows {
            self.value(*r).ensure_same_shape(self.value(*first))?;
            data.extend_from_slice(self.value(*r).data());
        }
        let mut shape = vec![rows.len()];
        shape.extend(row_shape);
        let v = Tensor::new(&shape, data)?;
        Ok(self.push(v, Op::StackTime(rows.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).mean()?);
        Ok(self.push(v, Op::Mean(a)))
    }

    /// Mean over every axis except `axis`; result has length `shape[axis]`.
    pub fn mean_except(&mut self, a: Var, axis: usize) -> Result<Var> {
        let rank = self.value(a).shape().len();
        if axis >= rank {
            return Err(Error::InvalidAxis {
                axis,
                shape: self.value(a).shape().to_vec(),
            });
        }
        let others: Vec<usize> = (0..rank).filter(|&x| x != axis).collect();
        let v = self.value(a).reduce(Reduction::Mean, &Axes::Some(others))?;
        Ok(self.push(v, Op::MeanExcept(a, axis)))
    }

    /// Inner product of two same-shaped tensors.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.shape_check(a, b)?;
        let v = Tensor::scalar(self.value(a).mul(self.value(b))?.sum());
        Ok(self.push(v, Op::Dot(a, b)))
    }

    /// Softmax cross-entropy of `logits[T, B, K]`, averaged over batch then
    /// over time.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let loss = crate::losses::cls_loss(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Outputs of every spike and discrete node, in tape order. Two forward
    /// passes with equal signatures took the same branch at every step
    /// function.
    pub fn discrete_signature(&self) -> Vec<&Tensor> {
        self.nodes
            .iter()
            .filter(|n| {
                matches!(
                    n.op,
                    Op::Heaviside { .. } | Op::Constant { discrete: true }
                )
            })
            .map(|n| &n.value)
            .collect()
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Backward("tape is empty; run a forward pass first".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::Backward(format!("node {} is not on this tape", loss.0)));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        match op {
            Op::Constant { .. } | Op::Param(_) => {}
            Op::Add(a, b) => {
                add_into(&mut grads[a.0], g.clone());
                add_into(&mut grads[b.0], g.clone());
            }
            Op::Sub(a, b) => {
                add_into(&mut grads[a.0], g.clone());
                add_into(&mut grads[b.0], g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let ga = g.mul(self.value(*b))?;
                let gb = g.mul(self.value(*a))?;
                add_into(&mut grads[a.0], ga);
                add_into(&mut grads[b.0], gb);
            }
            Op::Scale(a, c) => add_into(&mut grads[a.0], g.scale(*c)),
            Op::OneMinus(a) => add_into(&mut grads[a.0], g.scale(-1.0)),
            Op::MatMul(a, b) => {
                let ga = g.matmul(&self.value(*b).transpose()?)?;
                let gb = self.value(*a).transpose()?.matmul(g)?;
                add_into(&mut grads[a.0], ga);
                add_into(&mut grads[b.0], gb);
            }
            Op::Reshape(a) => {
                add_into(&mut grads[a.0], g.reshape(self.value(*a).shape())?);
            }
            Op::AddBias(x, bias) => {
                let n = self.value(*bias).len();
                let mut gb = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                add_into(&mut grads[x.0], g.clone());
                add_into(&mut grads[bias.0], Tensor::from_vec(gb));
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(out, |g, y| g * y * (1.0 - y))?;
                add_into(&mut grads[a.0], ga);
            }
            Op::ShiftTime(a) => {
                let shape = g.shape();
                let stride: usize = shape[1..].iter().product();
                let gd = g.data();
                let total = gd.len();
                let ga = Tensor::from_fn(shape, |i| {
                    if i + stride < total {
                        gd[i + stride]
                    } else {
                        0.0
                    }
                });
                add_into(&mut grads[a.0], ga);
            }
            Op::Heaviside { h, v_th, alpha } => {
                let th = self.value(*v_th).item();
                let sg = surrogate_grad(self.value(*h), th, *alpha);
                let gh = g.mul(&sg)?;
                // d/dv_th of [h - v_th >= 0] is minus d/dh
                let gv = -gh.sum();
                add_into(&mut grads[v_th.0], Tensor::full(self.value(*v_th).shape(), gv));
                add_into(&mut grads[h.0], gh);
            }
            Op::SliceTime(a, t) => {
                let src = self.value(*a);
                let stride = g.len();
                let gd = g.data();
                let t = *t;
                let ga = Tensor::from_fn(src.shape(), |i| {
                    if i / stride == t {
                        gd[i % stride]
                    } else {
                        0.0
                    }
                });
                add_into(&mut grads[a.0], ga);
            }
            Op::StackTime(rows) => {
                for (t, r) in rows.iter().enumerate() {
                    let row = Tensor::new(self.value(*r).shape(), g.time_row(t).to_vec())?;
                    add_into(&mut grads[r.0], row);
                }
            }
            Op::Sum(a) => {
                let gv = g.item();
                add_into(&mut grads[a.0], Tensor::full(self.value(*a).shape(), gv));
            }
            Op::Mean(a) => {
                let src = self.value(*a);
                let gv = g.item() / src.len() as f64;
                add_into(&mut grads[a.0], Tensor::full(src.shape(), gv));
            }
            Op::MeanExcept(a, axis) => {
                let src = self.value(*a);
                let shape = src.shape();
                let extent = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let count = (src.len() / extent.max(1)) as f64;
                let gd = g.data();
                let ga = Tensor::from_fn(shape, |i| gd[(i / inner) % extent] / count);
                add_into(&mut grads[a.0], ga);
            }
            Op::Dot(a, b) => {
                let gv = g.item();
                let ga = self.value(*b).scale(gv);
                let gb = self.value(*a).scale(gv);
                add_into(&mut grads[a.0], ga);
                add_into(&mut grads[b.0], gb);
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let z = self.value(*logits);
                let (t, b, k) = z.dims3()?;
                let scale = g.item() / (t * b) as f64;
                let mut gz = vec![0.0; z.len()];
                for (row_idx, (row, grow)) in
                    z.data().chunks(k).zip(gz.chunks_mut(k)).enumerate()
                {
                    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let denom: f64 = row.iter().map(|&x| (x - m).exp()).sum();
                    let y = labels[row_idx % b];
                    for (j, (gj, &x)) in grow.iter_mut().zip(row).enumerate() {
                        let p = (x - m).exp() / denom;
                        *gj = scale * (p - if j == y { 1.0 } else { 0.0 });
                    }
                }
                add_into(&mut grads[logits.0], Tensor::new(z.shape(), gz)?);
            }
        }
        Ok(())
    }
}

impl Gradients {
    /// Gradient at `v`, or `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Adds parameter-node gradients into the registry's accumulators, in
    /// tape order.
    pub fn accumulate_into(&self, tape: &Tape, registry: &mut ParamRegistry) -> Result<()> {
        for (node, g) in tape.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                registry.accumulate(*id, g)?;
            }
        }
        Ok(())
    }

    /// Per-parameter gradient, summed over every node that reads it.
    pub fn param_grads(&self, tape: &Tape, registry: &ParamRegistry) -> Result<Vec<Tensor>> {
        let mut out: Vec<Tensor> = registry
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        for (node, g) in tape.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                let slot = &mut out[id.index()];
                *slot = slot.add(g)?;
            }
        }
        Ok(out)
    }
}
