//! Membrane approximation loss, per-time-step classification loss, and their
//! weighted sum.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::numerics::{Axes, Reduction, Tensor};

/// Axis that the learnable loss weights `kappa` index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum KappaAxis {
    /// One weight per time step (length `T`).
    Time,
    /// One weight per neuron (length `N`).
    Neuron,
}

impl KappaAxis {
    /// Position of this axis in a `[T, B, N]` tensor.
    pub fn dim(self) -> usize {
        match self {
            KappaAxis::Time => 0,
            KappaAxis::Neuron => 2,
        }
    }
}

impl std::fmt::Display for KappaAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            KappaAxis::Time => "time",
            KappaAxis::Neuron => "neuron",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemLossConfig {
    /// Weight of the membrane term in the total loss.
    pub lambda: f64,
    pub kappa_axis: KappaAxis,
    /// Initial value of every kappa entry.
    pub kappa_init: f64,
}

impl Default for MemLossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            kappa_axis: KappaAxis::Time,
            kappa_init: 1.0,
        }
    }
}

impl MemLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::invalid(format!("lambda {} not in [0, 1]", self.lambda)));
        }
        if !(self.kappa_init >= 0.0 && self.kappa_init.is_finite()) {
            return Err(Error::invalid(format!(
                "kappa init {} must be non-negative",
                self.kappa_init
            )));
        }
        Ok(())
    }

    /// Initial kappa vector for a layer of shape `[T, B, N]`.
    pub fn initial_kappa(&self, shape: &[usize]) -> Tensor {
        Tensor::full(&[shape[self.kappa_axis.dim()]], self.kappa_init)
    }
}

fn check_kappa(u_hat: &Tensor, kappa: &Tensor, axis: KappaAxis) -> Result<()> {
    u_hat.dims3()?;
    let expected = u_hat.shape()[axis.dim()];
    if kappa.shape().len() != 1 || kappa.len() != expected {
        return Err(Error::KappaLength {
            got: kappa.len(),
            expected,
        });
    }
    Ok(())
}

/// `sum_a kappa[a] * mean_{other axes} (u_hat - u_target)^2` for one layer.
pub fn mem_loss(u_hat: &Tensor, u_target: &Tensor, kappa: &Tensor, axis: KappaAxis) -> Result<f64> {
    u_hat.ensure_same_shape(u_target)?;
    check_kappa(u_hat, kappa, axis)?;
    let sq = crate::neuron::estimation_error(u_hat, u_target)?;
    let others: Vec<usize> = (0..3).filter(|&d| d != axis.dim()).collect();
    let per_axis = sq.reduce(Reduction::Mean, &Axes::Some(others))?;
    Ok(kappa.mul(&per_axis)?.sum())
}

/// Tape version of [`mem_loss`]; `u_target` enters as a constant so no
/// gradient reaches it.
pub fn mem_loss_on_tape(
    tape: &mut Tape,
    u_hat: Var,
    u_target: &Tensor,
    kappa: Var,
    axis: KappaAxis,
) -> Result<Var> {
    tape.value(u_hat).ensure_same_shape(u_target)?;
    check_kappa(tape.value(u_hat), tape.value(kappa), axis)?;
    let target = tape.constant(u_target.clone());
    let diff = tape.sub(u_hat, target)?;
    let sq = tape.mul(diff, diff)?;
    let per_axis = tape.mean_except(sq, axis.dim())?;
    tape.dot(kappa, per_axis)
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize, usize)> {
    let (t, b, k) = logits.dims3()?;
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 classes, got {k}")));
    }
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    if t == 0 || b == 0 {
        return Err(Error::EmptyReduction);
    }
    Ok((t, b, k))
}

/// Softmax cross-entropy of one logit row against class `y`.
fn cross_entropy(row: &[f64], y: usize) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&z| (z - m).exp()).sum();
    (m - row[y]) + sum.ln()
}

/// Cross-entropy at every time step of `logits[T, B, K]`, averaged over the
/// batch and then over time.
pub fn cls_loss(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (t, b, k) = check_labels(logits, labels)?;
    let mut total = 0.0;
    for step in 0..t {
        let row = logits.time_row(step);
        let mut per_step = 0.0;
        for (sample, &y) in labels.iter().enumerate() {
            per_step += cross_entropy(&row[sample * k..(sample + 1) * k], y);
        }
        total += per_step / b as f64;
    }
    Ok(total / t as f64)
}

/// `(1 - lambda) * l_cls + lambda * l_mem`.
pub fn total_loss(l_cls: f64, l_mem: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * l_cls + lambda * l_mem
}

/// Tape version of [`total_loss`].
pub fn total_loss_on_tape(tape: &mut Tape, l_cls: Var, l_mem: Var, lambda: f64) -> Result<Var> {
    let a = tape.scale(l_cls, 1.0 - lambda);
    let b = tape.scale(l_mem, lambda);
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn rand3(seed: u64, shape: &[usize]) -> Tensor {
        let r = Rng::new(seed);
        Tensor::from_fn(shape, |i| r.uniform(i as u64) * 2.0 - 1.0)
    }

    #[test]
    fn mem_loss_examples() {
        let u = rand3(1, &[3, 2, 4]);
        let k = Tensor::full(&[3], 1.0);
        assert_eq!(mem_loss(&u, &u, &k, KappaAxis::Time).unwrap(), 0.0);

        let a = Tensor::new(&[1, 1, 1], vec![0.5]).unwrap();
        let z = Tensor::zeros(&[1, 1, 1]);
        assert_eq!(mem_loss(&a, &z, &Tensor::from_vec(vec![1.0]), KappaAxis::Time).unwrap(), 0.25);

        let a = rand3(2, &[2, 3, 4]);
        let b = rand3(3, &[2, 3, 4]);
        let m0 = estimate_step_mse(&a, &b, 0);
        let l = mem_loss(&a, &b, &Tensor::from_vec(vec![2.0, 0.0]), KappaAxis::Time).unwrap();
        assert_eq!(l, 2.0 * m0);
    }

    fn estimate_step_mse(a: &Tensor, b: &Tensor, t: usize) -> f64 {
        let (ra, rb) = (a.time_row(t), b.time_row(t));
        ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / ra.len() as f64
    }

    #[test]
    fn mem_loss_neuron_axis_and_length_check() {
        let a = rand3(4, &[2, 3, 4]);
        let b = rand3(5, &[2, 3, 4]);
        let k = Tensor::full(&[4], 0.5);
        let l = mem_loss(&a, &b, &k, KappaAxis::Neuron).unwrap();
        // uniform kappa over N: 0.5 * N * global mean
        let global = crate::neuron::estimation_error(&a, &b).unwrap().mean().unwrap();
        assert!((l - 0.5 * 4.0 * global).abs() < 1e-14);
        assert!(matches!(
            mem_loss(&a, &b, &Tensor::full(&[3], 1.0), KappaAxis::Neuron),
            Err(Error::KappaLength { got: 3, expected: 4 })
        ));
    }

    #[test]
    fn mem_loss_tape_matches_pure() {
        let a = rand3(6, &[3, 2, 5]);
        let b = rand3(7, &[3, 2, 5]);
        let k = Tensor::from_vec(vec![0.3, 1.0, 2.0]);
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let kv = tape.constant(k.clone());
        let l = mem_loss_on_tape(&mut tape, av, &b, kv, KappaAxis::Time).unwrap();
        assert_eq!(tape.value(l).item(), mem_loss(&a, &b, &k, KappaAxis::Time).unwrap());
    }

    #[test]
    fn cls_loss_examples() {
        let uniform = Tensor::zeros(&[3, 4, 2]);
        let l = cls_loss(&uniform, &[0, 1, 1, 0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

        let confident = Tensor::new(&[1, 1, 2], vec![50.0, 0.0]).unwrap();
        assert!(cls_loss(&confident, &[0]).unwrap() < 1e-15);

        let step = rand3(8, &[1, 3, 4]);
        let repeated = Tensor::new(&[5, 3, 4], step.data().repeat(5)).unwrap();
        let labels = [0, 3, 2];
        let single = cls_loss(&step, &labels).unwrap();
        assert!((cls_loss(&repeated, &labels).unwrap() - single).abs() < 1e-15);
    }

    #[test]
    fn cls_loss_rejects_bad_labels() {
        let z = Tensor::zeros(&[1, 2, 3]);
        assert!(matches!(
            cls_loss(&z, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
        assert!(cls_loss(&z, &[0]).is_err());
        assert!(cls_loss(&Tensor::zeros(&[1, 1, 1]), &[0]).is_err());
    }

    #[test]
    fn total_loss_weighting() {
        assert_eq!(total_loss(1.3, 7.0, 0.0), 1.3);
        assert_eq!(total_loss(1.3, 7.0, 1.0), 7.0);
        assert!((total_loss(1.0, 2.0, 0.01) - 1.01).abs() < 1e-15);
    }
}
