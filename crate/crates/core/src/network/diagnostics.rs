use super::LayerTrace;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-layer estimation and firing statistics plus accuracy of one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerDiagnostics {
    pub l2_norm: Vec<f64>,
    pub spike_rate: Vec<f64>,
    pub accuracy: f64,
}

/// `||u_hat - u||_2` over all elements. Sequential layers carry the true
/// history, so their norm is 0.
pub fn layer_l2_norm(trace: &LayerTrace) -> Result<f64> {
    match trace.parallel() {
        Some(p) => Ok(p.u_hat.sub(&p.u)?.l2_norm()),
        None => Ok(0.0),
    }
}

/// Percentage of positions that fired.
pub fn spike_rate(o: &Tensor) -> Result<f64> {
    Ok(100.0 * o.mean()?)
}

/// Argmax over classes of the time-averaged `logits[T, B, K]`; ties go to the
/// lowest class index.
pub fn predictions(logits: &Tensor) -> Result<Vec<usize>> {
    let (t, b, k) = logits.dims3()?;
    if t == 0 || k == 0 {
        return Err(Error::EmptyReduction);
    }
    let mut mean = vec![0.0; b * k];
    for step in 0..t {
        for (m, &z) in mean.iter_mut().zip(logits.time_row(step)) {
            *m += z;
        }
    }
    Ok(mean
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (c, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let pred = predictions(logits)?;
    if pred.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyReduction);
    }
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn diagnostics(traces: &[LayerTrace], logits: &Tensor, labels: &[usize]) -> Result<LayerDiagnostics> {
    Ok(LayerDiagnostics {
        l2_norm: traces.iter().map(layer_l2_norm).collect::<Result<_>>()?,
        spike_rate: traces.iter().map(|t| spike_rate(t.o())).collect::<Result<_>>()?,
        accuracy: accuracy(logits, labels)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuron::ParallelTrace;

    fn trace(u_hat: Tensor, u: Tensor, o: Tensor) -> LayerTrace {
        let z = Tensor::zeros(u.shape());
        LayerTrace::Parallel(ParallelTrace {
            i: z.clone(),
            p: z.clone(),
            b: z.clone(),
            u_hat,
            h: z,
            u,
            o,
        })
    }

    #[test]
    fn l2_examples() {
        let u = Tensor::new(&[2, 1, 1], vec![0.5, -1.0]).unwrap();
        let same = trace(u.clone(), u.clone(), Tensor::zeros(&[2, 1, 1]));
        assert_eq!(layer_l2_norm(&same).unwrap(), 0.0);
        let off = Tensor::new(&[2, 1, 1], vec![3.5, 3.0]).unwrap();
        assert_eq!(layer_l2_norm(&trace(off, u, Tensor::zeros(&[2, 1, 1]))).unwrap(), 5.0);
    }

    #[test]
    fn spike_rate_examples() {
        assert_eq!(spike_rate(&Tensor::full(&[3, 2, 4], 1.0)).unwrap(), 100.0);
        assert_eq!(spike_rate(&Tensor::zeros(&[3, 2, 4])).unwrap(), 0.0);
        let o = Tensor::new(&[1, 1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(spike_rate(&o).unwrap(), 25.0);
    }

    #[test]
    fn predictions_use_time_mean() {
        // class 1 wins at t=0 but class 0 wins on average
        let logits = Tensor::new(&[2, 1, 2], vec![0.0, 1.0, 3.0, 0.0]).unwrap();
        assert_eq!(predictions(&logits).unwrap(), vec![0]);
        let shifted = logits.map(|z| z + 7.0);
        assert_eq!(predictions(&shifted).unwrap(), vec![0]);
        assert_eq!(accuracy(&logits, &[0]).unwrap(), 1.0);
        assert_eq!(accuracy(&logits, &[1]).unwrap(), 0.0);
        assert!(accuracy(&logits, &[0, 1]).is_err());
    }

    #[test]
    fn ties_pick_lowest_class() {
        let logits = Tensor::zeros(&[3, 2, 4]);
        assert_eq!(predictions(&logits).unwrap(), vec![0, 0]);
    }
}
