use super::{ParamId, ParamRegistry, Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative errors; gradients smaller than this are
/// effectively compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedCoordinate {
    pub param: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation flipped a spike or Bernoulli decision.
    pub skipped: Vec<SkippedCoordinate>,
}

pub(crate) fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares tape gradients of the scalar built by `build` against central
/// differences with the given `step`, coordinate by coordinate, over every
/// registered parameter.
///
/// A coordinate is skipped (and reported) when either perturbed forward pass
/// changes any spike or discrete decision, since the function is not
/// differentiable across such a jump.
pub fn finite_diff_check<F>(
    registry: &mut ParamRegistry,
    build: F,
    step: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamRegistry) -> Result<Var>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut tape = Tape::new();
    let loss = build(&mut tape, registry)?;
    let analytic = tape.backward(loss)?.param_grads(&tape, registry)?;
    let signature: Vec<_> = tape.discrete_signature().into_iter().cloned().collect();

    let eval = |reg: &ParamRegistry| -> Result<(f64, bool)> {
        let mut t = Tape::new();
        let l = build(&mut t, reg)?;
        let same = t
            .discrete_signature()
            .into_iter()
            .eq(signature.iter());
        Ok((t.value(l).item(), same))
    };

    let ids: Vec<ParamId> = registry.ids().collect();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: Vec::new(),
    };
    for id in ids {
        let original = registry.value(id).clone();
        for k in 0..original.len() {
            let x = original.data()[k];
            registry.set_element(id, k, x + step);
            let (plus, same_plus) = eval(registry)?;
            registry.set_element(id, k, x - step);
            let (minus, same_minus) = eval(registry)?;
            registry.set_element(id, k, x);
            if !(same_plus && same_minus) {
                report.skipped.push(SkippedCoordinate {
                    param: registry.get(id).name.clone(),
                    index: k,
                });
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[id.index()].data()[k], numeric);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::ParamKind;
    use crate::numerics::{Rng, Tensor};

    #[test]
    fn quadratic_is_exact() {
        let mut reg = ParamRegistry::new();
        reg.register("x", ParamKind::Weight, Tensor::from_vec(vec![0.7, -1.3, 2.1]))
            .unwrap();
        let build = |t: &mut Tape, r: &ParamRegistry| {
            let x = t.param(r, r.find("x").unwrap());
            let sq = t.mul(x, x)?;
            Ok(t.sum(sq))
        };
        let rep = finite_diff_check(&mut reg, build, 1e-5).unwrap();
        assert_eq!(rep.checked, 3);
        assert!(rep.max_rel_error < 1e-9, "{}", rep.max_rel_error);
    }

    #[test]
    fn sigmoid_chain() {
        let rng = Rng::new(4);
        let mut reg = ParamRegistry::new();
        reg.register(
            "w",
            ParamKind::Weight,
            Tensor::from_fn(&[3, 2], |i| rng.uniform(i as u64) - 0.5),
        )
        .unwrap();
        let x = Tensor::from_fn(&[4, 3], |i| rng.fork(1).uniform(i as u64) * 2.0 - 1.0);
        let y = Tensor::from_fn(&[4, 2], |i| rng.fork(2).uniform(i as u64));
        let build = move |t: &mut Tape, r: &ParamRegistry| {
            let xv = t.constant(x.clone());
            let yv = t.constant(y.clone());
            let w = t.param(r, r.find("w").unwrap());
            let z = t.matmul(xv, w)?;
            let s = t.sigmoid(z);
            let d = t.sub(s, yv)?;
            let sq = t.mul(d, d)?;
            t.mean(sq)
        };
        let rep = finite_diff_check(&mut reg, build, 1e-5).unwrap();
        assert_eq!(rep.checked, 6);
        assert!(rep.max_rel_error < 1e-4, "{}", rep.max_rel_error);
    }

    #[test]
    fn threshold_crossing_is_skipped() {
        let mut reg = ParamRegistry::new();
        // h = w sits exactly on the threshold, so +-step flips the spike
        reg.register("w", ParamKind::Weight, Tensor::from_vec(vec![1.0, 3.0]))
            .unwrap();
        let build = |t: &mut Tape, r: &ParamRegistry| {
            let w = t.param(r, r.find("w").unwrap());
            let th = t.constant(Tensor::scalar(1.0));
            let o = t.heaviside(w, th, 1.0)?;
            let l = t.mul(o, w)?;
            Ok(t.sum(l))
        };
        let rep = finite_diff_check(&mut reg, build, 1e-5).unwrap();
        assert_eq!(
            rep.skipped,
            vec![SkippedCoordinate {
                param: "w".into(),
                index: 0
            }]
        );
        assert_eq!(rep.checked, 1);
    }

    #[test]
    fn bad_step_rejected() {
        let mut reg = ParamRegistry::new();
        let r = finite_diff_check(&mut reg, |t, _| Ok(t.constant(Tensor::scalar(0.0))), 0.0);
        assert!(r.is_err());
    }
}
