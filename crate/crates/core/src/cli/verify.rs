//! Oracle-equivalence and gradient checks behind `mpe-psn verify`.

use std::fmt;

use crate::autograd::{finite_diff_check, ParamKind, ParamRegistry, Tape};
use crate::error::Result;
use crate::losses::{mem_loss_on_tape, KappaAxis};
use crate::network::{model_forward, synapse_forward, ModelConfig, SpikingClassifier, SynapticDelay};
use crate::neuron::{
    estimate_u_hat, lif_forward, lif_sequential, mpe_psn_forward, mpe_psn_forward_fused,
    parallel_update, teacher_forced_forward, EstimateMode, NeuronParams,
};
use crate::numerics::csv::fmt_f64;
use crate::numerics::{Rng, Tensor};

/// Finite-difference step and tolerance for the smooth-graph check.
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub trials: usize,
    pub seed: u64,
    pub max_time_steps: usize,
    pub max_batch: usize,
    pub max_neurons: usize,
    pub params: NeuronParams,
    /// Test hook: feed the parallel update `u_hat[0]` instead of zero at the
    /// first step.
    pub inject_fault: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            seed: 42,
            max_time_steps: 8,
            max_batch: 4,
            max_neurons: 64,
            params: NeuronParams::default(),
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Largest absolute difference, or relative error for gradient checks.
    pub max_error: f64,
    pub first_failure: Option<String>,
}

impl CheckResult {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            trials: 0,
            failures: 0,
            max_error: 0.0,
            first_failure: None,
        }
    }

    fn record(&mut self, error: f64, ok: bool, context: impl FnOnce() -> String) {
        self.trials += 1;
        if error > self.max_error || error.is_nan() {
            self.max_error = error;
        }
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(context());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("check,trials,failures,max_error,status,first_failure\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.name,
                c.trials,
                c.failures,
                fmt_f64(c.max_error),
                if c.passed() { "pass" } else { "fail" },
                c.first_failure.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "verify (seed {})", self.seed)?;
        for c in &self.checks {
            write!(
                f,
                "  {} {:<34} {:>5} trials, max error {:.3e}",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.trials,
                c.max_error
            )?;
            if let Some(ctx) = &c.first_failure {
                write!(f, "\n       first failure: {ctx}")?;
            }
            writeln!(f)?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed()).count();
        if failed == 0 {
            write!(f, "all {} checks passed", self.checks.len())
        } else {
            write!(f, "{failed} of {} checks failed", self.checks.len())
        }
    }
}

/// Random input drawn for one trial.
struct Trial {
    index: usize,
    input: Tensor,
    rng: Rng,
}

impl Trial {
    fn context(&self, seed: u64) -> String {
        let dims: Vec<String> = self.input.shape().iter().map(|d| d.to_string()).collect();
        format!("seed={seed} trial={} shape={}", self.index, dims.join("x"))
    }
}

fn make_trial(cfg: &VerifyConfig, index: usize) -> Trial {
    let rng = Rng::new(cfg.seed).fork(index as u64);
    let mut s = rng.stream();
    let t = 1 + s.below(cfg.max_time_steps.max(1));
    let b = 1 + s.below(cfg.max_batch.max(1));
    let n = 1 + s.below(cfg.max_neurons.max(1));
    let values = rng.fork(1);
    Trial {
        index,
        input: Tensor::from_fn(&[t, b, n], |k| values.uniform(k as u64) * 4.0 - 2.0),
        rng: rng.fork(2),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `(u, o)` of the parallel pass, optionally with the first-step fault.
fn parallel_u_o(i: &Tensor, cfg: &VerifyConfig, mode: EstimateMode, rng: &Rng) -> Result<(Tensor, Tensor)> {
    if !cfg.inject_fault {
        let tr = mpe_psn_forward(i, &cfg.params, mode, Some(rng))?;
        return Ok((tr.u, tr.o));
    }
    let est = estimate_u_hat(i, mode, Some(rng))?;
    let width = i.len() / i.shape()[0];
    let shifted = est.u_hat.shift_time();
    let (uh, sh) = (est.u_hat.data(), shifted.data());
    let history = Tensor::from_fn(i.shape(), |k| if k < width { uh[k] } else { sh[k] });
    let (_, o, u) = parallel_update(i, &history, &cfg.params)?;
    Ok((u, o))
}

fn check_t0_exactness(cfg: &VerifyConfig, trials: &[Trial]) -> Result<CheckResult> {
    let mut c = CheckResult::new("t0_exactness");
    for tr in trials {
        let seq = lif_sequential(&tr.input, &cfg.params)?;
        let mut err = 0.0f64;
        let mut ok = true;
        for mode in [EstimateMode::Sampled, EstimateMode::Expectation] {
            let (u, o) = parallel_u_o(&tr.input, cfg, mode, &tr.rng)?;
            ok &= u.time_row(0) == seq.u.time_row(0) && o.time_row(0) == seq.o.time_row(0);
            err = err
                .max(max_abs_diff(u.time_row(0), seq.u.time_row(0)))
                .max(max_abs_diff(o.time_row(0), seq.o.time_row(0)));
        }
        c.record(err, ok, || tr.context(cfg.seed));
    }
    Ok(c)
}

fn check_teacher_forcing(cfg: &VerifyConfig, trials: &[Trial]) -> Result<CheckResult> {
    let mut c = CheckResult::new("teacher_forced_equivalence");
    for tr in trials {
        let seq = lif_sequential(&tr.input, &cfg.params)?;
        let (u, o) = teacher_forced_forward(&tr.input, &seq.u, &cfg.params)?;
        let err = max_abs_diff(u.data(), seq.u.data()).max(max_abs_diff(o.data(), seq.o.data()));
        c.record(err, u == seq.u && o == seq.o, || tr.context(cfg.seed));
    }
    Ok(c)
}

fn check_fused_paths(cfg: &VerifyConfig, trials: &[Trial]) -> Result<CheckResult> {
    let mut c = CheckResult::new("forward_only_paths_match");
    for tr in trials {
        let traced = mpe_psn_forward(&tr.input, &cfg.params, EstimateMode::Sampled, Some(&tr.rng))?;
        let (u, o) = mpe_psn_forward_fused(&tr.input, &cfg.params, &tr.rng)?;
        let seq = lif_sequential(&tr.input, &cfg.params)?;
        let (su, so) = lif_forward(&tr.input, &cfg.params)?;
        let err = max_abs_diff(u.data(), traced.u.data())
            .max(max_abs_diff(o.data(), traced.o.data()))
            .max(max_abs_diff(su.data(), seq.u.data()))
            .max(max_abs_diff(so.data(), seq.o.data()));
        let ok = u == traced.u && o == traced.o && su == seq.u && so == seq.o;
        c.record(err, ok, || tr.context(cfg.seed));
    }
    Ok(c)
}

fn check_straight_through(cfg: &VerifyConfig, trials: &[Trial]) -> Result<CheckResult> {
    let mut c = CheckResult::new("straight_through_gradient");
    for tr in trials {
        let est = estimate_u_hat(&tr.input, EstimateMode::Sampled, Some(&tr.rng))?;
        let mut tape = Tape::new();
        let i = tape.constant(tr.input.clone());
        let b = tape.discrete(est.b.clone());
        let keep = tape.one_minus(b);
        let u_hat = tape.mul(keep, i)?;
        let l = tape.sum(u_hat);
        let g = tape.backward(l)?;
        let expected = est.b.map(|b| 1.0 - b);
        let got = g.wrt(i).cloned().unwrap_or_else(|| Tensor::zeros(tr.input.shape()));
        let ok = got == expected && tape.value(u_hat) == &est.u_hat;
        c.record(max_abs_diff(got.data(), expected.data()), ok, || tr.context(cfg.seed));
    }
    Ok(c)
}

/// Smooth graph: `mean((sigmoid(x W + bias) - y)^2)`.
fn dense_graph(rng: &Rng) -> Result<(ParamRegistry, Tensor, Tensor)> {
    let mut s = rng.stream();
    let (m, k, n) = (1 + s.below(5), 1 + s.below(5), 1 + s.below(5));
    let mut reg = ParamRegistry::new();
    let w = rng.fork(1);
    reg.register(
        "w",
        ParamKind::Weight,
        Tensor::from_fn(&[k, n], |i| w.uniform(i as u64) * 2.0 - 1.0),
    )?;
    let bias = rng.fork(2);
    reg.register(
        "bias",
        ParamKind::Weight,
        Tensor::from_fn(&[n], |i| bias.uniform(i as u64) - 0.5),
    )?;
    let xr = rng.fork(3);
    let yr = rng.fork(4);
    let x = Tensor::from_fn(&[m, k], |i| xr.uniform(i as u64) * 4.0 - 2.0);
    let y = Tensor::from_fn(&[m, n], |i| yr.uniform(i as u64));
    Ok((reg, x, y))
}

/// Smooth graph shaped like the membrane loss path with the Bernoulli
/// indicator frozen: synapse, `(1 - b) * I`, shift, decay and kappa-weighted
/// squared error against a fixed target.
fn membrane_graph(rng: &Rng) -> Result<(ParamRegistry, Tensor, Tensor, Tensor, [usize; 3])> {
    let mut s = rng.stream();
    let (t, b, np, n) = (1 + s.below(4), 1 + s.below(3), 1 + s.below(4), 1 + s.below(4));
    let mut reg = ParamRegistry::new();
    let w = rng.fork(1);
    reg.register(
        "w",
        ParamKind::Weight,
        Tensor::from_fn(&[np, n], |i| w.uniform(i as u64) * 2.0 - 1.0),
    )?;
    let kr = rng.fork(2);
    reg.register(
        "kappa",
        ParamKind::Kappa,
        Tensor::from_fn(&[t], |i| 0.5 + kr.uniform(i as u64)),
    )?;
    let xr = rng.fork(3);
    let x = Tensor::from_fn(&[t * b, np], |i| xr.uniform(i as u64) * 4.0 - 2.0);
    let br = rng.fork(4);
    let mask = Tensor::from_fn(&[t, b, n], |i| if br.uniform(i as u64) < 0.3 { 1.0 } else { 0.0 });
    let tr = rng.fork(5);
    let target = Tensor::from_fn(&[t, b, n], |i| tr.uniform(i as u64) * 2.0 - 1.0);
    Ok((reg, x, mask, target, [t, b, n]))
}

fn check_finite_differences(cfg: &VerifyConfig, graphs: usize) -> Result<CheckResult> {
    let mut c = CheckResult::new("finite_difference_gradients");
    let tau = cfg.params.tau_m;
    for g in 0..graphs {
        let rng = Rng::new(cfg.seed).fork(0xfd).fork(g as u64);
        let report = if g % 2 == 0 {
            let (mut reg, x, y) = dense_graph(&rng)?;
            finite_diff_check(
                &mut reg,
                |tape, r| {
                    let xv = tape.constant(x.clone());
                    let yv = tape.constant(y.clone());
                    let w = tape.param(r, r.find("w").expect("registered"));
                    let bias = tape.param(r, r.find("bias").expect("registered"));
                    let z = tape.matmul(xv, w)?;
                    let z = tape.add_bias(z, bias)?;
                    let s = tape.sigmoid(z);
                    let d = tape.sub(s, yv)?;
                    let sq = tape.mul(d, d)?;
                    tape.mean(sq)
                },
                FD_STEP,
            )?
        } else {
            let (mut reg, x, mask, target, shape) = membrane_graph(&rng)?;
            finite_diff_check(
                &mut reg,
                |tape, r| {
                    let xv = tape.constant(x.clone());
                    let w = tape.param(r, r.find("w").expect("registered"));
                    let z = tape.matmul(xv, w)?;
                    let i = tape.reshape(z, &shape)?;
                    let b = tape.discrete(mask.clone());
                    let keep = tape.one_minus(b);
                    let u_hat = tape.mul(keep, i)?;
                    let hist = tape.shift_time(u_hat);
                    let decayed = tape.scale(hist, tau);
                    let h = tape.add(decayed, i)?;
                    let kappa = tape.param(r, r.find("kappa").expect("registered"));
                    mem_loss_on_tape(tape, h, &target, kappa, KappaAxis::Time)
                },
                FD_STEP,
            )?
        };
        let ok = report.max_rel_error < FD_TOLERANCE && report.skipped.is_empty();
        c.record(report.max_rel_error, ok, || format!("seed={} graph={g}", cfg.seed));
    }
    Ok(c)
}

fn check_surrogate_chain() -> Result<CheckResult> {
    let mut c = CheckResult::new("surrogate_chain_hand_value");
    let mut reg = ParamRegistry::new();
    let w = reg.register("w", ParamKind::Weight, Tensor::new(&[1, 1], vec![1.2])?)?;
    let th = reg.register("v_th", ParamKind::Threshold, Tensor::scalar(1.0))?;
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 1], vec![1.0])?);
    let wv = tape.param(&reg, w);
    let thv = tape.param(&reg, th);
    let h = tape.matmul(x, wv)?;
    let o = tape.heaviside(h, thv, 1.0)?;
    let l = tape.sum(o);
    let g = tape.backward(l)?.param_grads(&tape, &reg)?;
    let (dw, dth) = (g[w.index()].item(), g[th.index()].item());
    let err = (dw - 0.8).abs().max((dth + 0.8).abs());
    c.record(err, dw == 0.8 && dth == -0.8, || format!("dw={dw} dv_th={dth}"));
    Ok(c)
}

fn check_network_composition(cfg: &VerifyConfig, trials: &[Trial]) -> Result<CheckResult> {
    let mut c = CheckResult::new("network_layer_matches_neuron");
    for tr in trials {
        let (_, _, n) = tr.input.dims3()?;
        let model = SpikingClassifier::new(&ModelConfig {
            inputs: n,
            hidden: vec![n],
            classes: n.max(2),
            neuron: cfg.params,
            seed: cfg.seed ^ tr.index as u64,
            ..ModelConfig::default()
        })?;
        let (_, traces) = model_forward(&tr.input, &model, EstimateMode::Sampled, &tr.rng)?;
        let w = model.registry.value(model.layers[0].synapse.weight);
        let i = synapse_forward(&tr.input, w, None, SynapticDelay::Same)?;
        let direct = mpe_psn_forward(&i, &model.layer_params(0), EstimateMode::Sampled, Some(&tr.rng.fork(0)))?;
        let got = traces[0].parallel();
        let err = got.map_or(f64::INFINITY, |g| {
            max_abs_diff(g.u.data(), direct.u.data()).max(max_abs_diff(g.o.data(), direct.o.data()))
        });
        c.record(err, got == Some(&direct), || tr.context(cfg.seed));
    }
    Ok(c)
}

/// Runs every check. Gradient and composition checks use one tenth of the
/// trial count (at least one).
pub fn run_verify(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.trials == 0 {
        return Err(crate::Error::invalid("trials must be at least 1"));
    }
    cfg.params.validate()?;
    let trials: Vec<Trial> = (0..cfg.trials).map(|k| make_trial(cfg, k)).collect();
    let few = &trials[..cfg.trials.div_ceil(10)];
    Ok(VerifyReport {
        seed: cfg.seed,
        checks: vec![
            check_t0_exactness(cfg, &trials)?,
            check_teacher_forcing(cfg, &trials)?,
            check_fused_paths(cfg, &trials)?,
            check_straight_through(cfg, &trials)?,
            check_finite_differences(cfg, few.len())?,
            check_surrogate_chain()?,
            check_network_composition(cfg, few)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(trials: usize) -> VerifyConfig {
        VerifyConfig {
            trials,
            ..VerifyConfig::default()
        }
    }

    #[test]
    fn default_suite_passes() {
        let rep = run_verify(&small(50)).unwrap();
        assert!(rep.passed(), "{rep}");
        assert_eq!(rep.check("finite_difference_gradients").unwrap().trials, 5);
    }

    #[test]
    fn injected_fault_breaks_first_step() {
        let rep = run_verify(&VerifyConfig {
            inject_fault: true,
            ..small(50)
        })
        .unwrap();
        assert!(!rep.passed());
        let t0 = rep.check("t0_exactness").unwrap();
        assert!(t0.failures > 0);
        assert!(t0.first_failure.as_deref().unwrap().contains("seed=42"));
        assert!(rep.check("teacher_forced_equivalence").unwrap().passed());
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(run_verify(&small(0)).is_err());
    }

    #[test]
    fn report_is_deterministic() {
        let a = run_verify(&small(20)).unwrap();
        let b = run_verify(&small(20)).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_string(), b.to_string());
        assert!(a.to_csv().starts_with("check,trials,failures,max_error,status,first_failure\n"));
    }
}
