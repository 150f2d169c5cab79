//! Spiking layers, a small classifier built from them, training, and per-epoch
//! diagnostics.

mod diagnostics;
mod train;

pub use diagnostics::{
    accuracy, diagnostics, layer_l2_norm, predictions, spike_rate, LayerDiagnostics,
};
pub use train::{train, train_with, write_log_csv, EpochDiagnostics, TrainConfig};

use crate::autograd::{ParamId, ParamKind, ParamRegistry, Tape, Var};
use crate::error::{Error, Result};
use crate::neuron::{estimate_u_hat, EstimateMode, LifTrace, NeuronParams, ParallelTrace};
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum NeuronKind {
    /// Time-parallel neuron with estimated membrane history.
    MpePsn,
    /// Sequential LIF recurrence.
    Lif,
}

/// Which presynaptic time step feeds `I_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SynapticDelay {
    /// `I_t = W o_t`.
    #[default]
    Same,
    /// `I_t = W o_{t-1}`, `o_{-1} = 0`.
    OneStep,
}

impl TryFrom<u8> for SynapticDelay {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(SynapticDelay::Same),
            1 => Ok(SynapticDelay::OneStep),
            _ => Err(Error::invalid(format!("synaptic delay must be 0 or 1, got {v}"))),
        }
    }
}

/// Dense synapse `[N_prev, N]` with optional bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearSynapse {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikingLayer {
    pub synapse: LinearSynapse,
    pub threshold: ParamId,
    pub kind: NeuronKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub kind: NeuronKind,
    pub delay: SynapticDelay,
    /// `tau_m`, initial `v_th` and `alpha` shared by every spiking layer.
    pub neuron: NeuronParams,
    /// Bias on the spiking layers' synapses. The readout always has one.
    pub hidden_bias: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            inputs: 16,
            hidden: vec![32, 32],
            classes: 2,
            kind: NeuronKind::MpePsn,
            delay: SynapticDelay::Same,
            neuron: NeuronParams::default(),
            hidden_bias: false,
            seed: 42,
        }
    }
}

/// Per-layer record of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerTrace {
    Parallel(ParallelTrace),
    Sequential { i: Tensor, trace: LifTrace },
}

impl LayerTrace {
    pub fn i(&self) -> &Tensor {
        match self {
            LayerTrace::Parallel(t) => &t.i,
            LayerTrace::Sequential { i, .. } => i,
        }
    }

    pub fn h(&self) -> &Tensor {
        match self {
            LayerTrace::Parallel(t) => &t.h,
            LayerTrace::Sequential { trace, .. } => &trace.h,
        }
    }

    pub fn u(&self) -> &Tensor {
        match self {
            LayerTrace::Parallel(t) => &t.u,
            LayerTrace::Sequential { trace, .. } => &trace.u,
        }
    }

    pub fn o(&self) -> &Tensor {
        match self {
            LayerTrace::Parallel(t) => &t.o,
            LayerTrace::Sequential { trace, .. } => &trace.o,
        }
    }

    pub fn parallel(&self) -> Option<&ParallelTrace> {
        match self {
            LayerTrace::Parallel(t) => Some(t),
            LayerTrace::Sequential { .. } => None,
        }
    }
}

/// A forward pass recorded on a tape.
#[derive(Debug)]
pub struct ForwardPass {
    pub tape: Tape,
    pub logits: Var,
    /// Tape node of each layer's membrane estimate (parallel layers only).
    pub u_hat: Vec<Option<Var>>,
    pub traces: Vec<LayerTrace>,
}

/// Spiking layers followed by a non-spiking linear readout producing
/// `logits[T, B, K]`.
#[derive(Debug, Clone)]
pub struct SpikingClassifier {
    pub layers: Vec<SpikingLayer>,
    pub readout: LinearSynapse,
    pub delay: SynapticDelay,
    pub neuron: NeuronParams,
    pub classes: usize,
    pub inputs: usize,
    pub registry: ParamRegistry,
}

/// `I = o_prev . W (+ bias)` over all time steps, honouring the delay.
pub fn synapse_forward(
    o_prev: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    delay: SynapticDelay,
) -> Result<Tensor> {
    let (t, b, n_prev) = o_prev.dims3()?;
    let n = match weight.shape()[..] {
        [rows, cols] if rows == n_prev => cols,
        _ => {
            return Err(Error::ShapeMismatch {
                left: o_prev.shape().to_vec(),
                right: weight.shape().to_vec(),
            })
        }
    };
    let src = match delay {
        SynapticDelay::Same => o_prev.clone(),
        SynapticDelay::OneStep => o_prev.shift_time(),
    };
    let mut z = src.into_reshaped(&[t * b, n_prev])?.matmul(weight)?;
    if let Some(bias) = bias {
        if bias.shape() != [n] {
            return Err(Error::ShapeMismatch {
                left: vec![n],
                right: bias.shape().to_vec(),
            });
        }
        let bd = bias.data();
        let zd = z.data();
        z = Tensor::from_fn(z.shape(), |i| zd[i] + bd[i % n]);
    }
    z.into_reshaped(&[t, b, n])
}

impl SpikingClassifier {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.neuron.validate()?;
        if cfg.inputs == 0 || cfg.hidden.is_empty() || cfg.hidden.contains(&0) {
            return Err(Error::invalid("need inputs > 0 and at least one non-empty spiking layer"));
        }
        if cfg.classes < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        let root = Rng::new(cfg.seed).fork(0x5eed);
        let mut registry = ParamRegistry::new();
        let mut layers = Vec::with_capacity(cfg.hidden.len());
        let mut prev = cfg.inputs;
        for (l, &width) in cfg.hidden.iter().enumerate() {
            let synapse = Self::init_synapse(
                &mut registry,
                &format!("layer{l}"),
                prev,
                width,
                cfg.hidden_bias,
                &root.fork(l as u64),
            )?;
            let threshold = registry.register(
                &format!("layer{l}.v_th"),
                ParamKind::Threshold,
                Tensor::scalar(cfg.neuron.v_th),
            )?;
            layers.push(SpikingLayer {
                synapse,
                threshold,
                kind: cfg.kind,
            });
            prev = width;
        }
        let readout = Self::init_synapse(
            &mut registry,
            "readout",
            prev,
            cfg.classes,
            true,
            &root.fork(u64::MAX),
        )?;
        Ok(Self {
            layers,
            readout,
            delay: cfg.delay,
            neuron: cfg.neuron,
            classes: cfg.classes,
            inputs: cfg.inputs,
            registry,
        })
    }

    /// Weights uniform in `+-sqrt(1 / N_prev)`, bias zero.
    fn init_synapse(
        registry: &mut ParamRegistry,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &Rng,
    ) -> Result<LinearSynapse> {
        let bound = (1.0 / inputs as f64).sqrt();
        let w = Tensor::from_fn(&[inputs, outputs], |i| (2.0 * rng.uniform(i as u64) - 1.0) * bound);
        let weight = registry.register(&format!("{name}.weight"), ParamKind::Weight, w)?;
        let bias = if bias {
            Some(registry.register(
                &format!("{name}.bias"),
                ParamKind::Weight,
                Tensor::zeros(&[outputs]),
            )?)
        } else {
            None
        };
        Ok(LinearSynapse {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    /// Neuron parameters of layer `l` with its current learned threshold.
    pub fn layer_params(&self, l: usize) -> NeuronParams {
        NeuronParams {
            v_th: self.registry.value(self.layers[l].threshold).item(),
            ..self.neuron
        }
    }

    fn synapse_on_tape(
        &self,
        tape: &mut Tape,
        x: Var,
        syn: &LinearSynapse,
        delay: SynapticDelay,
    ) -> Result<Var> {
        let (t, b, n_prev) = tape.value(x).dims3()?;
        if n_prev != syn.inputs {
            return Err(Error::ShapeMismatch {
                left: tape.value(x).shape().to_vec(),
                right: vec![syn.inputs, syn.outputs],
            });
        }
        let src = match delay {
            SynapticDelay::Same => x,
            SynapticDelay::OneStep => tape.shift_time(x),
        };
        let flat = tape.reshape(src, &[t * b, n_prev])?;
        let w = tape.param(&self.registry, syn.weight);
        let mut z = tape.matmul(flat, w)?;
        if let Some(bias) = syn.bias {
            let bv = tape.param(&self.registry, bias);
            z = tape.add_bias(z, bv)?;
        }
        tape.reshape(z, &[t, b, syn.outputs])
    }

    fn parallel_neuron_on_tape(
        &self,
        tape: &mut Tape,
        i: Var,
        layer: &SpikingLayer,
        mode: EstimateMode,
        rng: &Rng,
    ) -> Result<(Var, Var, LayerTrace)> {
        let est = estimate_u_hat(tape.value(i), mode, Some(rng))?;
        let b = tape.discrete(est.b.clone());
        let keep = tape.one_minus(b);
        let u_hat = tape.mul(keep, i)?;
        let history = tape.shift_time(u_hat);
        let decayed = tape.scale(history, self.neuron.tau_m);
        let h = tape.add(decayed, i)?;
        let th = tape.param(&self.registry, layer.threshold);
        let o = tape.heaviside(h, th, self.neuron.alpha)?;
        let silent = tape.one_minus(o);
        let u = tape.mul(h, silent)?;
        let trace = ParallelTrace {
            i: tape.value(i).clone(),
            p: est.p,
            b: est.b,
            u_hat: tape.value(u_hat).clone(),
            h: tape.value(h).clone(),
            u: tape.value(u).clone(),
            o: tape.value(o).clone(),
        };
        Ok((o, u_hat, LayerTrace::Parallel(trace)))
    }

    fn sequential_neuron_on_tape(
        &self,
        tape: &mut Tape,
        i: Var,
        layer: &SpikingLayer,
    ) -> Result<(Var, LayerTrace)> {
        let (t_len, b, n) = tape.value(i).dims3()?;
        let th = tape.param(&self.registry, layer.threshold);
        let mut u_prev = tape.constant(Tensor::zeros(&[b, n]));
        let (mut hs, mut os, mut us) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..t_len {
            let it = tape.slice_time(i, t)?;
            let decayed = tape.scale(u_prev, self.neuron.tau_m);
            let h = tape.add(decayed, it)?;
            let o = tape.heaviside(h, th, self.neuron.alpha)?;
            let silent = tape.one_minus(o);
            let u = tape.mul(h, silent)?;
            hs.push(h);
            os.push(o);
            us.push(u);
            u_prev = u;
        }
        let h = tape.stack_time(&hs)?;
        let o = tape.stack_time(&os)?;
        let u = tape.stack_time(&us)?;
        let trace = LayerTrace::Sequential {
            i: tape.value(i).clone(),
            trace: LifTrace {
                h: tape.value(h).clone(),
                u: tape.value(u).clone(),
                o: tape.value(o).clone(),
            },
        };
        Ok((o, trace))
    }

    /// Records a forward pass over `x[T, B, N0]`. Layer `l` of a sampled
    /// pass draws from `rng.fork(l)`.
    pub fn forward_on_tape(&self, x: &Tensor, mode: EstimateMode, rng: &Rng) -> Result<ForwardPass> {
        let (_, _, n0) = x.dims3()?;
        if n0 != self.inputs {
            return Err(Error::ShapeMismatch {
                left: x.shape().to_vec(),
                right: vec![self.inputs],
            });
        }
        let mut tape = Tape::new();
        let mut current = tape.constant(x.clone());
        let mut u_hat = Vec::with_capacity(self.layers.len());
        let mut traces = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let i = self.synapse_on_tape(&mut tape, current, &layer.synapse, self.delay)?;
            let (o, trace) = match layer.kind {
                NeuronKind::MpePsn => {
                    let (o, uh, tr) =
                        self.parallel_neuron_on_tape(&mut tape, i, layer, mode, &rng.fork(l as u64))?;
                    u_hat.push(Some(uh));
                    (o, tr)
                }
                NeuronKind::Lif => {
                    let (o, tr) = self.sequential_neuron_on_tape(&mut tape, i, layer)?;
                    u_hat.push(None);
                    (o, tr)
                }
            };
            traces.push(trace);
            current = o;
        }
        let logits = self.synapse_on_tape(&mut tape, current, &self.readout, SynapticDelay::Same)?;
        Ok(ForwardPass {
            tape,
            logits,
            u_hat,
            traces,
        })
    }
}

/// Logits and per-layer traces for `x[T, B, N0]`.
pub fn model_forward(
    x: &Tensor,
    model: &SpikingClassifier,
    mode: EstimateMode,
    rng: &Rng,
) -> Result<(Tensor, Vec<LayerTrace>)> {
    let pass = model.forward_on_tape(x, mode, rng)?;
    let logits = pass.tape.value(pass.logits).clone();
    Ok((logits, pass.traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::cls_loss;
    use crate::neuron::{lif_sequential, mpe_psn_forward};

    fn naive_synapse(o: &Tensor, w: &Tensor, delay: SynapticDelay) -> Vec<f64> {
        let (t_len, b, np) = o.dims3().unwrap();
        let n = w.shape()[1];
        let mut out = vec![0.0; t_len * b * n];
        for t in 0..t_len {
            for s in 0..b {
                for i in 0..n {
                    let mut acc = 0.0;
                    for j in 0..np {
                        let src = match delay {
                            SynapticDelay::Same => o.data()[(t * b + s) * np + j],
                            SynapticDelay::OneStep if t == 0 => 0.0,
                            SynapticDelay::OneStep => o.data()[((t - 1) * b + s) * np + j],
                        };
                        acc += src * w.data()[j * n + i];
                    }
                    out[(t * b + s) * n + i] = acc;
                }
            }
        }
        out
    }

    fn random(seed: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let r = Rng::new(seed);
        Tensor::from_fn(shape, |i| lo + (hi - lo) * r.uniform(i as u64))
    }

    #[test]
    fn synapse_identity_and_delay() {
        let o = random(1, &[3, 2, 4], -1.0, 1.0);
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(synapse_forward(&o, &eye, None, SynapticDelay::Same).unwrap(), o);
        let bias = Tensor::from_vec(vec![0.5, 0.0, -1.0, 2.0]);
        let d = synapse_forward(&o, &eye, Some(&bias), SynapticDelay::OneStep).unwrap();
        assert_eq!(&d.time_row(0)[..4], bias.data());
    }

    #[test]
    fn synapse_matches_loop_oracle() {
        let o = random(2, &[4, 3, 5], -1.0, 1.0);
        let w = random(3, &[5, 6], -1.0, 1.0);
        for delay in [SynapticDelay::Same, SynapticDelay::OneStep] {
            let i = synapse_forward(&o, &w, None, delay).unwrap();
            assert_eq!(i.data(), &naive_synapse(&o, &w, delay)[..]);
        }
        assert!(synapse_forward(&o, &random(4, &[4, 6], 0.0, 1.0), None, SynapticDelay::Same).is_err());
    }

    fn zero_model(kind: NeuronKind) -> SpikingClassifier {
        let mut m = SpikingClassifier::new(&ModelConfig {
            kind,
            ..ModelConfig::default()
        })
        .unwrap();
        let ids: Vec<_> = m.registry.ids().collect();
        for id in ids {
            if m.registry.get(id).kind == ParamKind::Weight {
                let z = Tensor::zeros(m.registry.value(id).shape());
                m.registry.set_value(id, z).unwrap();
            }
        }
        m
    }

    #[test]
    fn zero_weights_give_uniform_logits() {
        for kind in [NeuronKind::MpePsn, NeuronKind::Lif] {
            let m = zero_model(kind);
            let x = random(5, &[8, 4, 16], 0.0, 2.0);
            let (logits, traces) = model_forward(&x, &m, EstimateMode::Sampled, &Rng::new(1)).unwrap();
            assert!(traces.iter().all(|t| t.o().data().iter().all(|&o| o == 0.0)));
            let loss = cls_loss(&logits, &[0, 1, 1, 0]).unwrap();
            assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_layer_reduces_to_neuron_module() {
        let m = SpikingClassifier::new(&ModelConfig {
            inputs: 6,
            hidden: vec![6],
            classes: 6,
            ..ModelConfig::default()
        })
        .unwrap();
        let x = random(6, &[5, 3, 6], -1.0, 3.0);
        let rng = Rng::new(9);
        for mode in [EstimateMode::Sampled, EstimateMode::Expectation] {
            let (_, traces) = model_forward(&x, &m, mode, &rng).unwrap();
            let w = m.registry.value(m.layers[0].synapse.weight);
            let i = synapse_forward(&x, w, None, SynapticDelay::Same).unwrap();
            let direct = mpe_psn_forward(&i, &m.layer_params(0), mode, Some(&rng.fork(0))).unwrap();
            assert_eq!(traces[0].parallel().unwrap(), &direct);
        }
        let lif = SpikingClassifier::new(&ModelConfig {
            inputs: 6,
            hidden: vec![6],
            classes: 6,
            kind: NeuronKind::Lif,
            ..ModelConfig::default()
        })
        .unwrap();
        let (_, traces) = model_forward(&x, &lif, EstimateMode::Sampled, &rng).unwrap();
        let w = lif.registry.value(lif.layers[0].synapse.weight);
        let i = synapse_forward(&x, w, None, SynapticDelay::Same).unwrap();
        let seq = lif_sequential(&i, &lif.layer_params(0)).unwrap();
        assert_eq!(traces[0].u(), &seq.u);
        assert_eq!(traces[0].o(), &seq.o);
    }

    #[test]
    fn lif_and_parallel_models_agree_at_first_step() {
        let base = ModelConfig {
            seed: 3,
            ..ModelConfig::default()
        };
        let par = SpikingClassifier::new(&base).unwrap();
        let seq = SpikingClassifier::new(&ModelConfig {
            kind: NeuronKind::Lif,
            ..base
        })
        .unwrap();
        let x = random(7, &[8, 5, 16], -1.0, 3.0);
        let (_, tp) = model_forward(&x, &par, EstimateMode::Sampled, &Rng::new(2)).unwrap();
        let (_, ts) = model_forward(&x, &seq, EstimateMode::Sampled, &Rng::new(2)).unwrap();
        assert_eq!(tp[0].u().time_row(0), ts[0].u().time_row(0));
        assert_eq!(tp[0].o().time_row(0), ts[0].o().time_row(0));
    }

    #[test]
    fn registry_holds_each_parameter_once() {
        let m = SpikingClassifier::new(&ModelConfig::default()).unwrap();
        let names: Vec<&str> = m.registry.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "layer0.weight",
                "layer0.v_th",
                "layer1.weight",
                "layer1.v_th",
                "readout.weight",
                "readout.bias"
            ]
        );
        let w = m.registry.value(m.layers[0].synapse.weight);
        assert!(w.data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn delay_flag_parsing() {
        assert_eq!(SynapticDelay::try_from(0).unwrap(), SynapticDelay::Same);
        assert_eq!(SynapticDelay::try_from(1).unwrap(), SynapticDelay::OneStep);
        assert!(SynapticDelay::try_from(2).is_err());
    }
}
