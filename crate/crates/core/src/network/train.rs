use super::{diagnostics, SpikingClassifier};
use crate::autograd::{ParamId, ParamKind, Sgd};
use crate::datagen::LabeledBatch;
use crate::error::{Error, Result};
use crate::losses::{cls_loss, mem_loss, mem_loss_on_tape, total_loss, total_loss_on_tape, MemLossConfig};
use crate::neuron::EstimateMode;
use crate::numerics::csv::fmt_f64;
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub mode: EstimateMode,
    pub mem: MemLossConfig,
    /// When false the membrane term is still computed and logged but weighted
    /// by zero.
    pub mem_loss: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            momentum: 0.9,
            batch_size: 32,
            mode: EstimateMode::Sampled,
            mem: MemLossConfig::default(),
            mem_loss: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn effective_lambda(&self) -> f64 {
        if self.mem_loss {
            self.mem.lambda
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mem.validate()?;
        Sgd::new(self.lr, self.momentum)?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// One row of the training log, measured after the epoch's updates.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    pub loss_cls: f64,
    pub loss_mem: f64,
    pub loss_total: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub l2_norm: Vec<f64>,
    pub spike_rate: Vec<f64>,
}

// Stream ids under the training seed.
const SHUFFLE: u64 = 1;
const BATCH: u64 = 2;
const EVAL_TRAIN: u64 = 3;
const EVAL_TEST: u64 = 4;

/// Registers (or reuses) one kappa vector per spiking layer.
fn kappa_ids(model: &mut SpikingClassifier, time_steps: usize, cfg: &MemLossConfig) -> Result<Vec<ParamId>> {
    let mut ids = Vec::with_capacity(model.layers.len());
    for l in 0..model.layers.len() {
        let name = format!("layer{l}.kappa");
        let shape = [time_steps, 1, model.layers[l].synapse.outputs];
        let id = match model.registry.find(&name) {
            Some(id) => {
                let expected = shape[cfg.kappa_axis.dim()];
                if model.registry.value(id).len() != expected {
                    return Err(Error::KappaLength {
                        got: model.registry.value(id).len(),
                        expected,
                    });
                }
                id
            }
            None => model
                .registry
                .register(&name, ParamKind::Kappa, cfg.initial_kappa(&shape))?,
        };
        ids.push(id);
    }
    Ok(ids)
}

struct Evaluation {
    loss_cls: f64,
    loss_mem: f64,
    accuracy: f64,
    l2_norm: Vec<f64>,
    spike_rate: Vec<f64>,
}

fn evaluate(
    model: &SpikingClassifier,
    data: &LabeledBatch,
    kappa: &[ParamId],
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<Evaluation> {
    let pass = model.forward_on_tape(&data.x, cfg.mode, rng)?;
    let logits = pass.tape.value(pass.logits);
    let diag = diagnostics(&pass.traces, logits, &data.y)?;
    let mut loss_mem = 0.0;
    for (trace, &k) in pass.traces.iter().zip(kappa) {
        if let Some(p) = trace.parallel() {
            loss_mem += mem_loss(&p.u_hat, &p.u, model.registry.value(k), cfg.mem.kappa_axis)?;
        }
    }
    Ok(Evaluation {
        loss_cls: cls_loss(logits, &data.y)?,
        loss_mem,
        accuracy: diag.accuracy,
        l2_norm: diag.l2_norm,
        spike_rate: diag.spike_rate,
    })
}

fn train_step(
    model: &mut SpikingClassifier,
    batch: &LabeledBatch,
    kappa: &[ParamId],
    cfg: &TrainConfig,
    sgd: &Sgd,
    rng: &Rng,
) -> Result<f64> {
    let pass = model.forward_on_tape(&batch.x, cfg.mode, rng)?;
    let mut tape = pass.tape;
    let cls = tape.softmax_cross_entropy(pass.logits, &batch.y)?;
    let mut mem = tape.constant(Tensor::scalar(0.0));
    for ((u_hat, trace), &k) in pass.u_hat.iter().zip(&pass.traces).zip(kappa) {
        if let Some(u_hat) = *u_hat {
            let kv = tape.param(&model.registry, k);
            let layer = mem_loss_on_tape(&mut tape, u_hat, trace.u(), kv, cfg.mem.kappa_axis)?;
            mem = tape.add(mem, layer)?;
        }
    }
    let total = total_loss_on_tape(&mut tape, cls, mem, cfg.effective_lambda())?;
    let loss = tape.value(total).item();
    if !loss.is_finite() {
        return Ok(loss);
    }
    tape.backward(total)?.accumulate_into(&tape, &mut model.registry)?;
    sgd.step(&mut model.registry)?;
    Ok(loss)
}

/// Trains with minibatch SGD and returns one diagnostics row per epoch.
pub fn train(
    model: &mut SpikingClassifier,
    train_set: &LabeledBatch,
    test_set: &LabeledBatch,
    cfg: &TrainConfig,
) -> Result<Vec<EpochDiagnostics>> {
    train_with(model, train_set, test_set, cfg, |_| Ok(()))
}

/// Like [`train`], handing each row to `observe` as soon as it is measured.
/// A non-finite loss aborts with [`Error::Diverged`] after the rows already
/// observed.
pub fn train_with<F>(
    model: &mut SpikingClassifier,
    train_set: &LabeledBatch,
    test_set: &LabeledBatch,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<Vec<EpochDiagnostics>>
where
    F: FnMut(&EpochDiagnostics) -> Result<()>,
{
    cfg.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::invalid("train and test sets must be non-empty"));
    }
    let (time_steps, _, _) = train_set.x.dims3()?;
    let kappa = kappa_ids(model, time_steps, &cfg.mem)?;
    let sgd = Sgd::new(cfg.lr, cfg.momentum)?;
    let root = Rng::new(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        root.fork(SHUFFLE).fork(epoch as u64).stream().shuffle(&mut order);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = train_set.select(chunk);
            let rng = root.fork(BATCH).fork(epoch as u64).fork(b as u64);
            let loss = train_step(model, &batch, &kappa, cfg, &sgd, &rng)?;
            if !loss.is_finite() || !model.registry.all_finite() {
                return Err(Error::Diverged { epoch });
            }
        }
        let tr = evaluate(model, train_set, &kappa, cfg, &root.fork(EVAL_TRAIN))?;
        let te = evaluate(model, test_set, &kappa, cfg, &root.fork(EVAL_TEST))?;
        let row = EpochDiagnostics {
            epoch,
            loss_cls: tr.loss_cls,
            loss_mem: tr.loss_mem,
            loss_total: total_loss(tr.loss_cls, tr.loss_mem, cfg.effective_lambda()),
            train_acc: tr.accuracy,
            test_acc: te.accuracy,
            l2_norm: tr.l2_norm,
            spike_rate: tr.spike_rate,
        };
        if !row.loss_total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        observe(&row)?;
        history.push(row);
    }
    Ok(history)
}

pub(crate) fn log_header(layers: usize) -> String {
    let mut cols: Vec<String> = ["epoch", "loss_cls", "loss_mem", "loss_total", "train_acc", "test_acc"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((0..layers).map(|i| format!("l2_norm_layer_{i}")));
    cols.extend((0..layers).map(|i| format!("spike_rate_layer_{i}")));
    cols.join(",")
}

pub(crate) fn log_row(d: &EpochDiagnostics) -> String {
    let mut cols = vec![d.epoch.to_string()];
    cols.extend(
        [d.loss_cls, d.loss_mem, d.loss_total, d.train_acc, d.test_acc]
            .into_iter()
            .chain(d.l2_norm.iter().copied())
            .chain(d.spike_rate.iter().copied())
            .map(fmt_f64),
    );
    cols.join(",")
}

/// Training log CSV for `layers` spiking layers.
pub fn write_log_csv(rows: &[EpochDiagnostics], layers: usize) -> String {
    let mut out = log_header(layers);
    out.push('\n');
    for r in rows {
        out.push_str(&log_row(r));
        out.push('\n');
    }
    out
}
