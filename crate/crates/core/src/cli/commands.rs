use std::fmt;
use std::path::{Path, PathBuf};

use super::verify::{run_verify, VerifyConfig};
use super::{resolve_workers, BenchArgs, DataArgs, EstimateArgs, GenDataArgs, OnOff, Outcome, TrainArgs, VerifyArgs};
use crate::bench::{sweep, trend, SweepConfig};
use crate::datagen::{self, DatasetSpec, LabeledBatch};
use crate::error::{Error, Result};
use crate::io::{load_tensor, write_atomic};
use crate::losses::MemLossConfig;
use crate::network::{
    layer_l2_norm, train_with, write_log_csv, EpochDiagnostics, LayerTrace, ModelConfig, SpikingClassifier,
    SynapticDelay, TrainConfig,
};
use crate::neuron::{estimate_u_hat, lif_sequential, EstimateMode, NeuronParams, ParallelTrace};
use crate::numerics::csv::fmt_f64;
use crate::numerics::{workers_from_env, Rng, Tensor, WorkerPool};

pub(super) fn verify(a: &VerifyArgs) -> Result<Outcome> {
    let cfg = VerifyConfig {
        trials: a.trials as usize,
        seed: a.seed,
        max_time_steps: a.time_steps as usize,
        max_batch: a.batch as usize,
        max_neurons: a.neurons as usize,
        params: a.neuron.params()?,
        inject_fault: a.inject_fault,
    };
    let pool = WorkerPool::new(resolve_workers(a.workers)?)?;
    let report = pool.install(|| run_verify(&cfg))?;
    println!("{report}");
    write_atomic(&a.out, report.to_csv().as_bytes())?;
    Ok(if report.passed() {
        Outcome::Success
    } else {
        Outcome::PropertyFailure
    })
}

/// Names the offending file when an input cannot be read.
fn input_error(path: &Path) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::invalid(format!("{}: {io}", path.display())),
        e => e,
    }
}

fn dataset_spec(d: &DataArgs, seed: u64) -> DatasetSpec {
    DatasetSpec {
        classes: d.classes,
        time_steps: d.time_steps,
        features: d.features,
        samples_per_class: d.samples_per_class,
        noise_std: d.noise_std,
        pattern: d.pattern,
        seed,
    }
}

fn load_or_generate(d: &DataArgs, seed: u64) -> Result<(LabeledBatch, LabeledBatch)> {
    match &d.dataset {
        Some(path) => {
            let all = datagen::load(path).map_err(input_error(path))?;
            if all.len() < 2 {
                return Err(Error::invalid(format!(
                    "{}: need at least 2 samples to split",
                    path.display()
                )));
            }
            Ok(all.split_at(all.len() * 4 / 5))
        }
        None => datagen::generate(&dataset_spec(d, seed)),
    }
}

fn final_line(row: &EpochDiagnostics) -> String {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    format!(
        "final epoch={} loss_cls={:.6} loss_mem={:.6} loss_total={:.6} train_acc={:.4} test_acc={:.4} l2_norm_mean={:.6} spike_rate_mean={:.4}",
        row.epoch,
        row.loss_cls,
        row.loss_mem,
        row.loss_total,
        row.train_acc,
        row.test_acc,
        mean(&row.l2_norm),
        mean(&row.spike_rate)
    )
}

pub(super) fn train(a: &TrainArgs) -> Result<Outcome> {
    let (train_set, test_set) = load_or_generate(&a.data, a.seed)?;
    let (_, _, features) = train_set.x.dims3()?;
    let mut model = SpikingClassifier::new(&ModelConfig {
        inputs: features,
        hidden: vec![a.neurons; a.layers],
        classes: train_set.classes,
        kind: a.neuron_kind,
        delay: SynapticDelay::try_from(a.synaptic_delay)?,
        neuron: a.neuron.params()?,
        hidden_bias: false,
        seed: a.seed,
    })?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        momentum: a.momentum,
        batch_size: a.batch,
        mode: a.mode,
        mem: MemLossConfig {
            lambda: a.lambda,
            kappa_axis: a.kappa_axis,
            kappa_init: a.kappa_init,
        },
        mem_loss: a.mem_loss == OnOff::On,
        seed: a.seed,
    };
    cfg.validate()?;
    let pool = WorkerPool::new(resolve_workers(a.workers)?)?;
    let mut rows = Vec::new();
    let result = pool.install(|| {
        train_with(&mut model, &train_set, &test_set, &cfg, |r| {
            rows.push(r.clone());
            Ok(())
        })
    });
    // the log is written even when training aborts
    write_atomic(&a.out, write_log_csv(&rows, a.layers).as_bytes())?;
    result?;
    match rows.last() {
        Some(last) => println!("{}", final_line(last)),
        None => println!("final epoch=0 (no epochs run)"),
    }
    Ok(Outcome::Success)
}

/// `bench.csv` becomes `bench.w4.csv` when several worker counts are swept.
fn per_worker_path(out: &Path, workers: usize) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("bench");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    out.with_file_name(format!("{stem}.w{workers}.{ext}"))
}

pub(super) fn bench(a: &BenchArgs) -> Result<Outcome> {
    let workers = if a.workers.is_empty() {
        vec![workers_from_env().unwrap_or(4)]
    } else {
        a.workers.clone()
    };
    for &w in &workers {
        let cfg = SweepConfig {
            t_grid: a.time_steps.clone(),
            n_grid: a.neurons.clone(),
            batch: a.batch,
            workers: w,
            reps: a.reps,
            seed: a.seed,
        };
        let path = if workers.len() > 1 {
            per_worker_path(&a.out, w)
        } else {
            a.out.clone()
        };
        let report = sweep(&cfg, &path)?;
        for s in &report.skipped {
            println!("skipped T={} N={}: {}", s.t, s.n, s.reason);
        }
        println!("wrote {} ({} records)", path.display(), report.records.len());
        if let Some(t) = trend(&report.records) {
            println!("{t}");
        }
    }
    Ok(Outcome::Success)
}

/// Estimator statistics for one input, compared against the sequential
/// oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub mode: EstimateMode,
    pub shape: Vec<usize>,
    pub p_min: f64,
    pub p_mean: f64,
    pub p_max: f64,
    /// `mean(b)`: the sampled spike fraction, or the mean probability in
    /// expectation mode.
    pub b_mean: f64,
    /// `||u_hat_t - u_t||_2` per step, `u` from the sequential oracle.
    pub step_l2: Vec<f64>,
    pub total_l2: f64,
}

pub fn estimate_report(i: &Tensor, params: &NeuronParams, mode: EstimateMode, rng: &Rng) -> Result<EstimateReport> {
    let est = estimate_u_hat(i, mode, Some(rng))?;
    let seq = lif_sequential(i, params)?;
    let (t_len, _, _) = i.dims3()?;
    let step_l2 = (0..t_len)
        .map(|t| {
            est.u_hat
                .time_row(t)
                .iter()
                .zip(seq.u.time_row(t))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let p = est.p.data();
    let total_l2 = layer_l2_norm(&LayerTrace::Parallel(ParallelTrace {
        i: i.clone(),
        p: est.p.clone(),
        b: est.b.clone(),
        u_hat: est.u_hat.clone(),
        h: seq.h,
        u: seq.u,
        o: seq.o,
    }))?;
    Ok(EstimateReport {
        mode,
        shape: i.shape().to_vec(),
        p_min: p.iter().copied().fold(f64::INFINITY, f64::min),
        p_mean: est.p.mean()?,
        p_max: p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        b_mean: est.b.mean()?,
        step_l2,
        total_l2,
    })
}

impl EstimateReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,l2_norm\n");
        for (t, l2) in self.step_l2.iter().enumerate() {
            out.push_str(&format!("{t},{}\n", fmt_f64(*l2)));
        }
        out
    }
}

impl fmt::Display for EstimateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "estimator report: shape {:?}, mode {}", self.shape, self.mode)?;
        writeln!(
            f,
            "P = sigmoid(I): min {:.6} mean {:.6} max {:.6}",
            self.p_min, self.p_mean, self.p_max
        )?;
        match self.mode {
            EstimateMode::Sampled => writeln!(f, "sampled spike fraction mean(b): {:.6}", self.b_mean)?,
            EstimateMode::Expectation => {
                writeln!(f, "expectation mode: b = P, no sampling; mean(b) {:.6}", self.b_mean)?
            }
        }
        writeln!(f, "||u_hat - u||_2 per step against the sequential oracle:")?;
        for (t, l2) in self.step_l2.iter().enumerate() {
            writeln!(f, "  t={t:<4} {l2:.6}")?;
        }
        write!(f, "total ||u_hat - u||_2: {:.6}", self.total_l2)
    }
}

pub(super) fn estimate(a: &EstimateArgs) -> Result<Outcome> {
    let input = match &a.input {
        Some(path) => load_tensor(path).map_err(input_error(path))?,
        None => {
            if a.time_steps == 0 || a.batch == 0 || a.neurons == 0 {
                return Err(Error::invalid("time steps, batch and neurons must be >= 1"));
            }
            let r = Rng::new(a.seed).fork(1);
            Tensor::from_fn(&[a.time_steps, a.batch, a.neurons], |k| r.uniform(k as u64) * 4.0 - 2.0)
        }
    };
    input.dims3()?;
    if !input.is_finite() {
        return Err(Error::invalid("input currents must be finite"));
    }
    let report = estimate_report(&input, &a.neuron.params()?, a.mode, &Rng::new(a.seed))?;
    println!("{report}");
    if let Some(out) = &a.out {
        write_atomic(out, report.to_csv().as_bytes())?;
    }
    Ok(Outcome::Success)
}

pub(super) fn gen_data(a: &GenDataArgs) -> Result<Outcome> {
    let (train, test) = datagen::generate(&dataset_spec(&a.data, a.seed))?;
    let all = train.concat(&test)?;
    datagen::save(&all, &a.out)?;
    println!(
        "wrote {} ({} train + {} test samples)",
        a.out.display(),
        train.len(),
        test.len()
    );
    Ok(Outcome::Success)
}
