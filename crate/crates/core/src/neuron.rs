//! Spiking neuron dynamics with hard reset to zero.
//!
//! The sequential LIF recurrence
//!
//! ```text
//! h_t = tau_m * u_{t-1} + I_t          u_{-1} = 0
//! o_t = [h_t >= v_th]
//! u_t = h_t * (1 - o_t)
//! ```
//!
//! is inherently serial in `t`. The parallel neuron replaces `u_{t-1}` with an
//! estimate `u_hat_{t-1}` that depends on `I_{t-1}` only:
//!
//! ```text
//! P     = sigmoid(I)
//! b     ~ Bernoulli(P)        (or b = P in expectation mode)
//! u_hat = (1 - b) * I
//! ```
//!
//! after which every time step is evaluated independently. Row 0 has no
//! history and is exact.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::tensor::{bernoulli, sigmoid};
use crate::numerics::{Rng, Tensor, PAR_CHUNK, PAR_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronParams {
    /// Membrane decay constant, in `(0, 1]`.
    pub tau_m: f64,
    /// Firing threshold (learnable in networks).
    pub v_th: f64,
    /// Reset potential; always zero.
    pub v_r: f64,
    /// Half-width of the triangular surrogate gradient.
    pub alpha: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            tau_m: 0.25,
            v_th: 1.0,
            v_r: 0.0,
            alpha: 1.0,
        }
    }
}

impl NeuronParams {
    pub fn new(tau_m: f64, v_th: f64, alpha: f64) -> Result<Self> {
        let p = Self {
            tau_m,
            v_th,
            v_r: 0.0,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 0.0 && self.tau_m <= 1.0) {
            return Err(Error::invalid(format!("tau_m {} not in (0, 1]", self.tau_m)));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::invalid(format!("alpha {} must be positive", self.alpha)));
        }
        if self.v_r != 0.0 {
            return Err(Error::invalid("reset potential is fixed at 0"));
        }
        if !self.v_th.is_finite() {
            return Err(Error::invalid("v_th must be finite"));
        }
        Ok(())
    }
}

/// How the spike indicator behind `u_hat` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EstimateMode {
    /// `b ~ Bernoulli(sigmoid(I))`.
    Sampled,
    /// `b = sigmoid(I)`; deterministic.
    Expectation,
}

impl std::fmt::Display for EstimateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimateMode::Sampled => "sampled",
            EstimateMode::Expectation => "expectation",
        })
    }
}

/// Sequential LIF outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LifTrace {
    pub h: Tensor,
    pub u: Tensor,
    pub o: Tensor,
}

/// Output of the Bernoulli membrane estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub p: Tensor,
    pub b: Tensor,
    pub u_hat: Tensor,
}

/// Every intermediate of one parallel forward pass, each `[T, B, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelTrace {
    pub i: Tensor,
    pub p: Tensor,
    pub b: Tensor,
    pub u_hat: Tensor,
    pub h: Tensor,
    pub u: Tensor,
    pub o: Tensor,
}

#[inline]
pub(crate) fn fire(h: f64, v_th: f64) -> f64 {
    if h - v_th >= 0.0 {
        1.0
    } else {
        0.0
    }
}

#[inline]
fn charge(tau_m: f64, u_prev: f64, i: f64) -> f64 {
    tau_m * u_prev + i
}

#[inline]
fn reset(h: f64, o: f64) -> f64 {
    h * (1.0 - o)
}

fn check_time_major(i: &Tensor) -> Result<(usize, usize, usize)> {
    let (t, b, n) = i.dims3()?;
    if t == 0 {
        return Err(Error::InvalidShape {
            shape: i.shape().to_vec(),
            reason: "at least one time step required".into(),
        });
    }
    Ok((t, b, n))
}

/// Heaviside step `[h - v_th >= 0]`; a tie fires.
pub fn heaviside(h: &Tensor, v_th: f64) -> Tensor {
    h.map(|x| fire(x, v_th))
}

/// Exact sequential LIF recurrence with hard reset, `u_{-1} = 0`.
pub fn lif_sequential(i: &Tensor, params: &NeuronParams) -> Result<LifTrace> {
    let (t_len, b, n) = check_time_major(i)?;
    let width = b * n;
    let shape = i.shape();
    let mut h = vec![0.0; i.len()];
    let mut u = vec![0.0; i.len()];
    let mut o = vec![0.0; i.len()];
    let mut u_prev = vec![0.0; width];
    let (tau, v_th) = (params.tau_m, params.v_th);
    let x = i.data();
    for t in 0..t_len {
        let base = t * width;
        for (j, up) in u_prev.iter_mut().enumerate() {
            let k = base + j;
            h[k] = charge(tau, *up, x[k]);
            o[k] = fire(h[k], v_th);
            u[k] = reset(h[k], o[k]);
            *up = u[k];
        }
    }
    Ok(LifTrace {
        h: Tensor::new(shape, h)?,
        u: Tensor::new(shape, u)?,
        o: Tensor::new(shape, o)?,
    })
}

/// Forward-only sequential pass producing just `(u, o)`. Bit-identical to
/// the `u`, `o` of [`lif_sequential`].
pub fn lif_forward(i: &Tensor, params: &NeuronParams) -> Result<(Tensor, Tensor)> {
    let (t_len, b, n) = check_time_major(i)?;
    let width = b * n;
    let mut u = vec![0.0; i.len()];
    let mut o = vec![0.0; i.len()];
    let (tau, v_th) = (params.tau_m, params.v_th);
    let x = i.data();
    for t in 0..t_len {
        let base = t * width;
        for j in 0..width {
            let k = base + j;
            let up = if t == 0 { 0.0 } else { u[k - width] };
            let h = charge(tau, up, x[k]);
            o[k] = fire(h, v_th);
            u[k] = reset(h, o[k]);
        }
    }
    Ok((Tensor::new(i.shape(), u)?, Tensor::new(i.shape(), o)?))
}

/// Spike probability, indicator and membrane estimate for every element of
/// `i`. Sampled mode draws element `k` from `rng.uniform(k)`.
pub fn estimate_u_hat(i: &Tensor, mode: EstimateMode, rng: Option<&Rng>) -> Result<Estimate> {
    let p = i.sigmoid();
    let b = match mode {
        EstimateMode::Sampled => {
            let rng = rng.ok_or_else(|| Error::invalid("sampled mode requires an rng"))?;
            p.indexed_bernoulli(rng)
        }
        EstimateMode::Expectation => p.clone(),
    };
    let u_hat = b.zip_map(i, |b, x| (1.0 - b) * x)?;
    Ok(Estimate { p, b, u_hat })
}

/// Evaluates all time steps at once given the membrane history each step
/// should see (`history[t]` plays the role of `u_{t-1}`). Returns `(h, o, u)`.
pub fn parallel_update(
    i: &Tensor,
    history: &Tensor,
    params: &NeuronParams,
) -> Result<(Tensor, Tensor, Tensor)> {
    i.ensure_same_shape(history)?;
    let tau = params.tau_m;
    let h = history.zip_map(i, |up, x| charge(tau, up, x))?;
    let o = heaviside(&h, params.v_th);
    let u = h.zip_map(&o, reset)?;
    Ok((h, o, u))
}

/// Parallel forward pass: estimate, delay the estimate by one step (row 0
/// sees zero), then update every step independently.
pub fn mpe_psn_forward(
    i: &Tensor,
    params: &NeuronParams,
    mode: EstimateMode,
    rng: Option<&Rng>,
) -> Result<ParallelTrace> {
    check_time_major(i)?;
    let Estimate { p, b, u_hat } = estimate_u_hat(i, mode, rng)?;
    let (h, o, u) = parallel_update(i, &u_hat.shift_time(), params)?;
    Ok(ParallelTrace {
        i: i.clone(),
        p,
        b,
        u_hat,
        h,
        u,
        o,
    })
}

/// Parallel update fed with the true membrane history `u_true[t-1]`. With the
/// sequential oracle's `u` this reproduces the oracle exactly.
pub fn teacher_forced_forward(
    i: &Tensor,
    u_true: &Tensor,
    params: &NeuronParams,
) -> Result<(Tensor, Tensor)> {
    check_time_major(i)?;
    i.ensure_same_shape(u_true)?;
    let (_, o, u) = parallel_update(i, &u_true.shift_time(), params)?;
    Ok((u, o))
}

/// Per-element squared estimation error `(u_hat - u)^2`.
pub fn estimation_error(u_hat: &Tensor, u: &Tensor) -> Result<Tensor> {
    u_hat.zip_map(u, |a, b| (a - b) * (a - b))
}

/// Forward-only sampled parallel pass producing just `(u, o)`, without
/// materialising the intermediates. Bit-identical to the `u`, `o` of
/// [`mpe_psn_forward`] in sampled mode with the same `rng`.
pub fn mpe_psn_forward_fused(
    i: &Tensor,
    params: &NeuronParams,
    rng: &Rng,
) -> Result<(Tensor, Tensor)> {
    let (_, b, n) = check_time_major(i)?;
    let width = b * n;
    let x = i.data();
    let (tau, v_th) = (params.tau_m, params.v_th);
    let element = |k: usize| -> (f64, f64) {
        let history = if k < width {
            0.0
        } else {
            let prev = x[k - width];
            let b = bernoulli(sigmoid(prev), rng.uniform((k - width) as u64));
            (1.0 - b) * prev
        };
        let h = charge(tau, history, x[k]);
        let o = fire(h, v_th);
        (reset(h, o), o)
    };
    let mut u = vec![0.0; i.len()];
    let mut o = vec![0.0; i.len()];
    if i.len() < PAR_THRESHOLD {
        for (k, (u, o)) in u.iter_mut().zip(o.iter_mut()).enumerate() {
            (*u, *o) = element(k);
        }
    } else {
        u.par_chunks_mut(PAR_CHUNK)
            .zip(o.par_chunks_mut(PAR_CHUNK))
            .enumerate()
            .for_each(|(c, (uc, oc))| {
                let base = c * PAR_CHUNK;
                for (k, (u, o)) in uc.iter_mut().zip(oc.iter_mut()).enumerate() {
                    (*u, *o) = element(base + k);
                }
            });
    }
    Ok((Tensor::new(i.shape(), u)?, Tensor::new(i.shape(), o)?))
}
