//! Wall-clock comparison of the sequential LIF recurrence against the fused
//! parallel forward pass over a grid of time steps and neuron counts.

use std::fmt;
use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::neuron::{lif_forward, mpe_psn_forward_fused, NeuronParams};
use crate::numerics::csv::fmt_f64;
use crate::numerics::{Rng, Tensor, WorkerPool};

pub const MIN_REPS: usize = 5;
pub const WARMUP_REPS: usize = 1;
pub const CSV_HEADER: &str = "T,N,B,workers,reps,seq_median_ns,par_median_ns,ratio";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timings {
    /// Per-rep wall clock, warmup excluded.
    pub samples_ns: Vec<u64>,
    pub median_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub t: usize,
    pub n: usize,
    pub b: usize,
    pub workers: usize,
    pub reps: usize,
    pub seq_median_ns: u64,
    pub par_median_ns: u64,
    pub ratio: f64,
}

/// Median of `samples`; the mean of the two middle values for even lengths.
pub fn median(samples: &[u64]) -> u64 {
    let mut s = samples.to_vec();
    s.sort_unstable();
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        ((s[m - 1] as u128 + s[m] as u128) / 2) as u64
    }
}

fn check_grid_point(t: usize, b: usize, n: usize, reps: usize) -> Result<usize> {
    if t == 0 || b == 0 || n == 0 {
        return Err(Error::invalid(format!("grid values must be >= 1 (T={t}, B={b}, N={n})")));
    }
    if reps < MIN_REPS {
        return Err(Error::invalid(format!("need at least {MIN_REPS} reps, got {reps}")));
    }
    t.checked_mul(b)
        .and_then(|x| x.checked_mul(n))
        .ok_or(Error::Allocation { elements: usize::MAX })
}

/// Input currents U(-2, 2) shared by both kinds at a grid point. Fails with
/// [`Error::Allocation`] if the input plus the largest output set cannot be
/// reserved.
pub fn bench_input(t: usize, b: usize, n: usize, seed: u64) -> Result<Tensor> {
    let len = check_grid_point(t, b, n, MIN_REPS)?;
    // input + u, o
    let needed = len.checked_mul(3).ok_or(Error::Allocation { elements: usize::MAX })?;
    let mut probe: Vec<f64> = Vec::new();
    probe
        .try_reserve_exact(needed)
        .map_err(|_| Error::Allocation { elements: needed })?;
    drop(probe);
    let rng = Rng::new(seed);
    Ok(Tensor::from_fn(&[t, b, n], |k| rng.uniform(k as u64) * 4.0 - 2.0))
}

fn run_once(kind: Kind, input: &Tensor, params: &NeuronParams, rng: &Rng) -> Result<u64> {
    let start = Instant::now();
    match kind {
        Kind::Sequential => {
            black_box(lif_forward(black_box(input), params)?);
        }
        Kind::Parallel => {
            black_box(mpe_psn_forward_fused(black_box(input), params, rng)?);
        }
    }
    Ok(start.elapsed().as_nanos() as u64)
}

fn time_on(kind: Kind, input: &Tensor, pool: &WorkerPool, reps: usize, seed: u64) -> Result<Timings> {
    let params = NeuronParams::default();
    let rng = Rng::new(seed).fork(1);
    pool.install(|| {
        for _ in 0..WARMUP_REPS {
            run_once(kind, input, &params, &rng)?;
        }
        let samples_ns = (0..reps)
            .map(|_| run_once(kind, input, &params, &rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Timings {
            median_ns: median(&samples_ns),
            samples_ns,
        })
    })
}

/// Times `reps` forward passes (after a discarded warmup) of one kind inside
/// a pool of `workers` threads. The sequential kind never uses the pool.
pub fn time_forward(
    kind: Kind,
    t: usize,
    b: usize,
    n: usize,
    workers: usize,
    reps: usize,
    seed: u64,
) -> Result<Timings> {
    check_grid_point(t, b, n, reps)?;
    let pool = WorkerPool::new(workers)?;
    let input = bench_input(t, b, n, seed)?;
    time_on(kind, &input, &pool, reps, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub t_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    pub batch: usize,
    pub workers: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            t_grid: vec![1, 4, 8, 16, 32],
            n_grid: vec![1 << 10, 1 << 12, 1 << 14, 1 << 16, 1 << 18],
            batch: 1,
            workers: 4,
            reps: MIN_REPS,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedPoint {
    pub t: usize,
    pub n: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub records: Vec<BenchRecord>,
    pub skipped: Vec<SkippedPoint>,
}

/// Runs every grid point without touching the filesystem. Points whose
/// buffers cannot be allocated are skipped and reported.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    if cfg.t_grid.is_empty() || cfg.n_grid.is_empty() {
        return Err(Error::invalid("benchmark grids must be non-empty"));
    }
    if cfg.reps < MIN_REPS {
        return Err(Error::invalid(format!("need at least {MIN_REPS} reps, got {}", cfg.reps)));
    }
    let pool = WorkerPool::new(cfg.workers)?;
    let mut report = SweepReport {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for &t in &cfg.t_grid {
        for &n in &cfg.n_grid {
            let input = match bench_input(t, cfg.batch, n, cfg.seed) {
                Ok(x) => x,
                Err(e @ Error::Allocation { .. }) => {
                    report.skipped.push(SkippedPoint {
                        t,
                        n,
                        reason: e.to_string(),
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let seq = time_on(Kind::Sequential, &input, &pool, cfg.reps, cfg.seed)?;
            let par = time_on(Kind::Parallel, &input, &pool, cfg.reps, cfg.seed)?;
            report.records.push(BenchRecord {
                t,
                n,
                b: cfg.batch,
                workers: cfg.workers,
                reps: cfg.reps,
                seq_median_ns: seq.median_ns,
                par_median_ns: par.median_ns,
                ratio: seq.median_ns.max(1) as f64 / par.median_ns.max(1) as f64,
            });
        }
    }
    Ok(report)
}

/// Companion path for the ratio matrix of a sweep CSV.
pub fn matrix_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("matrix.dat")
}

fn ensure_writable(path: &Path) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    tempfile::NamedTempFile::new_in(dir).map_err(|e| {
        Error::invalid(format!("output path {} is not writable: {e}", path.display()))
    })?;
    Ok(())
}

/// Runs the sweep and writes the records CSV plus the ratio matrix next to
/// it. An unwritable destination is rejected before any timing starts.
pub fn sweep(cfg: &SweepConfig, out: &Path) -> Result<SweepReport> {
    ensure_writable(out)?;
    let report = run_sweep(cfg)?;
    write_atomic(out, records_to_csv(&report.records).as_bytes())?;
    write_atomic(&matrix_path(out), ratio_matrix(&report.records).as_bytes())?;
    Ok(report)
}

pub fn records_to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.t,
            r.n,
            r.b,
            r.workers,
            r.reps,
            r.seq_median_ns,
            r.par_median_ns,
            fmt_f64(r.ratio)
        ));
    }
    out
}

pub fn records_from_csv(text: &str, path: &Path) -> Result<Vec<BenchRecord>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header `{CSV_HEADER}`"))),
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(parse_err(line_no, format!("expected 8 fields, found {}", f.len())));
        }
        let int = |s: &str| -> Result<u64> {
            s.trim()
                .parse::<u64>()
                .map_err(|e| parse_err(line_no, format!("`{s}`: {e}")))
        };
        let ratio = f[7]
            .trim()
            .parse::<f64>()
            .map_err(|e| parse_err(line_no, format!("`{}`: {e}", f[7])))?;
        records.push(BenchRecord {
            t: int(f[0])? as usize,
            n: int(f[1])? as usize,
            b: int(f[2])? as usize,
            workers: int(f[3])? as usize,
            reps: int(f[4])? as usize,
            seq_median_ns: int(f[5])?,
            par_median_ns: int(f[6])?,
            ratio,
        });
    }
    Ok(records)
}

fn sorted_unique(values: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = values.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Gnuplot `matrix nonuniform` layout: the first row holds the column count
/// and the N values, each further row a T value followed by its ratios.
/// Missing points are written as `NaN`.
pub fn ratio_matrix(records: &[BenchRecord]) -> String {
    let ts = sorted_unique(records.iter().map(|r| r.t));
    let ns = sorted_unique(records.iter().map(|r| r.n));
    let mut out = format!("# speed ratio seq/par, rows = T, columns = N\n{}", ns.len());
    for n in &ns {
        out.push_str(&format!(" {n}"));
    }
    out.push('\n');
    for t in &ts {
        out.push_str(&t.to_string());
        for n in &ns {
            match records.iter().find(|r| r.t == *t && r.n == *n) {
                Some(r) => out.push_str(&format!(" {}", fmt_f64(r.ratio))),
                None => out.push_str(" NaN"),
            }
        }
        out.push('\n');
    }
    out
}

/// Ratio trend over N at the largest T of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendSummary {
    pub t: usize,
    pub workers: usize,
    pub n: Vec<usize>,
    pub ratios: Vec<f64>,
    /// Adjacent pairs where the ratio decreased.
    pub inversions: usize,
    /// Non-decreasing over N allowing one inversion.
    pub monotone: bool,
    /// Ratio at the largest grid point exceeds 1.
    pub exceeds_one: bool,
}

impl TrendSummary {
    pub fn passed(&self) -> bool {
        self.monotone && self.exceeds_one
    }
}

pub fn trend(records: &[BenchRecord]) -> Option<TrendSummary> {
    let t = records.iter().map(|r| r.t).max()?;
    let mut row: Vec<&BenchRecord> = records.iter().filter(|r| r.t == t).collect();
    row.sort_by_key(|r| r.n);
    let ratios: Vec<f64> = row.iter().map(|r| r.ratio).collect();
    let inversions = ratios.windows(2).filter(|w| w[1] < w[0]).count();
    Some(TrendSummary {
        t,
        workers: row[0].workers,
        n: row.iter().map(|r| r.n).collect(),
        exceeds_one: *ratios.last()? > 1.0,
        monotone: inversions <= 1,
        inversions,
        ratios,
    })
}

impl fmt::Display for TrendSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "trend at T={} with {} workers:", self.t, self.workers)?;
        for (n, r) in self.n.iter().zip(&self.ratios) {
            writeln!(f, "  N={n:<8} ratio={r:.4}")?;
        }
        writeln!(
            f,
            "  monotone over N (<=1 inversion): {} ({} inversions)",
            if self.monotone { "yes" } else { "no" },
            self.inversions
        )?;
        write!(
            f,
            "  ratio at largest point > 1: {}",
            if self.exceeds_one { "yes" } else { "no" }
        )
    }
}
