//! Training runs for all six algorithms, with per-iteration traces of free
//! energy, quantization error, and counted distance evaluations.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::count::{DistanceCounter, DistanceCounts};
use crate::data::{Dataset, ModelParams};
use crate::dist::sq_dist;
use crate::error::{Error, Result};
use crate::gmm::{
    self, full_estep, hard_estep, initial_sigma_sq, log_likelihood, mstep, Responsibilities,
};
use crate::par::det_sum;
use crate::rng::RngStream;
use crate::seeding::seed_means_dsq;
use crate::varstep::{
    estimate_neighbors, exhaustive_neighbors, init_truncation, truncated_responsibilities,
    update_truncation, NeighborIndex, TruncationState,
};

/// The six trainable algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "gmm-full")]
    GmmFull,
    #[serde(rename = "kmeans")]
    KmeansFull,
    #[serde(rename = "var-gmm-x")]
    VarGmmX,
    #[serde(rename = "var-gmm-s")]
    VarGmmS,
    #[serde(rename = "var-kmeans-x")]
    VarKmeansX,
    #[serde(rename = "var-kmeans-s")]
    VarKmeansS,
}

impl Algorithm {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "gmm-full" => Ok(Self::GmmFull),
            "kmeans" | "kmeans-full" => Ok(Self::KmeansFull),
            "var-gmm-x" => Ok(Self::VarGmmX),
            "var-gmm-s" => Ok(Self::VarGmmS),
            "var-kmeans-x" => Ok(Self::VarKmeansX),
            "var-kmeans-s" => Ok(Self::VarKmeansS),
            other => Err(Error::InvalidArgument(format!(
                "unknown algorithm {other:?} (expected gmm-full, kmeans, var-gmm-x, var-gmm-s, var-kmeans-x, or var-kmeans-s)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::GmmFull => "gmm-full",
            Self::KmeansFull => "kmeans",
            Self::VarGmmX => "var-gmm-x",
            Self::VarGmmS => "var-gmm-s",
            Self::VarKmeansX => "var-kmeans-x",
            Self::VarKmeansS => "var-kmeans-s",
        }
    }

    pub fn is_variational(&self) -> bool {
        matches!(
            self,
            Self::VarGmmX | Self::VarGmmS | Self::VarKmeansX | Self::VarKmeansS
        )
    }
}

/// A validated run configuration.
///
/// The variational GMM variants tie C' to G (one neighborhood parameter);
/// the variational k-means variants fix C' = 1 and need G >= 2. The full
/// algorithms search every cluster, so C' and G normalize to C.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub n_clusters: usize,
    pub c_prime: usize,
    pub g: usize,
    pub explore: bool,
    pub initial_esteps: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Record the log-likelihood each iteration (costs an extra uncounted
    /// `O(N*C*D)` pass).
    pub with_loglik: bool,
    /// Zero out recorded wall times so emitted files are byte-stable.
    pub deterministic: bool,
}

impl RunConfig {
    pub fn new(
        algorithm: Algorithm,
        n_clusters: usize,
        g: Option<usize>,
        c_prime: Option<usize>,
    ) -> Result<Self> {
        if n_clusters == 0 {
            return Err(Error::InvalidArgument("clusters must be >= 1".into()));
        }
        let (c_prime, g) = match algorithm {
            Algorithm::GmmFull => {
                for (name, v) in [("g", g), ("cprime", c_prime)] {
                    if let Some(v) = v {
                        if v != n_clusters {
                            return Err(Error::InvalidArgument(format!(
                                "gmm-full searches every cluster; {name}={v} conflicts with clusters={n_clusters}"
                            )));
                        }
                    }
                }
                (n_clusters, n_clusters)
            }
            Algorithm::KmeansFull => {
                if let Some(cp) = c_prime {
                    if cp != 1 {
                        return Err(Error::InvalidArgument(format!(
                            "kmeans keeps a single-cluster truncation set; cprime={cp} is not allowed"
                        )));
                    }
                }
                if let Some(gv) = g {
                    if gv != n_clusters {
                        return Err(Error::InvalidArgument(format!(
                            "kmeans searches every cluster; g={gv} conflicts with clusters={n_clusters}"
                        )));
                    }
                }
                (1, n_clusters)
            }
            Algorithm::VarGmmX | Algorithm::VarGmmS => {
                let g = g.ok_or_else(|| {
                    Error::InvalidArgument("variational GMM requires g".into())
                })?;
                if let Some(cp) = c_prime {
                    if cp != g {
                        return Err(Error::InvalidArgument(format!(
                            "variational GMM ties the truncation size to the neighborhood size (cprime = g); got cprime={cp}, g={g}"
                        )));
                    }
                }
                if !(1 <= g && g <= n_clusters) {
                    return Err(Error::InvalidArgument(format!(
                        "variational GMM requires 1 <= g <= clusters, got g={g}, clusters={n_clusters}"
                    )));
                }
                (g, g)
            }
            Algorithm::VarKmeansX | Algorithm::VarKmeansS => {
                if let Some(cp) = c_prime {
                    if cp != 1 {
                        return Err(Error::InvalidArgument(format!(
                            "variational k-means keeps a single-cluster truncation set (cprime = 1); got cprime={cp}"
                        )));
                    }
                }
                let g = g.ok_or_else(|| {
                    Error::InvalidArgument("variational k-means requires g".into())
                })?;
                if !(2 <= g && g <= n_clusters) {
                    return Err(Error::InvalidArgument(format!(
                        "variational k-means requires 1 < g <= clusters, got g={g}, clusters={n_clusters}"
                    )));
                }
                (1, g)
            }
        };
        let explore = false;
        Ok(Self {
            algorithm,
            n_clusters,
            c_prime,
            g,
            explore,
            initial_esteps: 0,
            max_iters: 200,
            tol: 1e-6,
            seed: 0,
            with_loglik: false,
            deterministic: false,
        })
    }

    /// One exploratory cluster per point per iteration. Ignored by the full
    /// algorithms (they already search every cluster).
    pub fn with_explore(mut self, explore: bool) -> Self {
        self.explore = explore && self.algorithm.is_variational();
        self
    }

    pub fn with_initial_esteps(mut self, n: usize) -> Self {
        self.initial_esteps = n;
        self
    }

    pub fn with_max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_loglik(mut self, on: bool) -> Self {
        self.with_loglik = on;
        self
    }

    pub fn with_deterministic(mut self, on: bool) -> Self {
        self.deterministic = on;
        self
    }

    /// Per-point distance-evaluation budget of one partial E-step.
    pub fn per_point_budget(&self) -> usize {
        (self.c_prime * self.g + usize::from(self.explore)).min(self.n_clusters)
    }
}

/// One trace record per training iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterRecord {
    pub index: usize,
    pub free_energy: f64,
    pub quantization_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    pub data_to_cluster_evals: u64,
    pub cluster_to_cluster_evals: u64,
    pub wall_seconds: f64,
}

/// The per-iteration records of a run plus the settings that produced them.
#[derive(Debug, Clone, Serialize)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub n_clusters: usize,
    pub c_prime: usize,
    pub g: usize,
    pub explore: bool,
    pub records: Vec<IterRecord>,
}

impl RunTrace {
    pub fn final_quantization_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.quantization_error)
    }

    pub fn mean_data_evals_per_iter(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let total: u64 = self.records.iter().map(|r| r.data_to_cluster_evals).sum();
        Some(total as f64 / self.records.len() as f64)
    }
}

/// Sum over points of the squared distance to the nearest of all C means.
///
/// This is the evaluation metric; its distance work is deliberately not
/// routed through the training counters.
pub fn quantization_error(data: &Dataset, params: &ModelParams) -> f64 {
    let c = params.n_clusters();
    det_sum(data.n_points(), |n| {
        let y = data.point(n);
        let mut best = f64::INFINITY;
        for k in 0..c {
            best = best.min(sq_dist(y, params.mean(k)));
        }
        best
    })
}

/// A training run in progress. [`run`] drives it to completion; tests can
/// also step the E and M phases separately to observe the free energy
/// between them.
pub struct Trainer<'a> {
    data: &'a Dataset,
    config: RunConfig,
    params: ModelParams,
    trunc: Option<TruncationState>,
    nbrs: Option<NeighborIndex>,
    counter: DistanceCounter,
    stream: RngStream,
    iteration: usize,
    /// Support of the last k-means hard assignment, for free-energy
    /// evaluation.
    last_assignment: Option<Vec<Vec<usize>>>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: RunConfig, data: &'a Dataset) -> Result<Self> {
        if config.n_clusters > data.n_points() {
            return Err(Error::InvalidArgument(format!(
                "clusters={} exceeds points={}",
                config.n_clusters,
                data.n_points()
            )));
        }
        if !(config.tol > 0.0 && config.tol.is_finite()) {
            return Err(Error::InvalidArgument("tol must be positive".into()));
        }
        let stream = RngStream::new(config.seed);
        let counter = DistanceCounter::new();

        let means = seed_means_dsq(data, config.n_clusters, stream.fork(0).seed(), &counter)?;
        let seeded = ModelParams::new(means, data.dims(), 1.0)?;
        let sigma_sq = initial_sigma_sq(data, &seeded);
        let params = ModelParams::new(seeded.means().to_vec(), data.dims(), sigma_sq)?;

        let (trunc, nbrs) = if config.algorithm.is_variational() {
            let (t, n) = init_truncation(
                data.n_points(),
                config.n_clusters,
                config.c_prime,
                config.g,
                stream.fork(1).seed(),
            )?;
            (Some(t), Some(n))
        } else {
            (None, None)
        };

        // Seeding cost is initialization, not training: iteration deltas
        // start from zero.
        counter.reset();

        Ok(Self {
            data,
            config,
            params,
            trunc,
            nbrs,
            counter,
            stream,
            iteration: 0,
            last_assignment: None,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn truncation(&self) -> Option<&TruncationState> {
        self.trunc.as_ref()
    }

    pub fn neighbors(&self) -> Option<&NeighborIndex> {
        self.nbrs.as_ref()
    }

    pub fn counter(&self) -> &DistanceCounter {
        &self.counter
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Free energy of the current variational state.
    ///
    /// Full GMM keeps all clusters in every set, so its free energy is the
    /// log-likelihood; k-means uses its current hard assignment.
    pub fn free_energy(&self) -> f64 {
        match self.config.algorithm {
            Algorithm::GmmFull => log_likelihood(self.data, &self.params),
            Algorithm::KmeansFull => match &self.last_assignment {
                Some(sets) => gmm::truncated_free_energy(self.data, sets, &self.params)
                    .expect("assignment sets are non-empty"),
                // Before the first E-step the assignment is the nearest
                // cluster, which is what the E-step will produce.
                None => {
                    let sets = self.nearest_singletons();
                    gmm::truncated_free_energy(self.data, &sets, &self.params)
                        .expect("singleton sets are non-empty")
                }
            },
            _ => {
                let trunc = self.trunc.as_ref().expect("variational state");
                gmm::truncated_free_energy(self.data, trunc.sets(), &self.params)
                    .expect("truncation sets are non-empty")
            }
        }
    }

    fn nearest_singletons(&self) -> Vec<Vec<usize>> {
        let c = self.config.n_clusters;
        (0..self.data.n_points())
            .map(|n| {
                let y = self.data.point(n);
                let mut best = (0usize, sq_dist(y, self.params.mean(0)));
                for k in 1..c {
                    let d = sq_dist(y, self.params.mean(k));
                    if d < best.1 {
                        best = (k, d);
                    }
                }
                vec![best.0]
            })
            .collect()
    }

    /// One E phase: the full or partial E-step of the configured algorithm,
    /// including any neighborhood maintenance it performs. Advances the
    /// iteration counter (each iteration draws from its own RNG streams).
    pub fn estep(&mut self) -> Responsibilities {
        let it = self.iteration as u64;
        self.iteration += 1;
        match self.config.algorithm {
            Algorithm::GmmFull => full_estep(self.data, &self.params, &self.counter),
            Algorithm::KmeansFull => {
                let resp = hard_estep(self.data, &self.params, &self.counter);
                self.last_assignment = Some(resp.support_sets());
                resp
            }
            Algorithm::VarGmmX | Algorithm::VarKmeansX => {
                let nbrs = exhaustive_neighbors(&self.params, self.config.g, &self.counter);
                let trunc = self.trunc.as_ref().expect("variational state");
                let (new_trunc, _) = update_truncation(
                    self.data,
                    &self.params,
                    trunc,
                    &nbrs,
                    self.config.explore,
                    &self.stream.fork(2).fork(it),
                    &self.counter,
                );
                let resp = truncated_responsibilities(&new_trunc, self.params.sigma_sq());
                self.trunc = Some(new_trunc);
                self.nbrs = Some(nbrs);
                resp
            }
            Algorithm::VarGmmS | Algorithm::VarKmeansS => {
                let trunc = self.trunc.as_ref().expect("variational state");
                let nbrs = self.nbrs.as_ref().expect("variational state");
                let (new_trunc, space) = update_truncation(
                    self.data,
                    &self.params,
                    trunc,
                    nbrs,
                    self.config.explore,
                    &self.stream.fork(2).fork(it),
                    &self.counter,
                );
                let (new_nbrs, _assign) = estimate_neighbors(
                    &space,
                    nbrs,
                    self.config.n_clusters,
                    self.config.g,
                    &self.stream.fork(3).fork(it),
                );
                let resp = truncated_responsibilities(&new_trunc, self.params.sigma_sq());
                self.trunc = Some(new_trunc);
                self.nbrs = Some(new_nbrs);
                resp
            }
        }
    }

    /// One M phase.
    pub fn mstep(&mut self, resp: &Responsibilities) {
        self.params = mstep(self.data, resp, &self.params);
    }

    /// One full training iteration (E phase, then M phase unless still in
    /// the initial E-only window). Returns the trace record.
    pub fn step(&mut self) -> IterRecord {
        let started = Instant::now();
        let index = self.iteration;
        let before = self.counter.snapshot();
        let resp = self.estep();
        if index >= self.config.initial_esteps {
            self.mstep(&resp);
        }
        let delta = self.counter.snapshot().since(before);
        self.record(index, delta, started)
    }

    fn record(&self, index: usize, delta: DistanceCounts, started: Instant) -> IterRecord {
        IterRecord {
            index,
            free_energy: self.free_energy(),
            quantization_error: quantization_error(self.data, &self.params),
            log_likelihood: self
                .config
                .with_loglik
                .then(|| log_likelihood(self.data, &self.params)),
            data_to_cluster_evals: delta.data_to_cluster,
            cluster_to_cluster_evals: delta.cluster_to_cluster,
            wall_seconds: if self.config.deterministic {
                0.0
            } else {
                started.elapsed().as_secs_f64()
            },
        }
    }

    fn in_initial_phase(&self) -> bool {
        self.iteration < self.config.initial_esteps
    }
}

/// Runs a full training loop: seeding, initial E-only iterations, then EM
/// iterations until the quantization error stalls (relative change below
/// `tol` for 3 consecutive iterations) or `max_iters` is reached.
pub fn run(
    config: RunConfig,
    data: &Dataset,
) -> Result<(ModelParams, Option<TruncationState>, RunTrace)> {
    let mut trainer = Trainer::new(config.clone(), data)?;
    let mut records = Vec::new();
    let mut prev_qe: Option<f64> = None;
    let mut stalled = 0usize;

    while trainer.iteration < config.max_iters {
        let in_initial = trainer.in_initial_phase();
        let record = trainer.step();
        let qe = record.quantization_error;
        records.push(record);
        if in_initial {
            // Parameters are frozen during the initial window, so the
            // quantization error cannot inform convergence yet.
            prev_qe = None;
            continue;
        }
        if let Some(p) = prev_qe {
            let rel = (qe - p).abs() / p.abs().max(f64::MIN_POSITIVE);
            if rel < config.tol {
                stalled += 1;
            } else {
                stalled = 0;
            }
        }
        prev_qe = Some(qe);
        if stalled >= 3 {
            break;
        }
    }

    let trace = RunTrace {
        algorithm: config.algorithm,
        n_clusters: config.n_clusters,
        c_prime: config.c_prime,
        g: config.g,
        explore: config.explore,
        records,
    };
    let Trainer { params, trunc, .. } = trainer;
    Ok((params, trunc, trace))
}

/// First iteration index (counting initial E-steps) at which the mean
/// variant quantization error reaches the baseline's mean converged error.
/// `None` means parity was never reached. Shorter traces are padded with
/// their final value.
pub fn iterations_to_parity(
    variant_traces: &[RunTrace],
    baseline_traces: &[RunTrace],
) -> Option<usize> {
    if variant_traces.is_empty() || baseline_traces.is_empty() {
        return None;
    }
    let baseline: f64 = baseline_traces
        .iter()
        .filter_map(RunTrace::final_quantization_error)
        .sum::<f64>()
        / baseline_traces.len() as f64;
    let longest = variant_traces
        .iter()
        .map(|t| t.records.len())
        .max()
        .unwrap_or(0);
    for i in 0..longest {
        let mean: f64 = variant_traces
            .iter()
            .map(|t| {
                let idx = i.min(t.records.len().saturating_sub(1));
                t.records[idx].quantization_error
            })
            .sum::<f64>()
            / variant_traces.len() as f64;
        if mean <= baseline {
            return Some(i);
        }
    }
    None
}

/// Theoretical and measured speedup in saved data-to-cluster evaluations.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpeedupReport {
    pub theoretical_min: f64,
    pub measured: f64,
}

/// Theoretical minimum speedup `C / min(C'*G + explore, C)`.
pub fn theoretical_speedup(config: &RunConfig) -> f64 {
    config.n_clusters as f64 / config.per_point_budget() as f64
}

/// Compares counted per-iteration evaluations against a full-E-step
/// baseline trace. Overlapping neighborhoods only reduce variant work, so
/// `measured >= theoretical_min`.
pub fn speedup_report(variant_trace: &RunTrace, baseline_trace: &RunTrace) -> SpeedupReport {
    let variant_mean = variant_trace
        .mean_data_evals_per_iter()
        .expect("variant trace must be non-empty");
    let baseline_mean = baseline_trace
        .mean_data_evals_per_iter()
        .expect("baseline trace must be non-empty");
    let theoretical = variant_trace.n_clusters as f64
        / (variant_trace.c_prime * variant_trace.g + usize::from(variant_trace.explore))
            .min(variant_trace.n_clusters) as f64;
    SpeedupReport {
        theoretical_min: theoretical,
        measured: baseline_mean / variant_mean,
    }
}
